//! Empirical checks of convergence behavior: rate fits, the γ-weighted
//! output statistic, inequality audits and multi-method comparisons.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;

use crate::engine::{run, RunConfig, Trajectory};
use crate::error::{Error, Result};
use crate::momentum::MomentumKind;
use crate::schedule::{default_exponents, Schedule};

/// Slack allowed by [`audit_descent`].
pub const DESCENT_SLACK: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregation {
    /// `Σ_{t<T'} γ_t ‖∇f(x^t)‖ / Σ_{t<T'} γ_t`
    GammaWeightedMean,
    /// `min_{t<T'} ‖∇f(x^t)‖`
    RunningMin,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Range of prefix lengths `T'` used.
    pub window: (usize, usize),
    pub points: usize,
}

/// Default fit window: prefixes from `T/10` to `T`, skipping the burn-in.
pub fn default_window(t: usize) -> (usize, usize) {
    ((t / 10).max(1), t)
}

/// Geometric grid of `count` prefix lengths in `[lo, hi]`, deduplicated.
pub fn prefix_grid(lo: usize, hi: usize, count: usize) -> Vec<usize> {
    let lo = lo.max(1);
    if hi <= lo || count < 2 {
        return vec![hi.max(lo)];
    }
    let ratio = (hi as f64 / lo as f64).ln() / (count - 1) as f64;
    let mut grid: Vec<usize> = (0..count)
        .map(|k| ((lo as f64) * (ratio * k as f64).exp()).round() as usize)
        .map(|x| x.clamp(lo, hi))
        .collect();
    grid.dedup();
    grid
}

/// Aggregated metric for every prefix length `1..=T`.
fn prefix_metric(traj: &Trajectory, aggregation: Aggregation) -> Vec<f64> {
    let mut out = Vec::with_capacity(traj.candidates.len());
    match aggregation {
        Aggregation::GammaWeightedMean => {
            let (mut num, mut den) = (0.0, 0.0);
            for s in &traj.candidates {
                num += s.gamma * s.grad_norm;
                den += s.gamma;
                out.push(num / den);
            }
        }
        Aggregation::RunningMin => {
            let mut best = f64::INFINITY;
            for s in &traj.candidates {
                best = best.min(s.grad_norm);
                out.push(best);
            }
        }
    }
    out
}

/// Least-squares line through `(ln T', ln metric(T'))` over a geometric
/// grid of prefix lengths; the slope estimates the rate exponent.
pub fn fit_rate(
    traj: &Trajectory,
    aggregation: Aggregation,
    window: Option<(usize, usize)>,
) -> Result<RateFit> {
    let total = traj.candidates.len();
    let (lo, hi) = window.unwrap_or_else(|| default_window(total));
    if hi > total || lo > hi || hi == 0 {
        return Err(Error::Misuse(format!("window ({lo}, {hi}) outside trajectory of length {total}")));
    }
    let metric = prefix_metric(traj, aggregation);
    let grid = prefix_grid(lo, hi, 24);
    let points: Vec<(f64, f64)> = grid
        .iter()
        .map(|&len| (len, metric[len - 1]))
        .filter(|(_, m)| *m > 0.0)
        .map(|(len, m)| ((len as f64).ln(), m.ln()))
        .collect();
    if points.is_empty() {
        return Err(Error::DegenerateFit("metric is zero on the whole window".into()));
    }
    if points.len() < 10 {
        return Err(Error::DegenerateFit(format!(
            "only {} distinct prefix lengths in the window, need 10",
            points.len()
        )));
    }
    let k = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / k;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    // A flat series is fit perfectly by the flat line.
    let r_squared = if syy <= f64::EPSILON * k { 1.0 } else { (1.0 - ss_res / syy).clamp(0.0, 1.0) };
    Ok(RateFit { slope, intercept, r_squared, window: (lo, hi), points: points.len() })
}

/// `Σ γ_t ‖∇f(x^t)‖ / Σ γ_t` over all candidate states.
pub fn weighted_grad_average(traj: &Trajectory) -> Result<f64> {
    if traj.candidates.is_empty() {
        return Err(Error::Misuse("empty trajectory".into()));
    }
    let (num, den) =
        traj.candidates.iter().fold((0.0, 0.0), |(n, d), s| (n + s.gamma * s.grad_norm, d + s.gamma));
    Ok(num / den)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AuditReport {
    /// Steps `t` at which the inequality failed.
    pub violations: Vec<usize>,
    pub checked: usize,
    /// Largest `lhs − rhs` observed (before slack).
    pub worst_margin: f64,
}

impl AuditReport {
    pub fn violation_count(&self) -> usize {
        self.violations.len()
    }
}

fn require_full_records(traj: &Trajectory) -> Result<()> {
    if traj.record_stride != 1 {
        return Err(Error::Misuse("audits need a trajectory recorded with stride 1".into()));
    }
    if traj.records.windows(2).any(|w| w[1].t != w[0].t + 1) {
        return Err(Error::Misuse("records are not consecutive".into()));
    }
    Ok(())
}

/// Counts steps where
/// `Δ_{t+1} + γ_t‖∇f(x^t)‖ ≤ Δ_t + 2γ_t‖v̄^t − ∇f(x^t)‖ + 2γ_t 𝒱_t + γ_t² L/2`
/// fails by more than [`DESCENT_SLACK`], with `Δ_t = f(x^t) − f_inf`.
///
/// The inequality holds pathwise only for normalized runs with exact oracles
/// and a deterministic compressor.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn audit_descent(traj: &Trajectory, l: f64, f_inf: f64) -> Result<AuditReport> {
    if !traj.deterministic {
        return Err(Error::Misuse("descent audit needs a noiseless, deterministic run".into()));
    }
    if !traj.normalized {
        return Err(Error::Misuse("descent audit applies to normalized steps only".into()));
    }
    require_full_records(traj)?;
    let mut report = AuditReport { worst_margin: f64::NEG_INFINITY, ..Default::default() };
    for w in traj.records.windows(2) {
        let (now, next) = (&w[0], &w[1]);
        let gamma = now.gamma_t;
        let lhs = (next.f_value - f_inf) + gamma * now.grad_norm;
        let rhs =
            (now.f_value - f_inf) + 2.0 * gamma * now.v_err + 2.0 * gamma * now.v_t + gamma * gamma * l / 2.0;
        report.checked += 1;
        report.worst_margin = report.worst_margin.max(lhs - rhs);
        if !(lhs <= rhs + DESCENT_SLACK) {
            report.violations.push(now.t);
        }
    }
    Ok(report)
}

/// Counts steps where `𝒱_{t+1} ≤ √(1−α) 𝒱_t + √(1−α) (1/n)Σ‖v_i^{t+1} − v_i^t‖`
/// fails by more than `slack`. Pathwise valid for deterministic compressors.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn audit_contraction(traj: &Trajectory, alpha: f64, slack: f64) -> Result<AuditReport> {
    require_full_records(traj)?;
    let rho = (1.0 - alpha).max(0.0).sqrt();
    let mut report = AuditReport { worst_margin: f64::NEG_INFINITY, ..Default::default() };
    for w in traj.records.windows(2) {
        let lhs = w[1].v_t;
        let rhs = rho * w[0].v_t + rho * w[1].v_drift;
        report.checked += 1;
        report.worst_margin = report.worst_margin.max(lhs - rhs);
        if !(lhs <= rhs + slack) {
            report.violations.push(w[0].t);
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub kind: MomentumKind,
    pub seed: u64,
    pub fit: RateFit,
    /// Smallest prefix length whose γ-weighted average is at most ε.
    pub iters_to_eps: Option<usize>,
    /// Bits sent before the last state of that prefix.
    pub bits_to_eps: Option<u64>,
    pub weighted_average: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KindSummary {
    pub kind: MomentumKind,
    pub mean_slope: f64,
    /// `None` with fewer than two seeds.
    pub stderr_slope: Option<f64>,
    pub mean_iters_to_eps: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonReport {
    pub eps: f64,
    pub rows: Vec<ComparisonRow>,
    pub summaries: Vec<KindSummary>,
}

impl ComparisonReport {
    pub fn summary(&self, kind: MomentumKind) -> Option<&KindSummary> {
        self.summaries.iter().find(|s| s.kind == kind)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "kind,seed,slope,r2,iters_to_eps,bits_to_eps")?;
        for r in &self.rows {
            let opt = |x: Option<String>| x.unwrap_or_default();
            writeln!(
                out,
                "{},{},{:?},{:?},{},{}",
                r.kind,
                r.seed,
                r.fit.slope,
                r.fit.r_squared,
                opt(r.iters_to_eps.map(|x| x.to_string())),
                opt(r.bits_to_eps.map(|x| x.to_string())),
            )?;
        }
        Ok(())
    }
}

impl fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<6} {:>10} {:>10} {:>14}", "method", "slope", "stderr", "iters@eps")?;
        for s in &self.summaries {
            let se = s.stderr_slope.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
            let it = s.mean_iters_to_eps.map(|x| format!("{x:.0}")).unwrap_or_else(|| "-".into());
            writeln!(f, "{:<6} {:>10.4} {:>10} {:>14}", s.kind.name(), s.mean_slope, se, it)?;
        }
        write!(f, "(eps = {})", self.eps)
    }
}

/// `base` with `kind` swapped in and the schedule exponents reset to the
/// defaults of `kind`; γ₀ and granularity carry over. Constant schedules
/// are kept as they are.
pub fn config_for_kind(base: &RunConfig, kind: MomentumKind) -> RunConfig {
    let mut cfg = base.clone();
    cfg.kind = kind;
    if let Schedule::Decreasing { gamma0, granularity, .. } = base.schedule {
        let (p, q) = default_exponents(kind);
        cfg.schedule = Schedule::Decreasing { gamma0, p, q, granularity };
    }
    cfg
}

fn threshold_hit(traj: &Trajectory, eps: f64) -> (Option<usize>, Option<u64>) {
    let metric = prefix_metric(traj, Aggregation::GammaWeightedMean);
    match metric.iter().position(|&m| m <= eps) {
        Some(i) => (Some(i + 1), Some(traj.candidates[i].cum_bits)),
        None => (None, None),
    }
}

/// Runs every kind on every seed with its default exponents and fits the
/// γ-weighted average rate on the default window.
pub fn compare_methods(
    base: &RunConfig,
    kinds: &[MomentumKind],
    seeds: &[u64],
    eps: f64,
) -> Result<ComparisonReport> {
    if kinds.is_empty() || seeds.is_empty() {
        return Err(Error::Misuse("need at least one method and one seed".into()));
    }
    let jobs: Vec<(MomentumKind, u64)> =
        kinds.iter().flat_map(|&k| seeds.iter().map(move |&s| (k, s))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(kind, seed)| {
            let mut cfg = config_for_kind(base, kind);
            cfg.seed = seed;
            let out = run(&cfg)?;
            let fit = fit_rate(&out.trajectory, Aggregation::GammaWeightedMean, None)?;
            let (iters_to_eps, bits_to_eps) = threshold_hit(&out.trajectory, eps);
            Ok(ComparisonRow {
                kind,
                seed,
                fit,
                iters_to_eps,
                bits_to_eps,
                weighted_average: weighted_grad_average(&out.trajectory)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut summaries = Vec::new();
    for &kind in kinds {
        if summaries.iter().any(|s: &KindSummary| s.kind == kind) {
            continue;
        }
        let slopes: Vec<f64> = rows.iter().filter(|r| r.kind == kind).map(|r| r.fit.slope).collect();
        let (mean, stderr) = mean_stderr(&slopes);
        let hits: Vec<f64> = rows
            .iter()
            .filter(|r| r.kind == kind)
            .map(|r| r.iters_to_eps.map(|x| x as f64))
            .collect::<Option<Vec<_>>>()
            .unwrap_or_default();
        summaries.push(KindSummary {
            kind,
            mean_slope: mean,
            stderr_slope: stderr,
            mean_iters_to_eps: (!hits.is_empty()).then(|| mean_stderr(&hits).0),
        });
    }
    Ok(ComparisonReport { eps, rows, summaries })
}

fn mean_stderr(xs: &[f64]) -> (f64, Option<f64>) {
    let k = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / k;
    if xs.len() < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, Some((var / k).sqrt()))
}
