//! Per-client momentum estimators `v_i^{t+1}`.
//!
//! | kind | correction | oracle calls per step |
//! |------|------------|-----------------------|
//! | SGDM | none | 1 gradient |
//! | IGT  | gradient at the extrapolated point `y = x⁺ + ((1−η)/η)(x⁺ − x)` | 1 gradient |
//! | RHM  | `∇²f_i(x̂; ξ)(x⁺ − x)` at `x̂ = q x⁺ + (1−q) x`, `q ~ U(0,1)` | 1 gradient + 1 HVP |
//! | HM   | `∇²f_i(x⁺; ξ)(x⁺ − x)` | 1 gradient + 1 HVP |
//! | MVR  | `∇f_i(x⁺; ξ) − ∇f_i(x; ξ)` on the same sample | 2 gradients |
//!
//! Every kind finishes with `v⁺ = (1−η) ṽ + η ∇f_i(x⁺; ξ)`, where `ṽ` is the
//! corrected previous estimate (`ṽ = v` for SGDM and IGT).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::problems::Problem;
use crate::rng::{Label, RngStream};
use crate::vector::Vector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MomentumKind {
    Sgdm,
    Igt,
    Rhm,
    Hm,
    Mvr,
}

impl MomentumKind {
    pub const ALL: [MomentumKind; 5] =
        [MomentumKind::Sgdm, MomentumKind::Igt, MomentumKind::Rhm, MomentumKind::Hm, MomentumKind::Mvr];

    pub fn name(&self) -> &'static str {
        match self {
            MomentumKind::Sgdm => "sgdm",
            MomentumKind::Igt => "igt",
            MomentumKind::Rhm => "rhm",
            MomentumKind::Hm => "hm",
            MomentumKind::Mvr => "mvr",
        }
    }

    /// Oracle calls made by one update of one client.
    pub fn calls_per_step(&self) -> CallTally {
        match self {
            MomentumKind::Sgdm | MomentumKind::Igt => CallTally { grads: 1, hvps: 0 },
            MomentumKind::Mvr => CallTally { grads: 2, hvps: 0 },
            MomentumKind::Hm | MomentumKind::Rhm => CallTally { grads: 1, hvps: 1 },
        }
    }
}

impl fmt::Display for MomentumKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MomentumKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MomentumKind::ALL.into_iter().find(|k| k.name() == s.to_ascii_lowercase()).ok_or_else(|| {
            Error::config("method", format!("unknown method `{s}`; expected one of sgdm, igt, rhm, hm, mvr"))
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentumState {
    pub v: Vector,
}

impl MomentumState {
    pub fn new(v: Vector) -> Self {
        MomentumState { v }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CallTally {
    pub grads: u64,
    pub hvps: u64,
}

impl std::ops::AddAssign for CallTally {
    fn add_assign(&mut self, rhs: Self) {
        self.grads += rhs.grads;
        self.hvps += rhs.hvps;
    }
}

/// Raw output of one stochastic oracle call.
#[derive(Clone, Debug, PartialEq)]
pub enum OracleCall {
    Grad(Vector),
    Hvp(Vector),
}

/// Counting (and optionally recording) access to one client's stochastic
/// oracles. Momentum updates reach the problem only through this type.
pub struct StochasticOracle<'a> {
    problem: &'a Problem,
    client: usize,
    tally: CallTally,
    record: Option<Vec<OracleCall>>,
}

impl<'a> StochasticOracle<'a> {
    pub fn new(problem: &'a Problem, client: usize) -> Self {
        StochasticOracle { problem, client, tally: CallTally::default(), record: None }
    }

    pub fn recording(problem: &'a Problem, client: usize) -> Self {
        StochasticOracle { record: Some(Vec::new()), ..Self::new(problem, client) }
    }

    pub fn tally(&self) -> CallTally {
        self.tally
    }

    /// Drains the calls recorded since the last take.
    pub fn take_record(&mut self) -> Vec<OracleCall> {
        self.record.as_mut().map(std::mem::take).unwrap_or_default()
    }

    fn grad(&mut self, x: &Vector, xi: &RngStream) -> Result<Vector> {
        self.tally.grads += 1;
        let g = self.problem.stoch_grad(self.client, x, xi)?;
        if let Some(rec) = self.record.as_mut() {
            rec.push(OracleCall::Grad(g.clone()));
        }
        Ok(g)
    }

    fn hvp(&mut self, x: &Vector, u: &Vector, xi: &RngStream) -> Result<Vector> {
        self.tally.hvps += 1;
        let h = self.problem.stoch_hvp(self.client, x, u, xi)?;
        if let Some(rec) = self.record.as_mut() {
            rec.push(OracleCall::Hvp(h.clone()));
        }
        Ok(h)
    }
}

/// Inputs shared by every kind for one update.
#[derive(Clone, Copy, Debug)]
pub struct UpdateInputs<'a> {
    pub x_prev: &'a Vector,
    pub x_next: &'a Vector,
    pub eta: f64,
    /// Sample `ξ_i^{t+1}`; every oracle call of the update replays it.
    pub xi: &'a RngStream,
    /// Source of the RHM interpolation weight `q_t` (first uniform draw).
    pub q_stream: &'a RngStream,
    /// RHM only: take the gradient term at `x̂` on an independent sample.
    pub rhm_independent_batch: bool,
}

pub fn update_momentum(
    kind: MomentumKind,
    state: &MomentumState,
    oracle: &mut StochasticOracle<'_>,
    inputs: &UpdateInputs<'_>,
) -> Result<MomentumState> {
    let UpdateInputs { x_prev, x_next, eta, xi, .. } = *inputs;
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::config("eta", format!("must lie in (0, 1], got {eta}")));
    }
    let d = state.v.len();
    x_prev.check_len(d)?;
    x_next.check_len(d)?;
    let keep = 1.0 - eta;

    let v = match kind {
        MomentumKind::Sgdm => {
            let g = oracle.grad(x_next, xi)?;
            Vector::lincomb(keep, &state.v, eta, &g)
        }
        MomentumKind::Igt => {
            let theta = keep / eta;
            let y = Vector::from_raw(
                x_next.as_slice().iter().zip(x_prev.as_slice()).map(|(n, p)| n + theta * (n - p)).collect(),
            );
            let g = oracle.grad(&y, xi)?;
            Vector::lincomb(keep, &state.v, eta, &g)
        }
        MomentumKind::Hm => {
            let g = oracle.grad(x_next, xi)?;
            let h = oracle.hvp(x_next, &x_next.sub(x_prev), xi)?;
            Vector::lincomb(keep, &state.v.add(&h), eta, &g)
        }
        MomentumKind::Rhm => {
            let q = inputs.q_stream.replay().uniform();
            let x_hat = Vector::lincomb(q, x_next, 1.0 - q, x_prev);
            let g = if inputs.rhm_independent_batch {
                oracle.grad(&x_hat, &xi.child(Label::Tag("independent")))?
            } else {
                oracle.grad(x_next, xi)?
            };
            let h = oracle.hvp(&x_hat, &x_next.sub(x_prev), xi)?;
            Vector::lincomb(keep, &state.v.add(&h), eta, &g)
        }
        MomentumKind::Mvr => {
            let g_next = oracle.grad(x_next, xi)?;
            let g_prev = oracle.grad(x_prev, xi)?;
            let corrected = state.v.add(&g_next).sub(&g_prev);
            Vector::lincomb(keep, &corrected, eta, &g_next)
        }
    };
    Ok(MomentumState { v })
}

/// One recorded update: the momentum weight and the raw oracle outputs in
/// call order.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordedStep {
    pub eta: f64,
    pub calls: Vec<OracleCall>,
}

/// Re-evaluates the momentum recursion from recorded oracle outputs.
///
/// Call order per kind: SGDM/IGT `[grad]`, HM/RHM `[grad, hvp]`,
/// MVR `[grad(x⁺), grad(x)]`.
pub fn replay_oracle(kind: MomentumKind, steps: &[RecordedStep], v0: &Vector) -> Result<Vector> {
    let mut v: Vec<f64> = v0.as_slice().to_vec();
    for (t, step) in steps.iter().enumerate() {
        let keep = 1.0 - step.eta;
        let eta = step.eta;
        let shape = |found: &str| {
            Error::Replay(format!("step {t}: {kind} expects a different call pattern, found {found}"))
        };
        let check = |w: &Vector| -> Result<()> {
            w.check_len(v0.len()).map_err(|_| Error::Replay(format!("step {t}: wrong length")))
        };
        match (kind, step.calls.as_slice()) {
            (MomentumKind::Sgdm | MomentumKind::Igt, [OracleCall::Grad(g)]) => {
                check(g)?;
                for j in 0..v.len() {
                    v[j] = keep * v[j] + eta * g[j];
                }
            }
            (MomentumKind::Hm | MomentumKind::Rhm, [OracleCall::Grad(g), OracleCall::Hvp(h)]) => {
                check(g)?;
                check(h)?;
                for j in 0..v.len() {
                    let corrected = v[j] + h[j];
                    v[j] = keep * corrected + eta * g[j];
                }
            }
            (MomentumKind::Mvr, [OracleCall::Grad(g_next), OracleCall::Grad(g_prev)]) => {
                check(g_next)?;
                check(g_prev)?;
                for j in 0..v.len() {
                    let corrected = v[j] + g_next[j] - g_prev[j];
                    v[j] = keep * corrected + eta * g_next[j];
                }
            }
            (_, calls) => return Err(shape(&format!("{} calls", calls.len()))),
        }
    }
    Ok(Vector::from_raw(v))
}
