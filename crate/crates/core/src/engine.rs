//! Simulated server/client loop of normalized EF21 with momentum.
//!
//! One iteration, in order:
//!
//! 1. the server moves `x⁺ = x − γ_t g/‖g‖` (or `x − γ_t g` for the
//!    non-normalized baseline) and broadcasts `x⁺`;
//! 2. each client updates its momentum `v_i` at `(x, x⁺)`;
//! 3. each client sends `c_i = C(v_i − g_i)` and sets `g_i += c_i`;
//! 4. the server sets `g += (1/n) Σ c_i`, summing in client order.
//!
//! With the identity compressor the memories are assigned (`g_i = v_i`,
//! `g = mean g_i`) rather than incremented, which is the same update without
//! the rounding of `g_i + (v_i − g_i)`.
//!
//! Client work may run on the rayon pool; aggregation is always sequential,
//! so results do not depend on thread count.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::compress::{payload_bits, CompressedMessage, CompressorChoice, CompressorKind, CompressorSpec};
use crate::error::{Error, Result};
use crate::momentum::{
    update_momentum, CallTally, MomentumKind, MomentumState, RecordedStep, StochasticOracle, UpdateInputs,
};
use crate::problems::{make_hetero_quadratics, make_label_sorted_logreg, NoiseModel, Problem};
use crate::rng::{derive_stream, Label, RngStream};
use crate::schedule::{Granularity, Schedule, DEFAULT_GAMMA0};
use crate::vector::Vector;

/// Generator and parameters of the problem instance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProblemSpec {
    Quadratic { heterogeneity: f64, condition: f64 },
    Logreg { samples_per_client: usize, sorted_fraction: f64, ridge: f64 },
}

impl ProblemSpec {
    pub fn default_quadratic() -> Self {
        ProblemSpec::Quadratic { heterogeneity: 1.0, condition: 10.0 }
    }

    pub fn default_logreg() -> Self {
        ProblemSpec::Logreg { samples_per_client: 100, sorted_fraction: 0.5, ridge: 0.01 }
    }

    pub fn build(&self, n: usize, d: usize, seed: u64, noise: NoiseModel) -> Result<Problem> {
        let p = match *self {
            ProblemSpec::Quadratic { heterogeneity, condition } => {
                make_hetero_quadratics(n, d, heterogeneity, condition, seed)?
            }
            ProblemSpec::Logreg { samples_per_client, sorted_fraction, ridge } => {
                make_label_sorted_logreg(n, d, samples_per_client, sorted_fraction, ridge, seed)?
            }
        };
        Ok(p.with_noise(noise))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub kind: MomentumKind,
    pub schedule: Schedule,
    pub compressor: CompressorChoice,
    pub problem: ProblemSpec,
    pub sigma_g: f64,
    pub sigma_h: f64,
    pub n: usize,
    pub d: usize,
    /// Number of iterations `T`.
    pub iters: usize,
    pub seed: u64,
    /// `false` selects the non-normalized EF21 baseline step `x − γ g`.
    pub normalized: bool,
    pub rhm_independent_batch: bool,
    /// Full metrics every `record_stride` states (the final state is always recorded).
    pub record_stride: usize,
    /// Run client updates on the rayon pool.
    pub parallel: bool,
    /// Standard deviation of `x⁰` is `init_scale / √d` per coordinate.
    pub init_scale: f64,
}

impl RunConfig {
    /// Defaults for `kind`: decreasing schedule with its exponents, γ₀ = 1,
    /// Top-K 10%, heterogeneous quadratic, noiseless.
    pub fn new(kind: MomentumKind, n: usize, d: usize, iters: usize) -> Self {
        RunConfig {
            kind,
            schedule: Schedule::for_kind(kind, DEFAULT_GAMMA0, Granularity::PerIteration)
                .expect("default schedule is valid"),
            compressor: CompressorChoice::TopK(0.1),
            problem: ProblemSpec::default_quadratic(),
            sigma_g: 0.0,
            sigma_h: 0.0,
            n,
            d,
            iters,
            seed: 0,
            normalized: true,
            rhm_independent_batch: false,
            record_stride: 1,
            parallel: false,
            init_scale: 1.0,
        }
    }

    pub fn noise(&self) -> NoiseModel {
        NoiseModel { sigma_g: self.sigma_g, sigma_h: self.sigma_h }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("clients", "must be at least 1"));
        }
        if self.d == 0 {
            return Err(Error::config("dim", "must be at least 1"));
        }
        if self.iters == 0 {
            return Err(Error::config("iters", "must be at least 1"));
        }
        if self.record_stride == 0 {
            return Err(Error::config("record-stride", "must be at least 1"));
        }
        for (name, s) in [("sigma-g", self.sigma_g), ("sigma-h", self.sigma_h)] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::config(name, "must be finite and nonnegative"));
            }
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::config("init-scale", "must be finite and nonnegative"));
        }
        self.compressor.resolve(self.d)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientState {
    pub g: Vector,
    pub momentum: MomentumState,
    /// Oracle calls made by this client so far.
    pub calls: CallTally,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ServerState {
    pub x: Vector,
    pub g: Vector,
    pub t: usize,
}

/// Telemetry of state `x^t`, taken before step `t` runs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRecord {
    pub t: usize,
    /// `‖∇f(x^t)‖`
    pub grad_norm: f64,
    pub f_value: f64,
    /// `(1/n) Σ ‖g_i^t − v_i^t‖`
    pub v_t: f64,
    /// `(1/n) Σ ‖v_i^t − ∇f_i(x^t)‖`
    pub u_t: f64,
    pub gamma_t: f64,
    pub eta_t: f64,
    pub cum_bits: u64,
    /// `‖(1/n) Σ v_i^t − ∇f(x^t)‖`
    pub v_err: f64,
    /// `(1/n) Σ ‖v_i^t − v_i^{t−1}‖`, zero at `t = 0`
    pub v_drift: f64,
}

/// Per-state quantities kept for every iteration regardless of stride.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepTrace {
    pub gamma: f64,
    pub grad_norm: f64,
    pub cum_bits: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// Strided full records, always including the first and last state.
    pub records: Vec<MetricsRecord>,
    /// States `0..T`, the candidates for the output iterate.
    pub candidates: Vec<StepTrace>,
    /// State `T`, if the trajectory came from a run.
    pub final_state: Option<StepTrace>,
    pub record_stride: usize,
    /// True when every oracle was exact.
    pub deterministic: bool,
    pub normalized: bool,
}

impl Trajectory {
    /// A trajectory from raw per-step series, for analysis of external data.
    pub fn from_series(grad_norms: &[f64], gammas: &[f64]) -> Result<Self> {
        if grad_norms.len() != gammas.len() {
            return Err(Error::Dimension { expected: grad_norms.len(), found: gammas.len() });
        }
        Ok(Trajectory {
            records: Vec::new(),
            candidates: grad_norms
                .iter()
                .zip(gammas)
                .map(|(&grad_norm, &gamma)| StepTrace { gamma, grad_norm, cum_bits: 0 })
                .collect(),
            final_state: None,
            record_stride: 1,
            deterministic: false,
            normalized: true,
        })
    }

    pub fn gammas(&self) -> Vec<f64> {
        self.candidates.iter().map(|s| s.gamma).collect()
    }

    pub fn grad_norms(&self) -> Vec<f64> {
        self.candidates.iter().map(|s| s.grad_norm).collect()
    }
}

struct ClientOutcome {
    message: CompressedMessage,
    drift: f64,
}

/// A running simulation: problem, server and client states, telemetry.
pub struct Simulation {
    config: RunConfig,
    problem: Problem,
    compressor: CompressorSpec,
    server: ServerState,
    clients: Vec<ClientState>,
    cum_bits: u64,
    last_drift: f64,
    records: Vec<MetricsRecord>,
    traces: Vec<StepTrace>,
    replay_logs: Option<Vec<Vec<RecordedStep>>>,
    trace_sink: Option<Box<dyn Write + Send>>,
}

/// `ξ_i^{t+1}` for client `i` at iteration `t`.
pub fn minibatch_stream(seed: u64, client: usize, t: usize) -> RngStream {
    derive_stream(seed, &[Label::Tag("minibatch"), Label::Client(client), Label::Step(t as u64)])
}

/// Source of `q_t`, shared by all clients.
pub fn interpolation_stream(seed: u64, t: usize) -> RngStream {
    derive_stream(seed, &[Label::Tag("rhm-q"), Label::Step(t as u64)])
}

pub fn compression_stream(seed: u64, client: usize, t: usize) -> RngStream {
    derive_stream(seed, &[Label::Tag("compress"), Label::Client(client), Label::Step(t as u64)])
}

/// Standard initial point: Gaussian with per-coordinate std `init_scale/√d`.
pub fn initial_point(config: &RunConfig) -> Vector {
    let mut rng = derive_stream(config.seed, &[Label::Tag("init")]);
    let s = config.init_scale / (config.d as f64).sqrt();
    Vector::from_raw((0..config.d).map(|_| s * rng.standard_normal()).collect())
}

pub fn build_problem(config: &RunConfig) -> Result<Problem> {
    config.problem.build(config.n, config.d, config.seed, config.noise())
}

/// Builds the problem and the initial states: `v_i⁰ = g_i⁰ = ∇f_i(x⁰)`.
pub fn init(config: &RunConfig) -> Result<(ServerState, Vec<ClientState>, Problem)> {
    config.validate()?;
    let problem = build_problem(config)?;
    let x0 = initial_point(config);
    let (server, clients) = initial_states(&problem, x0)?;
    Ok((server, clients, problem))
}

fn initial_states(problem: &Problem, x0: Vector) -> Result<(ServerState, Vec<ClientState>)> {
    let d = problem.dim();
    x0.check_len(d)?;
    let clients = (0..problem.n_clients())
        .map(|i| {
            let g = problem.grad(i, &x0)?;
            Ok(ClientState { momentum: MomentumState::new(g.clone()), g, calls: CallTally::default() })
        })
        .collect::<Result<Vec<_>>>()?;
    let g = Vector::mean(clients.iter().map(|c| &c.g), d);
    Ok((ServerState { x: x0, g, t: 0 }, clients))
}

impl Simulation {
    pub fn new(config: RunConfig) -> Result<Self> {
        let (server, clients, problem) = init(&config)?;
        Self::assemble(config, problem, server, clients)
    }

    /// Runs `config` on a caller-supplied problem and initial point. The
    /// problem's own dimensions override `config.n` and `config.d`.
    pub fn with_problem(mut config: RunConfig, problem: Problem, x0: Vector) -> Result<Self> {
        config.n = problem.n_clients();
        config.d = problem.dim();
        config.sigma_g = problem.noise().sigma_g;
        config.sigma_h = problem.noise().sigma_h;
        config.validate()?;
        let (server, clients) = initial_states(&problem, x0)?;
        Self::assemble(config, problem, server, clients)
    }

    fn assemble(
        config: RunConfig,
        problem: Problem,
        server: ServerState,
        clients: Vec<ClientState>,
    ) -> Result<Self> {
        let compressor = config.compressor.resolve(config.d)?;
        let mut sim = Simulation {
            config,
            problem,
            compressor,
            server,
            clients,
            cum_bits: 0,
            last_drift: 0.0,
            records: Vec::new(),
            traces: Vec::new(),
            replay_logs: None,
            trace_sink: None,
        };
        sim.observe()?;
        Ok(sim)
    }

    /// Keeps every client's raw oracle outputs for [`crate::momentum::replay_oracle`].
    pub fn enable_replay_log(&mut self) {
        self.replay_logs = Some(vec![Vec::new(); self.clients.len()]);
    }

    pub fn replay_log(&self, client: usize) -> Option<&[RecordedStep]> {
        self.replay_logs.as_ref().and_then(|l| l.get(client)).map(|v| v.as_slice())
    }

    /// Writes every transmitted message as a framed binary record, in
    /// iteration-major, client-minor order.
    pub fn set_trace_sink(&mut self, sink: Box<dyn Write + Send>) {
        self.trace_sink = Some(sink);
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn compressor(&self) -> &CompressorSpec {
        &self.compressor
    }

    pub fn server(&self) -> &ServerState {
        &self.server
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn records(&self) -> &[MetricsRecord] {
        &self.records
    }

    /// Largest `‖g − (1/n) Σ g_i‖` relative to `1 + ‖g‖`.
    pub fn mirror_gap(&self) -> f64 {
        let mean = Vector::mean(self.clients.iter().map(|c| &c.g), self.config.d);
        mean.sub(&self.server.g).norm() / (1.0 + self.server.g.norm())
    }

    /// Executes one iteration and returns the record of the new state.
    pub fn step(&mut self) -> Result<MetricsRecord> {
        let t = self.server.t;
        let gamma = self.config.schedule.gamma_at(t);
        let eta = self.config.schedule.eta_at(t);

        let x = &self.server.x;
        let g = &self.server.g;
        let x_next = if self.config.normalized {
            let g_norm = g.norm();
            if g_norm == 0.0 {
                x.clone()
            } else {
                Vector::axpy(-gamma / g_norm, g, x)?
            }
        } else {
            Vector::axpy(-gamma, g, x)?
        };

        let seed = self.config.seed;
        let kind = self.config.kind;
        let rhm_independent_batch = self.config.rhm_independent_batch;
        let q_stream = interpolation_stream(seed, t);
        let problem = &self.problem;
        let compressor = &self.compressor;
        let x_prev = &self.server.x;
        let x_next_ref = &x_next;
        let logging = self.replay_logs.is_some();

        let work = |(i, client): (usize, &mut ClientState)| -> Result<(ClientOutcome, Option<RecordedStep>)> {
            let xi = minibatch_stream(seed, i, t);
            let mut oracle = if logging {
                StochasticOracle::recording(problem, i)
            } else {
                StochasticOracle::new(problem, i)
            };
            let inputs = UpdateInputs {
                x_prev,
                x_next: x_next_ref,
                eta,
                xi: &xi,
                q_stream: &q_stream,
                rhm_independent_batch,
            };
            let next = update_momentum(kind, &client.momentum, &mut oracle, &inputs)?;
            let drift = next.v.sub(&client.momentum.v).norm();
            let diff = next.v.sub(&client.g);
            let message = compressor.compress(&diff, &mut compression_stream(seed, i, t))?;
            if compressor.kind() == CompressorKind::Identity {
                // g_i + (v_i − g_i) can miss v_i by an ulp.
                client.g = next.v.clone();
            } else {
                message.add_into(&mut client.g);
            }
            client.momentum = next;
            client.calls += oracle.tally();
            let recorded = logging.then(|| RecordedStep { eta, calls: oracle.take_record() });
            Ok((ClientOutcome { message, drift }, recorded))
        };

        let outcomes: Vec<(ClientOutcome, Option<RecordedStep>)> = if self.config.parallel {
            self.clients.par_iter_mut().enumerate().map(work).collect::<Result<_>>()?
        } else {
            self.clients.iter_mut().enumerate().map(work).collect::<Result<_>>()?
        };

        let n = self.config.n as f64;
        let mut sum = Vector::zeros(self.config.d);
        let mut drift = 0.0;
        for (i, (outcome, recorded)) in outcomes.into_iter().enumerate() {
            outcome.message.add_into(&mut sum);
            self.cum_bits += payload_bits(&outcome.message);
            drift += outcome.drift;
            if let (Some(logs), Some(step)) = (self.replay_logs.as_mut(), recorded) {
                logs[i].push(step);
            }
            if let Some(sink) = self.trace_sink.as_mut() {
                sink.write_all(&outcome.message.to_bytes())?;
            }
        }
        if self.compressor.kind() == CompressorKind::Identity {
            self.server.g = Vector::mean(self.clients.iter().map(|c| &c.g), self.config.d);
        } else {
            for (gj, sj) in self.server.g.as_mut_slice().iter_mut().zip(sum.as_slice()) {
                *gj += sj / n;
            }
        }
        self.server.x = x_next;
        self.server.t = t + 1;
        self.last_drift = drift / n;

        let finite = self.server.x.is_finite()
            && self.server.g.is_finite()
            && self.clients.iter().all(|c| c.g.is_finite() && c.momentum.v.is_finite());
        if !finite {
            return Err(Error::NumericalFailure { t });
        }
        self.observe()
    }

    fn observe(&mut self) -> Result<MetricsRecord> {
        let t = self.server.t;
        let x = &self.server.x;
        let full_grad = self.problem.full_grad(x)?;
        let grad_norm = full_grad.norm();
        let gamma_t = self.config.schedule.gamma_at(t);
        self.traces.push(StepTrace { gamma: gamma_t, grad_norm, cum_bits: self.cum_bits });

        let recorded = t.is_multiple_of(self.config.record_stride) || t == self.config.iters;
        let n = self.config.n as f64;
        let d = self.config.d;
        let record = if recorded {
            let mut v_t = 0.0;
            let mut u_t = 0.0;
            for (i, c) in self.clients.iter().enumerate() {
                v_t += c.g.sub(&c.momentum.v).norm();
                u_t += c.momentum.v.sub(&self.problem.grad(i, x)?).norm();
            }
            let v_bar = Vector::mean(self.clients.iter().map(|c| &c.momentum.v), d);
            MetricsRecord {
                t,
                grad_norm,
                f_value: self.problem.full_value(x)?,
                v_t: v_t / n,
                u_t: u_t / n,
                gamma_t,
                eta_t: self.config.schedule.eta_at(t),
                cum_bits: self.cum_bits,
                v_err: v_bar.sub(&full_grad).norm(),
                v_drift: self.last_drift,
            }
        } else {
            MetricsRecord {
                t,
                grad_norm,
                f_value: f64::NAN,
                v_t: f64::NAN,
                u_t: f64::NAN,
                gamma_t,
                eta_t: self.config.schedule.eta_at(t),
                cum_bits: self.cum_bits,
                v_err: f64::NAN,
                v_drift: self.last_drift,
            }
        };
        if !grad_norm.is_finite() {
            return Err(Error::NumericalFailure { t });
        }
        if recorded {
            self.records.push(record);
        }
        Ok(record)
    }

    /// Runs the remaining iterations up to `T`.
    pub fn run_to_end(&mut self) -> Result<()> {
        while self.server.t < self.config.iters {
            self.step()?;
        }
        Ok(())
    }

    /// The trajectory so far; candidates are all states before the current one.
    pub fn trajectory(&self) -> Trajectory {
        let (candidates, last) = self.traces.split_at(self.traces.len() - 1);
        Trajectory {
            records: self.records.clone(),
            candidates: candidates.to_vec(),
            final_state: last.first().copied(),
            record_stride: self.config.record_stride,
            deterministic: self.problem.noise().is_noiseless() && self.compressor.is_deterministic(),
            normalized: self.config.normalized,
        }
    }
}

/// Draws an index with probability `γ_t / Σ γ_t`.
pub fn select_output_index(gammas: &[f64], rng: &mut RngStream) -> usize {
    let total: f64 = gammas.iter().sum();
    let target = rng.uniform() * total;
    let mut acc = 0.0;
    for (t, g) in gammas.iter().enumerate() {
        acc += g;
        if target < acc {
            return t;
        }
    }
    gammas.len().saturating_sub(1)
}

pub fn output_stream(seed: u64) -> RngStream {
    derive_stream(seed, &[Label::Tag("output-iterate")])
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    pub output_index: usize,
    pub x_output: Vector,
    /// Oracle calls summed over clients.
    pub calls: CallTally,
}

/// Runs `T` iterations and picks the output iterate among `x⁰ … x^{T−1}`.
pub fn run(config: &RunConfig) -> Result<RunOutput> {
    let sim = Simulation::new(config.clone())?;
    finish(sim)
}

/// [`run`] on a caller-supplied problem and initial point.
pub fn run_with_problem(config: &RunConfig, problem: Problem, x0: Vector) -> Result<RunOutput> {
    finish(Simulation::with_problem(config.clone(), problem, x0)?)
}

fn finish(mut sim: Simulation) -> Result<RunOutput> {
    let gammas: Vec<f64> = (0..sim.config.iters).map(|t| sim.config.schedule.gamma_at(t)).collect();
    let output_index = select_output_index(&gammas, &mut output_stream(sim.config.seed));
    let mut x_output = sim.server.x.clone();
    while sim.server.t < sim.config.iters {
        if sim.server.t == output_index {
            x_output = sim.server.x.clone();
        }
        sim.step()?;
    }
    let trajectory = sim.trajectory();
    debug_assert_eq!(trajectory.gammas(), gammas);
    let mut calls = CallTally::default();
    for c in &sim.clients {
        calls += c.calls;
    }
    Ok(RunOutput { trajectory, output_index, x_output, calls })
}

/// Centralized normalized momentum SGD, written without error-feedback
/// state or compression. Valid only for `n = 1` with the identity
/// compressor, where it must coincide with the engine.
pub fn run_centralized_reference(config: &RunConfig) -> Result<Vec<Vector>> {
    if config.n != 1 || config.compressor != CompressorChoice::Identity {
        return Err(Error::Misuse(
            "centralized reference needs one client and the identity compressor".into(),
        ));
    }
    config.validate()?;
    let problem = build_problem(config)?;
    let mut x = initial_point(config);
    let mut v = problem.grad(0, &x)?;
    let mut xs = vec![x.clone()];
    let d = config.d;
    for t in 0..config.iters {
        let gamma = config.schedule.gamma_at(t);
        let eta = config.schedule.eta_at(t);
        let mut x_next = x.as_slice().to_vec();
        let v_norm = v.norm();
        let step = if !config.normalized {
            gamma
        } else if v_norm > 0.0 {
            gamma / v_norm
        } else {
            0.0
        };
        for j in 0..d {
            x_next[j] -= step * v[j];
        }
        let x_next = Vector::from_raw(x_next);
        let xi = minibatch_stream(config.seed, 0, t);
        let delta = x_next.sub(&x);
        let mut fresh = problem.stoch_grad(0, &x_next, &xi)?;
        let mut corrected = v.as_slice().to_vec();
        match config.kind {
            MomentumKind::Sgdm => {}
            MomentumKind::Igt => {
                let theta = (1.0 - eta) / eta;
                let mut y = x_next.as_slice().to_vec();
                for j in 0..d {
                    y[j] += theta * (x_next[j] - x[j]);
                }
                fresh = problem.stoch_grad(0, &Vector::from_raw(y), &xi)?;
            }
            MomentumKind::Hm => {
                let h = problem.stoch_hvp(0, &x_next, &delta, &xi)?;
                for j in 0..d {
                    corrected[j] += h[j];
                }
            }
            MomentumKind::Rhm => {
                let q = interpolation_stream(config.seed, t).uniform();
                let mut x_hat = vec![0.0; d];
                for j in 0..d {
                    x_hat[j] = q * x_next[j] + (1.0 - q) * x[j];
                }
                let x_hat = Vector::from_raw(x_hat);
                if config.rhm_independent_batch {
                    fresh = problem.stoch_grad(0, &x_hat, &xi.child(Label::Tag("independent")))?;
                }
                let h = problem.stoch_hvp(0, &x_hat, &delta, &xi)?;
                for j in 0..d {
                    corrected[j] += h[j];
                }
            }
            MomentumKind::Mvr => {
                let old = problem.stoch_grad(0, &x, &xi)?;
                for j in 0..d {
                    corrected[j] = corrected[j] + fresh[j] - old[j];
                }
            }
        }
        let mut v_next = vec![0.0; d];
        for j in 0..d {
            v_next[j] = (1.0 - eta) * corrected[j] + eta * fresh[j];
        }
        v = Vector::from_raw(v_next);
        x = x_next;
        xs.push(x.clone());
    }
    Ok(xs)
}

pub const CSV_HEADER: &str = "t,grad_norm,f_value,V_t,U_t,gamma_t,eta_t,cum_bits";

#[derive(Serialize)]
struct ExportRow {
    t: usize,
    grad_norm: f64,
    f_value: f64,
    #[serde(rename = "V_t")]
    v_t: f64,
    #[serde(rename = "U_t")]
    u_t: f64,
    gamma_t: f64,
    eta_t: f64,
    cum_bits: u64,
}

impl From<&MetricsRecord> for ExportRow {
    fn from(r: &MetricsRecord) -> Self {
        ExportRow {
            t: r.t,
            grad_norm: r.grad_norm,
            f_value: r.f_value,
            v_t: r.v_t,
            u_t: r.u_t,
            gamma_t: r.gamma_t,
            eta_t: r.eta_t,
            cum_bits: r.cum_bits,
        }
    }
}

pub fn write_csv<W: Write>(records: &[MetricsRecord], mut out: W) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{}",
            r.t, r.grad_norm, r.f_value, r.v_t, r.u_t, r.gamma_t, r.eta_t, r.cum_bits
        )?;
    }
    Ok(())
}

pub fn write_jsonl<W: Write>(records: &[MetricsRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, &ExportRow::from(r)).map_err(std::io::Error::from)?;
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::DenseMatrix;

    fn v(xs: &[f64]) -> Vector {
        Vector::new(xs.to_vec()).unwrap()
    }

    fn half_norm_sq(d: usize) -> Problem {
        Problem::quadratic(vec![(DenseMatrix::identity(d), Vector::zeros(d))], NoiseModel::noiseless())
            .unwrap()
    }

    fn identity_config(kind: MomentumKind, gamma0: f64) -> RunConfig {
        let mut c = RunConfig::new(kind, 1, 2, 10);
        c.compressor = CompressorChoice::Identity;
        c.schedule = Schedule::for_kind(kind, gamma0, Granularity::PerIteration).unwrap();
        c
    }

    #[test]
    fn init_single_client() {
        let sim = Simulation::with_problem(
            identity_config(MomentumKind::Sgdm, 1.0),
            half_norm_sq(2),
            v(&[1.0, 0.0]),
        )
        .unwrap();
        assert_eq!(sim.server().g, v(&[1.0, 0.0]));
        let r = sim.records()[0];
        assert_eq!((r.t, r.v_t, r.u_t), (0, 0.0, 0.0));
    }

    #[test]
    fn init_averages_clients() {
        // ∇f_1(0) = [1,0], ∇f_2(0) = [0,1]
        let p = Problem::quadratic(
            vec![(DenseMatrix::identity(2), v(&[-1.0, 0.0])), (DenseMatrix::identity(2), v(&[0.0, -1.0]))],
            NoiseModel::noiseless(),
        )
        .unwrap();
        let mut c = identity_config(MomentumKind::Sgdm, 1.0);
        c.n = 2;
        let sim = Simulation::with_problem(c, p, Vector::zeros(2)).unwrap();
        assert_eq!(sim.server().g, v(&[0.5, 0.5]));
    }

    #[test]
    fn one_iteration_by_hand() {
        let mut sim = Simulation::with_problem(
            identity_config(MomentumKind::Sgdm, 0.1),
            half_norm_sq(2),
            v(&[1.0, 0.0]),
        )
        .unwrap();
        sim.step().unwrap();
        let s = sim.server();
        assert!((s.x[0] - 0.9).abs() < 1e-15 && s.x[1] == 0.0);
        assert!((sim.clients()[0].momentum.v[0] - 0.9).abs() < 1e-15);
        assert!((s.g[0] - 0.9).abs() < 1e-15 && s.g[1] == 0.0);
    }

    #[test]
    fn stationary_start_does_not_move() {
        let mut sim = Simulation::with_problem(
            identity_config(MomentumKind::Mvr, 1.0),
            half_norm_sq(2),
            Vector::zeros(2),
        )
        .unwrap();
        sim.step().unwrap();
        assert_eq!(sim.server().x, Vector::zeros(2));
        assert_eq!(sim.server().t, 1);
    }

    #[test]
    fn normalized_step_has_length_gamma() {
        let mut c = RunConfig::new(MomentumKind::Hm, 3, 6, 20);
        c.sigma_g = 0.3;
        let mut sim = Simulation::new(c).unwrap();
        for t in 0..20 {
            let before = sim.server().x.clone();
            sim.step().unwrap();
            let moved = sim.server().x.sub(&before).norm();
            let gamma = sim.config().schedule.gamma_at(t);
            assert!((moved - gamma).abs() <= 1e-14 * (1.0 + gamma));
        }
    }

    #[test]
    fn config_errors_name_fields() {
        let mut c = RunConfig::new(MomentumKind::Sgdm, 0, 4, 10);
        assert!(matches!(c.validate(), Err(Error::Config { field, .. }) if field == "clients"));
        c.n = 2;
        c.iters = 0;
        assert!(matches!(c.validate(), Err(Error::Config { field, .. }) if field == "iters"));
    }

    #[test]
    fn single_step_run_selects_zero() {
        let c = RunConfig::new(MomentumKind::Sgdm, 2, 4, 1);
        for seed in 0..20 {
            let mut c = c.clone();
            c.seed = seed;
            assert_eq!(run(&c).unwrap().output_index, 0);
        }
    }

    #[test]
    fn reference_requires_centralized_config() {
        let c = RunConfig::new(MomentumKind::Sgdm, 2, 4, 5);
        assert!(matches!(run_centralized_reference(&c), Err(Error::Misuse(_))));
    }

    #[test]
    fn reference_single_step_moves_gamma_along_negative_gradient() {
        let mut c = RunConfig::new(MomentumKind::Sgdm, 1, 3, 1);
        c.compressor = CompressorChoice::Identity;
        c.schedule = Schedule::for_kind(MomentumKind::Sgdm, 1e-6, Granularity::PerIteration).unwrap();
        let xs = run_centralized_reference(&c).unwrap();
        let p = build_problem(&c).unwrap();
        let g = p.grad(0, &xs[0]).unwrap();
        let dir = xs[1].sub(&xs[0]);
        assert!((dir.norm() - 1e-6).abs() < 1e-15);
        let cos = -dir.dot(&g) / (dir.norm() * g.norm());
        assert!((cos - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_layout() {
        let mut c = RunConfig::new(MomentumKind::Sgdm, 2, 4, 3);
        c.sigma_g = 0.1;
        let out = run(&c).unwrap();
        let mut buf = Vec::new();
        write_csv(&out.trajectory.records, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 1 + 4);
        let mut buf = Vec::new();
        write_jsonl(&out.trajectory.records[..1], &mut buf).unwrap();
        let row: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        for key in CSV_HEADER.split(',') {
            assert!(row.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn nan_is_reported_with_iteration() {
        // A huge non-normalized step on a stiff quadratic overflows.
        let p = Problem::quadratic(
            vec![(DenseMatrix::diagonal(&[1e150, 1.0]), Vector::zeros(2))],
            NoiseModel::noiseless(),
        )
        .unwrap();
        let mut c = identity_config(MomentumKind::Sgdm, 1.0);
        c.normalized = false;
        c.schedule = Schedule::constant(10.0, 1.0).unwrap();
        let mut sim = Simulation::with_problem(c, p, v(&[1.0, 1.0])).unwrap();
        let err = (0..10).map(|_| sim.step()).find_map(|r| r.err()).unwrap();
        assert!(matches!(err, Error::NumericalFailure { .. }));
    }
}
