//! Normalized EF21 with momentum variants: a simulator for compressed
//! distributed non-convex optimization, plus tools to measure its rates.
//!
//! ```
//! use ef21_momentum::{run, MomentumKind, RunConfig};
//!
//! let mut config = RunConfig::new(MomentumKind::Mvr, 4, 20, 200);
//! config.sigma_g = 0.5;
//! let out = run(&config).unwrap();
//! assert_eq!(out.trajectory.candidates.len(), 200);
//! ```

pub mod cli;
pub mod compress;
pub mod engine;
pub mod error;
pub mod harness;
pub mod momentum;
pub mod problems;
pub mod rng;
pub mod schedule;
pub mod vector;

pub use compress::{CompressedMessage, CompressorChoice, CompressorKind, CompressorSpec};
pub use engine::{run, run_with_problem, ProblemSpec, RunConfig, RunOutput, Simulation, Trajectory};
pub use error::{Error, Result};
pub use harness::{audit_descent, compare_methods, fit_rate, weighted_grad_average, Aggregation};
pub use momentum::MomentumKind;
pub use problems::{make_hetero_quadratics, make_label_sorted_logreg, NoiseModel, Problem};
pub use rng::{derive_stream, Label, RngStream};
pub use schedule::{Granularity, Schedule};
pub use vector::Vector;
