//! Logistic regression with label-sorted shards: each client sees mostly one
//! class, so local gradients disagree. Lossless runs only see the average
//! gradient and do not depend on the split; compressed runs do.
//!
//! cargo run --example logreg_label_sorted

use ef21_momentum::engine::Simulation;
use ef21_momentum::{CompressorChoice, MomentumKind, ProblemSpec, RunConfig};

fn main() -> ef21_momentum::Result<()> {
    for sorted_fraction in [0.0, 1.0] {
        for compressor in [CompressorChoice::Identity, CompressorChoice::TopK(0.1)] {
            let mut config = RunConfig::new(MomentumKind::Hm, 8, 40, 3000);
            config.problem = ProblemSpec::Logreg { samples_per_client: 200, sorted_fraction, ridge: 0.01 };
            config.compressor = compressor;
            config.sigma_g = 0.1;
            config.sigma_h = 0.1;
            let mut sim = Simulation::new(config)?;
            sim.run_to_end()?;

            let problem = sim.problem();
            let x = &sim.server().x;
            let full = problem.full_grad(x)?;
            let mut spread = 0.0;
            for i in 0..problem.n_clients() {
                spread += problem.grad(i, x)?.sub(&full).norm() / problem.n_clients() as f64;
            }
            let last = sim.records().last().unwrap();
            println!(
                "sorted {sorted_fraction:.1}, {:<9}: f − f* = {:.3e}, ‖∇f‖ = {:.3e}, mean ‖∇f_i − ∇f‖ = {:.3}, {:.2} Mbit",
                compressor.to_string(),
                last.f_value - problem.constants().f_inf,
                last.grad_norm,
                spread,
                last.cum_bits as f64 / 1e6
            );
        }
    }
    Ok(())
}
