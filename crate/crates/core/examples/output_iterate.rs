//! The returned iterate is x^t with probability γ_t / Σγ_t. Repeats a short
//! run under many seeds and compares selection frequencies with the schedule.
//!
//! cargo run --example output_iterate

use ef21_momentum::{run, Granularity, MomentumKind, RunConfig, Schedule};

fn main() -> ef21_momentum::Result<()> {
    let iters = 16;
    let reps = 4000;
    let mut counts = vec![0usize; iters];
    let mut gammas = Vec::new();
    for seed in 0..reps {
        let mut config = RunConfig::new(MomentumKind::Sgdm, 2, 4, iters);
        config.schedule = Schedule::decreasing(1.0, 0.75, 0.5, Granularity::PerIteration)?;
        config.seed = seed;
        let out = run(&config)?;
        counts[out.output_index] += 1;
        gammas = out.trajectory.gammas();
    }
    let total: f64 = gammas.iter().sum();
    println!("{:>3} {:>10} {:>10}", "t", "observed", "expected");
    for (t, (c, g)) in counts.iter().zip(&gammas).enumerate() {
        println!("{t:>3} {:>10.4} {:>10.4}", *c as f64 / reps as f64, g / total);
    }
    Ok(())
}
