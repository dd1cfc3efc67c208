//! Fit the empirical rate exponent of one method on the standard
//! heterogeneous quadratic.
//!
//! cargo run --example rate_fit -- mvr 100000 1

use ef21_momentum::harness::{fit_rate, Aggregation};
use ef21_momentum::{run, MomentumKind, RunConfig};

fn main() -> ef21_momentum::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let kind: MomentumKind = args.first().map(|s| s.parse()).transpose()?.unwrap_or(MomentumKind::Mvr);
    let iters = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(20_000);
    let seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);

    let mut config = RunConfig::new(kind, 10, 200, iters);
    config.sigma_g = 1.0;
    config.seed = seed;
    config.record_stride = iters;
    let start = std::time::Instant::now();
    let out = run(&config)?;
    let weighted = fit_rate(&out.trajectory, Aggregation::GammaWeightedMean, None)?;
    let best = fit_rate(&out.trajectory, Aggregation::RunningMin, None)?;
    println!(
        "{kind}: T = {iters}, weighted-average slope {:.4} (R² {:.4}), running-min slope {:.4}, {:.1?}",
        weighted.slope,
        weighted.r_squared,
        best.slope,
        start.elapsed()
    );
    Ok(())
}
