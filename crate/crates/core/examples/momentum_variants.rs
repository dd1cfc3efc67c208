//! The five momentum estimators side by side on one noisy problem, with
//! their oracle cost per client and iteration.
//!
//! cargo run --example momentum_variants

use ef21_momentum::{run, MomentumKind, RunConfig};

fn main() -> ef21_momentum::Result<()> {
    let iters = 5000;
    println!("{:<5} {:>8} {:>12} {:>12} {:>12}", "kind", "oracles", "‖∇f(x^T)‖", "U_T", "weighted");
    for kind in MomentumKind::ALL {
        let mut config = RunConfig::new(kind, 10, 100, iters);
        config.sigma_g = 1.0;
        config.sigma_h = 1.0;
        config.seed = 3;
        let out = run(&config)?;
        let last = out.trajectory.records.last().unwrap();
        let cost = kind.calls_per_step();
        let weighted = ef21_momentum::weighted_grad_average(&out.trajectory)?;
        println!(
            "{:<5} {:>8} {:>12.4e} {:>12.4e} {:>12.4e}",
            kind.name(),
            format!("{}g+{}h", cost.grads, cost.hvps),
            last.grad_norm,
            last.u_t,
            weighted
        );
    }
    Ok(())
}
