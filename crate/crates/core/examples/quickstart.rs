//! Smallest useful run: ten clients, Top-K 10%, MVR momentum, noisy gradients.
//!
//! cargo run --example quickstart

use ef21_momentum::{run, MomentumKind, RunConfig};

fn main() -> ef21_momentum::Result<()> {
    let mut config = RunConfig::new(MomentumKind::Mvr, 10, 100, 2000);
    config.sigma_g = 0.5;
    let out = run(&config)?;

    for r in out.trajectory.records.iter().step_by(250) {
        println!("t = {:>4}  ‖∇f‖ = {:.4e}  f = {:.6}  V_t = {:.2e}", r.t, r.grad_norm, r.f_value, r.v_t);
    }
    let last = out.trajectory.records.last().unwrap();
    println!("final ‖∇f‖ = {:.4e}, {} bits sent", last.grad_norm, last.cum_bits);
    println!("output iterate: x^{} (drawn with probability ∝ γ_t)", out.output_index);
    Ok(())
}
