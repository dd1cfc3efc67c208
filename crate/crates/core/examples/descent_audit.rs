//! Checks the one-step descent inequality along a noiseless run, then shows
//! the audit catching a corrupted function value.
//!
//! cargo run --example descent_audit

use ef21_momentum::engine::Simulation;
use ef21_momentum::{audit_descent, MomentumKind, RunConfig};

fn main() -> ef21_momentum::Result<()> {
    for kind in MomentumKind::ALL {
        let mut sim = Simulation::new(RunConfig::new(kind, 10, 100, 1000))?;
        sim.run_to_end()?;
        let c = sim.problem().constants();
        let report = audit_descent(&sim.trajectory(), c.l, c.f_inf)?;
        println!(
            "{kind}: {} violations in {} steps, worst margin {:.3e}",
            report.violation_count(),
            report.checked,
            report.worst_margin
        );
    }

    let mut sim = Simulation::new(RunConfig::new(MomentumKind::Sgdm, 10, 100, 200))?;
    sim.run_to_end()?;
    let c = sim.problem().constants();
    let mut traj = sim.trajectory();
    traj.records[50].f_value += 0.5;
    let report = audit_descent(&traj, c.l, c.f_inf)?;
    println!("after corrupting f(x^50): violations at {:?}", report.violations);
    Ok(())
}
