//! Multi-seed comparison of momentum kinds, printed as a table and written as CSV.
//!
//! cargo run --example compare -- 20000 compare.csv

use ef21_momentum::{compare_methods, MomentumKind, RunConfig};

fn main() -> ef21_momentum::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let iters = args.first().and_then(|s| s.parse().ok()).unwrap_or(10_000);

    let mut base = RunConfig::new(MomentumKind::Sgdm, 10, 100, iters);
    base.sigma_g = 1.0;
    base.record_stride = iters;
    let report = compare_methods(&base, &MomentumKind::ALL, &[0, 1, 2], 0.1)?;
    println!("{report}");

    if let Some(path) = args.get(1) {
        report.write_csv(std::fs::File::create(path)?)?;
        println!("wrote {path}");
    }
    Ok(())
}
