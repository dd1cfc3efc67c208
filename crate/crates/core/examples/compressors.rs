//! Top-K versus Rand-K: contraction gap, wire format and payload size.
//!
//! cargo run --example compressors

use ef21_momentum::compress::{contraction_gap, payload_bits};
use ef21_momentum::{derive_stream, CompressedMessage, CompressorSpec, Label, Vector};

fn main() -> ef21_momentum::Result<()> {
    let d = 100;
    let k = 10;
    let mut rng = derive_stream(1, &[Label::Tag("example")]);
    let v = Vector::new((0..d).map(|_| rng.standard_normal()).collect())?;

    for spec in [CompressorSpec::top_k(k, d)?, CompressorSpec::rand_k(k, d)?, CompressorSpec::identity(d)?] {
        let draws = 2000;
        let mut mean = 0.0;
        for _ in 0..draws {
            mean += contraction_gap(&spec, &v, &mut rng)? / draws as f64;
        }
        let msg = spec.compress(&v, &mut rng)?;
        println!(
            "{:?}: α = {:.2}, mean ‖C(v)−v‖²/‖v‖² = {:.4} (bound {:.2}), {} bits",
            spec.kind(),
            spec.alpha(),
            mean,
            1.0 - spec.alpha(),
            payload_bits(&msg)
        );
    }

    let msg = CompressorSpec::top_k(3, 8)?
        .compress(&Vector::new(vec![0.1, -5.0, 0.3, 2.0, 0.0, -0.2, 4.0, 1.0])?, &mut rng)?;
    let bytes = msg.to_bytes();
    let (back, used) = CompressedMessage::from_bytes(&bytes)?;
    println!("top-3 of an 8-vector keeps {:?} -> {:?}", back.indices(), back.values());
    assert_eq!(used, bytes.len());
    assert_eq!(back, msg);
    Ok(())
}
