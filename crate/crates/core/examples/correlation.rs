//! PLCC, SRCC and accuracy of a noisy predictor, with and without the
//! five-parameter logistic mapping.
//!
//! `cargo run --release --example correlation`

use omnicap::stats::{logistic_fit, plcc, srcc, CorrelationReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> omnicap::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pred: Vec<f64> = (0..100).map(|_| rng.random_range(0.0..1.0)).collect();
    // a saturating relation the logistic can straighten out
    let mos: Vec<f64> =
        pred.iter().map(|p| 1.0 + 2.0 / (1.0 + (-8.0 * (p - 0.5)).exp()) + rng.random_range(-0.1..0.1)).collect();

    println!("PLCC raw {:.4}, after logistic {:.4}", plcc(&pred, &mos, false)?, plcc(&pred, &mos, true)?);
    println!("SRCC {:.4}", srcc(&pred, &mos)?);
    let fit = logistic_fit(&pred, &mos)?;
    println!("beta {:.3?}, RMS residual {:.4}", fit.beta, fit.residual);

    let classes: Vec<usize> = pred.iter().map(|p| (p * 4.0) as usize).collect();
    let truth: Vec<usize> = mos.iter().map(|m| (((m - 1.0) / 2.0 * 4.0) as usize).min(3)).collect();
    let report = CorrelationReport::compute(&pred, &mos, Some((&classes, &truth)))?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}
