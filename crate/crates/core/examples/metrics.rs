//! Full-reference metrics between a panorama and a blurred copy.
//!
//! `cargo run --release --example metrics`

use omnicap::frmetrics::MetricKind;
use omnicap::synth::{distort, texture, DistortionKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> omnicap::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let reference = texture(256, 128, &mut rng)?;
    for kind in DistortionKind::ALL {
        let distorted = distort(&reference, kind, 2, &mut rng)?;
        print!("{kind:?}:");
        for metric in MetricKind::ALL {
            print!(" {}={:.3}", metric.name(), metric.compute(&reference, &distorted)?.value);
        }
        println!();
    }
    let same = MetricKind::WsPsnr.compute(&reference, &reference)?;
    println!("identical inputs: {}", serde_json::to_string(&same)?);
    Ok(())
}
