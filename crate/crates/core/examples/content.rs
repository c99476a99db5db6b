//! Spatial information and colorfulness of a few panoramas.
//!
//! `cargo run --release --example content`

use omnicap::frmetrics::{colorfulness, spatial_information};
use omnicap::synth::texture;
use omnicap::ErpImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> omnicap::Result<()> {
    let gray = ErpImage::constant(128, 64, 3, 0.5)?;
    let red = ErpImage::from_fn(128, 64, 3, |_, _, c| if c == 0 { 1.0 } else { 0.0 })?;
    let textured = texture(256, 128, &mut ChaCha8Rng::seed_from_u64(3))?;
    for (name, img) in [("gray", &gray), ("red", &red), ("texture", &textured)] {
        println!("{name:>8}: SI {:.4}  CF {:.4}", spatial_information(img), colorfulness(img)?);
    }
    Ok(())
}
