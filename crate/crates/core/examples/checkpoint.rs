//! Saves a model, loads it back and checks both predict the same thing.
//!
//! `cargo run --release --example checkpoint -- [path]`

use omnicap::model::{load_checkpoint, save_checkpoint, Model, ModelConfig};
use omnicap::synth::texture;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> omnicap::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "toy.ckpt".into());
    let model = Model::<f32>::new(ModelConfig::toy(), 7)?;
    save_checkpoint(&model, &path)?;
    let loaded = load_checkpoint::<f32>(&path)?;
    println!("{path}: {} bytes", std::fs::metadata(&path)?.len());

    let pano = texture(256, 128, &mut ChaCha8Rng::seed_from_u64(7))?;
    let (a, b) = (model.predict(&pano)?, loaded.predict(&pano)?);
    println!("identical predictions: {}", a == b);
    Ok(())
}
