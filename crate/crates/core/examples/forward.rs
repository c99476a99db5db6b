//! One forward pass of an untrained toy model on a panorama: situation
//! probabilities, quality score and the viewports the selector kept.
//!
//! `cargo run --release --example forward`

use omnicap::model::{Model, ModelConfig};
use omnicap::synth::texture;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> omnicap::Result<()> {
    let pano = texture(256, 128, &mut ChaCha8Rng::seed_from_u64(6))?;
    let model = Model::<f32>::new(ModelConfig::toy(), 6)?;
    println!("{} tensors, {} parameters", model.params.len(), model.params.num_elements());
    let out = model.predict(&pano)?;
    println!("probs {:.3?}", out.probs);
    println!("score {:.4}", out.score);
    println!("kept viewports {:?} with weights {:.3?}", out.selected, out.weights);
    Ok(())
}
