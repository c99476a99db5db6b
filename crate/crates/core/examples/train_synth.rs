//! Generates the synthetic panorama set and trains the toy model on it.
//!
//! `cargo run --release --example train_synth -- [n] [epochs] [seed]`

use std::time::Instant;

use omnicap::model::{Model, ModelConfig};
use omnicap::synth::{generate, SynthConfig};
use omnicap::training::{train, Dataset, ManifestEntry, TrainConfig};

fn main() -> omnicap::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let n = args.first().copied().unwrap_or(200) as usize;
    let epochs = args.get(1).copied().unwrap_or(30) as usize;
    let seed = args.get(2).copied().unwrap_or(7);

    let start = Instant::now();
    let items = generate(&SynthConfig { n, seed, ..Default::default() })?;
    let cfg = ModelConfig::toy();
    let data = Dataset::from_images(
        items
            .into_iter()
            .map(|it| {
                let entry = ManifestEntry { id: it.id, path: String::new(), mos: it.mos, situation: it.situation };
                (entry, it.image)
            })
            .collect(),
        &cfg,
    )?;
    println!("dataset ready in {:.1}s", start.elapsed().as_secs_f64());

    let model = Model::<f32>::new(cfg, seed)?;
    let tc = TrainConfig { epochs, seed, ..TrainConfig::toy() };
    let out = train(model, &data, &tc, None)?;
    let last = out.log.last().expect("at least one epoch");
    println!(
        "best epoch {} | final SRCC {:.4} PLCC {:.4} ACC {:.4} | {:.1}s",
        out.best_epoch,
        last.val_srcc,
        last.val_plcc,
        last.val_acc,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
