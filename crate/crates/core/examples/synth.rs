//! Writes a small synthetic dataset with a manifest and prints what each
//! situation class looks like.
//!
//! `cargo run --release --example synth -- [out_dir] [n]`

use omnicap::synth::{generate, write_dataset, SynthConfig};

fn main() -> omnicap::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "synth_out".into());
    let n = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);
    let items = generate(&SynthConfig { n, ..Default::default() })?;
    let manifest = write_dataset(&items, &out)?;
    println!("{} images written to {out}", manifest.entries.len());
    for it in items.iter().take(8) {
        let bands: Vec<String> =
            it.bands.iter().map(|b| format!("{:+.0}°±{:.0}", b.center_deg, b.width_deg / 2.0)).collect();
        println!(
            "{} situation {} {:?} level {} area {:.2} MOS {:.2} bands {bands:?}",
            it.id, it.situation, it.kind, it.level, it.area, it.mos
        );
    }
    Ok(())
}
