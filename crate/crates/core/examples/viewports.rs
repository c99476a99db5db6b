//! Cuts the eight equatorial viewports out of a synthetic panorama and
//! writes them as PNG files.
//!
//! `cargo run --release --example viewports -- [out_dir]`

use omnicap::geometry::{equatorial_plan, spherical_plan};
use omnicap::synth::texture;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> omnicap::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "viewports_out".into());
    std::fs::create_dir_all(&out)?;
    let pano = texture(512, 256, &mut ChaCha8Rng::seed_from_u64(1))?;
    pano.save(format!("{out}/panorama.png"))?;

    let plan = equatorial_plan(8, 45.0, 90.0, 128)?;
    for (i, (vp, spec)) in plan.extract(&pano).iter().zip(&plan.specs).enumerate() {
        let path = format!("{out}/viewport_{i:02}.png");
        vp.save(&path)?;
        println!("{path}: lon {:+.0}°, lat {:+.0}°", spec.center.lon.to_degrees(), spec.center.lat.to_degrees());
    }

    // near-uniform coverage of the whole sphere instead of the equator
    let sphere = spherical_plan(12)?;
    println!(
        "spherical plan: {} viewports, first at lat {:+.1}°",
        sphere.len(),
        sphere.specs[0].center.lat.to_degrees()
    );
    Ok(())
}
