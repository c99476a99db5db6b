//! Layered configuration: a preset, then a TOML file, then flag-style
//! overrides, each replacing only what it sets.
//!
//! `cargo run --release --example config`

use omnicap::config::{ConfigLayer, PlanLayer, RunConfig};

fn main() -> omnicap::Result<()> {
    let file = ConfigLayer::from_toml(
        r#"
preset = "toy"
seed = 11
[plan]
m = 6
offset_deg = 60.0
[train]
epochs = 12
"#,
    )?;
    let flags = ConfigLayer { plan: PlanLayer { fov: Some(100.0), ..Default::default() }, ..Default::default() };
    let cfg = RunConfig::resolve(&[file, flags])?;
    println!("{}", serde_json::to_string_pretty(&cfg)?);

    let bad = ConfigLayer::from_toml("[model]\nk = 20\n")?;
    match RunConfig::resolve(&[bad]) {
        Ok(_) => println!("unexpectedly accepted k = 20"),
        Err(e) => println!("rejected: {e}"),
    }
    Ok(())
}
