//! Finite-difference checks of every differentiable op and of the whole
//! small network.
//!
//! `cargo run --release --example gradcheck -- [seeds]`

use omnicap::model::{model_gradcheck, ModelConfig};
use omnicap::numerics::gradcheck::{op_suite, GradCheckConfig};

fn main() -> omnicap::Result<()> {
    let seeds = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let cfg = GradCheckConfig::default();
    for r in op_suite(seeds, &cfg)? {
        println!("{:<24} {:.2e} {}", r.name, r.max_error, if r.passed { "ok" } else { "FAIL" });
    }
    let r = model_gradcheck(&ModelConfig::micro(), 0, &GradCheckConfig { max_entries: Some(4), ..cfg })?;
    println!(
        "{:<24} {:.2e} {} ({} tensors)",
        r.name,
        r.max_error,
        if r.passed { "ok" } else { "FAIL" },
        r.tensors.len()
    );
    Ok(())
}
