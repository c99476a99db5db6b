//! Subject screening and mean opinion scores for a simulated study where one
//! subject rates every image backwards.
//!
//! `cargo run --release --example mos`

use omnicap::stats::{compute_mos, screen_subjects, Rating, RatingTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> omnicap::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let truth: Vec<f64> = (0..30).map(|_| rng.random_range(1.0..3.0)).collect();
    let mut ratings = Vec::new();
    for s in 0..15 {
        for (i, &t) in truth.iter().enumerate() {
            let score = if s == 0 {
                (4.0 - t).round() as u8
            } else {
                (t + rng.random_range(-0.5..0.5)).round().clamp(1.0, 3.0) as u8
            };
            ratings.push(Rating { subject_id: format!("subject{s:02}"), image_id: format!("img{i:02}"), score });
        }
    }
    let table = RatingTable::new(ratings)?;
    let report = screen_subjects(&table);
    println!("kept {}, rejected {:?}", report.kept.len(), report.rejected);

    let records = compute_mos(&table.without_subjects(&report.rejected))?;
    for (r, t) in records.iter().zip(&truth).take(5) {
        println!("{}: MOS {:.2} (σ² {:.2}, n {}), truth {t:.2}", r.image_id, r.mos, r.variance, r.n_ratings);
    }
    Ok(())
}
