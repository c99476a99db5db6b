//! Quality captions from (score, situation) pairs, with the default and a
//! stricter recommendation table.
//!
//! `cargo run --release --example caption`

use omnicap::caption::{caption, parse_caption, DistortionSituation as D, Recommendation, RecommendationTable};

fn main() -> omnicap::Result<()> {
    let table = RecommendationTable::default();
    let cases = [(2.72, D::CnoDist), (2.17, D::CdistR1), (1.80, D::CdistR2), (1.00, D::CdistGl)];
    for (score, situation) in cases {
        let rec = caption(score, situation, [0.25; 4], &table)?;
        println!("{score:.2}: {}", rec.text);
        assert_eq!(parse_caption(&rec.text)?, (rec.level, rec.situation, rec.recommendation));
    }

    // any distortion at all lowers the recommendation to a discard
    let mut strict: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&table.to_json())?;
    for (key, value) in strict.iter_mut() {
        if !key.ends_with("CnoDist") && value.as_str().is_some_and(|v| v.ends_with("Save")) {
            *value = format!("{:?}", Recommendation::RecommendDiscard).into();
        }
    }
    let strict = RecommendationTable::from_json(&serde_json::to_string(&strict)?)?;
    println!("strict: {}", caption(2.72, D::CdistR1, [0.25; 4], &strict)?.text);
    Ok(())
}
