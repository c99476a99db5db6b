use omnicap::caption::{
    caption, parse_caption, recommend, render_caption, score_to_level, DistortionSituation as D, QualityLevel as Q,
    Recommendation as R, RecommendationTable,
};

const GOLDENS: [(f64, D, &str); 4] = [
    (
        2.72,
        D::CnoDist,
        "A good-quality omnidirectional image with no perceptibly distorted region. It should be saved.",
    ),
    (
        2.17,
        D::CdistR1,
        "A fair-quality omnidirectional image with one distorted region. It is recommended to be saved.",
    ),
    (
        1.80,
        D::CdistR2,
        "A fair-quality omnidirectional image with two distorted regions. It is recommended to be discarded.",
    ),
    (1.00, D::CdistGl, "A poor-quality omnidirectional image with global distortion. It should be discarded."),
];

#[test]
fn figure_captions_are_byte_exact() {
    let table = RecommendationTable::default();
    for (score, situation, text) in GOLDENS {
        let rec = caption(score, situation, [0.25; 4], &table).unwrap();
        assert_eq!(rec.text.as_bytes(), text.as_bytes());
    }
}

#[test]
fn every_combination_round_trips() {
    let mut n = 0;
    for level in Q::ALL {
        for situation in D::ALL {
            for r in R::ALL {
                let text = render_caption(level, situation, r);
                assert_eq!(parse_caption(&text).unwrap(), (level, situation, r));
                n += 1;
            }
        }
    }
    assert_eq!(n, 48);
}

#[test]
fn value_to_text_thresholds() {
    assert_eq!(score_to_level(2.72).unwrap(), Q::Good);
    assert_eq!(score_to_level(2.5).unwrap(), Q::Good);
    assert_eq!(score_to_level(2.4999).unwrap(), Q::Fair);
    assert_eq!(score_to_level(1.80).unwrap(), Q::Fair);
    assert_eq!(score_to_level(1.5).unwrap(), Q::Fair);
    assert_eq!(score_to_level(1.00).unwrap(), Q::Poor);
    assert_eq!(score_to_level(7.0).unwrap(), Q::Good);
    assert_eq!(score_to_level(-1.0).unwrap(), Q::Poor);
    assert!(score_to_level(f64::NAN).is_err());
}

#[test]
fn default_table_follows_the_severity_rule() {
    let table = RecommendationTable::default();
    for level in Q::ALL {
        for situation in D::ALL {
            let expected = match level.index() + situation.index() {
                0 => R::ShouldSave,
                1 | 2 => R::RecommendSave,
                3 | 4 => R::RecommendDiscard,
                _ => R::ShouldDiscard,
            };
            assert_eq!(recommend(level, situation, &table), expected);
        }
    }
}

#[test]
fn tables_load_from_json_and_are_checked() {
    let table = RecommendationTable::default();
    let json = table.to_json();
    assert_eq!(RecommendationTable::from_json(&json).unwrap(), table);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("table.json");
    // a stricter table: anything distorted is at best a discard recommendation
    let mut v: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&json).unwrap();
    for level in ["Good", "Fair", "Poor"] {
        for sit in ["CdistR1", "CdistR2", "CdistGl"] {
            let key = v.keys().find(|k| k.eq_ignore_ascii_case(&format!("{level},{sit}"))).unwrap().clone();
            let cur = v[&key].as_str().unwrap().to_string();
            if cur.contains("Save") || cur.contains("save") {
                v.insert(key, "RecommendDiscard".into());
            }
        }
    }
    std::fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
    let strict = RecommendationTable::load(&path).unwrap();
    assert_eq!(strict.get(Q::Good, D::CdistR1), R::RecommendDiscard);
    assert_eq!(strict.get(Q::Good, D::CnoDist), R::ShouldSave);

    // a table that favors more distortion is rejected
    let mut bad = v.clone();
    let key = bad.keys().find(|k| k.eq_ignore_ascii_case("Good,CdistGl")).unwrap().clone();
    bad.insert(key, "ShouldSave".into());
    let err = RecommendationTable::from_json(&serde_json::to_string(&bad).unwrap()).unwrap_err();
    assert_eq!(err.kind(), "config");

    let mut partial = v;
    let key = partial.keys().next().unwrap().clone();
    partial.remove(&key);
    assert!(RecommendationTable::from_json(&serde_json::to_string(&partial).unwrap()).is_err());
}

#[test]
fn record_carries_score_and_probabilities() {
    let probs = [0.1, 0.6, 0.2, 0.1];
    let rec = caption(2.17, D::CdistR1, probs, &RecommendationTable::default()).unwrap();
    assert_eq!(rec.score, 2.17);
    assert_eq!(rec.probs, probs);
    let json = serde_json::to_value(&rec).unwrap();
    assert_eq!(json["text"], GOLDENS[1].2);
    assert!(json["level"].is_string() && json["situation"].is_string() && json["recommendation"].is_string());
}
