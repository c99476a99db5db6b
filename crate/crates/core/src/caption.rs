//! Quality captions: "A {level}-quality omnidirectional image with {situation}. It {recommendation}."
//!
//! The score is mapped to a quality level with fixed thresholds, the most
//! probable distortion situation is taken from the classifier, and the
//! recommendation comes from a 3×4 table indexed by both.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::model::ModelOutput;

pub const GOOD_THRESHOLD: f64 = 2.5;
pub const FAIR_THRESHOLD: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QualityLevel {
    Good,
    Fair,
    Poor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DistortionSituation {
    CnoDist,
    CdistR1,
    CdistR2,
    CdistGl,
}

/// Ordered from most to least favorable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Recommendation {
    ShouldSave,
    RecommendSave,
    RecommendDiscard,
    ShouldDiscard,
}

impl QualityLevel {
    pub const ALL: [QualityLevel; 3] = [QualityLevel::Good, QualityLevel::Fair, QualityLevel::Poor];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn anchor(self) -> f64 {
        3.0 - self.index() as f64
    }

    pub fn word(self) -> &'static str {
        match self {
            QualityLevel::Good => "good",
            QualityLevel::Fair => "fair",
            QualityLevel::Poor => "poor",
        }
    }
}

impl DistortionSituation {
    pub const ALL: [DistortionSituation; 4] = [
        DistortionSituation::CnoDist,
        DistortionSituation::CdistR1,
        DistortionSituation::CdistR2,
        DistortionSituation::CdistGl,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL.get(i).copied().ok_or_else(|| Error::Argument(format!("situation index {i} outside 0..4")))
    }

    pub fn phrase(self) -> &'static str {
        match self {
            DistortionSituation::CnoDist => "no perceptibly distorted region",
            DistortionSituation::CdistR1 => "one distorted region",
            DistortionSituation::CdistR2 => "two distorted regions",
            DistortionSituation::CdistGl => "global distortion",
        }
    }
}

impl Recommendation {
    pub const ALL: [Recommendation; 4] = [
        Recommendation::ShouldSave,
        Recommendation::RecommendSave,
        Recommendation::RecommendDiscard,
        Recommendation::ShouldDiscard,
    ];

    pub fn phrase(self) -> &'static str {
        match self {
            Recommendation::ShouldSave => "should be saved",
            Recommendation::RecommendSave => "is recommended to be saved",
            Recommendation::RecommendDiscard => "is recommended to be discarded",
            Recommendation::ShouldDiscard => "should be discarded",
        }
    }
}

macro_rules! name_parsing {
    ($ty:ty) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                fmt::Debug::fmt(self, f)
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                let s = s.trim();
                Self::ALL
                    .iter()
                    .copied()
                    .find(|v| format!("{v:?}").eq_ignore_ascii_case(s))
                    .ok_or_else(|| Error::Config(format!("unknown {} name {s:?}", stringify!($ty))))
            }
        }
    };
}

name_parsing!(QualityLevel);
name_parsing!(DistortionSituation);
name_parsing!(Recommendation);

/// Maps a predicted score to a quality level. Scores outside `[1, 3]` are
/// clamped with a warning.
pub fn score_to_level(s: f64) -> Result<QualityLevel> {
    if s.is_nan() {
        return arg_err("quality score is NaN");
    }
    let c = s.clamp(1.0, 3.0);
    if c != s {
        warn!("quality score {s} outside [1, 3], clamped to {c}");
    }
    Ok(if c >= GOOD_THRESHOLD {
        QualityLevel::Good
    } else if c >= FAIR_THRESHOLD {
        QualityLevel::Fair
    } else {
        QualityLevel::Poor
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecommendationTable {
    cells: [[Recommendation; 4]; 3],
}

impl Default for RecommendationTable {
    /// Severity `level + situation`: 0 saves, 1–2 recommend saving, 3–4
    /// recommend discarding, 5 discards.
    fn default() -> Self {
        let mut cells = [[Recommendation::ShouldSave; 4]; 3];
        for (l, row) in cells.iter_mut().enumerate() {
            for (d, cell) in row.iter_mut().enumerate() {
                *cell = match l + d {
                    0 => Recommendation::ShouldSave,
                    1 | 2 => Recommendation::RecommendSave,
                    3 | 4 => Recommendation::RecommendDiscard,
                    _ => Recommendation::ShouldDiscard,
                };
            }
        }
        Self { cells }
    }
}

impl RecommendationTable {
    /// Builds a table, rejecting one where a worse level or more distortion
    /// yields a more favorable recommendation.
    pub fn new(cells: [[Recommendation; 4]; 3]) -> Result<Self> {
        for l in 0..3 {
            for d in 0..4 {
                if l > 0 && cells[l][d] < cells[l - 1][d] {
                    return Err(Error::Config(format!(
                        "table not monotone: ({:?}, {:?}) is more favorable than ({:?}, {:?})",
                        QualityLevel::ALL[l],
                        DistortionSituation::ALL[d],
                        QualityLevel::ALL[l - 1],
                        DistortionSituation::ALL[d]
                    )));
                }
                if d > 0 && cells[l][d] < cells[l][d - 1] {
                    return Err(Error::Config(format!(
                        "table not monotone: ({:?}, {:?}) is more favorable than ({:?}, {:?})",
                        QualityLevel::ALL[l],
                        DistortionSituation::ALL[d],
                        QualityLevel::ALL[l],
                        DistortionSituation::ALL[d - 1]
                    )));
                }
            }
        }
        Ok(Self { cells })
    }

    /// Parses a JSON object mapping `"Level,Situation"` to a recommendation
    /// name, e.g. `{"Good,CnoDist": "ShouldSave", ...}`. All 12 cells are required.
    pub fn from_json(text: &str) -> Result<Self> {
        let map: BTreeMap<String, String> = serde_json::from_str(text)?;
        let mut cells: [[Option<Recommendation>; 4]; 3] = [[None; 4]; 3];
        for (key, value) in &map {
            let (l, d) = key
                .split_once(',')
                .ok_or_else(|| Error::Config(format!("table key {key:?} is not \"level,situation\"")))?;
            let l: QualityLevel = l.parse()?;
            let d: DistortionSituation = d.parse()?;
            let slot = &mut cells[l.index()][d.index()];
            if slot.is_some() {
                return Err(Error::Config(format!("duplicate table cell {key:?}")));
            }
            *slot = Some(value.parse()?);
        }
        let mut full = [[Recommendation::ShouldSave; 4]; 3];
        for l in 0..3 {
            for d in 0..4 {
                full[l][d] = cells[l][d].ok_or_else(|| {
                    Error::Config(format!(
                        "table cell {:?},{:?} missing",
                        QualityLevel::ALL[l],
                        DistortionSituation::ALL[d]
                    ))
                })?;
            }
        }
        Self::new(full)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let map: BTreeMap<String, String> = QualityLevel::ALL
            .iter()
            .flat_map(|&l| DistortionSituation::ALL.iter().map(move |&d| (l, d)))
            .map(|(l, d)| (format!("{l},{d}"), self.get(l, d).to_string()))
            .collect();
        serde_json::to_string_pretty(&map).expect("string map serializes")
    }

    pub fn get(&self, level: QualityLevel, situation: DistortionSituation) -> Recommendation {
        self.cells[level.index()][situation.index()]
    }
}

pub fn recommend(level: QualityLevel, situation: DistortionSituation, table: &RecommendationTable) -> Recommendation {
    table.get(level, situation)
}

pub fn render_caption(level: QualityLevel, situation: DistortionSituation, rec: Recommendation) -> String {
    format!("A {}-quality omnidirectional image with {}. It {}.", level.word(), situation.phrase(), rec.phrase())
}

/// Inverse of [`render_caption`].
pub fn parse_caption(text: &str) -> Result<(QualityLevel, DistortionSituation, Recommendation)> {
    let bad = || Error::Argument(format!("not a quality caption: {text:?}"));
    let rest = text.strip_prefix("A ").ok_or_else(bad)?;
    let (word, rest) = rest.split_once("-quality omnidirectional image with ").ok_or_else(bad)?;
    let (phrase, rest) = rest.split_once(". It ").ok_or_else(bad)?;
    let rec_phrase = rest.strip_suffix('.').ok_or_else(bad)?;
    let level = QualityLevel::ALL.into_iter().find(|l| l.word() == word).ok_or_else(bad)?;
    let situation = DistortionSituation::ALL.into_iter().find(|d| d.phrase() == phrase).ok_or_else(bad)?;
    let rec = Recommendation::ALL.into_iter().find(|r| r.phrase() == rec_phrase).ok_or_else(bad)?;
    Ok((level, situation, rec))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub score: f64,
    pub probs: [f64; 4],
    pub level: QualityLevel,
    pub situation: DistortionSituation,
    pub recommendation: Recommendation,
    pub text: String,
}

/// Captions a score with the given situation; `probs` is carried through unchanged.
pub fn caption(
    score: f64,
    situation: DistortionSituation,
    probs: [f64; 4],
    table: &RecommendationTable,
) -> Result<CaptionRecord> {
    let level = score_to_level(score)?;
    let recommendation = recommend(level, situation, table);
    Ok(CaptionRecord {
        score,
        probs,
        level,
        situation,
        recommendation,
        text: render_caption(level, situation, recommendation),
    })
}

/// Captions a model prediction using its most probable situation.
pub fn caption_output(out: &ModelOutput, table: &RecommendationTable) -> Result<CaptionRecord> {
    caption(out.score, DistortionSituation::from_index(out.situation())?, out.probs, table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholds() {
        assert_eq!(score_to_level(2.5).unwrap(), QualityLevel::Good);
        assert_eq!(score_to_level(2.4999).unwrap(), QualityLevel::Fair);
        assert_eq!(score_to_level(1.5).unwrap(), QualityLevel::Fair);
        assert_eq!(score_to_level(1.4999).unwrap(), QualityLevel::Poor);
        assert_eq!(score_to_level(7.0).unwrap(), QualityLevel::Good);
        assert_eq!(score_to_level(-1.0).unwrap(), QualityLevel::Poor);
        assert!(score_to_level(f64::NAN).is_err());
    }

    #[test]
    fn default_table_is_monotone_and_round_trips() {
        let t = RecommendationTable::default();
        assert_eq!(RecommendationTable::new(t.cells).unwrap(), t);
        assert_eq!(RecommendationTable::from_json(&t.to_json()).unwrap(), t);
    }

    #[test]
    fn non_monotone_or_partial_tables_fail() {
        let mut cells = RecommendationTable::default().cells;
        cells[2][3] = Recommendation::ShouldSave;
        assert!(matches!(RecommendationTable::new(cells), Err(Error::Config(_))));
        assert!(matches!(RecommendationTable::from_json(r#"{"Good,CnoDist":"ShouldSave"}"#), Err(Error::Config(_))));
        assert!(RecommendationTable::from_json(r#"{"Great,CnoDist":"ShouldSave"}"#).is_err());
    }

    #[test]
    fn anchors() {
        assert_eq!(QualityLevel::ALL.map(QualityLevel::anchor), [3.0, 2.0, 1.0]);
        assert_eq!("cdistr2".parse::<DistortionSituation>().unwrap(), DistortionSituation::CdistR2);
    }

    #[test]
    fn malformed_captions_are_rejected() {
        assert!(
            parse_caption("A great-quality omnidirectional image with global distortion. It should be saved.").is_err()
        );
        assert!(
            parse_caption("A good-quality omnidirectional image with global distortion. It should be saved").is_err()
        );
    }
}
