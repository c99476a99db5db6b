use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};

/// One subject's rating of one image on the 3-level scale (3 good, 2 fair, 1 poor).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rating {
    pub subject_id: String,
    pub image_id: String,
    pub score: u8,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RatingTable {
    entries: Vec<Rating>,
}

impl RatingTable {
    pub fn new(entries: Vec<Rating>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &entries {
            if !(1..=3).contains(&r.score) {
                return arg_err(format!(
                    "score {} of subject '{}' on image '{}' is not in {{1,2,3}}",
                    r.score, r.subject_id, r.image_id
                ));
            }
            if !seen.insert((r.subject_id.as_str(), r.image_id.as_str())) {
                return arg_err(format!("duplicate rating of image '{}' by '{}'", r.image_id, r.subject_id));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[Rating] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Reads CSV with header `subject_id,image_id,score`.
    pub fn read_csv(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let entries = rdr.deserialize().collect::<std::result::Result<Vec<Rating>, _>>()?;
        Self::new(entries)
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.entries {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Copy of the table with every rating by the listed subjects removed.
    pub fn without_subjects(&self, subjects: &[String]) -> RatingTable {
        let drop: HashSet<&str> = subjects.iter().map(String::as_str).collect();
        RatingTable {
            entries: self.entries.iter().filter(|r| !drop.contains(r.subject_id.as_str())).cloned().collect(),
        }
    }

    fn scores_by_image(&self) -> BTreeMap<&str, Vec<(&str, f64)>> {
        let mut by_image: BTreeMap<&str, Vec<(&str, f64)>> = BTreeMap::new();
        for r in &self.entries {
            by_image.entry(r.image_id.as_str()).or_default().push((r.subject_id.as_str(), r.score as f64));
        }
        by_image
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MosRecord {
    pub image_id: String,
    pub mos: f64,
    /// Sample variance (n − 1 denominator); zero for a single rating.
    pub variance: f64,
    #[serde(rename = "n")]
    pub n_ratings: usize,
}

impl MosRecord {
    /// Writes CSV with header `image_id,mos,variance,n`.
    pub fn write_csv(records: &[MosRecord], writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(reader: impl Read) -> Result<Vec<MosRecord>> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        Ok(rdr.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
    }
}

/// Per-image mean opinion score, ordered by image id.
pub fn compute_mos(table: &RatingTable) -> Result<Vec<MosRecord>> {
    if table.is_empty() {
        return Err(Error::Degenerate("rating table is empty".into()));
    }
    let mut out = Vec::new();
    for (image_id, scores) in table.scores_by_image() {
        let n = scores.len();
        if n == 0 {
            warn!("image '{image_id}' has no ratings; skipped");
            continue;
        }
        let mos = scores.iter().map(|(_, s)| s).sum::<f64>() / n as f64;
        let variance =
            if n > 1 { scores.iter().map(|(_, s)| (s - mos) * (s - mos)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        out.push(MosRecord { image_id: image_id.to_string(), mos, variance, n_ratings: n });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectScreening {
    pub subject_id: String,
    /// Ratings at or above the upper outlier bound.
    pub p: usize,
    /// Ratings at or below the lower outlier bound.
    pub q: usize,
    pub n_rated: usize,
    pub rejected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreeningReport {
    pub kept: Vec<String>,
    pub rejected: Vec<String>,
    pub subjects: Vec<SubjectScreening>,
}

/// Outlier-subject screening of the ITU-R BT.500 procedure.
///
/// For every image with at least two ratings and non-zero spread, the bound is
/// `2·S` when the kurtosis `β2 = m4/m2²` lies in `[2, 4]` and `√20·S`
/// otherwise (`S` is the sample standard deviation). A subject collects `P`
/// for ratings `≥ mean + bound` and `Q` for ratings `≤ mean − bound`, and is
/// rejected when `(P+Q)/N > 0.05` and `|P−Q|/(P+Q) < 0.3`.
pub fn screen_subjects(table: &RatingTable) -> ScreeningReport {
    let mut counts: BTreeMap<&str, (usize, usize, usize)> = BTreeMap::new();
    for r in table.entries() {
        counts.entry(r.subject_id.as_str()).or_default().2 += 1;
    }
    for scores in table.scores_by_image().values() {
        let n = scores.len();
        if n < 2 {
            continue;
        }
        let nf = n as f64;
        let mean = scores.iter().map(|(_, s)| s).sum::<f64>() / nf;
        let m2 = scores.iter().map(|(_, s)| (s - mean).powi(2)).sum::<f64>() / nf;
        if m2 == 0.0 {
            continue;
        }
        let m4 = scores.iter().map(|(_, s)| (s - mean).powi(4)).sum::<f64>() / nf;
        let kurtosis = m4 / (m2 * m2);
        let std = (m2 * nf / (nf - 1.0)).sqrt();
        let bound = if (2.0..=4.0).contains(&kurtosis) { 2.0 * std } else { 20f64.sqrt() * std };
        for (subject, s) in scores {
            let c = counts.get_mut(subject).expect("subject counted above");
            if *s >= mean + bound {
                c.0 += 1;
            }
            if *s <= mean - bound {
                c.1 += 1;
            }
        }
    }
    let mut report = ScreeningReport { kept: Vec::new(), rejected: Vec::new(), subjects: Vec::new() };
    for (subject, (p, q, n_rated)) in counts {
        let flagged = p + q;
        let rejected = flagged > 0
            && flagged as f64 / n_rated as f64 > 0.05
            && (p as f64 - q as f64).abs() / (flagged as f64) < 0.3;
        if rejected {
            report.rejected.push(subject.to_string());
        } else {
            report.kept.push(subject.to_string());
        }
        report.subjects.push(SubjectScreening { subject_id: subject.to_string(), p, q, n_rated, rejected });
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rating(s: &str, i: &str, score: u8) -> Rating {
        Rating { subject_id: s.into(), image_id: i.into(), score }
    }

    #[test]
    fn mos_of_simple_lists() {
        let t = RatingTable::new(
            [3, 2, 3, 2, 3]
                .iter()
                .enumerate()
                .map(|(k, &s)| rating(&format!("s{k}"), "a", s))
                .chain((0..5).map(|k| rating(&format!("s{k}"), "b", 2)))
                .collect(),
        )
        .unwrap();
        let mos = compute_mos(&t).unwrap();
        assert_abs_diff_eq!(mos[0].mos, 2.6, epsilon = 1e-12);
        assert_abs_diff_eq!(mos[0].variance, 0.3, epsilon = 1e-12);
        assert_eq!(mos[1].mos, 2.0);
        assert_eq!(mos[1].variance, 0.0);
        assert_eq!(mos[1].n_ratings, 5);
    }

    #[test]
    fn table_validation() {
        assert!(RatingTable::new(vec![rating("a", "x", 4)]).is_err());
        assert!(RatingTable::new(vec![rating("a", "x", 0)]).is_err());
        assert!(RatingTable::new(vec![rating("a", "x", 1), rating("a", "x", 2)]).is_err());
        assert!(compute_mos(&RatingTable::default()).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let csv = "subject_id,image_id,score\ns1,img1,3\ns2,img1,1\n";
        let t = RatingTable::read_csv(csv.as_bytes()).unwrap();
        assert_eq!(t.entries().len(), 2);
        let mut out = Vec::new();
        t.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), csv);
        let mut out = Vec::new();
        MosRecord::write_csv(&compute_mos(&t).unwrap(), &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "image_id,mos,variance,n\nimg1,2.0,2.0,2\n");
        assert!(RatingTable::read_csv("subject_id,image_id,score\ns1,img1,5\n".as_bytes()).is_err());
    }

    #[test]
    fn identical_subjects_are_kept() {
        let mut e = Vec::new();
        for i in 0..20 {
            for s in 0..6 {
                e.push(rating(&format!("s{s}"), &format!("i{i}"), (i % 3 + 1) as u8));
            }
        }
        let r = screen_subjects(&RatingTable::new(e).unwrap());
        assert!(r.rejected.is_empty());
        assert_eq!(r.kept.len(), 6);
    }

    /// One subject always rating 1 against nine raters giving 3. Per image:
    /// mean 2.8, m2 = 0.36, m4 = 1.0512, so β2 ≈ 8.11 (non-normal branch),
    /// S = √0.4 and the bound √20·S ≈ 2.83 exceeds the 1.8 deviation. The
    /// biased subject is therefore never counted and stays in.
    #[test]
    fn consistently_low_subject_is_not_an_outlier() {
        let mut e = Vec::new();
        for i in 0..100 {
            for s in 0..9 {
                e.push(rating(&format!("s{s}"), &format!("i{i}"), 3));
            }
            e.push(rating("low", &format!("i{i}"), 1));
        }
        let r = screen_subjects(&RatingTable::new(e).unwrap());
        let low = r.subjects.iter().find(|s| s.subject_id == "low").unwrap();
        assert_eq!((low.p, low.q, low.n_rated), (0, 0, 100));
        assert!(r.rejected.is_empty());
    }

    /// Per "good" image: 4 ratings of 3, 10 of 2 and the erratic subject's 1,
    /// giving mean 2.2, S ≈ 0.561, β2 ≈ 2.89 (normal branch), lower bound
    /// ≈ 1.078 ≥ 1. "Bad" images mirror this, so the erratic subject collects
    /// Q = 50 and P = 50 and is rejected; nobody else is flagged.
    fn erratic_table(order: &[usize]) -> RatingTable {
        let mut e = Vec::new();
        for i in 0..100 {
            let good = i % 2 == 0;
            for &s in order {
                let score = match (s, good) {
                    (14, true) => 1,
                    (14, false) => 3,
                    (0..=3, true) => 3,
                    (0..=3, false) => 1,
                    _ => 2,
                };
                e.push(rating(&format!("s{s:02}"), &format!("i{i}"), score));
            }
        }
        RatingTable::new(e).unwrap()
    }

    #[test]
    fn erratic_subject_is_rejected() {
        let order: Vec<usize> = (0..15).collect();
        let r = screen_subjects(&erratic_table(&order));
        assert_eq!(r.rejected, vec!["s14".to_string()]);
        let s = r.subjects.iter().find(|s| s.subject_id == "s14").unwrap();
        assert_eq!((s.p, s.q), (50, 50));
        assert!(r.subjects.iter().filter(|s| s.subject_id != "s14").all(|s| s.p + s.q == 0));

        let reversed: Vec<usize> = (0..15).rev().collect();
        assert_eq!(screen_subjects(&erratic_table(&reversed)), r);
    }

    #[test]
    fn without_subjects_drops_ratings() {
        let t = erratic_table(&(0..15).collect::<Vec<_>>());
        let kept = t.without_subjects(&["s14".to_string()]);
        assert_eq!(kept.entries().len(), 1400);
        let subjects: std::collections::BTreeSet<_> = kept.entries().iter().map(|r| &r.subject_id).collect();
        assert_eq!(subjects.len(), 14);
    }
}
