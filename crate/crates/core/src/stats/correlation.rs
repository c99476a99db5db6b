use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};

use super::logistic::logistic_fit;

/// Evaluation summary written as `{plcc, srcc, acc?, beta: [5], residual}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub plcc: f64,
    pub srcc: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub acc: Option<f64>,
    pub beta: [f64; 5],
    pub residual: f64,
}

impl CorrelationReport {
    /// PLCC after logistic mapping, SRCC, and optionally classification accuracy.
    pub fn compute(pred: &[f64], mos: &[f64], classes: Option<(&[usize], &[usize])>) -> Result<Self> {
        let fit = logistic_fit(pred, mos)?;
        let plcc = pearson(&fit.fitted, mos)?;
        let srcc = srcc(pred, mos)?;
        let acc = classes.map(|(p, t)| accuracy(p, t)).transpose()?;
        Ok(Self { plcc, srcc, acc, beta: fit.beta, residual: fit.residual })
    }
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return arg_err(format!("length mismatch: {} vs {}", a.len(), b.len()));
    }
    if a.len() < 3 {
        return arg_err(format!("need at least 3 samples, got {}", a.len()));
    }
    Ok(())
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Degenerate("zero variance in correlation input".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation; with `after_logistic` the predictions are first
/// mapped through the fitted five-parameter logistic.
pub fn plcc(pred: &[f64], mos: &[f64], after_logistic: bool) -> Result<f64> {
    check_pair(pred, mos)?;
    if after_logistic {
        let fit = logistic_fit(pred, mos)?;
        pearson(&fit.fitted, mos)
    } else {
        pearson(pred, mos)
    }
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = avg;
        }
        start = end;
    }
    ranks
}

/// Spearman correlation: Pearson correlation of average ranks.
pub fn srcc(pred: &[f64], mos: &[f64]) -> Result<f64> {
    check_pair(pred, mos)?;
    pearson(&average_ranks(pred), &average_ranks(mos))
}

/// Fraction of matching class labels.
pub fn accuracy(pred_class: &[usize], true_class: &[usize]) -> Result<f64> {
    if pred_class.len() != true_class.len() {
        return arg_err(format!("length mismatch: {} vs {}", pred_class.len(), true_class.len()));
    }
    if pred_class.is_empty() {
        return Err(Error::Degenerate("accuracy of an empty set".into()));
    }
    let hits = pred_class.iter().zip(true_class).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred_class.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn hand_computed_correlations() {
        let pred = [1.0, 2.0, 3.0, 5.0, 4.0];
        let mos = [1.0, 2.0, 3.0, 4.0, 5.0];
        // Σ dx·dy = 9, Σ dx² = Σ dy² = 10
        assert_abs_diff_eq!(plcc(&pred, &mos, false).unwrap(), 0.9, epsilon = 1e-12);
        // 1 − 6·2 / (5·24)
        assert_abs_diff_eq!(srcc(&pred, &mos).unwrap(), 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(plcc(&mos, &mos, false).unwrap(), 1.0, epsilon = 1e-12);
        let neg: Vec<f64> = mos.iter().map(|v| -v).collect();
        assert_abs_diff_eq!(plcc(&neg, &mos, false).unwrap(), -1.0, epsilon = 1e-12);
    }

    #[test]
    fn ties_use_average_ranks() {
        assert_eq!(average_ranks(&[1.0, 1.0, 2.0]), vec![1.5, 1.5, 3.0]);
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0, 3.0]), vec![4.0, 1.0, 4.0, 2.0, 4.0]);
        // ranks (1.5, 1.5, 3) vs (1, 2, 3): Σdx·dy = 1.5, Σdx² = 1.5, Σdy² = 2
        assert_abs_diff_eq!(
            srcc(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap(),
            1.5 / (1.5f64 * 2.0).sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(plcc(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0], false), Err(Error::Degenerate(_))));
        assert!(matches!(srcc(&[2.0; 4], &[1.0, 2.0, 3.0, 4.0]), Err(Error::Degenerate(_))));
        assert!(plcc(&[1.0, 2.0], &[1.0, 2.0], false).is_err());
        assert!(srcc(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
        assert!(matches!(accuracy(&[], &[]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn accuracy_counts() {
        assert_eq!(accuracy(&[0, 1, 2, 3], &[0, 1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 1, 2, 3], &[0, 1, 2, 2]).unwrap(), 0.75);
        let relabel = |v: &[usize]| v.iter().map(|c| (c + 2) % 4).collect::<Vec<_>>();
        assert_eq!(accuracy(&relabel(&[0, 1, 2, 3]), &relabel(&[0, 1, 2, 2])).unwrap(), 0.75);
    }

    #[test]
    fn report_json_shape() {
        let pred = [1.0, 2.0, 3.0, 5.0, 4.0, 6.0];
        let mos = [1.1, 2.0, 2.9, 4.0, 5.0, 6.2];
        let r = CorrelationReport::compute(&pred, &mos, None).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert!(v.get("acc").is_none());
        assert_eq!(v["beta"].as_array().unwrap().len(), 5);
        let r = CorrelationReport::compute(&pred, &mos, Some((&[0, 1, 1], &[0, 1, 2]))).unwrap();
        assert_abs_diff_eq!(r.acc.unwrap(), 2.0 / 3.0);
    }
}
