//! Five-parameter logistic mapping between objective predictions and MOS:
//!
//! `f(x) = β1·(0.5 − 1/(1 + exp(β2·(x − β3)))) + β4·x + β5`

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};

const RESTARTS: usize = 5;
const MAX_ITERS: usize = 500;
const DEFAULT_SEED: u64 = 0x5eed_1f17;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub beta: [f64; 5],
    pub fitted: Vec<f64>,
    /// Root-mean-square residual of the fitted values.
    pub residual: f64,
    /// Sum of squared residuals after each accepted step of the winning run,
    /// starting with the initial guess.
    pub history: Vec<f64>,
}

pub fn logistic_value(beta: &[f64; 5], x: f64) -> f64 {
    beta[0] * (0.5 - sigmoid_complement(beta[1] * (x - beta[2]))) + beta[3] * x + beta[4]
}

/// `1 / (1 + exp(z))`, stable for large `|z|`.
fn sigmoid_complement(z: f64) -> f64 {
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

fn sse(beta: &[f64; 5], x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(&xi, &yi)| (logistic_value(beta, xi) - yi).powi(2)).sum()
}

fn jacobian_row(beta: &[f64; 5], x: f64) -> [f64; 5] {
    let s = sigmoid_complement(beta[1] * (x - beta[2]));
    let ds = s * (1.0 - s);
    [0.5 - s, beta[0] * ds * (x - beta[2]), -beta[0] * ds * beta[1], x, 1.0]
}

/// Solves the 5×5 system `a·x = b` by Gaussian elimination with partial pivoting.
fn solve5(mut a: [[f64; 5]; 5], mut b: [f64; 5]) -> Option<[f64; 5]> {
    for col in 0..5 {
        let piv = (col..5).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..5 {
            let f = a[row][col] / a[col][col];
            for k in col..5 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 5];
    for row in (0..5).rev() {
        let s: f64 = (row + 1..5).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Levenberg–Marquardt refinement from `beta`. Steps that do not lower the
/// sum of squares are rejected, so the returned history is non-increasing.
fn levenberg_marquardt(mut beta: [f64; 5], x: &[f64], y: &[f64]) -> ([f64; 5], Vec<f64>) {
    let mut cost = sse(&beta, x, y);
    let mut history = vec![cost];
    let mut damping = 1e-3;
    for _ in 0..MAX_ITERS {
        let mut jtj = [[0.0; 5]; 5];
        let mut jtr = [0.0; 5];
        for (&xi, &yi) in x.iter().zip(y) {
            let j = jacobian_row(&beta, xi);
            let r = yi - logistic_value(&beta, xi);
            for a in 0..5 {
                jtr[a] += j[a] * r;
                for b in 0..5 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        let mut improved = false;
        while damping < 1e12 {
            let mut m = jtj;
            for (d, row) in m.iter_mut().enumerate() {
                row[d] += damping * (jtj[d][d] + 1e-12);
            }
            if let Some(step) = solve5(m, jtr) {
                let mut trial = beta;
                for k in 0..5 {
                    trial[k] += step[k];
                }
                let c = sse(&trial, x, y);
                if c.is_finite() && c < cost {
                    let rel = (cost - c) / cost.max(1e-300);
                    beta = trial;
                    cost = c;
                    history.push(cost);
                    damping = (damping / 3.0).max(1e-12);
                    improved = rel > 1e-15;
                    break;
                }
            }
            damping *= 4.0;
        }
        if !improved || cost < 1e-28 {
            break;
        }
    }
    (beta, history)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Least-squares logistic fit with a fixed restart seed.
pub fn logistic_fit(pred: &[f64], mos: &[f64]) -> Result<LogisticFit> {
    logistic_fit_seeded(pred, mos, DEFAULT_SEED)
}

/// Fits from the standard initial guess, from 5 jittered copies of it and from
/// the least-squares line (`β1 = 0`), keeping the lowest residual.
pub fn logistic_fit_seeded(pred: &[f64], mos: &[f64], seed: u64) -> Result<LogisticFit> {
    if pred.len() != mos.len() {
        return arg_err(format!("length mismatch: {} vs {}", pred.len(), mos.len()));
    }
    if pred.len() < 5 {
        return arg_err(format!("logistic fit needs at least 5 points, got {}", pred.len()));
    }
    let sd = std_dev(pred);
    if sd == 0.0 {
        return Err(Error::Degenerate("constant predictions".into()));
    }
    let (lo, hi) = mos.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let base = [hi - lo, 1.0 / sd, mean(pred), 0.0, mean(mos)];

    let mut starts = vec![base];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..RESTARTS {
        let mut b = base;
        b[0] *= 1.0 + rng.random_range(-0.5..0.5);
        b[1] *= (rng.random_range(-1.0..1.0f64)).exp();
        b[2] += sd * rng.random_range(-0.5..0.5);
        b[4] += (hi - lo) * rng.random_range(-0.1..0.1);
        starts.push(b);
    }
    let mp = mean(pred);
    let mm = mean(mos);
    let slope = pred.iter().zip(mos).map(|(x, y)| (x - mp) * (y - mm)).sum::<f64>()
        / pred.iter().map(|x| (x - mp).powi(2)).sum::<f64>();
    starts.push([0.0, 1.0 / sd, mp, slope, mm - slope * mp]);

    let (beta, history) = starts
        .into_iter()
        .map(|s| levenberg_marquardt(s, pred, mos))
        .min_by(|a, b| a.1.last().unwrap().total_cmp(b.1.last().unwrap()))
        .expect("at least one start");
    let fitted: Vec<f64> = pred.iter().map(|&x| logistic_value(&beta, x)).collect();
    let residual = (history.last().copied().unwrap_or(0.0) / pred.len() as f64).sqrt();
    Ok(LogisticFit { beta, fitted, residual, history })
}
