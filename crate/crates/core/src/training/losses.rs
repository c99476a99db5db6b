use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::numerics::{Graph, Real, Var};

/// How the norm-in-norm sum is scaled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonMode {
    /// `ε·B = √B` for `γ = 1` and `2` for `γ = 2`, bounding the loss by 2.
    Bounded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub gamma: u32,
    pub epsilon_mode: EpsilonMode,
    pub clamp_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { gamma: 1, epsilon_mode: EpsilonMode::Bounded, clamp_eps: 1e-7 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma != 1 && self.gamma != 2 {
            return arg_err(format!("gamma must be 1 or 2, got {}", self.gamma));
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 0.5) {
            return arg_err(format!("clamp_eps must lie in (0, 0.5), got {}", self.clamp_eps));
        }
        Ok(())
    }
}

/// Mean negative log-likelihood of the true situation under `probs[B, 4]`.
pub fn ce_loss<T: Real>(g: &mut Graph<T>, probs: Var, targets: &[usize], cfg: &LossConfig) -> Result<Var> {
    g.nll(probs, targets, T::from_f64(cfg.clamp_eps))
}

/// Norm-in-norm loss between predicted scores `pred[B]` and `mos`.
/// A batch whose MOS values are all equal has no direction to normalize, so
/// it falls back to the mean absolute error.
pub fn norm_in_norm_loss<T: Real>(g: &mut Graph<T>, pred: Var, mos: &[f64], cfg: &LossConfig) -> Result<Var> {
    if mos.len() < 2 {
        return arg_err(format!("norm-in-norm loss needs a batch of at least 2, got {}", mos.len()));
    }
    let target: Vec<T> = mos.iter().map(|&v| T::from_f64(v)).collect();
    let mean = mos.iter().sum::<f64>() / mos.len() as f64;
    if mos.iter().all(|&v| (v - mean).abs() <= 1e-12) {
        warn!("constant MOS in batch; using mean absolute error");
        return g.mean_abs_error(pred, &target);
    }
    g.norm_in_norm(pred, &target, cfg.gamma)
}

/// `λ1·l_dspn + λ2·l_qspn`.
pub fn total_loss<T: Real>(g: &mut Graph<T>, l_dspn: Var, l_qspn: Var, lambda: [f64; 2]) -> Result<Var> {
    let a = g.scale(l_dspn, T::from_f64(lambda[0]));
    let b = g.scale(l_qspn, T::from_f64(lambda[1]));
    g.add(a, b)
}
