use log::warn;
use serde::{Deserialize, Serialize};

/// Dynamic weight averaging over per-epoch task losses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DwaState {
    pub temperature: f64,
    pub tasks: usize,
    /// Losses of the two most recent epochs, oldest first.
    pub history: Vec<Vec<f64>>,
}

impl DwaState {
    pub fn new(tasks: usize, temperature: f64) -> Self {
        Self { temperature, tasks, history: Vec::new() }
    }

    pub fn push(&mut self, losses: &[f64]) {
        debug_assert_eq!(losses.len(), self.tasks);
        self.history.push(losses.to_vec());
        if self.history.len() > 2 {
            self.history.remove(0);
        }
    }
}

/// `λ_k = K·exp(w_k/T) / Σ_i exp(w_i/T)` with `w_k = L_k(t−1) / L_k(t−2)`;
/// all ones until two epochs have been recorded.
pub fn dwa_weights(state: &DwaState) -> Vec<f64> {
    if state.history.len() < 2 {
        return vec![1.0; state.tasks];
    }
    let (older, newer) = (&state.history[0], &state.history[1]);
    let ratios: Vec<f64> = older
        .iter()
        .zip(newer)
        .map(|(&o, &n)| {
            if o == 0.0 || !o.is_finite() || !n.is_finite() {
                warn!("degenerate loss history ({o}, {n}); using ratio 1");
                1.0
            } else {
                n / o
            }
        })
        .collect();
    let scaled: Vec<f64> = ratios.iter().map(|w| w / state.temperature).collect();
    let m = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|s| (s - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| state.tasks as f64 * e / sum).collect()
}
