use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Real};

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
}

impl Default for Adam {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, steps: 0 }
    }
}

impl Adam {
    pub fn step<T: Real>(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if let Some((name, _)) = store.iter().find(|(_, p)| p.grad.is_none()) {
            return Err(Error::State(format!("parameter '{name}' has no gradient")));
        }
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let (one, eps) = (T::one(), T::from_f64(self.eps));
        let step = T::from_f64(lr / c1);
        let c2 = T::from_f64(c2);
        for (_, p) in store.iter_mut() {
            let grad = p.grad.as_ref().expect("checked above");
            for (((w, &gr), mi), vi) in
                p.value.data_mut().iter_mut().zip(grad.data()).zip(p.m.data_mut()).zip(p.v.data_mut())
            {
                *mi = b1 * *mi + (one - b1) * gr;
                *vi = b2 * *vi + (one - b2) * gr * gr;
                *w -= step * *mi / ((*vi / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
