//! Parameter initialization and the small layer helpers the network is built from.

use rand::Rng;

use crate::error::Result;
use crate::numerics::{Array, Graph, ParamStore, Real, Var};

pub(crate) struct Init<'a, T: Real, R: Rng> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut R,
}

impl<T: Real, R: Rng> Init<'_, T, R> {
    fn weight(&mut self, name: String, shape: &[usize], fan_in: usize) -> Result<()> {
        let std = 1.0 / (fan_in.max(1) as f64).sqrt();
        let w = Array::<f64>::random_normal(shape, std, self.rng).cast();
        self.store.insert(name, w)
    }

    pub fn dense(&mut self, name: &str, inp: usize, out: usize) -> Result<()> {
        self.weight(format!("{name}.w"), &[inp, out], inp)?;
        self.store.insert(format!("{name}.b"), Array::zeros(&[out]))
    }

    pub fn conv(&mut self, name: &str, k: usize, inp: usize, out: usize) -> Result<()> {
        self.weight(format!("{name}.w"), &[k, k, inp, out], k * k * inp)?;
        self.store.insert(format!("{name}.b"), Array::zeros(&[out]))
    }

    pub fn norm(&mut self, name: &str, dim: usize) -> Result<()> {
        self.store.insert(format!("{name}.g"), Array::full(&[dim], T::one()))?;
        self.store.insert(format!("{name}.b"), Array::zeros(&[dim]))
    }

    pub fn mlp(&mut self, name: &str, inp: usize, hidden: usize, out: usize) -> Result<()> {
        self.dense(&format!("{name}.fc1"), inp, hidden)?;
        self.dense(&format!("{name}.fc2"), hidden, out)
    }
}

pub(crate) fn dense<T: Real>(g: &mut Graph<T>, p: &ParamStore<T>, name: &str, x: Var) -> Result<Var> {
    let w = g.param(p, &format!("{name}.w"))?;
    let b = g.param(p, &format!("{name}.b"))?;
    g.linear(x, w, Some(b))
}

pub(crate) fn conv<T: Real>(
    g: &mut Graph<T>,
    p: &ParamStore<T>,
    name: &str,
    x: Var,
    stride: usize,
    pad: usize,
) -> Result<Var> {
    let w = g.param(p, &format!("{name}.w"))?;
    let b = g.param(p, &format!("{name}.b"))?;
    g.conv2d(x, w, Some(b), stride, pad)
}

pub(crate) fn norm<T: Real>(g: &mut Graph<T>, p: &ParamStore<T>, name: &str, x: Var) -> Result<Var> {
    let gamma = g.param(p, &format!("{name}.g"))?;
    let beta = g.param(p, &format!("{name}.b"))?;
    g.layer_norm(x, Some(gamma), Some(beta))
}

/// Two dense layers with GELU between.
pub(crate) fn mlp<T: Real>(g: &mut Graph<T>, p: &ParamStore<T>, name: &str, x: Var) -> Result<Var> {
    let h = dense(g, p, &format!("{name}.fc1"), x)?;
    let h = g.gelu(h);
    dense(g, p, &format!("{name}.fc2"), h)
}
