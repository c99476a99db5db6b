//! Central finite-difference checks of analytic gradients.
//!
//! Derivatives are estimated with the five-point stencil
//! `(−f(x+2h) + 8f(x+h) − 8f(x−h) + f(x−2h)) / 12h`, whose truncation error is
//! `O(h⁴)`. The error of one entry is `|a − n| / max(|a|, |n|, floor)`.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;

use super::{Array, Graph, ParamStore, Var};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound on the error denominator, so near-zero gradients are
    /// compared absolutely.
    pub floor: f64,
    /// Checks at most this many randomly chosen entries per tensor.
    pub max_entries: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 3e-5, tolerance: 1e-6, floor: 1e-3, max_entries: None, seed: 0 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub name: String,
    pub tolerance: f64,
    pub max_error: f64,
    pub passed: bool,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    fn from_tensors(name: &str, tolerance: f64, tensors: Vec<TensorCheck>) -> Self {
        let max_error = tensors.iter().map(|t| t.max_error).fold(0.0, f64::max);
        Self { name: name.to_string(), tolerance, max_error, passed: max_error <= tolerance, tensors }
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn entries(len: usize, cfg: &GradCheckConfig, salt: u64) -> Vec<usize> {
    match cfg.max_entries {
        Some(k) if k < len => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let mut idx = sample(&mut rng, len, k).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..len).collect(),
    }
}

fn stencil(mut f: impl FnMut(f64) -> Result<f64>, h: f64) -> Result<f64> {
    let p2 = f(2.0 * h)?;
    let p1 = f(h)?;
    let m1 = f(-h)?;
    let m2 = f(-2.0 * h)?;
    Ok((-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h))
}

/// Checks gradients of a scalar function of `inputs`.
pub fn check_inputs<F>(name: &str, inputs: &[Array<f64>], f: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Array<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|a| g.input(a.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|a| g.input(a.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward_inputs(out)?;

    let mut tensors = Vec::new();
    let mut work = inputs.to_vec();
    for (t, var) in vars.iter().enumerate() {
        let analytic = g.grad(*var).cloned().unwrap_or_else(|| Array::zeros(inputs[t].shape()));
        let mut max_error = 0.0f64;
        let picks = entries(inputs[t].len(), cfg, t as u64);
        for &i in &picks {
            let orig = inputs[t].data()[i];
            let numeric = stencil(
                |d| {
                    work[t].data_mut()[i] = orig + d;
                    eval(&work)
                },
                cfg.step,
            )?;
            work[t].data_mut()[i] = orig;
            max_error = max_error.max(relative_error(analytic.data()[i], numeric, cfg.floor));
        }
        tensors.push(TensorCheck { name: format!("input{t}"), checked: picks.len(), max_error });
    }
    Ok(GradCheckReport::from_tensors(name, cfg.tolerance, tensors))
}

/// Checks gradients of a scalar function with respect to every parameter in `store`.
pub fn check_params<F>(name: &str, store: &mut ParamStore<f64>, f: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    store.zero_grad();
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    g.backward(out, store)?;
    let analytic: Vec<Array<f64>> =
        store.iter().map(|(_, p)| p.grad.clone().unwrap_or_else(|| Array::zeros(p.value.shape()))).collect();
    let names: Vec<String> = store.names().map(str::to_string).collect();

    let mut tensors = Vec::new();
    for (t, pname) in names.iter().enumerate() {
        let len = store.by_index(t).value.len();
        let picks = entries(len, cfg, t as u64);
        let mut max_error = 0.0f64;
        for &i in &picks {
            let orig = store.by_index(t).value.data()[i];
            let numeric = stencil(
                |d| {
                    store.by_index_mut(t).value.data_mut()[i] = orig + d;
                    let mut g = Graph::new();
                    let out = f(&mut g, store)?;
                    Ok(g.value(out).item())
                },
                cfg.step,
            );
            store.by_index_mut(t).value.data_mut()[i] = orig;
            max_error = max_error.max(relative_error(analytic[t].data()[i], numeric?, cfg.floor));
        }
        tensors.push(TensorCheck { name: pname.clone(), checked: picks.len(), max_error });
    }
    store.zero_grad();
    Ok(GradCheckReport::from_tensors(name, cfg.tolerance, tensors))
}

type OpFn = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

/// Reduces `y` to a scalar with fixed random weights, so that every output
/// entry receives a distinct upstream gradient.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let w = Array::random_normal(g.shape(y), 1.0, &mut rng);
    let wy = g.mul_const(y, &w)?;
    Ok(g.sum_all(wy))
}

fn projected(seed: u64, op: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'static) -> OpFn {
    Box::new(move |g, v| {
        let y = op(g, v)?;
        project(g, y, seed)
    })
}

/// Every differentiable op with the input shapes it is checked at.
fn op_cases(seed: u64) -> Vec<(&'static str, Vec<Vec<usize>>, OpFn)> {
    let sh = |v: &[&[usize]]| v.iter().map(|s| s.to_vec()).collect::<Vec<_>>();
    vec![
        ("add", sh(&[&[2, 3], &[2, 3]]), projected(seed, |g, v| g.add(v[0], v[1]))),
        ("sub", sh(&[&[2, 3], &[2, 3]]), projected(seed, |g, v| g.sub(v[0], v[1]))),
        ("mul", sh(&[&[4], &[4]]), projected(seed, |g, v| g.mul(v[0], v[1]))),
        ("scale", sh(&[&[5]]), projected(seed, |g, v| Ok(g.scale(v[0], -1.7)))),
        ("gelu", sh(&[&[3, 4]]), projected(seed, |g, v| Ok(g.gelu(v[0])))),
        ("linear", sh(&[&[2, 3, 4], &[4, 5], &[5]]), projected(seed, |g, v| g.linear(v[0], v[1], Some(v[2])))),
        ("add_bias", sh(&[&[3, 4], &[4]]), projected(seed, |g, v| g.add_bias(v[0], v[1]))),
        (
            "conv2d",
            sh(&[&[2, 5, 6, 3], &[3, 3, 3, 4], &[4]]),
            projected(seed, |g, v| g.conv2d(v[0], v[1], Some(v[2]), 2, 1)),
        ),
        ("layer_norm", sh(&[&[3, 6], &[6], &[6]]), projected(seed, |g, v| g.layer_norm(v[0], Some(v[1]), Some(v[2])))),
        ("softmax", sh(&[&[3, 4]]), projected(seed, |g, v| Ok(g.softmax(v[0])))),
        ("bilinear_resize", sh(&[&[1, 3, 4, 2]]), projected(seed, |g, v| g.bilinear_resize(v[0], 5, 7))),
        ("global_avg_pool", sh(&[&[2, 3, 4, 5]]), projected(seed, |g, v| g.global_avg_pool(v[0]))),
        ("sum_axis1", sh(&[&[2, 4, 3]]), projected(seed, |g, v| g.sum_axis1(v[0]))),
        ("mean_last", sh(&[&[3, 4]]), projected(seed, |g, v| g.mean_last(v[0]))),
        ("concat", sh(&[&[2, 3], &[2, 1]]), projected(seed, |g, v| g.concat(&[v[0], v[1]]))),
        ("stack", sh(&[&[2, 3], &[2, 3]]), projected(seed, |g, v| g.stack(&[v[0], v[1]]))),
        ("gated_sum", sh(&[&[2, 3, 4], &[2, 3]]), projected(seed, |g, v| g.gated_sum(v[0], v[1]))),
        ("select_rows", sh(&[&[4, 3]]), projected(seed, |g, v| g.select_rows(v[0], &[3, 1, 1]))),
        ("scale_rows", sh(&[&[4, 3], &[4]]), projected(seed, |g, v| g.scale_rows(v[0], v[1]))),
        (
            "neighborhood_attention",
            sh(&[&[1, 6, 6, 8], &[1, 6, 6, 8], &[1, 6, 6, 8]]),
            projected(seed, |g, v| g.neighborhood_attention(v[0], v[1], v[2], 3, 2)),
        ),
        (
            "full_attention",
            sh(&[&[1, 3, 2, 4], &[1, 3, 2, 4], &[1, 3, 2, 4]]),
            projected(seed, |g, v| g.full_attention(v[0], v[1], v[2], 2)),
        ),
        (
            "nll",
            sh(&[&[3, 4]]),
            Box::new(|g: &mut Graph<f64>, v: &[Var]| {
                let p = g.softmax(v[0]);
                g.nll(p, &[0, 3, 2], 1e-7)
            }),
        ),
        (
            "norm_in_norm",
            sh(&[&[6]]),
            Box::new(|g: &mut Graph<f64>, v: &[Var]| g.norm_in_norm(v[0], &[1.0, 2.5, 1.2, 3.0, 2.0, 1.7], 1)),
        ),
        (
            "mean_abs_error",
            sh(&[&[4]]),
            Box::new(|g: &mut Graph<f64>, v: &[Var]| g.mean_abs_error(v[0], &[0.1, -0.3, 2.0, 0.5])),
        ),
    ]
}

/// Names of the ops covered by [`op_suite`].
pub fn op_names() -> Vec<&'static str> {
    op_cases(0).into_iter().map(|(n, _, _)| n).collect()
}

/// Checks every op on `seeds` random standard-normal inputs and reports the
/// worst case of each op.
pub fn op_suite(seeds: u64, cfg: &GradCheckConfig) -> Result<Vec<GradCheckReport>> {
    let mut worst: Vec<GradCheckReport> = Vec::new();
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(seed));
        for (i, (name, shapes, f)) in op_cases(seed).into_iter().enumerate() {
            let inputs: Vec<Array<f64>> = shapes.iter().map(|s| Array::random_normal(s, 1.0, &mut rng)).collect();
            let report = check_inputs(name, &inputs, f, cfg)?;
            if i == worst.len() {
                worst.push(report);
            } else if report.max_error > worst[i].max_error || !report.passed {
                worst[i] = report;
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stencil_is_exact_on_quartics() {
        let d = stencil(|x| Ok((1.5 + x).powi(4)), 0.1).unwrap();
        assert!((d - 4.0 * 1.5f64.powi(3)).abs() < 1e-10);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let x = Array::from_vec(&[3], vec![0.3, -0.2, 0.9]).unwrap();
        let cfg = GradCheckConfig::default();
        let ok = check_inputs(
            "square",
            std::slice::from_ref(&x),
            |g, v| {
                let sq = g.mul(v[0], v[0])?;
                Ok(g.sum_all(sq))
            },
            &cfg,
        )
        .unwrap();
        assert!(ok.passed, "{ok:?}");
        // treating x·x as x·c loses half of the derivative
        let bad = check_inputs(
            "half",
            std::slice::from_ref(&x),
            |g, v| {
                let c = g.input(g.value(v[0]).clone());
                let sq = g.mul(v[0], c)?;
                Ok(g.sum_all(sq))
            },
            &cfg,
        )
        .unwrap();
        assert!(!bad.passed);
    }

    #[test]
    fn subsampling_is_seeded() {
        let cfg = GradCheckConfig { max_entries: Some(4), seed: 9, ..Default::default() };
        assert_eq!(entries(100, &cfg, 1), entries(100, &cfg, 1));
        assert_eq!(entries(100, &cfg, 1).len(), 4);
        assert_eq!(entries(3, &cfg, 1), vec![0, 1, 2]);
    }
}
