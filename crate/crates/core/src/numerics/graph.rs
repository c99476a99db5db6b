use crate::error::{arg_err, Error, Result};

use super::array::{Array, Real};
use super::params::ParamStore;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-6;
const NORM_EPS: f64 = 1e-12;

enum Op<T> {
    Leaf,
    Param(usize),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MulConst(Var, Vec<T>),
    AddBias(Var, Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    Resize(Var),
    LayerNorm { x: Var, gamma: Option<Var>, beta: Option<Var>, xhat: Vec<T>, inv_std: Vec<T> },
    Softmax(Var),
    Gelu(Var),
    GlobalAvgPool(Var),
    Attention { q: Var, k: Var, v: Var, heads: usize, window: Option<(usize, usize)>, probs: Vec<T> },
    Concat(Vec<Var>),
    Reshape(Var),
    SelectRows { x: Var, rows: Vec<usize> },
    ScaleRows { x: Var, s: Var },
    Stack(Vec<Var>),
    GatedSum { x: Var, g: Var },
    SumAxis1(Var),
    MeanLast(Var),
    SumAll(Var),
    MeanAll(Var),
    Nll { probs: Var, targets: Vec<usize>, eps: T },
    NormInNorm { pred: Var, pred_unit: Vec<T>, pred_norm: T, target_unit: Vec<T>, gamma: u32, scale: T },
    MeanAbsError { pred: Var, target: Vec<T> },
}

struct Node<T> {
    value: Array<T>,
    op: Op<T>,
}

/// Tape of recorded operations.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Array<T>>>,
    differentiated: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn c<T: Real>(v: f64) -> T {
    T::from_f64(v)
}

fn shape_err<V>(what: &str, detail: String) -> Result<V> {
    arg_err(format!("{what}: {detail}"))
}

/// Start row/col of a clamped neighborhood of size `k` around `i` in `0..n`.
#[inline]
fn window_start(i: usize, k: usize, n: usize) -> usize {
    let half = k / 2;
    i.saturating_sub(half).min(n - k)
}

struct ResizeAxis {
    i0: Vec<usize>,
    i1: Vec<usize>,
    w1: Vec<f64>,
}

/// Half-pixel-center bilinear sampling positions along one axis.
fn resize_axis(n_in: usize, n_out: usize) -> ResizeAxis {
    let scale = n_in as f64 / n_out as f64;
    let mut axis = ResizeAxis { i0: Vec::new(), i1: Vec::new(), w1: Vec::new() };
    for o in 0..n_out {
        let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        axis.i0.push(i0);
        axis.i1.push(i1);
        axis.w1.push(src - i0 as f64);
    }
    axis
}

#[inline]
fn gelu_parts<T: Real>(x: T) -> (T, T) {
    let k = c::<T>((2.0 / std::f64::consts::PI).sqrt());
    let a = c::<T>(0.044715);
    let half = c::<T>(0.5);
    let inner = k * (x + a * x * x * x);
    let t = inner.tanh();
    let y = half * x * (T::one() + t);
    let dy = half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + c::<T>(3.0) * a * x * x);
    (y, dy)
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new(), differentiated: false }
    }

    fn push(&mut self, value: Array<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the differentiated loss with respect to `v`, if reachable.
    pub fn grad(&self, v: Var) -> Option<&Array<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Constant or input tensor.
    pub fn input(&mut self, value: Array<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records the current value of a stored parameter.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        let idx = store.index_of(name).ok_or_else(|| Error::State(format!("parameter '{name}' is not loaded")))?;
        Ok(self.push(store.by_index(idx).value.clone(), Op::Param(idx)))
    }

    fn binary_same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(what, format!("{:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Array<T> {
        let va = self.value(a);
        let data = va.data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        Array::from_vec(va.shape(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "add")?;
        let v = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "sub")?;
        let v = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "mul")?;
        let v = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let v = self.value(x).map(|e| e * s);
        self.push(v, Op::Scale(x, s))
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(&mut self, x: Var, k: &Array<T>) -> Result<Var> {
        if self.shape(x) != k.shape() {
            return shape_err("mul_const", format!("{:?} vs {:?}", self.shape(x), k.shape()));
        }
        let data = self.value(x).data().iter().zip(k.data()).map(|(&a, &b)| a * b).collect();
        let v = Array::from_vec(self.shape(x), data)?;
        Ok(self.push(v, Op::MulConst(x, k.data().to_vec())))
    }

    /// Adds `b[C]` along the last axis of `x[..., C]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let cdim = self.value(x).last_dim();
        if self.shape(b) != [cdim] {
            return shape_err("add_bias", format!("bias {:?} for last axis {cdim}", self.shape(b)));
        }
        let bv = self.value(b).data().to_vec();
        let mut v = self.value(x).clone();
        for row in v.data_mut().chunks_exact_mut(cdim) {
            for (e, &bb) in row.iter_mut().zip(&bv) {
                *e += bb;
            }
        }
        Ok(self.push(v, Op::AddBias(x, b)))
    }

    /// `x[..., I] · w[I, O] (+ b[O])`; also serves as a 1×1 convolution in NHWC.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let in_dim = *xs.last().unwrap_or(&1);
        if ws.len() != 2 || ws[0] != in_dim {
            return shape_err("linear", format!("input {xs:?} with weight {ws:?}"));
        }
        let out_dim = ws[1];
        if let Some(b) = b {
            if self.shape(b) != [out_dim] {
                return shape_err("linear", format!("bias {:?} for {out_dim} outputs", self.shape(b)));
            }
        }
        let rows = self.value(x).len() / in_dim.max(1);
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let mut out = vec![T::zero(); rows * out_dim];
        for r in 0..rows {
            let acc = &mut out[r * out_dim..(r + 1) * out_dim];
            if let Some(b) = b {
                acc.copy_from_slice(self.value(b).data());
            }
            for i in 0..in_dim {
                let xv = xd[r * in_dim + i];
                let wrow = &wd[i * out_dim..(i + 1) * out_dim];
                for (a, &wv) in acc.iter_mut().zip(wrow) {
                    *a += xv * wv;
                }
            }
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() = out_dim;
        let v = Array::from_vec(&shape, out)?;
        Ok(self.push(v, Op::Linear { x, w, b }))
    }

    /// NHWC convolution: `x[N,H,W,Ci]`, `w[KH,KW,Ci,Co]`, optional `b[Co]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[2] != xs[3] || stride == 0 {
            return shape_err("conv2d", format!("input {xs:?} with weight {ws:?}, stride {stride}"));
        }
        let (n, h, wd, ci) = (xs[0], xs[1], xs[2], xs[3]);
        let (kh, kw, co) = (ws[0], ws[1], ws[3]);
        if h + 2 * pad < kh || wd + 2 * pad < kw {
            return shape_err("conv2d", format!("kernel {kh}x{kw} larger than padded input {h}x{wd}"));
        }
        if let Some(b) = b {
            if self.shape(b) != [co] {
                return shape_err("conv2d", format!("bias {:?} for {co} outputs", self.shape(b)));
            }
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;
        let xd = self.value(x).data();
        let wt = self.value(w).data();
        let mut out = vec![T::zero(); n * ho * wo * co];
        for bn in 0..n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let base = ((bn * ho + oy) * wo + ox) * co;
                    let acc = &mut out[base..base + co];
                    if let Some(b) = b {
                        acc.copy_from_slice(self.value(b).data());
                    }
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            let xoff = ((bn * h + iy as usize) * wd + ix as usize) * ci;
                            let woff = (ky * kw + kx) * ci * co;
                            for cin in 0..ci {
                                let xv = xd[xoff + cin];
                                let wrow = &wt[woff + cin * co..woff + (cin + 1) * co];
                                for (a, &wv) in acc.iter_mut().zip(wrow) {
                                    *a += xv * wv;
                                }
                            }
                        }
                    }
                }
            }
        }
        let v = Array::from_vec(&[n, ho, wo, co], out)?;
        Ok(self.push(v, Op::Conv2d { x, w, b, stride, pad }))
    }

    /// Bilinear resize of `x[N,H,W,C]` with half-pixel centers and edge clamping.
    pub fn bilinear_resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 || out_h == 0 || out_w == 0 {
            return shape_err("bilinear_resize", format!("input {xs:?} to {out_h}x{out_w}"));
        }
        let (n, h, w, ch) = (xs[0], xs[1], xs[2], xs[3]);
        let ay = resize_axis(h, out_h);
        let ax = resize_axis(w, out_w);
        let xd = self.value(x).data();
        let mut out = vec![T::zero(); n * out_h * out_w * ch];
        for bn in 0..n {
            for oy in 0..out_h {
                let (y0, y1, fy) = (ay.i0[oy], ay.i1[oy], c::<T>(ay.w1[oy]));
                for ox in 0..out_w {
                    let (x0, x1, fx) = (ax.i0[ox], ax.i1[ox], c::<T>(ax.w1[ox]));
                    let w00 = (T::one() - fy) * (T::one() - fx);
                    let w01 = (T::one() - fy) * fx;
                    let w10 = fy * (T::one() - fx);
                    let w11 = fy * fx;
                    let p00 = ((bn * h + y0) * w + x0) * ch;
                    let p01 = ((bn * h + y0) * w + x1) * ch;
                    let p10 = ((bn * h + y1) * w + x0) * ch;
                    let p11 = ((bn * h + y1) * w + x1) * ch;
                    let o = ((bn * out_h + oy) * out_w + ox) * ch;
                    for k in 0..ch {
                        out[o + k] = w00 * xd[p00 + k] + w01 * xd[p01 + k] + w10 * xd[p10 + k] + w11 * xd[p11 + k];
                    }
                }
            }
        }
        let v = Array::from_vec(&[n, out_h, out_w, ch], out)?;
        Ok(self.push(v, Op::Resize(x)))
    }

    /// Normalizes over the last axis; `gamma` / `beta` of shape `[C]` are optional.
    pub fn layer_norm(&mut self, x: Var, gamma: Option<Var>, beta: Option<Var>) -> Result<Var> {
        let cdim = self.value(x).last_dim();
        for p in [gamma, beta].into_iter().flatten() {
            if self.shape(p) != [cdim] {
                return shape_err("layer_norm", format!("affine {:?} for last axis {cdim}", self.shape(p)));
            }
        }
        let xv = self.value(x);
        let rows = xv.len() / cdim;
        let mut xhat = Vec::with_capacity(xv.len());
        let mut inv_std = Vec::with_capacity(rows);
        let cf = c::<T>(cdim as f64);
        for row in xv.data().chunks_exact(cdim) {
            let mean = row.iter().copied().sum::<T>() / cf;
            let var = row.iter().map(|&e| (e - mean) * (e - mean)).sum::<T>() / cf;
            let inv = T::one() / (var + c::<T>(LN_EPS)).sqrt();
            inv_std.push(inv);
            xhat.extend(row.iter().map(|&e| (e - mean) * inv));
        }
        let mut out = xhat.clone();
        let gv = gamma.map(|g| self.value(g).data().to_vec());
        let bv = beta.map(|b| self.value(b).data().to_vec());
        for row in out.chunks_exact_mut(cdim) {
            for (k, e) in row.iter_mut().enumerate() {
                if let Some(g) = &gv {
                    *e *= g[k];
                }
                if let Some(b) = &bv {
                    *e += b[k];
                }
            }
        }
        let v = Array::from_vec(xv.shape(), out)?;
        Ok(self.push(v, Op::LayerNorm { x, gamma, beta, xhat, inv_std }))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let cdim = xv.last_dim();
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.data().chunks_exact(cdim) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let start = out.len();
            out.extend(row.iter().map(|&e| (e - m).exp()));
            let s = out[start..].iter().copied().sum::<T>();
            for e in &mut out[start..] {
                *e /= s;
            }
        }
        let v = Array::from_vec(xv.shape(), out).expect("same shape");
        self.push(v, Op::Softmax(x))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| gelu_parts(e).0);
        self.push(v, Op::Gelu(x))
    }

    /// Mean over all axes except the first and last: `[N, ..., C] → [N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 3 {
            return shape_err("global_avg_pool", format!("input {xs:?} needs rank ≥ 3"));
        }
        let (n, ch) = (xs[0], xs[xs.len() - 1]);
        let inner = xs[1..xs.len() - 1].iter().product::<usize>();
        let xd = self.value(x).data();
        let mut out = vec![T::zero(); n * ch];
        let cnt = c::<T>(inner as f64);
        for bn in 0..n {
            let acc = &mut out[bn * ch..(bn + 1) * ch];
            for p in 0..inner {
                let row = &xd[(bn * inner + p) * ch..(bn * inner + p + 1) * ch];
                for (a, &e) in acc.iter_mut().zip(row) {
                    *a += e;
                }
            }
            for a in acc.iter_mut() {
                *a /= cnt;
            }
        }
        let v = Array::from_vec(&[n, ch], out)?;
        Ok(self.push(v, Op::GlobalAvgPool(x)))
    }

    fn attention_impl(&mut self, q: Var, k: Var, v: Var, heads: usize, kernel: Option<usize>) -> Result<Var> {
        let qs = self.shape(q).to_vec();
        if qs.len() != 4 || self.shape(k) != qs.as_slice() || self.shape(v) != qs.as_slice() {
            return shape_err(
                "attention",
                format!("q {qs:?}, k {:?}, v {:?} must be equal NHWC shapes", self.shape(k), self.shape(v)),
            );
        }
        let (n, h, w, ch) = (qs[0], qs[1], qs[2], qs[3]);
        if heads == 0 || ch % heads != 0 {
            return shape_err("attention", format!("{ch} channels not divisible into {heads} heads"));
        }
        let window = match kernel {
            Some(kern) => {
                if kern % 2 == 0 || kern == 0 {
                    return shape_err("neighborhood_attention", format!("kernel {kern} must be odd"));
                }
                Some((kern.min(h), kern.min(w)))
            }
            None => None,
        };
        let (kh, kw) = window.unwrap_or((h, w));
        let keys = kh * kw;
        let d = ch / heads;
        let scale = c::<T>(1.0 / (d as f64).sqrt());
        let qd = self.value(q).data();
        let kd = self.value(k).data();
        let vd = self.value(v).data();
        let mut out = vec![T::zero(); qd.len()];
        let mut probs = vec![T::zero(); n * h * w * heads * keys];
        let mut scores = vec![T::zero(); keys];
        for bn in 0..n {
            for y in 0..h {
                let sy = if window.is_some() { window_start(y, kh, h) } else { 0 };
                for x in 0..w {
                    let sx = if window.is_some() { window_start(x, kw, w) } else { 0 };
                    let qoff = ((bn * h + y) * w + x) * ch;
                    for hd in 0..heads {
                        let qv = &qd[qoff + hd * d..qoff + (hd + 1) * d];
                        let mut j = 0;
                        for ky in sy..sy + kh {
                            for kx in sx..sx + kw {
                                let koff = ((bn * h + ky) * w + kx) * ch + hd * d;
                                let dot = qv.iter().zip(&kd[koff..koff + d]).map(|(&a, &b)| a * b).sum::<T>();
                                scores[j] = dot * scale;
                                j += 1;
                            }
                        }
                        let m = scores.iter().copied().fold(T::neg_infinity(), T::max);
                        let mut s = T::zero();
                        for e in scores.iter_mut() {
                            *e = (*e - m).exp();
                            s += *e;
                        }
                        let pbase = (((bn * h + y) * w + x) * heads + hd) * keys;
                        let o = &mut out[qoff + hd * d..qoff + (hd + 1) * d];
                        let mut j = 0;
                        for ky in sy..sy + kh {
                            for kx in sx..sx + kw {
                                let p = scores[j] / s;
                                probs[pbase + j] = p;
                                let voff = ((bn * h + ky) * w + kx) * ch + hd * d;
                                for (a, &vv) in o.iter_mut().zip(&vd[voff..voff + d]) {
                                    *a += p * vv;
                                }
                                j += 1;
                            }
                        }
                    }
                }
            }
        }
        let value = Array::from_vec(&qs, out)?;
        Ok(self.push(value, Op::Attention { q, k, v, heads, window, probs }))
    }

    /// Multi-head scaled dot-product attention where each query at `(y, x)`
    /// attends to a `kernel × kernel` neighborhood. Neighborhoods near the
    /// border are shifted inward so every query sees exactly `kernel²` keys;
    /// the kernel is clamped to the feature size.
    pub fn neighborhood_attention(&mut self, q: Var, k: Var, v: Var, kernel: usize, heads: usize) -> Result<Var> {
        self.attention_impl(q, k, v, heads, Some(kernel))
    }

    /// Multi-head attention over all spatial positions.
    pub fn full_attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        self.attention_impl(q, k, v, heads, None)
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::Argument("concat of nothing".into()))?;
        let lead = self.shape(*first)[..self.shape(*first).len() - 1].to_vec();
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return shape_err("concat", format!("{s:?} does not match leading axes {lead:?}"));
            }
            total += s[s.len() - 1];
        }
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &x in xs {
                let d = self.value(x).last_dim();
                out.extend_from_slice(&self.value(x).data()[r * d..(r + 1) * d]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let v = Array::from_vec(&shape, out)?;
        Ok(self.push(v, Op::Concat(xs.to_vec())))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(x)))
    }

    /// Gathers entries of the first axis.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.is_empty() || rows.iter().any(|&r| r >= xs[0]) {
            return shape_err("select_rows", format!("rows {rows:?} of {xs:?}"));
        }
        let stride: usize = xs[1..].iter().product();
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(rows.len() * stride);
        for &r in rows {
            out.extend_from_slice(&xd[r * stride..(r + 1) * stride]);
        }
        let mut shape = xs;
        shape[0] = rows.len();
        let v = Array::from_vec(&shape, out)?;
        Ok(self.push(v, Op::SelectRows { x, rows: rows.to_vec() }))
    }

    /// Multiplies every entry of row `r` of `x[R, ...]` by `s[r]`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.is_empty() || self.shape(s) != [xs[0]] {
            return shape_err("scale_rows", format!("{xs:?} by {:?}", self.shape(s)));
        }
        let stride: usize = xs[1..].iter().product();
        let sd = self.value(s).data().to_vec();
        let mut v = self.value(x).clone();
        for (row, &sv) in v.data_mut().chunks_exact_mut(stride.max(1)).zip(&sd) {
            for e in row {
                *e *= sv;
            }
        }
        Ok(self.push(v, Op::ScaleRows { x, s }))
    }

    /// Stacks equally shaped `[N, ...]` tensors along a new axis 1.
    pub fn stack(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::Argument("stack of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        if base.is_empty() || xs.iter().any(|&x| self.shape(x) != base.as_slice()) {
            return shape_err("stack", "inputs must share one shape of rank ≥ 1".into());
        }
        let n = base[0];
        let inner: usize = base[1..].iter().product();
        let mut out = Vec::with_capacity(n * xs.len() * inner);
        for bn in 0..n {
            for &x in xs {
                out.extend_from_slice(&self.value(x).data()[bn * inner..(bn + 1) * inner]);
            }
        }
        let mut shape = vec![n, xs.len()];
        shape.extend_from_slice(&base[1..]);
        let v = Array::from_vec(&shape, out)?;
        Ok(self.push(v, Op::Stack(xs.to_vec())))
    }

    /// `Σ_s g[n, s] · x[n, s, ...]` for `x[N, S, ...]` and `g[N, S]`.
    pub fn gated_sum(&mut self, x: Var, g: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 || self.shape(g) != [xs[0], xs[1]] {
            return shape_err("gated_sum", format!("{xs:?} with gates {:?}", self.shape(g)));
        }
        let (n, s) = (xs[0], xs[1]);
        let inner: usize = xs[2..].iter().product();
        let xd = self.value(x).data();
        let gd = self.value(g).data();
        let mut out = vec![T::zero(); n * inner];
        for bn in 0..n {
            let o = &mut out[bn * inner..(bn + 1) * inner];
            for st in 0..s {
                let gv = gd[bn * s + st];
                let row = &xd[(bn * s + st) * inner..(bn * s + st + 1) * inner];
                for (a, &e) in o.iter_mut().zip(row) {
                    *a += gv * e;
                }
            }
        }
        let mut shape = vec![n];
        shape.extend_from_slice(&xs[2..]);
        let v = Array::from_vec(&shape, out)?;
        Ok(self.push(v, Op::GatedSum { x, g }))
    }

    /// Sum over axis 1 of `x[B, M, D]`. Each output element sums its `M` terms
    /// in sorted order, so the result does not depend on the order along axis 1.
    pub fn sum_axis1(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return shape_err("sum_axis1", format!("input {xs:?} must be [B, M, D]"));
        }
        let (b, m, d) = (xs[0], xs[1], xs[2]);
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(b * d);
        let mut terms = vec![T::zero(); m];
        for bn in 0..b {
            for k in 0..d {
                for (j, t) in terms.iter_mut().enumerate() {
                    *t = xd[(bn * m + j) * d + k];
                }
                terms.sort_by(|p, q| p.partial_cmp(q).unwrap_or(std::cmp::Ordering::Equal));
                out.push(terms.iter().copied().sum());
            }
        }
        let v = Array::from_vec(&[b, d], out)?;
        Ok(self.push(v, Op::SumAxis1(x)))
    }

    /// Mean over the last axis: `[..., K] → [...]`.
    pub fn mean_last(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.is_empty() {
            return shape_err("mean_last", "scalar input".into());
        }
        let k = xs[xs.len() - 1];
        let kf = c::<T>(k as f64);
        let out = self.value(x).data().chunks_exact(k).map(|r| r.iter().copied().sum::<T>() / kf).collect();
        let v = Array::from_vec(&xs[..xs.len() - 1], out)?;
        Ok(self.push(v, Op::MeanLast(x)))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Array::scalar(s), Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.data().iter().copied().sum::<T>() / c::<T>(xv.len() as f64);
        self.push(Array::scalar(s), Op::MeanAll(x))
    }

    /// Mean negative log-probability of the target class, with probabilities
    /// clamped to `[eps, 1 − eps]`.
    pub fn nll(&mut self, probs: Var, targets: &[usize], eps: T) -> Result<Var> {
        let ps = self.shape(probs).to_vec();
        if ps.len() != 2 || ps[0] != targets.len() || targets.iter().any(|&t| t >= ps[1]) {
            return shape_err("nll", format!("probs {ps:?} with {} targets", targets.len()));
        }
        let pd = self.value(probs).data();
        let mut loss = T::zero();
        for (b, &t) in targets.iter().enumerate() {
            let p = pd[b * ps[1] + t].max(eps).min(T::one() - eps);
            loss -= p.ln();
        }
        loss /= c::<T>(targets.len() as f64);
        Ok(self.push(Array::scalar(loss), Op::Nll { probs, targets: targets.to_vec(), eps }))
    }

    /// Norm-in-norm regression loss between `pred[B]` and fixed targets.
    ///
    /// Both vectors are centered and divided by their L2 norm, then
    /// `L = Σ|p̂ − t̂|^γ / (ε·B)` with `ε·B = √B` for `γ = 1` and `ε·B = 2` for
    /// `γ = 2`, which keeps `L` in `[0, 2]`.
    pub fn norm_in_norm(&mut self, pred: Var, target: &[T], gamma: u32) -> Result<Var> {
        let ps = self.shape(pred).to_vec();
        if ps != [target.len()] || target.len() < 2 {
            return shape_err("norm_in_norm", format!("pred {ps:?} with {} targets", target.len()));
        }
        if gamma != 1 && gamma != 2 {
            return arg_err(format!("gamma must be 1 or 2, got {gamma}"));
        }
        let b = target.len();
        let unit = |v: &[T]| -> (Vec<T>, T) {
            let m = v.iter().copied().sum::<T>() / c::<T>(b as f64);
            let centered: Vec<T> = v.iter().map(|&e| e - m).collect();
            let norm = (centered.iter().map(|&e| e * e).sum::<T>() + c::<T>(NORM_EPS)).sqrt();
            (centered.into_iter().map(|e| e / norm).collect(), norm)
        };
        let (pred_unit, pred_norm) = unit(self.value(pred).data());
        let (target_unit, _) = unit(target);
        let scale = if gamma == 1 { T::one() / c::<T>((b as f64).sqrt()) } else { c::<T>(0.5) };
        let loss =
            pred_unit.iter().zip(&target_unit).map(|(&p, &t)| (p - t).abs().powi(gamma as i32)).sum::<T>() * scale;
        Ok(self.push(Array::scalar(loss), Op::NormInNorm { pred, pred_unit, pred_norm, target_unit, gamma, scale }))
    }

    /// `mean |pred − target|`.
    pub fn mean_abs_error(&mut self, pred: Var, target: &[T]) -> Result<Var> {
        if self.value(pred).len() != target.len() || target.is_empty() {
            return shape_err("mean_abs_error", format!("pred {:?} with {} targets", self.shape(pred), target.len()));
        }
        let loss = self.value(pred).data().iter().zip(target).map(|(&p, &t)| (p - t).abs()).sum::<T>()
            / c::<T>(target.len() as f64);
        Ok(self.push(Array::scalar(loss), Op::MeanAbsError { pred, target: target.to_vec() }))
    }

    fn accumulate(grads: &mut [Option<Array<T>>], v: Var, g: Array<T>) {
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Reverse pass from a scalar `loss`, filling gradients of every node.
    pub fn backward_inputs(&mut self, loss: Var) -> Result<()> {
        if self.differentiated {
            return Err(Error::State("graph has already been differentiated".into()));
        }
        if self.value(loss).len() != 1 {
            return arg_err(format!("loss must be a scalar, got shape {:?}", self.shape(loss)));
        }
        self.differentiated = true;
        let mut grads: Vec<Option<Array<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array::full(self.shape(loss), T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Reverse pass that also adds parameter gradients into `store`.
    /// Parameters without a gradient buffer afterwards get a zero buffer.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        self.backward_inputs(loss)?;
        for (node, g) in self.nodes.iter().zip(&self.grads) {
            if let (Op::Param(idx), Some(g)) = (&node.op, g) {
                let p = store.by_index_mut(*idx);
                if p.value.shape() != g.shape() {
                    return Err(Error::State("parameter shape changed during the graph's lifetime".into()));
                }
                match &mut p.grad {
                    Some(existing) => existing.add_assign(g),
                    slot @ None => *slot = Some(g.clone()),
                }
            }
        }
        for (_, p) in store.iter_mut() {
            if p.grad.is_none() {
                p.grad = Some(Array::zeros(p.value.shape()));
            }
        }
        Ok(())
    }

    fn backward_node(&self, i: usize, g: &Array<T>, grads: &mut [Option<Array<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                Self::accumulate(grads, *a, g.clone());
                Self::accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                Self::accumulate(grads, *a, g.clone());
                Self::accumulate(grads, *b, g.map(|e| -e));
            }
            Op::Mul(a, b) => {
                let va = self.value(*a).data();
                let vb = self.value(*b).data();
                let ga = gd.iter().zip(vb).map(|(&x, &y)| x * y).collect();
                let gb = gd.iter().zip(va).map(|(&x, &y)| x * y).collect();
                Self::accumulate(grads, *a, Array::from_vec(g.shape(), ga)?);
                Self::accumulate(grads, *b, Array::from_vec(g.shape(), gb)?);
            }
            Op::Scale(x, s) => Self::accumulate(grads, *x, g.map(|e| e * *s)),
            Op::MulConst(x, k) => {
                let gx = gd.iter().zip(k).map(|(&a, &b)| a * b).collect();
                Self::accumulate(grads, *x, Array::from_vec(g.shape(), gx)?);
            }
            Op::AddBias(x, b) => {
                let cdim = g.last_dim();
                let mut gb = vec![T::zero(); cdim];
                for row in gd.chunks_exact(cdim) {
                    for (a, &e) in gb.iter_mut().zip(row) {
                        *a += e;
                    }
                }
                Self::accumulate(grads, *x, g.clone());
                Self::accumulate(grads, *b, Array::from_vec(&[cdim], gb)?);
            }
            Op::Linear { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (in_dim, out_dim) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.len() / in_dim.max(1);
                let mut gx = vec![T::zero(); xv.len()];
                let mut gw = vec![T::zero(); wv.len()];
                let mut gb = vec![T::zero(); out_dim];
                for r in 0..rows {
                    let grow = &gd[r * out_dim..(r + 1) * out_dim];
                    for (a, &e) in gb.iter_mut().zip(grow) {
                        *a += e;
                    }
                    for k in 0..in_dim {
                        let wrow = &wv.data()[k * out_dim..(k + 1) * out_dim];
                        gx[r * in_dim + k] = wrow.iter().zip(grow).map(|(&a, &b)| a * b).sum();
                        let xval = xv.data()[r * in_dim + k];
                        for (a, &e) in gw[k * out_dim..(k + 1) * out_dim].iter_mut().zip(grow) {
                            *a += xval * e;
                        }
                    }
                }
                Self::accumulate(grads, *x, Array::from_vec(xv.shape(), gx)?);
                Self::accumulate(grads, *w, Array::from_vec(wv.shape(), gw)?);
                if let Some(b) = b {
                    Self::accumulate(grads, *b, Array::from_vec(&[out_dim], gb)?);
                }
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (n, h, wd, ci) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
                let (kh, kw, co) = (wv.shape()[0], wv.shape()[1], wv.shape()[3]);
                let (ho, wo) = (g.shape()[1], g.shape()[2]);
                let mut gx = vec![T::zero(); xv.len()];
                let mut gw = vec![T::zero(); wv.len()];
                let mut gb = vec![T::zero(); co];
                let xd = xv.data();
                let wt = wv.data();
                for bn in 0..n {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let base = ((bn * ho + oy) * wo + ox) * co;
                            let grow = &gd[base..base + co];
                            for (a, &e) in gb.iter_mut().zip(grow) {
                                *a += e;
                            }
                            for ky in 0..kh {
                                let iy = (oy * stride + ky) as isize - *pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = (ox * stride + kx) as isize - *pad as isize;
                                    if ix < 0 || ix >= wd as isize {
                                        continue;
                                    }
                                    let xoff = ((bn * h + iy as usize) * wd + ix as usize) * ci;
                                    let woff = (ky * kw + kx) * ci * co;
                                    for cin in 0..ci {
                                        let wrow = &wt[woff + cin * co..woff + (cin + 1) * co];
                                        gx[xoff + cin] += wrow.iter().zip(grow).map(|(&a, &b)| a * b).sum::<T>();
                                        let xval = xd[xoff + cin];
                                        for (a, &e) in gw[woff + cin * co..woff + (cin + 1) * co].iter_mut().zip(grow) {
                                            *a += xval * e;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Self::accumulate(grads, *x, Array::from_vec(xv.shape(), gx)?);
                Self::accumulate(grads, *w, Array::from_vec(wv.shape(), gw)?);
                if let Some(b) = b {
                    Self::accumulate(grads, *b, Array::from_vec(&[co], gb)?);
                }
            }
            Op::Resize(x) => {
                let xv = self.value(*x);
                let (n, h, w, ch) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
                let (out_h, out_w) = (g.shape()[1], g.shape()[2]);
                let ay = resize_axis(h, out_h);
                let ax = resize_axis(w, out_w);
                let mut gx = vec![T::zero(); xv.len()];
                for bn in 0..n {
                    for oy in 0..out_h {
                        let (y0, y1, fy) = (ay.i0[oy], ay.i1[oy], c::<T>(ay.w1[oy]));
                        for ox in 0..out_w {
                            let (x0, x1, fx) = (ax.i0[ox], ax.i1[ox], c::<T>(ax.w1[ox]));
                            let o = ((bn * out_h + oy) * out_w + ox) * ch;
                            let taps = [
                                (((bn * h + y0) * w + x0) * ch, (T::one() - fy) * (T::one() - fx)),
                                (((bn * h + y0) * w + x1) * ch, (T::one() - fy) * fx),
                                (((bn * h + y1) * w + x0) * ch, fy * (T::one() - fx)),
                                (((bn * h + y1) * w + x1) * ch, fy * fx),
                            ];
                            for (p, wt) in taps {
                                for k in 0..ch {
                                    gx[p + k] += wt * gd[o + k];
                                }
                            }
                        }
                    }
                }
                Self::accumulate(grads, *x, Array::from_vec(xv.shape(), gx)?);
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let cdim = g.last_dim();
                let cf = c::<T>(cdim as f64);
                let gv = gamma.map(|gm| self.value(gm).data().to_vec());
                let mut gx = vec![T::zero(); gd.len()];
                let mut ggamma = vec![T::zero(); cdim];
                let mut gbeta = vec![T::zero(); cdim];
                let mut gxhat = vec![T::zero(); cdim];
                for (r, (grow, xrow)) in gd.chunks_exact(cdim).zip(xhat.chunks_exact(cdim)).enumerate() {
                    for k in 0..cdim {
                        ggamma[k] += grow[k] * xrow[k];
                        gbeta[k] += grow[k];
                        gxhat[k] = match &gv {
                            Some(gm) => grow[k] * gm[k],
                            None => grow[k],
                        };
                    }
                    let s1 = gxhat.iter().copied().sum::<T>();
                    let s2 = gxhat.iter().zip(xrow).map(|(&a, &b)| a * b).sum::<T>();
                    let inv = inv_std[r];
                    for k in 0..cdim {
                        gx[r * cdim + k] = inv / cf * (cf * gxhat[k] - s1 - xrow[k] * s2);
                    }
                }
                Self::accumulate(grads, *x, Array::from_vec(g.shape(), gx)?);
                if let Some(gm) = gamma {
                    Self::accumulate(grads, *gm, Array::from_vec(&[cdim], ggamma)?);
                }
                if let Some(bt) = beta {
                    Self::accumulate(grads, *bt, Array::from_vec(&[cdim], gbeta)?);
                }
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let cdim = g.last_dim();
                let mut gx = vec![T::zero(); gd.len()];
                for ((grow, yrow), out) in
                    gd.chunks_exact(cdim).zip(y.chunks_exact(cdim)).zip(gx.chunks_exact_mut(cdim))
                {
                    let dot = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum::<T>();
                    for k in 0..cdim {
                        out[k] = yrow[k] * (grow[k] - dot);
                    }
                }
                Self::accumulate(grads, *x, Array::from_vec(g.shape(), gx)?);
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                let gx = gd.iter().zip(xv).map(|(&a, &e)| a * gelu_parts(e).1).collect();
                Self::accumulate(grads, *x, Array::from_vec(g.shape(), gx)?);
            }
            Op::GlobalAvgPool(x) => {
                let xs = self.shape(*x);
                let (n, ch) = (xs[0], xs[xs.len() - 1]);
                let inner = xs[1..xs.len() - 1].iter().product::<usize>();
                let cnt = c::<T>(inner as f64);
                let mut gx = vec![T::zero(); n * inner * ch];
                for bn in 0..n {
                    let grow = &gd[bn * ch..(bn + 1) * ch];
                    for p in 0..inner {
                        for (k, &e) in grow.iter().enumerate() {
                            gx[(bn * inner + p) * ch + k] = e / cnt;
                        }
                    }
                }
                Self::accumulate(grads, *x, Array::from_vec(xs, gx)?);
            }
            Op::Attention { q, k, v, heads, window, probs } => {
                let qs = self.shape(*q).to_vec();
                let (n, h, w, ch) = (qs[0], qs[1], qs[2], qs[3]);
                let (kh, kw) = window.unwrap_or((h, w));
                let keys = kh * kw;
                let d = ch / heads;
                let scale = c::<T>(1.0 / (d as f64).sqrt());
                let qd = self.value(*q).data();
                let kd = self.value(*k).data();
                let vd = self.value(*v).data();
                let mut gq = vec![T::zero(); qd.len()];
                let mut gk = vec![T::zero(); qd.len()];
                let mut gv = vec![T::zero(); qd.len()];
                let mut gp = vec![T::zero(); keys];
                for bn in 0..n {
                    for y in 0..h {
                        let sy = if window.is_some() { window_start(y, kh, h) } else { 0 };
                        for x in 0..w {
                            let sx = if window.is_some() { window_start(x, kw, w) } else { 0 };
                            let qoff = ((bn * h + y) * w + x) * ch;
                            for hd in 0..*heads {
                                let go = &gd[qoff + hd * d..qoff + (hd + 1) * d];
                                let pbase = (((bn * h + y) * w + x) * heads + hd) * keys;
                                let p = &probs[pbase..pbase + keys];
                                let mut j = 0;
                                for ky in sy..sy + kh {
                                    for kx in sx..sx + kw {
                                        let voff = ((bn * h + ky) * w + kx) * ch + hd * d;
                                        gp[j] = go.iter().zip(&vd[voff..voff + d]).map(|(&a, &b)| a * b).sum();
                                        for (a, &e) in gv[voff..voff + d].iter_mut().zip(go) {
                                            *a += p[j] * e;
                                        }
                                        j += 1;
                                    }
                                }
                                let dot = p.iter().zip(&gp).map(|(&a, &b)| a * b).sum::<T>();
                                let mut j = 0;
                                for ky in sy..sy + kh {
                                    for kx in sx..sx + kw {
                                        let gs = p[j] * (gp[j] - dot) * scale;
                                        let koff = ((bn * h + ky) * w + kx) * ch + hd * d;
                                        for t in 0..d {
                                            gq[qoff + hd * d + t] += gs * kd[koff + t];
                                            gk[koff + t] += gs * qd[qoff + hd * d + t];
                                        }
                                        j += 1;
                                    }
                                }
                            }
                        }
                    }
                }
                Self::accumulate(grads, *q, Array::from_vec(&qs, gq)?);
                Self::accumulate(grads, *k, Array::from_vec(&qs, gk)?);
                Self::accumulate(grads, *v, Array::from_vec(&qs, gv)?);
            }
            Op::Concat(xs) => {
                let total = g.last_dim();
                let rows = g.len() / total;
                let mut offset = 0;
                for &x in xs {
                    let d = self.value(x).last_dim();
                    let mut gx = Vec::with_capacity(rows * d);
                    for r in 0..rows {
                        gx.extend_from_slice(&gd[r * total + offset..r * total + offset + d]);
                    }
                    Self::accumulate(grads, x, Array::from_vec(self.shape(x), gx)?);
                    offset += d;
                }
            }
            Op::Reshape(x) => {
                Self::accumulate(grads, *x, g.clone().reshape(self.shape(*x))?);
            }
            Op::SelectRows { x, rows } => {
                let xs = self.shape(*x);
                let stride: usize = xs[1..].iter().product();
                let mut gx = vec![T::zero(); self.value(*x).len()];
                for (j, &r) in rows.iter().enumerate() {
                    for t in 0..stride {
                        gx[r * stride + t] += gd[j * stride + t];
                    }
                }
                Self::accumulate(grads, *x, Array::from_vec(xs, gx)?);
            }
            Op::ScaleRows { x, s } => {
                let xv = self.value(*x);
                let sd = self.value(*s).data();
                let stride = (xv.len() / sd.len().max(1)).max(1);
                let mut gx = Vec::with_capacity(xv.len());
                let mut gs = Vec::with_capacity(sd.len());
                for ((grow, xrow), &sv) in gd.chunks_exact(stride).zip(xv.data().chunks_exact(stride)).zip(sd) {
                    gx.extend(grow.iter().map(|&e| e * sv));
                    gs.push(grow.iter().zip(xrow).map(|(&a, &b)| a * b).sum());
                }
                Self::accumulate(grads, *x, Array::from_vec(xv.shape(), gx)?);
                Self::accumulate(grads, *s, Array::from_vec(self.shape(*s), gs)?);
            }
            Op::Stack(xs) => {
                let base = self.shape(xs[0]).to_vec();
                let n = base[0];
                let inner: usize = base[1..].iter().product();
                let s = xs.len();
                for (st, &x) in xs.iter().enumerate() {
                    let mut gx = Vec::with_capacity(n * inner);
                    for bn in 0..n {
                        let off = (bn * s + st) * inner;
                        gx.extend_from_slice(&gd[off..off + inner]);
                    }
                    Self::accumulate(grads, x, Array::from_vec(&base, gx)?);
                }
            }
            Op::GatedSum { x, g: gates } => {
                let xs = self.shape(*x).to_vec();
                let (n, s) = (xs[0], xs[1]);
                let inner: usize = xs[2..].iter().product();
                let xd = self.value(*x).data();
                let gtd = self.value(*gates).data();
                let mut gx = vec![T::zero(); xd.len()];
                let mut gg = vec![T::zero(); n * s];
                for bn in 0..n {
                    let grow = &gd[bn * inner..(bn + 1) * inner];
                    for st in 0..s {
                        let off = (bn * s + st) * inner;
                        let gv = gtd[bn * s + st];
                        for t in 0..inner {
                            gx[off + t] = gv * grow[t];
                        }
                        gg[bn * s + st] = grow.iter().zip(&xd[off..off + inner]).map(|(&a, &b)| a * b).sum();
                    }
                }
                Self::accumulate(grads, *x, Array::from_vec(&xs, gx)?);
                Self::accumulate(grads, *gates, Array::from_vec(&[n, s], gg)?);
            }
            Op::SumAxis1(x) => {
                let xs = self.shape(*x).to_vec();
                let (b, m, d) = (xs[0], xs[1], xs[2]);
                let mut gx = Vec::with_capacity(b * m * d);
                for bn in 0..b {
                    for _ in 0..m {
                        gx.extend_from_slice(&gd[bn * d..(bn + 1) * d]);
                    }
                }
                Self::accumulate(grads, *x, Array::from_vec(&xs, gx)?);
            }
            Op::MeanLast(x) => {
                let xs = self.shape(*x);
                let k = xs[xs.len() - 1];
                let kf = c::<T>(k as f64);
                let gx = gd.iter().flat_map(|&e| std::iter::repeat_n(e / kf, k)).collect();
                Self::accumulate(grads, *x, Array::from_vec(xs, gx)?);
            }
            Op::SumAll(x) => {
                Self::accumulate(grads, *x, Array::full(self.shape(*x), gd[0]));
            }
            Op::MeanAll(x) => {
                let n = c::<T>(self.value(*x).len() as f64);
                Self::accumulate(grads, *x, Array::full(self.shape(*x), gd[0] / n));
            }
            Op::Nll { probs, targets, eps } => {
                let ps = self.shape(*probs).to_vec();
                let pd = self.value(*probs).data();
                let mut gp = vec![T::zero(); pd.len()];
                let bf = c::<T>(targets.len() as f64);
                for (b, &t) in targets.iter().enumerate() {
                    let p = pd[b * ps[1] + t];
                    if p > *eps && p < T::one() - *eps {
                        gp[b * ps[1] + t] = -gd[0] / (bf * p);
                    }
                }
                Self::accumulate(grads, *probs, Array::from_vec(&ps, gp)?);
            }
            Op::NormInNorm { pred, pred_unit, pred_norm, target_unit, gamma, scale } => {
                let gu: Vec<T> = pred_unit
                    .iter()
                    .zip(target_unit)
                    .map(|(&p, &t)| {
                        let d = p - t;
                        let dd = match (*gamma, d == T::zero()) {
                            (1, true) => T::zero(),
                            (1, false) => d.signum(),
                            _ => c::<T>(2.0) * d,
                        };
                        gd[0] * *scale * dd
                    })
                    .collect();
                let proj = pred_unit.iter().zip(&gu).map(|(&a, &b)| a * b).sum::<T>();
                let ga: Vec<T> = gu.iter().zip(pred_unit).map(|(&g_, &u)| (g_ - u * proj) / *pred_norm).collect();
                let mean = ga.iter().copied().sum::<T>() / c::<T>(ga.len() as f64);
                let gp = ga.into_iter().map(|e| e - mean).collect();
                Self::accumulate(grads, *pred, Array::from_vec(self.shape(*pred), gp)?);
            }
            Op::MeanAbsError { pred, target } => {
                let n = c::<T>(target.len() as f64);
                let gp = self
                    .value(*pred)
                    .data()
                    .iter()
                    .zip(target)
                    .map(|(&p, &t)| {
                        let d = p - t;
                        if d == T::zero() {
                            T::zero()
                        } else {
                            gd[0] * d.signum() / n
                        }
                    })
                    .collect();
                Self::accumulate(grads, *pred, Array::from_vec(self.shape(*pred), gp)?);
            }
        }
        Ok(())
    }
}
