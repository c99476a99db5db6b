use rand::Rng;

use crate::error::{arg_err, Result};
use crate::numerics::{Array, Graph, ParamStore, Real, Var};

use super::layers::{conv, dense, mlp, norm, Init};
use super::{AttentionKind, DebugHooks, Model, ModelConfig, ModelOutput, Task, NUM_SITUATIONS};

const TASKS: [Task; 2] = [Task::Dspn, Task::Qspn];
const PIXEL_MEAN: f64 = 0.5;
const PIXEL_STD: f64 = 0.25;

/// Four stage outputs of the backbone, `[N, h_s, w_s, C_s]` each.
#[derive(Clone, Copy, Debug)]
pub struct FeaturePyramid {
    pub stages: [Var; 4],
}

/// Task vectors `[N, C1+C2+C3+C4]` and the stage gates `[N, 4]` of each scale.
#[derive(Clone, Copy, Debug)]
pub struct TaskVectors {
    pub vectors: Var,
    pub gates: [Var; 3],
}

#[derive(Clone, Debug)]
pub struct VpfsOutput {
    /// Merged vector `[B, D]`.
    pub merged: Var,
    /// Softmax weights before masking, `[B, M]`.
    pub raw_weights: Var,
    /// Weights after top-K masking, `[B, M]`.
    pub weights: Var,
    /// Kept viewport indices per image, ascending.
    pub selected: Vec<Vec<usize>>,
    /// Weighted vectors of the kept viewports, `[B·K, D]`.
    pub weighted: Var,
}

#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub batch: usize,
    pub pyramid: FeaturePyramid,
    pub dspn: TaskVectors,
    pub qspn: TaskVectors,
    pub dspn_logits: Var,
    pub probs: Var,
    pub vpfs: VpfsOutput,
    pub viewport_scores: Var,
    pub score: Var,
}

impl ForwardVars {
    pub fn outputs<T: Real>(&self, g: &Graph<T>) -> Vec<ModelOutput> {
        let probs = g.value(self.probs).data();
        let score = g.value(self.score).data();
        let vs = g.value(self.viewport_scores);
        let k = vs.last_dim();
        let w = g.value(self.vpfs.weights);
        let m = w.last_dim();
        (0..self.batch)
            .map(|b| {
                let mut p = [0.0; NUM_SITUATIONS];
                for (c, slot) in p.iter_mut().enumerate() {
                    *slot = probs[b * NUM_SITUATIONS + c].as_f64();
                }
                ModelOutput {
                    probs: p,
                    score: score[b].as_f64(),
                    viewport_scores: vs.data()[b * k..(b + 1) * k].iter().map(|v| v.as_f64()).collect(),
                    weights: w.data()[b * m..(b + 1) * m].iter().map(|v| v.as_f64()).collect(),
                    selected: self.vpfs.selected[b].clone(),
                }
            })
            .collect()
    }
}

fn embed_hidden(cfg: &ModelConfig) -> usize {
    (cfg.backbone.embed_dim / 2).max(1)
}

fn stage_in(cfg: &ModelConfig, s: usize) -> usize {
    if s == 0 {
        cfg.backbone.embed_dim
    } else {
        cfg.backbone.dims[s - 1]
    }
}

pub(crate) fn init_params<T: Real, R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Result<ParamStore<T>> {
    let bb = &cfg.backbone;
    let mut store = ParamStore::new();
    let mut init = Init { store: &mut store, rng };
    let e = bb.embed_dim;
    init.conv("embed.conv1", 3, 3, embed_hidden(cfg))?;
    init.conv("embed.conv2", 3, embed_hidden(cfg), e)?;
    init.norm("embed.norm2", e)?;
    for s in 0..4 {
        let c = bb.dims[s];
        if s < 3 {
            init.conv(&format!("stage{}.down.conv", s + 1), 3, stage_in(cfg, s), c)?;
            init.norm(&format!("stage{}.down.norm", s + 1), c)?;
        } else if c != bb.dims[2] {
            init.dense("stage4.proj", bb.dims[2], c)?;
        }
        for b in 0..bb.depths[s] {
            let n = format!("stage{}.block{b}", s + 1);
            init.norm(&format!("{n}.norm1"), c)?;
            for part in ["q", "k", "v", "proj"] {
                init.dense(&format!("{n}.{part}"), c, c)?;
            }
            init.norm(&format!("{n}.norm2"), c)?;
            init.mlp(&format!("{n}.mlp"), c, c * bb.mlp_ratio, c)?;
        }
    }
    let widths = bb.scale_widths();
    for task in TASKS {
        let t = task.tag();
        for (s, &w) in widths.iter().enumerate() {
            for j in 0..4 {
                init.dense(&format!("afa.{t}.s{s}.p{j}"), bb.dims[j], w)?;
            }
            init.mlp(&format!("afa.{t}.s{s}.gate"), 4 * w, w.max(4), 4)?;
            init.norm(&format!("afa.{t}.s{s}.norm"), w)?;
        }
    }
    let d = bb.task_dim();
    init.mlp("dspn.mlp", cfg.m * d, d, NUM_SITUATIONS)?;
    init.dense("vpfs.conv", d, d)?;
    init.mlp("vpfs.mlp", d, d, cfg.m)?;
    init.mlp("qspn.reg", d, (d / 2).max(1), 1)?;
    Ok(store)
}

/// Standardizes pixels, then two 3×3 stride-2 convolutions and a layer norm,
/// `[N, S, S, 3] → [N, S/4, S/4, C]`.
pub fn patch_embed<T: Real>(g: &mut Graph<T>, p: &ParamStore<T>, cfg: &ModelConfig, x: Var) -> Result<Var> {
    let s = cfg.viewport_size;
    let shape = g.shape(x).to_vec();
    if shape.len() != 4 || shape[1] != s || shape[2] != s || shape[3] != 3 {
        return arg_err(format!("patch embedding expects [N, {s}, {s}, 3], got {shape:?}"));
    }
    let offset = g.input(Array::full(&shape, T::from_f64(-PIXEL_MEAN)));
    let x = g.add(x, offset)?;
    let x = g.scale(x, T::from_f64(1.0 / PIXEL_STD));
    let h = conv(g, p, "embed.conv1", x, 2, 1)?;
    let h = conv(g, p, "embed.conv2", h, 2, 1)?;
    norm(g, p, "embed.norm2", h)
}

fn attention_block<T: Real>(
    g: &mut Graph<T>,
    p: &ParamStore<T>,
    cfg: &ModelConfig,
    s: usize,
    name: &str,
    x: Var,
) -> Result<Var> {
    let heads = cfg.backbone.heads[s];
    let h = norm(g, p, &format!("{name}.norm1"), x)?;
    let q = dense(g, p, &format!("{name}.q"), h)?;
    let k = dense(g, p, &format!("{name}.k"), h)?;
    let v = dense(g, p, &format!("{name}.v"), h)?;
    let a = match cfg.attention {
        AttentionKind::Neighborhood => g.neighborhood_attention(q, k, v, cfg.backbone.kernel, heads)?,
        AttentionKind::Full => g.full_attention(q, k, v, heads)?,
    };
    let a = dense(g, p, &format!("{name}.proj"), a)?;
    let x = g.add(x, a)?;
    let h = norm(g, p, &format!("{name}.norm2"), x)?;
    let h = mlp(g, p, &format!("{name}.mlp"), h)?;
    g.add(x, h)
}

/// Downsamplers before stages 1–3 put the stage outputs at H/8, H/16, H/32, H/32.
pub fn backbone_forward<T: Real>(
    g: &mut Graph<T>,
    p: &ParamStore<T>,
    cfg: &ModelConfig,
    embedded: Var,
) -> Result<FeaturePyramid> {
    let bb = &cfg.backbone;
    let mut x = embedded;
    let mut stages = [embedded; 4];
    for (s, out) in stages.iter_mut().enumerate() {
        if s < 3 {
            x = conv(g, p, &format!("stage{}.down.conv", s + 1), x, 2, 1)?;
            x = norm(g, p, &format!("stage{}.down.norm", s + 1), x)?;
        } else if bb.dims[3] != bb.dims[2] {
            x = dense(g, p, "stage4.proj", x)?;
        }
        for b in 0..bb.depths[s] {
            x = attention_block(g, p, cfg, s, &format!("stage{}.block{b}", s + 1), x)?;
        }
        *out = x;
    }
    Ok(FeaturePyramid { stages })
}

/// Projects every stage to each scale's width, resizes it to that scale and
/// stacks the four results: `[N, 4, h_s, w_s, W_s]` for scales H/8, H/16, H/32.
pub fn afa_unify<T: Real>(g: &mut Graph<T>, p: &ParamStore<T>, task: Task, pyr: &FeaturePyramid) -> Result<[Var; 3]> {
    let mut out = [pyr.stages[0]; 3];
    for (s, slot) in out.iter_mut().enumerate() {
        let (th, tw) = (g.shape(pyr.stages[s])[1], g.shape(pyr.stages[s])[2]);
        let mut maps = Vec::with_capacity(4);
        for j in 0..4 {
            let proj = dense(g, p, &format!("afa.{}.s{s}.p{j}", task.tag()), pyr.stages[j])?;
            let shape = g.shape(proj);
            let resized = if shape[1] == th && shape[2] == tw { proj } else { g.bilinear_resize(proj, th, tw)? };
            maps.push(resized);
        }
        *slot = g.stack(&maps)?;
    }
    Ok(out)
}

/// Gates the stage axis of each stacked map with `softmax(MLP(pooled stages))`.
/// Returns the fused maps `[N, h_s, w_s, W_s]` and gates `[N, 4]`.
pub fn msfs_fuse<T: Real>(
    g: &mut Graph<T>,
    p: &ParamStore<T>,
    cfg: &ModelConfig,
    task: Task,
    stacked: &[Var; 3],
    hooks: &DebugHooks,
) -> Result<([Var; 3], [Var; 3])> {
    let mut fused = *stacked;
    let mut gates = *stacked;
    for s in 0..3 {
        let shape = g.shape(stacked[s]).to_vec();
        if shape.len() != 5 || shape[1] != 4 {
            return arg_err(format!("stacked map must be [N, 4, h, w, C], got {shape:?}"));
        }
        let (n, w) = (shape[0], shape[4]);
        let gate = if let Some(j) = hooks.force_stage {
            if j >= 4 {
                return arg_err(format!("forced stage {j} out of range"));
            }
            let mut one_hot = vec![T::zero(); n * 4];
            for b in 0..n {
                one_hot[b * 4 + j] = T::one();
            }
            g.input(Array::from_vec(&[n, 4], one_hot)?)
        } else if cfg.enable_msfs {
            let flat = g.reshape(stacked[s], &[n * 4, shape[2] * shape[3], w])?;
            let pooled = g.global_avg_pool(flat)?;
            let pooled = g.reshape(pooled, &[n, 4 * w])?;
            let logits = mlp(g, p, &format!("afa.{}.s{s}.gate", task.tag()), pooled)?;
            g.softmax(logits)
        } else {
            g.input(Array::full(&[n, 4], T::from_f64(0.25)))
        };
        gates[s] = gate;
        fused[s] = g.gated_sum(stacked[s], gate)?;
    }
    Ok((fused, gates))
}

/// Layer norm, global average pool and concatenation over the three scales.
pub fn pool_concat<T: Real>(g: &mut Graph<T>, p: &ParamStore<T>, task: Task, fused: &[Var; 3]) -> Result<Var> {
    let mut parts = Vec::with_capacity(3);
    for (s, &f) in fused.iter().enumerate() {
        let h = norm(g, p, &format!("afa.{}.s{s}.norm", task.tag()), f)?;
        parts.push(g.global_avg_pool(h)?);
    }
    g.concat(&parts)
}

fn task_vectors<T: Real>(
    g: &mut Graph<T>,
    p: &ParamStore<T>,
    cfg: &ModelConfig,
    task: Task,
    pyr: &FeaturePyramid,
    hooks: &DebugHooks,
) -> Result<TaskVectors> {
    let stacked = afa_unify(g, p, task, pyr)?;
    let (fused, gates) = msfs_fuse(g, p, cfg, task, &stacked, hooks)?;
    let vectors = pool_concat(g, p, task, &fused)?;
    Ok(TaskVectors { vectors, gates })
}

fn check_rows<T: Real>(g: &Graph<T>, v: Var, rows: usize, what: &str) -> Result<usize> {
    let shape = g.shape(v);
    if shape.len() != 2 || shape[0] != rows {
        return arg_err(format!("{what} expects {rows} viewport vectors, got shape {shape:?}"));
    }
    Ok(shape[1])
}

/// Concatenates the `M` vectors of each image in plan order and classifies
/// them. Returns `(logits, probs)`, both `[B, 4]`.
pub fn dspn_forward<T: Real>(
    g: &mut Graph<T>,
    p: &ParamStore<T>,
    cfg: &ModelConfig,
    v: Var,
    batch: usize,
) -> Result<(Var, Var)> {
    let d = check_rows(g, v, batch * cfg.m, "situation head")?;
    let cat = g.reshape(v, &[batch, cfg.m * d])?;
    let logits = mlp(g, p, "dspn.mlp", cat)?;
    let probs = g.softmax(logits);
    Ok((logits, probs))
}

/// Indices of the `k` largest entries, ties to the lower index, returned ascending.
pub(crate) fn top_k<T: Real>(w: &[T], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| w[b].partial_cmp(&w[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    let mut keep = order[..k].to_vec();
    keep.sort_unstable();
    keep
}

/// Viewport weighting and top-`K` selection over `v` of shape `[B·M, D]`.
pub fn vpfs<T: Real>(
    g: &mut Graph<T>,
    p: &ParamStore<T>,
    cfg: &ModelConfig,
    v: Var,
    batch: usize,
    k: usize,
) -> Result<VpfsOutput> {
    let m = cfg.m;
    if k == 0 || k > m {
        return arg_err(format!("K must satisfy 1 ≤ K ≤ {m}, got {k}"));
    }
    let d = check_rows(g, v, batch * m, "viewport selector")?;
    let grouped = g.reshape(v, &[batch, m, d])?;
    let merged = g.sum_axis1(grouped)?;
    let mixed = dense(g, p, "vpfs.conv", merged)?;
    let logits = mlp(g, p, "vpfs.mlp", mixed)?;
    let raw_weights = g.softmax(logits);
    let raw = g.value(raw_weights).data().to_vec();
    let mut mask = vec![T::zero(); batch * m];
    let mut selected = Vec::with_capacity(batch);
    let mut rows = Vec::with_capacity(batch * k);
    for b in 0..batch {
        let keep = top_k(&raw[b * m..(b + 1) * m], k);
        for &i in &keep {
            mask[b * m + i] = T::one();
            rows.push(b * m + i);
        }
        selected.push(keep);
    }
    let weights = g.mul_const(raw_weights, &Array::from_vec(&[batch, m], mask)?)?;
    let flat = g.reshape(weights, &[batch * m])?;
    let scaled = g.scale_rows(v, flat)?;
    let weighted = g.select_rows(scaled, &rows)?;
    Ok(VpfsOutput { merged, raw_weights, weights, selected, weighted })
}

/// Regresses a score for each of the `k` kept vectors of every image and
/// averages them. Returns `(per-viewport [B, K], score [B])`.
pub fn qspn_forward<T: Real>(
    g: &mut Graph<T>,
    p: &ParamStore<T>,
    weighted: Var,
    batch: usize,
    k: usize,
) -> Result<(Var, Var)> {
    check_rows(g, weighted, batch * k, "quality head")?;
    let r = mlp(g, p, "qspn.reg", weighted)?;
    let per = g.reshape(r, &[batch, k])?;
    let score = g.mean_last(per)?;
    Ok((per, score))
}

pub(crate) fn forward<T: Real>(model: &Model<T>, g: &mut Graph<T>, batch: &Array<T>) -> Result<ForwardVars> {
    let cfg = &model.config;
    let p = &model.params;
    let n = batch.shape().first().copied().unwrap_or(0);
    if n == 0 || n % cfg.m != 0 {
        return arg_err(format!("batch of {n} viewports is not a multiple of M = {}", cfg.m));
    }
    let b = n / cfg.m;
    let x = g.input(batch.clone());
    let e = patch_embed(g, p, cfg, x)?;
    let pyramid = backbone_forward(g, p, cfg, e)?;
    let dspn = task_vectors(g, p, cfg, Task::Dspn, &pyramid, &model.hooks)?;
    let qspn = task_vectors(g, p, cfg, Task::Qspn, &pyramid, &model.hooks)?;
    let (dspn_logits, probs) = dspn_forward(g, p, cfg, dspn.vectors, b)?;
    let vp = if cfg.enable_vpfs {
        vpfs(g, p, cfg, qspn.vectors, b, cfg.k)?
    } else {
        let ones = g.input(Array::full(&[b, cfg.m], T::one()));
        VpfsOutput {
            merged: qspn.vectors,
            raw_weights: ones,
            weights: ones,
            selected: vec![(0..cfg.m).collect(); b],
            weighted: qspn.vectors,
        }
    };
    let (viewport_scores, score) = qspn_forward(g, p, vp.weighted, b, cfg.kept())?;
    Ok(ForwardVars { batch: b, pyramid, dspn, qspn, dspn_logits, probs, vpfs: vp, viewport_scores, score })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_k_prefers_lower_index_on_ties() {
        assert_eq!(top_k(&[0.2f64, 0.3, 0.2, 0.3], 2), vec![1, 3]);
        assert_eq!(top_k(&[0.25f64; 4], 2), vec![0, 1]);
        assert_eq!(top_k(&[0.1f64, 0.5, 0.4], 3), vec![0, 1, 2]);
    }
}
