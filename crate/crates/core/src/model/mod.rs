//! Multitask viewport network.
//!
//! Each panorama is cut into `M` equatorial viewports. A shared backbone
//! (patch embedding plus four neighborhood-attention stages) turns every
//! viewport into a four-level feature pyramid. Two independent aggregation
//! branches, one per task, resize the pyramid onto three scales, gate the
//! stages, and pool to a task vector. The distortion-situation head classifies
//! the concatenated vectors of all viewports; the quality head weights the
//! viewports, keeps the `K` strongest, regresses a score per kept viewport and
//! averages them.

mod checkpoint;
mod layers;
mod network;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::geometry::{equatorial_plan, SamplingPlan};
use crate::image::ErpImage;
use crate::numerics::gradcheck::{check_params, GradCheckConfig, GradCheckReport};
use crate::numerics::{Array, Graph, ParamStore, Real};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use network::{FeaturePyramid, ForwardVars, TaskVectors, VpfsOutput};

/// Distortion situations in class-index order.
pub const NUM_SITUATIONS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Dspn,
    Qspn,
}

impl Task {
    pub fn tag(self) -> &'static str {
        match self {
            Task::Dspn => "dspn",
            Task::Qspn => "qspn",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    Neighborhood,
    /// Global attention within each stage; for comparisons only.
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub depths: [usize; 4],
    pub dims: [usize; 4],
    pub heads: [usize; 4],
    pub kernel: usize,
    pub embed_dim: usize,
    pub mlp_ratio: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            depths: [2, 2, 5, 3],
            dims: [16, 32, 64, 64],
            heads: [1, 2, 4, 4],
            kernel: 7,
            embed_dim: 16,
            mlp_ratio: 2,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return arg_err(format!("attention kernel must be odd, got {}", self.kernel));
        }
        if self.embed_dim < 4 || self.mlp_ratio == 0 {
            return arg_err("embed_dim must be ≥ 4 and mlp_ratio ≥ 1");
        }
        for s in 0..4 {
            if self.dims[s] == 0 || self.heads[s] == 0 || !self.dims[s].is_multiple_of(self.heads[s]) {
                return arg_err(format!(
                    "stage {} width {} is not divisible into {} heads",
                    s + 1,
                    self.dims[s],
                    self.heads[s]
                ));
            }
        }
        Ok(())
    }

    /// Channel widths of the three aggregation scales. The coarsest scale
    /// carries both H/32 stages.
    pub fn scale_widths(&self) -> [usize; 3] {
        [self.dims[0], self.dims[1], self.dims[2] + self.dims[3]]
    }

    /// Length of a task vector: `C1 + C2 + C3 + C4`.
    pub fn task_dim(&self) -> usize {
        self.dims.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub viewport_size: usize,
    pub fov_deg: f64,
    pub m: usize,
    pub offset_deg: f64,
    pub k: usize,
    pub attention: AttentionKind,
    pub enable_dspn: bool,
    pub enable_msfs: bool,
    pub enable_vpfs: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            viewport_size: 224,
            fov_deg: 90.0,
            m: 8,
            offset_deg: 45.0,
            k: 4,
            attention: AttentionKind::Neighborhood,
            enable_dspn: true,
            enable_msfs: true,
            enable_vpfs: true,
        }
    }
}

impl ModelConfig {
    /// Small configuration used for synthetic experiments: 64×64 viewports
    /// and four channels per stage.
    pub fn toy() -> Self {
        Self {
            backbone: BackboneConfig {
                depths: [2, 2, 5, 3],
                dims: [4, 4, 4, 4],
                heads: [1, 1, 1, 1],
                kernel: 7,
                embed_dim: 4,
                mlp_ratio: 2,
            },
            viewport_size: 64,
            ..Self::default()
        }
    }

    /// Tiny configuration for finite-difference checks of the whole network.
    pub fn micro() -> Self {
        Self {
            backbone: BackboneConfig {
                depths: [1, 1, 1, 1],
                dims: [4, 4, 4, 4],
                heads: [1, 2, 1, 2],
                kernel: 3,
                embed_dim: 8,
                mlp_ratio: 1,
            },
            viewport_size: 16,
            m: 4,
            offset_deg: 90.0,
            k: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.viewport_size < 16 {
            return arg_err(format!("viewport size {} is below the minimum of 16", self.viewport_size));
        }
        if self.m == 0 {
            return arg_err("M must be ≥ 1");
        }
        if self.k == 0 || self.k > self.m {
            return arg_err(format!("K must satisfy 1 ≤ K ≤ M = {}, got {}", self.m, self.k));
        }
        Ok(())
    }

    pub fn plan(&self) -> Result<SamplingPlan> {
        equatorial_plan(self.m, self.offset_deg, self.fov_deg, self.viewport_size)
    }

    /// Number of viewports that reach the regression head.
    pub fn kept(&self) -> usize {
        if self.enable_vpfs {
            self.k
        } else {
            self.m
        }
    }
}

/// Prediction for one panorama.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub probs: [f64; NUM_SITUATIONS],
    pub score: f64,
    pub viewport_scores: Vec<f64>,
    pub weights: Vec<f64>,
    pub selected: Vec<usize>,
}

impl ModelOutput {
    pub fn situation(&self) -> usize {
        (0..NUM_SITUATIONS).fold(0, |best, c| if self.probs[c] > self.probs[best] { c } else { best })
    }
}

/// Hooks that override learned behavior, for inspection and tests.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DebugHooks {
    /// Replaces every stage gate with a one-hot selection of this stage.
    pub force_stage: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct Model<T: Real> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub hooks: DebugHooks,
}

impl<T: Real> Model<T> {
    /// Randomly initialized model.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = network::init_params(&config, &mut rng)?;
        Ok(Self { config, params, hooks: DebugHooks::default() })
    }

    /// Wraps existing parameters; missing parameters surface as state errors
    /// on the first forward pass.
    pub fn from_parts(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, params, hooks: DebugHooks::default() })
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model { config: self.config.clone(), params: self.params.cast(), hooks: self.hooks.clone() }
    }

    /// Packs per-image viewport lists into a `[B·M, S, S, 3]` tensor.
    pub fn viewport_batch(&self, images: &[Vec<ErpImage>]) -> Result<Array<T>> {
        let s = self.config.viewport_size;
        let mut data = Vec::with_capacity(images.len() * self.config.m * s * s * 3);
        for vps in images {
            if vps.len() != self.config.m {
                return arg_err(format!("expected {} viewports, got {}", self.config.m, vps.len()));
            }
            for vp in vps {
                if vp.width() != s || vp.height() != s || vp.channels() != 3 {
                    return arg_err(format!(
                        "viewport must be {s}×{s}×3, got {}×{}×{}",
                        vp.width(),
                        vp.height(),
                        vp.channels()
                    ));
                }
                data.extend(vp.pixels().iter().map(|&v| T::from_f64(v)));
            }
        }
        Array::from_vec(&[images.len() * self.config.m, s, s, 3], data)
    }

    /// Cuts the configured viewports out of a panorama.
    pub fn viewports(&self, img: &ErpImage) -> Result<Vec<ErpImage>> {
        let rgb = if img.channels() == 3 {
            img.clone()
        } else {
            ErpImage::from_fn(img.width(), img.height(), 3, |x, y, _| img.get(x, y, 0))?
        };
        Ok(self.config.plan()?.extract(&rgb))
    }

    /// Records the full forward pass of a `[B·M, S, S, 3]` batch.
    pub fn forward_graph(&self, g: &mut Graph<T>, batch: &Array<T>) -> Result<ForwardVars> {
        network::forward(self, g, batch)
    }

    /// Predictions for a batch of pre-cut viewports.
    pub fn predict_batch(&self, batch: &Array<T>) -> Result<Vec<ModelOutput>> {
        let mut g = Graph::new();
        let fv = self.forward_graph(&mut g, batch)?;
        Ok(fv.outputs(&g))
    }

    pub fn predict_viewports(&self, viewports: &[ErpImage]) -> Result<ModelOutput> {
        let batch = self.viewport_batch(&[viewports.to_vec()])?;
        Ok(self.predict_batch(&batch)?.remove(0))
    }

    pub fn predict(&self, img: &ErpImage) -> Result<ModelOutput> {
        self.predict_viewports(&self.viewports(img)?)
    }
}

pub use network::{afa_unify, backbone_forward, dspn_forward, msfs_fuse, patch_embed, pool_concat, qspn_forward, vpfs};

/// Finite-difference check of the combined training loss
/// `0.7·CE + 1.3·norm-in-norm` with respect to every parameter of a randomly
/// initialized model, on a random batch of three images.
pub fn model_gradcheck(config: &ModelConfig, seed: u64, gc: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut model = Model::<f64>::new(config.clone(), seed)?;
    let s = config.viewport_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let batch = Array::random_uniform(&[3 * config.m, s, s, 3], 0.0, 1.0, &mut rng);
    let classes: Vec<usize> = (0..3).map(|_| rng.random_range(0..NUM_SITUATIONS)).collect();
    let mos: Vec<f64> = (0..3).map(|i| 1.0 + i as f64 * 0.7 + rng.random_range(0.0..0.3)).collect();
    let fixed = Model::<f64> { params: ParamStore::new(), ..model.clone() };
    check_params(
        "model",
        &mut model.params,
        |g, p| {
            let m = Model { params: p.clone(), ..fixed.clone() };
            let fv = m.forward_graph(g, &batch)?;
            let ce = g.nll(fv.probs, &classes, 1e-7)?;
            let nin = g.norm_in_norm(fv.score, &mos, 1)?;
            let a = g.scale(ce, 0.7);
            let b = g.scale(nin, 1.3);
            g.add(a, b)
        },
        gc,
    )
}
