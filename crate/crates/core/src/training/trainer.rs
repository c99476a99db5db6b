use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::model::{save_checkpoint, Model, ModelOutput};
use crate::numerics::{Graph, Real};
use crate::stats::CorrelationReport;

use super::data::{split_indices, Dataset};
use super::dwa::{dwa_weights, DwaState};
use super::losses::{ce_loss, norm_in_norm_loss, total_loss, LossConfig};
use super::optim::Adam;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_init: f64,
    pub lr_min: f64,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub seed: u64,
    pub dwa_temperature: f64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 50,
            lr_init: 1e-4,
            lr_min: 1e-6,
            train_fraction: 0.8,
            val_fraction: 0.2,
            seed: 0,
            dwa_temperature: 2.0,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Settings for the small synthetic experiments.
    pub fn toy() -> Self {
        Self { batch_size: 8, epochs: 30, lr_init: 1e-3, lr_min: 1e-5, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return arg_err(format!("batch size must be ≥ 2, got {}", self.batch_size));
        }
        if self.epochs == 0 {
            return arg_err("epochs must be ≥ 1");
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_init) {
            return arg_err(format!("need 0 < lr_min ≤ lr_init, got {} and {}", self.lr_min, self.lr_init));
        }
        if (self.train_fraction + self.val_fraction - 1.0).abs() > 1e-9 || self.train_fraction <= 0.0 {
            return arg_err(format!(
                "split fractions must be positive and sum to 1, got {} + {}",
                self.train_fraction, self.val_fraction
            ));
        }
        if self.dwa_temperature <= 0.0 {
            return arg_err("DWA temperature must be positive");
        }
        self.loss.validate()
    }
}

/// `lr_min + ½(lr_init − lr_min)(1 + cos(π·epoch/epochs))`.
pub fn cosine_lr(epoch: usize, cfg: &TrainConfig) -> f64 {
    let t = epoch.min(cfg.epochs) as f64 / cfg.epochs.max(1) as f64;
    cfg.lr_min + 0.5 * (cfg.lr_init - cfg.lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub l_dspn: f64,
    pub l_qspn: f64,
    pub lambda: [f64; 2],
    pub val_plcc: f64,
    pub val_srcc: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T: Real> {
    pub model: Model<T>,
    pub best: Model<T>,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub predictions: Vec<ModelOutput>,
    pub report: CorrelationReport,
}

/// Predicts every listed sample and scores the predictions against MOS and
/// situation labels.
pub fn evaluate<T: Real>(model: &Model<T>, data: &Dataset, indices: &[usize], batch_size: usize) -> Result<Evaluation> {
    if indices.is_empty() {
        return Err(Error::Degenerate("nothing to evaluate".into()));
    }
    let mut predictions = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(batch_size.max(1)) {
        predictions.extend(model.predict_batch(&data.batch::<T>(chunk)?)?);
    }
    let pred: Vec<f64> = predictions.iter().map(|p| p.score).collect();
    let mos: Vec<f64> = indices.iter().map(|&i| data.samples[i].mos).collect();
    let pc: Vec<usize> = predictions.iter().map(ModelOutput::situation).collect();
    let tc: Vec<usize> = indices.iter().map(|&i| data.samples[i].situation).collect();
    let report = CorrelationReport::compute(&pred, &mos, Some((&pc, &tc)))?;
    Ok(Evaluation { predictions, report })
}

fn validation_metrics<T: Real>(model: &Model<T>, data: &Dataset, val: &[usize], batch: usize) -> (f64, f64, f64) {
    match evaluate(model, data, val, batch) {
        Ok(ev) => (ev.report.plcc, ev.report.srcc, ev.report.acc.unwrap_or(f64::NAN)),
        Err(e) => {
            warn!("validation failed: {e}");
            (f64::NAN, f64::NAN, f64::NAN)
        }
    }
}

/// Trains `model` on a seeded split of `data`. With `out_dir`, writes
/// `train_log.jsonl` (one object per epoch), `best.ckpt` (highest validation
/// SRCC) and `final.ckpt`.
pub fn train<T: Real>(
    mut model: Model<T>,
    data: &Dataset,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if data.len() < 2 * cfg.batch_size {
        return arg_err(format!(
            "need at least {} samples for batch size {}, got {}",
            2 * cfg.batch_size,
            cfg.batch_size,
            data.len()
        ));
    }
    let (train_idx, val_idx) = split_indices(data.len(), cfg.train_fraction, cfg.seed)?;
    if train_idx.len() < 2 || val_idx.is_empty() {
        return Err(Error::Degenerate("empty train or validation split".into()));
    }
    let mut log_file = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some(BufWriter::new(File::create(dir.join("train_log.jsonl"))?))
        }
        None => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7a11_5eed);
    let mut adam = Adam::default();
    let mut dwa = DwaState::new(2, cfg.dwa_temperature);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_srcc = f64::NEG_INFINITY;
    let mut order = train_idx.clone();

    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg);
        let lambda = if model.config.enable_dspn {
            let w = dwa_weights(&dwa);
            [w[0], w[1]]
        } else {
            [0.0, 1.0]
        };
        order.shuffle(&mut rng);
        let (mut sum_d, mut sum_q, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch = data.batch::<T>(chunk)?;
            let targets: Vec<usize> = chunk.iter().map(|&i| data.samples[i].situation).collect();
            let mos: Vec<f64> = chunk.iter().map(|&i| data.samples[i].mos).collect();
            let mut g = Graph::new();
            let fv = model.forward_graph(&mut g, &batch)?;
            let l_d = ce_loss(&mut g, fv.probs, &targets, &cfg.loss)?;
            let l_q = norm_in_norm_loss(&mut g, fv.score, &mos, &cfg.loss)?;
            let total = total_loss(&mut g, l_d, l_q, lambda)?;
            let (vd, vq) = (g.value(l_d).item().as_f64(), g.value(l_q).item().as_f64());
            if !(vd.is_finite() && vq.is_finite()) {
                return Err(Error::Degenerate(format!("non-finite loss at epoch {epoch}")));
            }
            model.params.zero_grad();
            g.backward(total, &mut model.params)?;
            adam.step(&mut model.params, lr)?;
            sum_d += vd;
            sum_q += vq;
            batches += 1;
        }
        let (l_dspn, l_qspn) = (sum_d / batches as f64, sum_q / batches as f64);
        dwa.push(&[l_dspn, l_qspn]);
        let (val_plcc, val_srcc, val_acc) = validation_metrics(&model, data, &val_idx, cfg.batch_size);
        let entry = EpochLog { epoch, lr, l_dspn, l_qspn, lambda, val_plcc, val_srcc, val_acc };
        info!("{}", serde_json::to_string(&entry)?);
        if let Some(f) = log_file.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&entry)?)?;
            f.flush()?;
        }
        if val_srcc > best_srcc {
            best_srcc = val_srcc;
            best_epoch = epoch;
            best = model.clone();
            if let Some(dir) = out_dir {
                save_checkpoint(&best, dir.join("best.ckpt"))?;
            }
        }
        log.push(entry);
    }
    if let Some(dir) = out_dir {
        save_checkpoint(&model, dir.join("final.ckpt"))?;
    }
    Ok(TrainOutcome { model, best, best_epoch, log, train_indices: train_idx, val_indices: val_idx })
}
