use std::fs::File;
use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::image::ErpImage;
use crate::model::{ModelConfig, NUM_SITUATIONS};
use crate::numerics::{Array, Real};

/// One row of a `id,path,mos,situation` manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: String,
    pub mos: f64,
    pub situation: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    /// Directory that relative image paths are resolved against.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::Reader::from_reader(File::open(path)?);
        let mut entries = Vec::new();
        for row in reader.deserialize() {
            let e: ManifestEntry = row?;
            if e.situation >= NUM_SITUATIONS {
                return Err(Error::Format(format!("entry '{}': situation {} is not in 0..4", e.id, e.situation)));
            }
            if !e.mos.is_finite() {
                return Err(Error::Format(format!("entry '{}': MOS is not finite", e.id)));
            }
            entries.push(e);
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, entries })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for e in &self.entries {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}

/// A panorama reduced to its viewports.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub mos: f64,
    pub situation: usize,
    /// `M × S × S × 3` values in plan order.
    pub viewports: Vec<f32>,
}

/// Viewports of every readable manifest entry, cut once up front.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub skipped: usize,
    pub m: usize,
    pub size: usize,
}

impl Dataset {
    pub fn from_images(items: Vec<(ManifestEntry, ErpImage)>, cfg: &ModelConfig) -> Result<Self> {
        let plan = cfg.plan()?;
        let samples = items
            .into_iter()
            .map(|(e, img)| {
                let rgb = if img.channels() == 3 {
                    img
                } else {
                    ErpImage::from_fn(img.width(), img.height(), 3, |x, y, _| img.get(x, y, 0))?
                };
                let viewports = plan.extract(&rgb).iter().flat_map(|v| v.pixels().iter().map(|&p| p as f32)).collect();
                Ok(Sample { id: e.id, mos: e.mos, situation: e.situation, viewports })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { samples, skipped: 0, m: cfg.m, size: cfg.viewport_size })
    }

    /// Loads every manifest entry; unreadable images are skipped and counted.
    pub fn load(manifest: &Manifest, cfg: &ModelConfig) -> Result<Self> {
        let mut items = Vec::with_capacity(manifest.entries.len());
        let mut skipped = 0;
        for e in &manifest.entries {
            match ErpImage::load(manifest.resolve(e)) {
                Ok(img) => items.push((e.clone(), img)),
                Err(err) => {
                    warn!("skipping '{}': {err}", e.id);
                    skipped += 1;
                }
            }
        }
        if skipped > 0 {
            warn!("skipped {skipped} unreadable images");
        }
        let mut ds = Self::from_images(items, cfg)?;
        ds.skipped = skipped;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Stacks the viewports of the given samples into `[B·M, S, S, 3]`.
    pub fn batch<T: Real>(&self, indices: &[usize]) -> Result<Array<T>> {
        let per = self.m * self.size * self.size * 3;
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            let s = self.samples.get(i).ok_or_else(|| Error::Argument(format!("sample {i} out of range")))?;
            data.extend(s.viewports.iter().map(|&v| T::from_f64(v as f64)));
        }
        Array::from_vec(&[indices.len() * self.m, self.size, self.size, 3], data)
    }
}

/// Seeded shuffle split; the training part gets `round(n · train_fraction)` items.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return arg_err(format!("train fraction {train_fraction} outside [0, 1]"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (n as f64 * train_fraction).round() as usize;
    let val = idx.split_off(n_train);
    Ok((idx, val))
}
