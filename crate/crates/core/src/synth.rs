//! Procedural panoramas with controlled distortions.
//!
//! Every item belongs to one of four situations: undistorted, one distorted
//! region, two distorted regions, or globally distorted. A region is a
//! longitude band spanning all latitudes and roughly a quarter of the sphere,
//! so one region covers about 1/4 of the image and two cover about 1/2.
//! Distortions are Gaussian blur, additive Gaussian noise, or block averaging
//! at three graded levels. The MOS proxy falls linearly with both the level
//! and the distorted area.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::image::ErpImage;
use crate::training::{Manifest, ManifestEntry};

pub const LEVELS: usize = 3;
const BLUR_SIGMA: [f64; LEVELS] = [1.5, 2.5, 4.0];
const NOISE_STD: [f64; LEVELS] = [0.06, 0.12, 0.2];
const BLOCK_SIZE: [usize; LEVELS] = [6, 10, 16];
const MAX_MOS: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistortionKind {
    Blur,
    Noise,
    Block,
}

impl DistortionKind {
    pub const ALL: [DistortionKind; 3] = [DistortionKind::Blur, DistortionKind::Noise, DistortionKind::Block];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { n: 200, width: 256, height: 128, seed: 7 }
    }
}

/// A longitude band `[center − width/2, center + width/2)`, in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub center_deg: f64,
    pub width_deg: f64,
}

impl Band {
    pub fn contains(&self, lon_deg: f64) -> bool {
        let d = (lon_deg - self.center_deg + 540.0).rem_euclid(360.0) - 180.0;
        d.abs() < self.width_deg / 2.0
    }
}

#[derive(Clone, Debug)]
pub struct SynthItem {
    pub id: String,
    pub situation: usize,
    pub kind: Option<DistortionKind>,
    /// 0 for undistorted, otherwise `1..=3`.
    pub level: usize,
    /// Distorted fraction of the sphere.
    pub area: f64,
    pub bands: Vec<Band>,
    pub mos: f64,
    pub image: ErpImage,
}

/// `3 − 0.8·level/3 − 1.2·area`; 3 for an undistorted image.
pub fn mos_proxy(level: usize, area: f64) -> f64 {
    if level == 0 {
        return MAX_MOS;
    }
    MAX_MOS - 0.8 * level as f64 / LEVELS as f64 - 1.2 * area
}

/// Random texture: smooth color waves, sharp-edged discs and fine stripes,
/// so that blur, noise and blocking all leave visible traces. Periodic in
/// longitude.
pub fn texture(width: usize, height: usize, rng: &mut impl Rng) -> Result<ErpImage> {
    let tau = std::f64::consts::TAU;
    let waves: Vec<(f64, f64, f64, [f64; 3])> = (0..6)
        .map(|i| {
            let fx = rng.random_range(1..=(2 + 2 * i)) as f64;
            let fy = rng.random_range(0.5..(1.0 + i as f64));
            let phase = rng.random_range(0.0..tau);
            let mix = [(); 3].map(|_| rng.random_range(-0.25..0.25));
            (fx, fy, phase, mix)
        })
        .collect();
    let discs: Vec<(f64, f64, f64, [f64; 3])> = (0..24)
        .map(|_| {
            let cx = rng.random_range(0.0..width as f64);
            let cy = rng.random_range(0.0..height as f64);
            let r = rng.random_range(0.05..0.08) * width as f64;
            (cx, cy, r, [(); 3].map(|_| rng.random_range(0.05..0.95)))
        })
        .collect();
    // fine gratings near 4 px period; integer cycles around the sphere keep them seamless
    let stripes: Vec<(f64, f64, f64, f64)> = (0..2)
        .map(|i| {
            let period = rng.random_range(3.5..4.5);
            let tilt = rng.random_range(-0.3..0.3);
            let (fx, fy) = if i == 0 {
                ((width as f64 / period).round(), tilt * height as f64 / period)
            } else {
                ((tilt * width as f64 / period).round(), height as f64 / period)
            };
            (fx, fy, rng.random_range(0.0..tau), 0.07)
        })
        .collect();
    let base = [(); 3].map(|_| rng.random_range(0.3..0.7));
    ErpImage::from_fn(width, height, 3, |x, y, c| {
        let (xf, yf) = (x as f64 + 0.5, y as f64 + 0.5);
        let (u, v) = (xf / width as f64, yf / height as f64);
        let mut val = base[c];
        for (fx, fy, phase, mix) in &waves {
            val += mix[c] * (tau * (fx * u + fy * v) + phase).sin();
        }
        for (cx, cy, r, color) in &discs {
            let dx = (xf - cx).abs();
            let dx = dx.min(width as f64 - dx);
            if dx * dx + (yf - cy).powi(2) < r * r {
                val = 0.5 * val + 0.5 * color[c];
            }
        }
        for (fx, fy, phase, amp) in &stripes {
            val += amp * (tau * (fx * u + fy * v) + phase).sin();
        }
        val.clamp(0.0, 1.0)
    })
}

fn gaussian_blur(img: &ErpImage, sigma: f64) -> ErpImage {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let (w, h, ch) = (img.width() as isize, img.height() as isize, img.channels());
    let mut tmp = img.clone();
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let s: f64 = (-radius..=radius)
                    .map(|i| kernel[(i + radius) as usize] * img.get((x + i).rem_euclid(w) as usize, y as usize, c))
                    .sum();
                tmp.set(x as usize, y as usize, c, s / norm);
            }
        }
    }
    let mut out = tmp.clone();
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let s: f64 = (-radius..=radius)
                    .map(|i| kernel[(i + radius) as usize] * tmp.get(x as usize, (y + i).clamp(0, h - 1) as usize, c))
                    .sum();
                out.set(x as usize, y as usize, c, s / norm);
            }
        }
    }
    out
}

fn add_noise(img: &ErpImage, std: f64, rng: &mut impl Rng) -> ErpImage {
    let normal = Normal::new(0.0, std).expect("positive std");
    let mut out = img.clone();
    for p in out.pixels_mut() {
        *p = (*p + normal.sample(rng)).clamp(0.0, 1.0);
    }
    out
}

fn block_average(img: &ErpImage, block: usize) -> ErpImage {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let mut out = img.clone();
    for by in (0..h).step_by(block) {
        for bx in (0..w).step_by(block) {
            let (ye, xe) = ((by + block).min(h), (bx + block).min(w));
            let count = ((ye - by) * (xe - bx)) as f64;
            for c in 0..ch {
                let mut s = 0.0;
                for y in by..ye {
                    for x in bx..xe {
                        s += img.get(x, y, c);
                    }
                }
                for y in by..ye {
                    for x in bx..xe {
                        out.set(x, y, c, s / count);
                    }
                }
            }
        }
    }
    out
}

/// Applies `kind` at `level` (1..=3) to the whole image; level 0 is the identity.
pub fn distort(img: &ErpImage, kind: DistortionKind, level: usize, rng: &mut impl Rng) -> Result<ErpImage> {
    if level > LEVELS {
        return arg_err(format!("distortion level {level} outside 0..={LEVELS}"));
    }
    if level == 0 {
        return Ok(img.clone());
    }
    Ok(match kind {
        DistortionKind::Blur => gaussian_blur(img, BLUR_SIGMA[level - 1]),
        DistortionKind::Noise => add_noise(img, NOISE_STD[level - 1], rng),
        DistortionKind::Block => block_average(img, BLOCK_SIZE[level - 1]),
    })
}

/// Copies `distorted` into `clean` inside the bands; returns the result.
fn composite(clean: &ErpImage, distorted: &ErpImage, bands: &[Band]) -> ErpImage {
    let mut out = clean.clone();
    let w = clean.width();
    for x in 0..w {
        let lon = 360.0 * (x as f64 + 0.5) / w as f64 - 180.0;
        if bands.iter().any(|b| b.contains(lon)) {
            for y in 0..clean.height() {
                for c in 0..clean.channels() {
                    out.set(x, y, c, distorted.get(x, y, c));
                }
            }
        }
    }
    out
}

fn band_area(bands: &[Band]) -> f64 {
    bands.iter().map(|b| b.width_deg / 360.0).sum()
}

/// Situation `i mod 4` for item `i`, so `n = 200` gives exactly 50 per situation.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<SynthItem>> {
    if cfg.n == 0 {
        return arg_err("n must be ≥ 1");
    }
    (0..cfg.n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x1000_0001).wrapping_add(i as u64));
            let clean = texture(cfg.width, cfg.height, &mut rng)?;
            let situation = i % 4;
            let kind = DistortionKind::ALL[rng.random_range(0..3)];
            let level = rng.random_range(1..=LEVELS);
            let first = rng.random_range(-180.0..180.0);
            let bands: Vec<Band> = match situation {
                1 => vec![Band { center_deg: first, width_deg: rng.random_range(80.0..100.0) }],
                2 => {
                    let sep = rng.random_range(160.0..200.0);
                    vec![
                        Band { center_deg: first, width_deg: rng.random_range(80.0..100.0) },
                        Band { center_deg: first + sep, width_deg: rng.random_range(80.0..100.0) },
                    ]
                }
                _ => Vec::new(),
            };
            let (kind, level, area, image) = match situation {
                0 => (None, 0, 0.0, clean),
                3 => (Some(kind), level, 1.0, distort(&clean, kind, level, &mut rng)?),
                _ => {
                    let full = distort(&clean, kind, level, &mut rng)?;
                    (Some(kind), level, band_area(&bands), composite(&clean, &full, &bands))
                }
            };
            Ok(SynthItem {
                id: format!("synth_{i:04}"),
                situation,
                kind,
                level,
                area,
                bands,
                mos: mos_proxy(level, area),
                image,
            })
        })
        .collect()
}

/// Writes every image as `<id>.erpf` plus `manifest.csv` into `dir`.
pub fn write_dataset(items: &[SynthItem], dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(items.len());
    for it in items {
        let name = format!("{}.erpf", it.id);
        it.image.save(dir.join(&name))?;
        entries.push(ManifestEntry { id: it.id.clone(), path: name, mos: it.mos, situation: it.situation });
    }
    let manifest = Manifest { root: dir.to_path_buf(), entries };
    manifest.write(dir.join("manifest.csv"))?;
    Ok(manifest)
}
