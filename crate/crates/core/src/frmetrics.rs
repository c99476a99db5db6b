//! Full-reference spherical quality metrics and content descriptors.
//!
//! PSNR-family metrics treat every channel sample equally (MSE averaged over
//! channels) with a peak value of 1.0. SSIM-family metrics work on Rec.601
//! luma. Reductions run in a fixed order, so results are reproducible
//! bit-for-bit.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

use crate::error::{arg_err, Result};
use crate::geometry::{fibonacci_lattice, sample, Interpolation, SphericalCoord};
use crate::image::ErpImage;

/// Default S-PSNR sphere sample count.
pub const DEFAULT_SPSNR_POINTS: usize = 65_536;

#[derive(Clone, Debug, PartialEq)]
pub struct MetricResult {
    pub name: String,
    /// dB for the PSNR family, unitless for the SSIM family. `f64::INFINITY`
    /// when `is_infinite` is set.
    pub value: f64,
    pub is_infinite: bool,
}

impl MetricResult {
    fn finite(name: &str, value: f64) -> Self {
        Self { name: name.to_string(), value, is_infinite: false }
    }

    fn from_mse(name: &str, mse: f64) -> Self {
        if mse == 0.0 {
            Self { name: name.to_string(), value: f64::INFINITY, is_infinite: true }
        } else {
            Self::finite(name, 10.0 * (1.0 / mse).log10())
        }
    }
}

/// Serializes as `{"metric": name, "value": number | "inf"}`.
impl Serialize for MetricResult {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(2))?;
        map.serialize_entry("metric", &self.name)?;
        if self.is_infinite {
            map.serialize_entry("value", "inf")?;
        } else {
            map.serialize_entry("value", &self.value)?;
        }
        map.end()
    }
}

/// Per-row latitude weights of an ERP raster.
#[derive(Clone, Debug, PartialEq)]
pub struct LatitudeWeightMap {
    pub weights: Vec<f64>,
}

impl LatitudeWeightMap {
    /// `w(j) = cos((j + 0.5 − H/2)·π/H)` for rows `j = 0..H`.
    pub fn erp(height: usize) -> Self {
        let h = height as f64;
        let weights = (0..height).map(|j| ((j as f64 + 0.5 - h / 2.0) * PI / h).cos().max(0.0)).collect();
        Self { weights }
    }
}

pub fn psnr(reference: &ErpImage, distorted: &ErpImage) -> Result<MetricResult> {
    reference.check_same_shape(distorted)?;
    let sse: f64 = reference.pixels().iter().zip(distorted.pixels()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(MetricResult::from_mse("psnr", sse / reference.pixels().len() as f64))
}

pub fn ws_psnr(reference: &ErpImage, distorted: &ErpImage) -> Result<MetricResult> {
    reference.check_same_shape(distorted)?;
    let (w, ch) = (reference.width(), reference.channels());
    let weights = LatitudeWeightMap::erp(reference.height()).weights;
    let row_len = w * ch;
    let mut num = 0.0;
    let mut den = 0.0;
    for (j, wj) in weights.iter().enumerate() {
        let a = &reference.pixels()[j * row_len..(j + 1) * row_len];
        let b = &distorted.pixels()[j * row_len..(j + 1) * row_len];
        let row_sse: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        num += wj * row_sse;
        den += wj * row_len as f64;
    }
    Ok(MetricResult::from_mse("ws-psnr", num / den))
}

/// PSNR over `n_points` Fibonacci-lattice sphere samples, nearest-neighbor lookup.
pub fn s_psnr(reference: &ErpImage, distorted: &ErpImage, n_points: usize) -> Result<MetricResult> {
    s_psnr_with(reference, distorted, n_points, Interpolation::Nearest)
}

pub fn s_psnr_with(
    reference: &ErpImage,
    distorted: &ErpImage,
    n_points: usize,
    interp: Interpolation,
) -> Result<MetricResult> {
    reference.check_same_shape(distorted)?;
    if n_points < 100 {
        return arg_err(format!("S-PSNR needs at least 100 sphere points, got {n_points}"));
    }
    let ch = reference.channels();
    let mut a = vec![0.0; ch];
    let mut b = vec![0.0; ch];
    let mut sse = 0.0;
    for p in fibonacci_lattice(n_points) {
        sample(reference, p, interp, &mut a);
        sample(distorted, p, interp, &mut b);
        sse += a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    }
    Ok(MetricResult::from_mse("s-psnr", sse / (n_points * ch) as f64))
}

/// Validity mask and sphere coordinates of a Craster parabolic raster.
///
/// The raster has the same size as the ERP input. Pixel centers are mapped
/// to projection coordinates spanning `x ∈ [−√(3π), √(3π)]`,
/// `y ∈ [−√(3π)/2, √(3π)/2]` and inverted with
/// `φ = 3·asin(y/√(3π))`, `λ = x / (√(3/π)·(2cos(2φ/3) − 1))`.
/// Pixels whose `|λ| > π` fall outside the projection and are `None`.
pub fn craster_grid(width: usize, height: usize) -> Vec<Option<SphericalCoord>> {
    let x_max = (3.0 * PI).sqrt();
    let y_max = x_max / 2.0;
    let k = (3.0 / PI).sqrt();
    let mut grid = Vec::with_capacity(width * height);
    for j in 0..height {
        let y = y_max - (j as f64 + 0.5) / height as f64 * 2.0 * y_max;
        let phi = 3.0 * (y / x_max).clamp(-1.0, 1.0).asin();
        let denom = k * (2.0 * (2.0 * phi / 3.0).cos() - 1.0);
        for i in 0..width {
            let x = (i as f64 + 0.5) / width as f64 * 2.0 * x_max - x_max;
            let lambda = x / denom;
            if lambda.abs() <= PI && phi.abs() <= FRAC_PI_2 {
                grid.push(Some(SphericalCoord::new(phi, lambda)));
            } else {
                grid.push(None);
            }
        }
    }
    grid
}

/// PSNR after remapping both images to the Craster parabolic projection,
/// restricted to the valid region.
pub fn cpp_psnr(reference: &ErpImage, distorted: &ErpImage) -> Result<MetricResult> {
    reference.check_same_shape(distorted)?;
    let ch = reference.channels();
    let mut a = vec![0.0; ch];
    let mut b = vec![0.0; ch];
    let mut sse = 0.0;
    let mut count = 0usize;
    for coord in craster_grid(reference.width(), reference.height()).into_iter().flatten() {
        sample(reference, coord, Interpolation::Bilinear, &mut a);
        sample(distorted, coord, Interpolation::Bilinear, &mut b);
        sse += a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        count += ch;
    }
    Ok(MetricResult::from_mse("cpp-psnr", sse / count as f64))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// SSIM index map over the valid window positions.
#[derive(Clone, Debug, PartialEq)]
pub struct SsimMap {
    pub width: usize,
    pub height: usize,
    /// Image row of the window center for map row 0.
    pub row_offset: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SsimResult {
    pub result: MetricResult,
    pub map: SsimMap,
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> =
        (0..SSIM_WINDOW).map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" Gaussian filtering of a `w × h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, win: &[f64]) -> Vec<f64> {
    let n = win.len();
    let ow = w - n + 1;
    let oh = h - n + 1;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = win.iter().zip(&row[x..x + n]).map(|(k, v)| k * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|k| win[k] * tmp[(y + k) * ow + x]).sum();
        }
    }
    out
}

fn ssim_map(reference: &ErpImage, distorted: &ErpImage) -> Result<SsimMap> {
    reference.check_same_shape(distorted)?;
    let (w, h) = (reference.width(), reference.height());
    if w.min(h) < SSIM_WINDOW {
        return arg_err(format!("SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"));
    }
    let x = reference.luma();
    let y = distorted.luma();
    let win = gaussian_window();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
    let mu_x = filter_valid(&x, w, h, &win);
    let mu_y = filter_valid(&y, w, h, &win);
    let s_xx = filter_valid(&xx, w, h, &win);
    let s_yy = filter_valid(&yy, w, h, &win);
    let s_xy = filter_valid(&xy, w, h, &win);
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let values = (0..mu_x.len())
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = s_xx[i] - mx * mx;
            let vy = s_yy[i] - my * my;
            let cov = s_xy[i] - mx * my;
            let v = ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            v.clamp(-1.0, 1.0)
        })
        .collect();
    Ok(SsimMap { width: w - SSIM_WINDOW + 1, height: h - SSIM_WINDOW + 1, row_offset: SSIM_WINDOW / 2, values })
}

/// Gaussian-window SSIM (11×11, σ = 1.5, K1 = 0.01, K2 = 0.03) on luma.
pub fn ssim(reference: &ErpImage, distorted: &ErpImage) -> Result<SsimResult> {
    let map = ssim_map(reference, distorted)?;
    let value = map.values.iter().sum::<f64>() / map.values.len() as f64;
    Ok(SsimResult { result: MetricResult::finite("ssim", value), map })
}

/// SSIM map averaged with the ERP latitude weight of each window center row.
pub fn ws_ssim(reference: &ErpImage, distorted: &ErpImage) -> Result<MetricResult> {
    let map = ssim_map(reference, distorted)?;
    let weights = LatitudeWeightMap::erp(reference.height()).weights;
    let mut num = 0.0;
    let mut den = 0.0;
    for r in 0..map.height {
        let wr = weights[r + map.row_offset];
        let row_sum: f64 = map.values[r * map.width..(r + 1) * map.width].iter().sum();
        num += wr * row_sum;
        den += wr * map.width as f64;
    }
    Ok(MetricResult::finite("ws-ssim", num / den))
}

/// Standard deviation of the Sobel gradient magnitude of the luma plane,
/// over interior pixels.
pub fn spatial_information(img: &ErpImage) -> f64 {
    let (w, h) = (img.width(), img.height());
    let l = img.luma();
    if w < 3 || h < 3 {
        return 0.0;
    }
    let at = |x: usize, y: usize| l[y * w + x];
    let mut mags = Vec::with_capacity((w - 2) * (h - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            mags.push((gx * gx + gy * gy).sqrt());
        }
    }
    population_std(&mags)
}

/// Opponent-channel colorfulness: `√(σ_rg² + σ_yb²) + 0.3·√(μ_rg² + μ_yb²)`
/// with `rg = R − G`, `yb = (R + G)/2 − B`.
pub fn colorfulness(img: &ErpImage) -> Result<f64> {
    if img.channels() != 3 {
        return arg_err("colorfulness needs a 3-channel image");
    }
    let (rg, yb): (Vec<f64>, Vec<f64>) =
        img.pixels().chunks_exact(3).map(|p| (p[0] - p[1], 0.5 * (p[0] + p[1]) - p[2])).unzip();
    let (m_rg, s_rg) = (mean(&rg), population_std(&rg));
    let (m_yb, s_yb) = (mean(&yb), population_std(&yb));
    Ok((s_rg * s_rg + s_yb * s_yb).sqrt() + 0.3 * (m_rg * m_rg + m_yb * m_yb).sqrt())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn population_std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricKind {
    Psnr,
    WsPsnr,
    SPsnr,
    CppPsnr,
    Ssim,
    WsSsim,
}

impl MetricKind {
    pub const ALL: [MetricKind; 6] = [
        MetricKind::Psnr,
        MetricKind::WsPsnr,
        MetricKind::SPsnr,
        MetricKind::CppPsnr,
        MetricKind::Ssim,
        MetricKind::WsSsim,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Psnr => "psnr",
            MetricKind::WsPsnr => "ws-psnr",
            MetricKind::SPsnr => "s-psnr",
            MetricKind::CppPsnr => "cpp-psnr",
            MetricKind::Ssim => "ssim",
            MetricKind::WsSsim => "ws-ssim",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .map_or_else(|| arg_err(format!("unknown metric '{s}'")), Ok)
    }

    pub fn compute(self, reference: &ErpImage, distorted: &ErpImage) -> Result<MetricResult> {
        match self {
            MetricKind::Psnr => psnr(reference, distorted),
            MetricKind::WsPsnr => ws_psnr(reference, distorted),
            MetricKind::SPsnr => s_psnr(reference, distorted, DEFAULT_SPSNR_POINTS),
            MetricKind::CppPsnr => cpp_psnr(reference, distorted),
            MetricKind::Ssim => ssim(reference, distorted).map(|r| r.result),
            MetricKind::WsSsim => ws_ssim(reference, distorted),
        }
    }
}
