//! Sphere coordinates, gnomonic viewports and viewport sampling plans.
//!
//! Conventions:
//! * ERP pixel `(u, v)` has its center at `lon = 2π(u+0.5)/w − π`,
//!   `lat = π/2 − π(v+0.5)/h`; row 0 is the north edge.
//! * Viewport pixel `(x, y)` maps to tangent-plane coordinates
//!   `tx = tan(fov_x/2)·(2(x+0.5)/out_w − 1)` and
//!   `ty = tan(fov_y/2)·(1 − 2(y+0.5)/out_h)`, so viewport row 0 is the top
//!   (north-most) row, matching the ERP orientation.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::image::ErpImage;

/// Point on the unit sphere. `lon` is kept in `[−π, π)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphericalCoord {
    pub lat: f64,
    pub lon: f64,
}

impl SphericalCoord {
    /// Wraps `lon` into `[−π, π)` and clamps `lat` into `[−π/2, π/2]`.
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat: lat.clamp(-FRAC_PI_2, FRAC_PI_2), lon: wrap_lon(lon) }
    }

    pub fn from_degrees(lat_deg: f64, lon_deg: f64) -> Self {
        Self::new(lat_deg.to_radians(), lon_deg.to_radians())
    }

    pub fn to_unit_vector(self) -> [f64; 3] {
        let (sl, cl) = self.lat.sin_cos();
        let (so, co) = self.lon.sin_cos();
        [cl * co, cl * so, sl]
    }

    /// Great-circle distance in radians.
    pub fn angular_distance(self, other: SphericalCoord) -> f64 {
        let a = self.to_unit_vector();
        let b = other.to_unit_vector();
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let cross = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
        let cn = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
        cn.atan2(dot)
    }
}

pub fn wrap_lon(lon: f64) -> f64 {
    let w = (lon + PI).rem_euclid(TAU) - PI;
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

/// Sphere coordinate of the center of ERP pixel `(u, v)` in a `w × h` raster.
pub fn erp_to_sphere(u: usize, v: usize, w: usize, h: usize) -> Result<SphericalCoord> {
    if u >= w || v >= h {
        return arg_err(format!("pixel ({u}, {v}) outside {w}x{h}"));
    }
    let lon = TAU * (u as f64 + 0.5) / w as f64 - PI;
    let lat = FRAC_PI_2 - PI * (v as f64 + 0.5) / h as f64;
    Ok(SphericalCoord { lat, lon })
}

/// Continuous ERP pixel coordinates `(x, y)` of a sphere point; the inverse
/// of [`erp_to_sphere`] at pixel centers.
pub fn sphere_to_erp(coord: SphericalCoord, w: usize, h: usize) -> (f64, f64) {
    let x = (coord.lon + PI) / TAU * w as f64 - 0.5;
    let y = (FRAC_PI_2 - coord.lat) / PI * h as f64 - 0.5;
    (x, y)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Interpolation {
    #[default]
    Bilinear,
    Nearest,
}

/// Samples all channels of `img` at a sphere point. Longitude wraps across
/// the ±π seam; latitude clamps at the poles.
pub fn sample(img: &ErpImage, coord: SphericalCoord, interp: Interpolation, out: &mut [f64]) {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let (x, y) = sphere_to_erp(coord, w, h);
    match interp {
        Interpolation::Nearest => {
            let xi = (x.round() as i64).rem_euclid(w as i64) as usize;
            let yi = (y.round() as i64).clamp(0, h as i64 - 1) as usize;
            for (c, o) in out.iter_mut().enumerate().take(ch) {
                *o = img.get(xi, yi, c);
            }
        }
        Interpolation::Bilinear => {
            let x0f = x.floor();
            let y0f = y.floor();
            let fx = x - x0f;
            let fy = y - y0f;
            let x0 = (x0f as i64).rem_euclid(w as i64) as usize;
            let x1 = (x0 + 1) % w;
            let y0 = (y0f as i64).clamp(0, h as i64 - 1) as usize;
            let y1 = (y0f as i64 + 1).clamp(0, h as i64 - 1) as usize;
            for (c, o) in out.iter_mut().enumerate().take(ch) {
                let top = img.get(x0, y0, c) * (1.0 - fx) + img.get(x1, y0, c) * fx;
                let bot = img.get(x0, y1, c) * (1.0 - fx) + img.get(x1, y1, c) * fx;
                *o = top * (1.0 - fy) + bot * fy;
            }
        }
    }
}

/// A rectilinear view cut from the sphere.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewportSpec {
    pub center: SphericalCoord,
    pub fov_x_deg: f64,
    pub fov_y_deg: f64,
    pub out_w: usize,
    pub out_h: usize,
}

impl ViewportSpec {
    pub fn new(center: SphericalCoord, fov_x_deg: f64, fov_y_deg: f64, out_w: usize, out_h: usize) -> Result<Self> {
        for fov in [fov_x_deg, fov_y_deg] {
            if !(fov > 0.0 && fov < 180.0) {
                return arg_err(format!("field of view {fov} must lie in (0, 180) degrees"));
            }
        }
        if out_w < 2 || out_h < 2 {
            return arg_err(format!("viewport raster {out_w}x{out_h} must be at least 2x2"));
        }
        Ok(Self { center, fov_x_deg, fov_y_deg, out_w, out_h })
    }

    /// Square viewport with equal horizontal and vertical field of view.
    pub fn square(center: SphericalCoord, fov_deg: f64, size: usize) -> Result<Self> {
        Self::new(center, fov_deg, fov_deg, size, size)
    }

    /// Tangent-plane coordinates of a (possibly fractional) viewport pixel.
    pub fn tangent_coords(&self, x: f64, y: f64) -> (f64, f64) {
        let sx = (self.fov_x_deg.to_radians() / 2.0).tan();
        let sy = (self.fov_y_deg.to_radians() / 2.0).tan();
        let tx = sx * (2.0 * (x + 0.5) / self.out_w as f64 - 1.0);
        let ty = sy * (1.0 - 2.0 * (y + 0.5) / self.out_h as f64);
        (tx, ty)
    }
}

/// Inverse gnomonic projection of viewport pixel `(x, y)`.
pub fn gnomonic_backproject(spec: &ViewportSpec, x: usize, y: usize) -> Result<SphericalCoord> {
    if x >= spec.out_w || y >= spec.out_h {
        return arg_err(format!("pixel ({x}, {y}) outside viewport {}x{}", spec.out_w, spec.out_h));
    }
    let (tx, ty) = spec.tangent_coords(x as f64, y as f64);
    Ok(tangent_to_sphere(spec.center, tx, ty))
}

/// Inverse gnomonic projection of tangent-plane point `(tx, ty)` about `center`.
pub fn tangent_to_sphere(center: SphericalCoord, tx: f64, ty: f64) -> SphericalCoord {
    let rho = (tx * tx + ty * ty).sqrt();
    if rho == 0.0 {
        return center;
    }
    let c = rho.atan();
    let (sin_c, cos_c) = c.sin_cos();
    let (sin_p, cos_p) = center.lat.sin_cos();
    let lat = (cos_c * sin_p + ty * sin_c * cos_p / rho).clamp(-1.0, 1.0).asin();
    let lon = center.lon + (tx * sin_c).atan2(rho * cos_p * cos_c - ty * sin_p * sin_c);
    SphericalCoord::new(lat, lon)
}

pub fn extract_viewport(img: &ErpImage, spec: &ViewportSpec) -> ErpImage {
    extract_viewport_with(img, spec, Interpolation::Bilinear)
}

pub fn extract_viewport_with(img: &ErpImage, spec: &ViewportSpec, interp: Interpolation) -> ErpImage {
    let ch = img.channels();
    let mut pixels = vec![0.0; spec.out_w * spec.out_h * ch];
    for y in 0..spec.out_h {
        for x in 0..spec.out_w {
            let (tx, ty) = spec.tangent_coords(x as f64, y as f64);
            let coord = tangent_to_sphere(spec.center, tx, ty);
            let base = (y * spec.out_w + x) * ch;
            sample(img, coord, interp, &mut pixels[base..base + ch]);
        }
    }
    ErpImage::planar(spec.out_w, spec.out_h, ch, pixels).expect("viewport spec validated at construction")
}

/// Ordered list of viewports cut from every image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub name: String,
    pub specs: Vec<ViewportSpec>,
}

impl SamplingPlan {
    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn extract(&self, img: &ErpImage) -> Vec<ErpImage> {
        self.specs.iter().map(|s| extract_viewport(img, s)).collect()
    }
}

/// Default starting longitude of the equatorial plan, in degrees.
pub const DEFAULT_EQUATOR_START_DEG: f64 = -180.0;

/// `m` viewports on the equator, `offset_deg` apart, starting at −180°.
pub fn equatorial_plan(m: usize, offset_deg: f64, fov_deg: f64, size: usize) -> Result<SamplingPlan> {
    equatorial_plan_from(DEFAULT_EQUATOR_START_DEG, m, offset_deg, fov_deg, size)
}

pub fn equatorial_plan_from(
    start_lon_deg: f64,
    m: usize,
    offset_deg: f64,
    fov_deg: f64,
    size: usize,
) -> Result<SamplingPlan> {
    if m == 0 {
        return arg_err("equatorial plan needs at least one viewport");
    }
    if !(offset_deg > 0.0) {
        return arg_err(format!("longitude offset {offset_deg} must be positive"));
    }
    if m as f64 * offset_deg > 360.0 + 1e-9 {
        return arg_err(format!("{m} viewports at {offset_deg} degrees span more than 360 degrees"));
    }
    let specs = (0..m)
        .map(|k| {
            let lon = start_lon_deg + k as f64 * offset_deg;
            ViewportSpec::square(SphericalCoord::from_degrees(0.0, lon), fov_deg, size)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SamplingPlan { name: format!("equatorial(m={m}, offset={offset_deg})"), specs })
}

/// `n` near-uniform points on the sphere (Fibonacci lattice).
///
/// Point `i` sits at `z = 1 − (2i+1)/n` and longitude `2π·i/φ` with `φ` the
/// golden ratio, so no point lands on a pole.
pub fn fibonacci_lattice(n: usize) -> Vec<SphericalCoord> {
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let lon = TAU * (i as f64 / golden).fract();
            SphericalCoord::new(z.asin(), lon)
        })
        .collect()
}

/// Spherical comparison plan with 90° square viewports of 224 pixels.
pub fn spherical_plan(n: usize) -> Result<SamplingPlan> {
    spherical_plan_with(n, 90.0, 224)
}

pub fn spherical_plan_with(n: usize, fov_deg: f64, size: usize) -> Result<SamplingPlan> {
    if n < 6 {
        return arg_err(format!("spherical plan needs at least 6 viewports, got {n}"));
    }
    let specs =
        fibonacci_lattice(n).into_iter().map(|c| ViewportSpec::square(c, fov_deg, size)).collect::<Result<Vec<_>>>()?;
    Ok(SamplingPlan { name: format!("spherical(n={n})"), specs })
}
