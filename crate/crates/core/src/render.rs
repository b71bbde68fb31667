//! Colour-coded flow images.
//!
//! Direction maps to hue on the Middlebury 55-colour wheel, magnitude to
//! saturation (white at zero). Images are written as binary PPM; rows run
//! along ξ1, columns along ξ2.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::model::VectorField3;

const RY: usize = 15;
const YG: usize = 6;
const GC: usize = 4;
const CB: usize = 11;
const BM: usize = 13;
const MR: usize = 6;
pub const WHEEL_LEN: usize = RY + YG + GC + CB + BM + MR;

/// The 55-entry colour wheel.
pub fn color_wheel() -> [[u8; 3]; WHEEL_LEN] {
    let ramp = |i: usize, n: usize| (255 * i / n) as u8;
    let mut w = [[0u8; 3]; WHEEL_LEN];
    let mut k = 0;
    for i in 0..RY {
        w[k] = [255, ramp(i, RY), 0];
        k += 1;
    }
    for i in 0..YG {
        w[k] = [255 - ramp(i, YG), 255, 0];
        k += 1;
    }
    for i in 0..GC {
        w[k] = [0, 255, ramp(i, GC)];
        k += 1;
    }
    for i in 0..CB {
        w[k] = [0, 255 - ramp(i, CB), 255];
        k += 1;
    }
    for i in 0..BM {
        w[k] = [ramp(i, BM), 0, 255];
        k += 1;
    }
    for i in 0..MR {
        w[k] = [255, 0, 255 - ramp(i, MR)];
        k += 1;
    }
    w
}

/// `(|u| / |P u|) (u1, u2)` where `P` drops the x3 component; `(0, 0)` when
/// `|P u| < 1e-14`.
pub fn scaled_projection(u: Vec3) -> [f64; 2] {
    let pn = u[0].hypot(u[1]);
    if pn < 1e-14 {
        return [0.0, 0.0];
    }
    let s = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt() / pn;
    [s * u[0], s * u[1]]
}

pub fn scaled_projection_frame(u: &VectorField3, t: usize) -> Vec<[f64; 2]> {
    let g = u.grid();
    let off = g.index(t, 0, 0);
    (off..off + g.frame_len()).map(|k| scaled_projection(u.get(k))).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowImage {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples.
    pub pixels: Vec<[u8; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxMagnitude {
    /// 99th-percentile magnitude (nearest rank).
    #[default]
    Auto,
    Fixed(f64),
}

/// Nearest-rank 99th percentile of the magnitudes.
pub fn percentile99(field: &[[f64; 2]]) -> f64 {
    if field.is_empty() {
        return 0.0;
    }
    let mut mags: Vec<f64> = field.iter().map(|v| v[0].hypot(v[1])).collect();
    mags.sort_by(f64::total_cmp);
    let rank = ((0.99 * mags.len() as f64).ceil() as usize).clamp(1, mags.len());
    mags[rank - 1]
}

pub fn resolve_max(field: &[[f64; 2]], max: MaxMagnitude) -> Result<f64> {
    match max {
        MaxMagnitude::Auto => Ok(percentile99(field)),
        MaxMagnitude::Fixed(m) if m.is_finite() && m > 0.0 => Ok(m),
        MaxMagnitude::Fixed(m) => Err(Error::InvalidParameter(format!("max magnitude {m} must be > 0"))),
    }
}

/// Colour of one vector already divided by the normalising magnitude.
pub fn flow_color(wheel: &[[u8; 3]; WHEEL_LEN], fx: f64, fy: f64) -> [u8; 3] {
    // normalise signed zeros so the hue of axis-aligned vectors is well defined
    let (fx, fy) = (fx + 0.0, fy + 0.0);
    let rad = fx.hypot(fy).min(1.0);
    let a = (-fy).atan2(-fx) / std::f64::consts::PI;
    let fk = (a + 1.0) / 2.0 * (WHEEL_LEN - 1) as f64;
    let k0 = (fk.floor() as usize).min(WHEEL_LEN - 1);
    let k1 = (k0 + 1) % WHEEL_LEN;
    let f = fk - k0 as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        let col0 = wheel[k0][c] as f64 / 255.0;
        let col1 = wheel[k1][c] as f64 / 255.0;
        let col = (1.0 - f) * col0 + f * col1;
        let col = 1.0 - rad * (1.0 - col);
        out[c] = (255.0 * col).floor().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Colour a `height × width` field (row-major) against `max_magnitude`.
pub fn colorize(field: &[[f64; 2]], height: usize, width: usize, max_magnitude: f64) -> Result<FlowImage> {
    if field.len() != height * width {
        return Err(Error::DimMismatch(format!(
            "{} vectors for a {height}x{width} image",
            field.len()
        )));
    }
    if let Some(k) = field.iter().position(|v| !(v[0].is_finite() && v[1].is_finite())) {
        return Err(Error::NonFiniteValue(k));
    }
    let wheel = color_wheel();
    let pixels = field
        .par_iter()
        .map(|v| {
            if max_magnitude > 0.0 {
                flow_color(&wheel, v[0] / max_magnitude, v[1] / max_magnitude)
            } else {
                [255, 255, 255]
            }
        })
        .collect();
    Ok(FlowImage { width, height, pixels })
}

pub fn encode_ppm(img: &FlowImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.reserve(3 * img.pixels.len());
    for p in &img.pixels {
        out.extend_from_slice(p);
    }
    out
}

pub fn write_ppm(img: &FlowImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}

/// One image per frame. With `per_frame` the automatic maximum is taken per
/// frame, otherwise over the whole sequence.
pub fn render_sequence(u: &VectorField3, max: MaxMagnitude, per_frame: bool) -> Result<Vec<FlowImage>> {
    let g = *u.grid();
    let frames: Vec<Vec<[f64; 2]>> = (0..g.n0).map(|t| scaled_projection_frame(u, t)).collect();
    let global = if per_frame {
        None
    } else {
        let all: Vec<[f64; 2]> = frames.iter().flatten().copied().collect();
        Some(resolve_max(&all, max)?)
    };
    frames
        .iter()
        .map(|f| {
            let m = match global {
                Some(m) => m,
                None => resolve_max(f, max)?,
            };
            colorize(f, g.n1, g.n2, m)
        })
        .collect()
}

/// `flow_000.ppm`, `flow_001.ppm`, ...; the index is padded to at least three digits.
pub fn frame_file_name(prefix: &str, t: usize, n_frames: usize) -> String {
    let digits = (n_frames.saturating_sub(1)).to_string().len().max(3);
    format!("{prefix}_{t:0digits$}.ppm")
}

pub fn write_sequence(dir: impl AsRef<Path>, prefix: &str, images: &[FlowImage]) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    images
        .iter()
        .enumerate()
        .map(|(t, img)| {
            let p = dir.join(frame_file_name(prefix, t, images.len()));
            write_ppm(img, &p)?;
            Ok(p)
        })
        .collect()
}
