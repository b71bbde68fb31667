//! Manufactured sequences with known flow.
//!
//! The intensity is a texture transported with constant chart velocity,
//! `f(t, ξ) = f0(ξ − t v)`, so `∂_t f + v^i ∂_i f = 0` holds exactly and the
//! true flow has coordinate components `u^i = v^i` whatever the surface.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GeometryAtlas;
use crate::kinematics::frame_coordinates;
use crate::model::{FrameField, Grid3, HeightField, ScalarField3, VectorField3};

/// 64-bit linear congruential generator, `s ← a·s + c (mod 2^64)` with
/// `a = 6364136223846793005`, `c = 1442695040888963407`. Uniform deviates
/// use the top 53 bits: `(s >> 11) / 2^53`.
#[derive(Debug, Clone)]
pub struct Lcg64 {
    state: u64,
}

impl Lcg64 {
    pub const A: u64 = 6_364_136_223_846_793_005;
    pub const C: u64 = 1_442_695_040_888_963_407;

    pub fn new(seed: u64) -> Self {
        Lcg64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_mul(Self::A).wrapping_add(Self::C);
        self.state
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Standard normal deviate (Box–Muller, one value per call).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurfaceSpec {
    Flat,
    /// `z = a ξ1 + b ξ2`.
    Tilt { slope: [f64; 2] },
    /// `z = A exp(−|ξ − (½, ½)|² / (2 w²))`.
    Bump { amplitude: f64, width: f64 },
    /// `z = A sin(2π k ξ1 − 2π ω t) cos(2π k ξ2)`.
    Wave { amplitude: f64, spatial_freq: f64, temporal_freq: f64 },
}

impl SurfaceSpec {
    pub fn height(&self, t: f64, x: f64, y: f64) -> f64 {
        use std::f64::consts::TAU;
        match *self {
            SurfaceSpec::Flat => 0.0,
            SurfaceSpec::Tilt { slope } => slope[0] * x + slope[1] * y,
            SurfaceSpec::Bump { amplitude, width } => {
                let r2 = (x - 0.5).powi(2) + (y - 0.5).powi(2);
                amplitude * (-r2 / (2.0 * width * width)).exp()
            }
            SurfaceSpec::Wave {
                amplitude,
                spatial_freq,
                temporal_freq,
            } => amplitude * (TAU * spatial_freq * x - TAU * temporal_freq * t).sin() * (TAU * spatial_freq * y).cos(),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            SurfaceSpec::Flat => true,
            SurfaceSpec::Tilt { slope } => slope.iter().all(|s| s.is_finite()),
            SurfaceSpec::Bump { amplitude, width } => {
                amplitude.is_finite() && amplitude >= 0.0 && width.is_finite() && width > 0.0
            }
            SurfaceSpec::Wave {
                amplitude,
                spatial_freq,
                temporal_freq,
            } => amplitude.is_finite() && amplitude >= 0.0 && spatial_freq.is_finite() && temporal_freq.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("bad surface spec {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TextureSpec {
    /// `f0 = 1 − Π_k (1 − a_k g_k)` with Gaussian blobs `g_k` of the given width,
    /// amplitudes `a_k ∈ [0.5, 1)` and centres drawn from [`Lcg64`].
    GaussianBlobs { count: usize, width: f64, seed: u64 },
    /// `f0 = ((2 + ξ1 + ξ2/2) / 5.5)^degree`, inside `[0, 1]` while `|t v| ≤ 1`.
    Polynomial { degree: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub surface: SurfaceSpec,
    /// Constant chart velocity `(v1, v2)`.
    pub motion: [f64; 2],
    pub texture: TextureSpec,
    /// Optional additive Gaussian noise; the result is clamped to `[0, 1]`.
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub z: HeightField,
    pub f: ScalarField3,
    pub w_true: FrameField,
    pub u_true: VectorField3,
}

/// Blob centres and amplitudes, placed so that every centre stays at least
/// three widths inside the chart over the whole sequence.
fn blobs(grid: &Grid3, count: usize, width: f64, seed: u64, v: [f64; 2]) -> Result<Vec<([f64; 2], f64)>> {
    if !(width > 0.0 && width.is_finite()) {
        return Err(Error::InvalidParameter(format!("blob width {width} must be > 0")));
    }
    let tmax = (grid.n0 - 1) as f64 * grid.h0;
    let ext = [(grid.n1 - 1) as f64 * grid.h1, (grid.n2 - 1) as f64 * grid.h2];
    let margin = 3.0 * width;
    let mut box_ = [[0.0; 2]; 2];
    for a in 0..2 {
        let shift = v[a] * tmax;
        let lo = margin + shift.max(0.0);
        let hi = ext[a] - margin + shift.min(0.0);
        if lo > hi {
            return Err(Error::MotionExitsDomain(format!(
                "blobs of width {width} moving {shift} along axis {} do not fit in a chart of extent {}",
                a + 1,
                ext[a]
            )));
        }
        box_[a] = [lo, hi];
    }
    let mut rng = Lcg64::new(seed);
    Ok((0..count)
        .map(|_| {
            let c1 = box_[0][0] + (box_[0][1] - box_[0][0]) * rng.uniform();
            let c2 = box_[1][0] + (box_[1][1] - box_[1][0]) * rng.uniform();
            let amp = 0.5 + 0.5 * rng.uniform();
            ([c1, c2], amp)
        })
        .collect())
}

pub fn generate(spec: &SynthSpec, grid: Grid3) -> Result<SynthOutput> {
    spec.surface.validate()?;
    let v = spec.motion;
    if !v.iter().all(|c| c.is_finite()) {
        return Err(Error::InvalidParameter(format!("motion {v:?} must be finite")));
    }

    let z = HeightField::from_fn(grid, |t, i, j| {
        let [t, x, y] = grid.coords(t, i, j);
        spec.surface.height(t, x, y)
    })?;

    let texture: Box<dyn Fn(f64, f64) -> f64 + Sync> = match spec.texture {
        TextureSpec::GaussianBlobs { count, width, seed } => {
            let b = blobs(&grid, count, width, seed, v)?;
            let inv = 1.0 / (2.0 * width * width);
            Box::new(move |x, y| {
                let mut keep = 1.0;
                for ([cx, cy], a) in &b {
                    keep *= 1.0 - a * (-((x - cx).powi(2) + (y - cy).powi(2)) * inv).exp();
                }
                1.0 - keep
            })
        }
        TextureSpec::Polynomial { degree } => {
            Box::new(move |x, y| ((2.0 + x + 0.5 * y) / 5.5).powi(degree as i32))
        }
    };
    let mut f = ScalarField3::from_fn(grid, |t, i, j| {
        let [t, x, y] = grid.coords(t, i, j);
        texture(x - t * v[0], y - t * v[1])
    })?;
    if let Some(noise) = spec.noise {
        if !(noise.sigma >= 0.0 && noise.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise sigma {} must be >= 0", noise.sigma)));
        }
        let mut rng = Lcg64::new(noise.seed);
        let vals: Vec<f64> = f
            .values()
            .iter()
            .map(|&x| (x + noise.sigma * rng.normal()).clamp(0.0, 1.0))
            .collect();
        f = ScalarField3::new(grid, vals)?;
    }

    let atlas = GeometryAtlas::build(&z)?;
    let pts: Vec<[f64; 3]> = atlas
        .points()
        .iter()
        .map(|p| [0, 1, 2].map(|c| v[0] * p.dx[0][c] + v[1] * p.dx[1][c]))
        .collect();
    let u_true = VectorField3::from_points(grid, &pts)?;
    let w_true = frame_coordinates(&u_true, &atlas)?;
    Ok(SynthOutput { z, f, w_true, u_true })
}
