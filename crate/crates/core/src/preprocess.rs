//! From a 4D intensity volume to the surface pair `(z, f)`.
//!
//! Per frame: Gaussian smoothing, detection of bright local maxima (cell
//! centres), a regularised least-squares height field through the centres,
//! and trilinear sampling of the smoothed volume on that surface.
//!
//! Volume frames are `(n_x, n_y, n_z)` row-major with `z` fastest. The chart
//! maps `x → ξ1`, `y → ξ2`, stretching the voxel extents onto the grid's
//! chart; heights are stored in the same units as `ξ1`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Grid3, HeightField, ScalarField3, Volume4};
use crate::sparse::CsrMatrix;

fn reflect(idx: isize, n: usize) -> usize {
    // half-sample symmetric: ... c b a | a b c ... | c b a ...
    let p = 2 * n as isize;
    let m = idx.rem_euclid(p) as usize;
    if m >= n {
        p as usize - 1 - m
    } else {
        m
    }
}

/// Normalised 1D Gaussian with radius `⌈4σ⌉`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::BadSigma(sigma));
    }
    let r = (4.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r).map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    Ok(k)
}

/// Separable Gaussian filter with reflect padding.
pub fn gaussian_filter3(frame: &[f64], dims: [usize; 3], sigma: [f64; 3]) -> Result<Vec<f64>> {
    let n: usize = dims.iter().product();
    if frame.len() != n {
        return Err(Error::DimMismatch(format!("{} values for frame dims {dims:?}", frame.len())));
    }
    let strides = [dims[1] * dims[2], dims[2], 1];
    let mut cur = frame.to_vec();
    for axis in 0..3 {
        let k = gaussian_kernel(sigma[axis])?;
        let r = (k.len() / 2) as isize;
        let len = dims[axis];
        let st = strides[axis];
        let src = cur;
        cur = (0..n)
            .into_par_iter()
            .map(|idx| {
                let pos = (idx / st) % len;
                let base = idx - pos * st;
                let mut s = 0.0;
                for (o, w) in k.iter().enumerate() {
                    let q = reflect(pos as isize + o as isize - r, len);
                    s += w * src[base + q * st];
                }
                s
            })
            .collect();
    }
    Ok(cur)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellCenter {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

/// Voxels strictly brighter than all existing 26 neighbours and above
/// `threshold`, in row-major order, with physical coordinates
/// `index × voxel_size`.
pub fn detect_cells(frame: &[f64], dims: [usize; 3], threshold: f64, voxel_size: [f64; 3]) -> Result<Vec<CellCenter>> {
    if frame.len() != dims.iter().product::<usize>() {
        return Err(Error::DimMismatch(format!("{} values for frame dims {dims:?}", frame.len())));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidParameter(format!("threshold {threshold} outside (0, 1)")));
    }
    let [nx, ny, nz] = dims;
    let at = |i: usize, j: usize, k: usize| frame[(i * ny + j) * nz + k];
    let mut out = Vec::new();
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                let v = at(i, j, k);
                if v <= threshold {
                    continue;
                }
                let mut is_max = true;
                'scan: for di in -1isize..=1 {
                    for dj in -1isize..=1 {
                        for dk in -1isize..=1 {
                            if di == 0 && dj == 0 && dk == 0 {
                                continue;
                            }
                            let (a, b, c) = (i as isize + di, j as isize + dj, k as isize + dk);
                            if a < 0 || b < 0 || c < 0 || a >= nx as isize || b >= ny as isize || c >= nz as isize {
                                continue;
                            }
                            if at(a as usize, b as usize, c as usize) >= v {
                                is_max = false;
                                break 'scan;
                            }
                        }
                    }
                }
                if is_max {
                    out.push(CellCenter {
                        x: i as f64 * voxel_size[0],
                        y: j as f64 * voxel_size[1],
                        z: k as f64 * voxel_size[2],
                        intensity: v,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Physical length per chart unit along `ξ1` and `ξ2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChartMapping {
    pub scale: [f64; 2],
}

impl ChartMapping {
    pub fn new(frame_dims: [usize; 3], voxel_size: [f64; 3], grid: &Grid3) -> Result<Self> {
        if frame_dims[0] < 2 || frame_dims[1] < 2 {
            return Err(Error::GridTooSmall(format!("volume frame {frame_dims:?} needs at least 2 voxels in x and y")));
        }
        let ext_x = (frame_dims[0] - 1) as f64 * voxel_size[0];
        let ext_y = (frame_dims[1] - 1) as f64 * voxel_size[1];
        Ok(ChartMapping {
            scale: [ext_x / ((grid.n1 - 1) as f64 * grid.h1), ext_y / ((grid.n2 - 1) as f64 * grid.h2)],
        })
    }

    /// `(ξ1, ξ2, height)` of a physical point; heights use the `ξ1` scale.
    pub fn to_chart(&self, x: f64, y: f64, z: f64) -> [f64; 3] {
        [x / self.scale[0], y / self.scale[1], z / self.scale[0]]
    }

    pub fn to_physical(&self, xi1: f64, xi2: f64, h: f64) -> [f64; 3] {
        [xi1 * self.scale[0], xi2 * self.scale[1], h * self.scale[0]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Weight `μ` of the first-order penalty.
    pub reg_weight: f64,
    /// Return a flat zero surface for frames without centres instead of failing.
    pub empty_fallback: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            reg_weight: 1e-2,
            empty_fallback: false,
        }
    }
}

/// Bilinear node weights of a chart point on the frame grid.
fn bilinear_weights(grid: &Grid3, xi: [f64; 2]) -> [(usize, f64); 4] {
    let locate = |x: f64, h: f64, n: usize| {
        let p = (x / h).clamp(0.0, (n - 1) as f64);
        let i = (p.floor() as usize).min(n - 2);
        (i, p - i as f64)
    };
    let (i, a) = locate(xi[0], grid.h1, grid.n1);
    let (j, b) = locate(xi[1], grid.h2, grid.n2);
    let n2 = grid.n2;
    [
        (i * n2 + j, (1.0 - a) * (1.0 - b)),
        (i * n2 + j + 1, (1.0 - a) * b),
        ((i + 1) * n2 + j, a * (1.0 - b)),
        ((i + 1) * n2 + j + 1, a * b),
    ]
}

/// Neighbouring node pairs of the forward-difference penalty.
fn penalty_edges(grid: &Grid3) -> Vec<(usize, usize)> {
    let (n1, n2) = (grid.n1, grid.n2);
    let mut e = Vec::with_capacity(2 * n1 * n2);
    for i in 0..n1 {
        for j in 0..n2 {
            let p = i * n2 + j;
            if i + 1 < n1 {
                e.push((p, p + n2));
            }
            if j + 1 < n2 {
                e.push((p, p + 1));
            }
        }
    }
    e
}

/// `Σ_c (B(ξ_c) z − z_c)² + μ Σ h² |∇_h z|²` with forward differences.
pub fn fit_objective(z: &[f64], points: &[[f64; 3]], grid: &Grid3, mu: f64) -> f64 {
    let mut data = 0.0;
    for p in points {
        let bz: f64 = bilinear_weights(grid, [p[0], p[1]]).iter().map(|&(k, w)| w * z[k]).sum();
        data += (bz - p[2]).powi(2);
    }
    let reg: f64 = penalty_edges(grid).iter().map(|&(a, b)| (z[a] - z[b]).powi(2)).sum();
    data + mu * reg
}

/// Conjugate gradients with Jacobi preconditioning for an SPD matrix.
fn pcg(a: &CsrMatrix, b: &[f64], tol: f64, max_iters: usize) -> Option<Vec<f64>> {
    let n = b.len();
    let diag: Vec<f64> = (0..n).map(|r| a.get(r, r)).collect();
    if diag.iter().any(|&d| d <= 0.0) {
        return None;
    }
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| p * q).sum::<f64>();
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Some(x);
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(ri, d)| ri / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for _ in 0..max_iters {
        let ap = a.matvec(&p).ok()?;
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return None;
        }
        let alpha = rz / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        if dot(&r, &r).sqrt() <= tol * bnorm {
            return Some(x);
        }
        z = r.iter().zip(&diag).map(|(ri, d)| ri / d).collect();
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    None
}

/// Normal-equation matrix and right-hand side of the fit.
pub fn fit_normal_equations(points: &[[f64; 3]], grid: &Grid3, mu: f64) -> Result<(CsrMatrix, Vec<f64>)> {
    let n = grid.n1 * grid.n2;
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut rhs = vec![0.0; n];
    for p in points {
        let w = bilinear_weights(grid, [p[0], p[1]]);
        for &(a, wa) in &w {
            rhs[a] += wa * p[2];
            for &(b, wb) in &w {
                rows[a].push((b, wa * wb));
            }
        }
    }
    if mu > 0.0 {
        for (a, b) in penalty_edges(grid) {
            rows[a].push((a, mu));
            rows[b].push((b, mu));
            rows[a].push((b, -mu));
            rows[b].push((a, -mu));
        }
    }
    Ok((CsrMatrix::from_rows(n, rows)?, rhs))
}

/// Least-squares height field through chart points `(ξ1, ξ2, height)` on the
/// `n1 × n2` frame grid of `grid`.
pub fn fit_surface(points: &[[f64; 3]], grid: &Grid3, config: &FitConfig, frame: usize) -> Result<Vec<f64>> {
    let mu = config.reg_weight;
    if !(mu.is_finite() && mu >= 0.0) {
        return Err(Error::InvalidParameter(format!("reg_weight {mu} must be >= 0")));
    }
    let n = grid.n1 * grid.n2;
    if points.is_empty() {
        return if config.empty_fallback {
            Ok(vec![0.0; n])
        } else {
            Err(Error::NoCenters { frame })
        };
    }
    let (a, rhs) = fit_normal_equations(points, grid, mu)?;
    pcg(&a, &rhs, 1e-12, 20 * n + 100)
        .ok_or_else(|| Error::SingularFit(format!("frame {frame}: {} centres with reg_weight {mu}", points.len())))
}

/// Trilinear sample of a volume frame at a voxel-space position, clamped to
/// the volume. The flag reports whether clamping was needed.
pub fn trilinear(frame: &[f64], dims: [usize; 3], q: [f64; 3]) -> (f64, bool) {
    let mut clamped = false;
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let hi = (dims[a] - 1) as f64;
        let mut p = q[a];
        if !(p >= -1e-9 && p <= hi + 1e-9) {
            clamped = true;
        }
        p = p.clamp(0.0, hi);
        let i = if dims[a] >= 2 { (p.floor() as usize).min(dims[a] - 2) } else { 0 };
        base[a] = i;
        frac[a] = p - i as f64;
    }
    let [ny, nz] = [dims[1], dims[2]];
    let mut s = 0.0;
    for (di, wi) in [(0, 1.0 - frac[0]), (1, frac[0])] {
        for (dj, wj) in [(0, 1.0 - frac[1]), (1, frac[1])] {
            for (dk, wk) in [(0, 1.0 - frac[2]), (1, frac[2])] {
                let w = wi * wj * wk;
                if w == 0.0 {
                    continue;
                }
                s += w * frame[((base[0] + di) * ny + base[1] + dj) * nz + base[2] + dk];
            }
        }
    }
    (s, clamped)
}

/// Volume intensity at the surface points of one frame, clamped to `[0, 1]`.
/// Returns the samples and the number of points that fell outside the volume.
pub fn sample_intensity(
    frame: &[f64],
    dims: [usize; 3],
    voxel_size: [f64; 3],
    mapping: &ChartMapping,
    heights: &[f64],
    grid: &Grid3,
) -> Result<(Vec<f64>, usize)> {
    if heights.len() != grid.n1 * grid.n2 {
        return Err(Error::DimMismatch(format!("{} heights for a {}x{} frame", heights.len(), grid.n1, grid.n2)));
    }
    let mut out = Vec::with_capacity(heights.len());
    let mut flagged = 0;
    for i in 0..grid.n1 {
        for j in 0..grid.n2 {
            let p = mapping.to_physical(i as f64 * grid.h1, j as f64 * grid.h2, heights[i * grid.n2 + j]);
            let q = [p[0] / voxel_size[0], p[1] / voxel_size[1], p[2] / voxel_size[2]];
            let (v, c) = trilinear(frame, dims, q);
            flagged += c as usize;
            out.push(v.clamp(0.0, 1.0));
        }
    }
    Ok((out, flagged))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub sigma: [f64; 3],
    pub threshold: f64,
    pub voxel_size: [f64; 3],
    pub fit: FitConfig,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            sigma: [2.0; 3],
            threshold: 0.3,
            voxel_size: [1.0; 3],
            fit: FitConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PreprocessOutput {
    pub z: HeightField,
    pub f: ScalarField3,
    /// Per frame, physical coordinates.
    pub centers: Vec<Vec<CellCenter>>,
    /// Surface points sampled outside the volume (clamped), summed over frames.
    pub clamped_samples: usize,
}

/// Full per-frame chain on a volume normalised to `[0, 1]`, producing fields
/// on an `n_t × n1 × n2` unit-cube grid.
pub fn preprocess_volume(volume: &Volume4, n1: usize, n2: usize, config: &PreprocessConfig) -> Result<PreprocessOutput> {
    let [nt, ..] = volume.dims();
    let grid = Grid3::unit_cube(nt, n1, n2)?;
    let dims = volume.frame_dims();
    let mapping = ChartMapping::new(dims, config.voxel_size, &grid)?;
    let vol = volume.normalized();

    type FrameOut = (Vec<f64>, Vec<f64>, Vec<CellCenter>, usize);
    let frames: Vec<Result<FrameOut>> = (0..nt)
        .into_par_iter()
        .map(|t| {
            let smooth = gaussian_filter3(vol.frame(t), dims, config.sigma)?;
            let centers = detect_cells(&smooth, dims, config.threshold, config.voxel_size)?;
            let pts: Vec<[f64; 3]> = centers.iter().map(|c| mapping.to_chart(c.x, c.y, c.z)).collect();
            let z = fit_surface(&pts, &grid, &config.fit, t)?;
            let (f, flagged) = sample_intensity(&smooth, dims, config.voxel_size, &mapping, &z, &grid)?;
            Ok((z, f, centers, flagged))
        })
        .collect();
    let mut zs = Vec::with_capacity(grid.len());
    let mut fs = Vec::with_capacity(grid.len());
    let mut centers = Vec::with_capacity(nt);
    let mut clamped_samples = 0;
    for fr in frames {
        let (z, f, c, k) = fr?;
        zs.extend(z);
        fs.extend(f);
        centers.push(c);
        clamped_samples += k;
    }
    Ok(PreprocessOutput {
        z: HeightField::new(grid, zs)?,
        f: ScalarField3::new(grid, fs)?,
        centers,
        clamped_samples,
    })
}

pub const CENTERS_CSV_HEADER: &str = "frame,x,y,z,intensity";

pub fn centers_csv(centers: &[Vec<CellCenter>]) -> String {
    let mut s = format!("{CENTERS_CSV_HEADER}\n");
    for (t, cs) in centers.iter().enumerate() {
        for c in cs {
            s.push_str(&format!("{t},{:e},{:e},{:e},{:e}\n", c.x, c.y, c.z, c.intensity));
        }
    }
    s
}
