//! Differential geometry of the evolving graph surface `x(t, ξ) = (ξ1, ξ2, z(t, ξ))`.
//!
//! Index conventions used throughout (zero-based):
//!
//! * `alpha[j][i]` is `α^j_i`, the `∂_j x` coordinate of frame vector `e_i`;
//! * `gamma[j][i][k]` is `Γ^j_{ik}`;
//! * `gamma0[j][i]` is `Γ^j_{0i}`;
//! * `gamma_f[mu][j][i]` is `Γ̃^j_{μi}` with `mu = 0` the time direction and
//!   `mu = 1, 2` the frame directions `e_1, e_2`;
//! * `big_g[nu]` is `G_ν = ∂_ν √det g / (2 √det g)`.
//!
//! Derived quantities (`g`, `α`, `√det g`) are differentiated by finite
//! differences of their gridded values (see [`crate::fd`]).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fd;
use crate::model::{Grid3, HeightField, VectorField3};

pub type Vec3 = [f64; 3];
pub type Mat2 = [[f64; 2]; 2];

/// Metrics with `det g` at or below this are rejected.
pub const DET_EPS: f64 = 1e-12;

#[inline]
pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// First derivatives of the parametrization at every gridpoint.
#[derive(Debug, Clone)]
pub struct ParamDerivatives {
    pub dx: [Vec<Vec3>; 2],
    pub v: Vec<Vec3>,
    pub dtx: [Vec<Vec3>; 2],
}

pub fn parametrization_derivatives(z: &HeightField) -> ParamDerivatives {
    let grid = *z.grid();
    let zv = z.values();
    let z1 = fd::diff_field(&grid, zv, 1);
    let z2 = fd::diff_field(&grid, zv, 2);
    let zt = fd::diff_field(&grid, zv, 0);
    let zt1 = fd::diff_field(&grid, &z1, 0);
    let zt2 = fd::diff_field(&grid, &z2, 0);
    ParamDerivatives {
        dx: [
            z1.iter().map(|&d| [1.0, 0.0, d]).collect(),
            z2.iter().map(|&d| [0.0, 1.0, d]).collect(),
        ],
        v: zt.iter().map(|&d| [0.0, 0.0, d]).collect(),
        dtx: [
            zt1.iter().map(|&d| [0.0, 0.0, d]).collect(),
            zt2.iter().map(|&d| [0.0, 0.0, d]).collect(),
        ],
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metric {
    pub g: Mat2,
    pub ginv: Mat2,
    pub sqrtdetg: f64,
}

/// First fundamental form at one point. `index` is only used in the error.
pub fn metric(dx1: &Vec3, dx2: &Vec3, index: usize) -> Result<Metric> {
    let g11 = dot(dx1, dx1);
    let g12 = dot(dx1, dx2);
    let g22 = dot(dx2, dx2);
    let det = g11 * g22 - g12 * g12;
    if !(det > DET_EPS) {
        return Err(Error::DegenerateMetric { index, det });
    }
    Ok(Metric {
        g: [[g11, g12], [g12, g22]],
        ginv: [[g22 / det, -g12 / det], [-g12 / det, g11 / det]],
        sqrtdetg: det.sqrt(),
    })
}

/// Unit normal `∂_1 x × ∂_2 x / |·|` and tangent projector `I − N Nᵀ`.
pub fn normal_and_projector(dx1: &Vec3, dx2: &Vec3, index: usize) -> Result<(Vec3, [[f64; 3]; 3])> {
    let c = cross(dx1, dx2);
    let len = norm(&c);
    if !(len * len > DET_EPS) {
        return Err(Error::DegenerateMetric { index, det: len * len });
    }
    let n = [c[0] / len, c[1] / len, c[2] / len];
    let mut p = [[0.0; 3]; 3];
    for (a, row) in p.iter_mut().enumerate() {
        for (b, entry) in row.iter_mut().enumerate() {
            *entry = if a == b { 1.0 } else { 0.0 } - n[a] * n[b];
        }
    }
    Ok((n, p))
}

/// Which coordinate vector Gram–Schmidt starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameOrder {
    /// `e_1 ∥ ∂_1 x`.
    #[default]
    FirstAxis,
    /// `e_2 ∥ ∂_2 x`, with `e_1` completing a frame of the same orientation.
    SecondAxis,
}

/// Gram–Schmidt frame coefficients `α^j_i` computed from the metric alone.
pub fn orthonormal_frame(g: &Mat2, order: FrameOrder) -> Mat2 {
    let det = g[0][0] * g[1][1] - g[0][1] * g[0][1];
    match order {
        FrameOrder::FirstAxis => {
            // e1 = ∂1x/|∂1x|, e2 ∝ ∂2x − (g12/g11) ∂1x with squared length det/g11
            let a11 = 1.0 / g[0][0].sqrt();
            let s = (g[0][0] / det).sqrt();
            [[a11, -g[0][1] / g[0][0] * s], [0.0, s]]
        }
        FrameOrder::SecondAxis => {
            let a22 = 1.0 / g[1][1].sqrt();
            let s = (g[1][1] / det).sqrt();
            [[s, 0.0], [-g[0][1] / g[1][1] * s, a22]]
        }
    }
}

/// Coordinate Christoffel symbols `Γ^j_{ik}` from a gridded metric.
pub fn christoffel(grid: &Grid3, metrics: &[Metric]) -> Vec<[[[f64; 2]; 2]; 2]> {
    (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            // dg[l][a][b] = ∂_l g_ab (spatial l)
            let mut dg = [[[0.0; 2]; 2]; 2];
            for (l, dgl) in dg.iter_mut().enumerate() {
                for a in 0..2 {
                    for b in a..2 {
                        let d = fd::diff(grid, idx, l + 1, |k| metrics[k].g[a][b]);
                        dgl[a][b] = d;
                        dgl[b][a] = d;
                    }
                }
            }
            let ginv = metrics[idx].ginv;
            let mut gam = [[[0.0; 2]; 2]; 2];
            for (j, gj) in gam.iter_mut().enumerate() {
                for i in 0..2 {
                    for k in 0..2 {
                        let mut s = 0.0;
                        for m in 0..2 {
                            s += ginv[m][j] * (dg[i][k][m] + dg[k][m][i] - dg[m][i][k]);
                        }
                        gj[i][k] = 0.5 * s;
                    }
                }
            }
            gam
        })
        .collect()
}

/// Time connection `Γ^j_{0i} = g^{jk} ∂_{ti} x · ∂_k x` at one point.
pub fn time_symbols(ginv: &Mat2, dtx: &[Vec3; 2], dx: &[Vec3; 2]) -> Mat2 {
    let mut out = [[0.0; 2]; 2];
    for (j, row) in out.iter_mut().enumerate() {
        for (i, entry) in row.iter_mut().enumerate() {
            *entry = (0..2).map(|k| ginv[j][k] * dot(&dtx[i], &dx[k])).sum();
        }
    }
    out
}

/// Frame connection symbols `Γ̃^j_{μi}` (see module docs for layout).
pub fn frame_symbols(
    grid: &Grid3,
    alpha: &[Mat2],
    gamma: &[[[[f64; 2]; 2]; 2]],
    gamma0: &[Mat2],
    metrics: &[Metric],
) -> Vec<[[[f64; 2]; 2]; 3]> {
    (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let a = &alpha[idx];
            let g = &metrics[idx].g;
            // dalpha[nu][m][k] = ∂_ν α^m_k
            let mut dalpha = [[[0.0; 2]; 2]; 3];
            for (nu, dn) in dalpha.iter_mut().enumerate() {
                for m in 0..2 {
                    for k in 0..2 {
                        dn[m][k] = fd::diff(grid, idx, nu, |q| alpha[q][m][k]);
                    }
                }
            }
            // x[mu][m][k]: ∂_x-coordinates of ∇_{e_μ} e_k
            let mut x = [[[0.0; 2]; 2]; 3];
            for m in 0..2 {
                for k in 0..2 {
                    x[0][m][k] = dalpha[0][m][k]
                        + (0..2).map(|kk| a[kk][k] * gamma0[idx][m][kk]).sum::<f64>();
                    for i in 0..2 {
                        let mut s = 0.0;
                        for l in 0..2 {
                            s += a[l][i] * dalpha[l + 1][m][k];
                            for n in 0..2 {
                                s += a[l][i] * a[n][k] * gamma[idx][m][l][n];
                            }
                        }
                        x[i + 1][m][k] = s;
                    }
                }
            }
            let mut gf = [[[0.0; 2]; 2]; 3];
            for (mu, gfm) in gf.iter_mut().enumerate() {
                for (j, gfmj) in gfm.iter_mut().enumerate() {
                    for (k, entry) in gfmj.iter_mut().enumerate() {
                        let mut s = 0.0;
                        for h in 0..2 {
                            for m in 0..2 {
                                s += a[h][j] * g[h][m] * x[mu][m][k];
                            }
                        }
                        *entry = s;
                    }
                }
            }
            gf
        })
        .collect()
}

/// `G_ν = ∂_ν √det g / (2 √det g)` for ν = 0, 1, 2.
pub fn big_g(grid: &Grid3, sqrtdetg: &[f64]) -> Vec<Vec3> {
    (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let s = sqrtdetg[idx];
            let mut out = [0.0; 3];
            for (nu, o) in out.iter_mut().enumerate() {
                *o = fd::diff(grid, idx, nu, |k| sqrtdetg[k]) / (2.0 * s);
            }
            out
        })
        .collect()
}

/// All geometric quantities at one gridpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointGeometry {
    pub dx: [Vec3; 2],
    pub v: Vec3,
    pub dtx: [Vec3; 2],
    pub g: Mat2,
    pub ginv: Mat2,
    pub sqrtdetg: f64,
    pub gamma: [[[f64; 2]; 2]; 2],
    pub gamma0: Mat2,
    pub alpha: Mat2,
    /// `gamma_f[mu][j][i]` = `Γ̃^j_{μi}`.
    pub gamma_f: [[[f64; 2]; 2]; 3],
    pub normal: Vec3,
    pub big_g: Vec3,
}

impl PointGeometry {
    /// `Γ̃^j_{μi}`.
    #[inline]
    pub fn frame_symbol(&self, j: usize, mu: usize, i: usize) -> f64 {
        self.gamma_f[mu][j][i]
    }

    /// Orthonormal frame vector `e_i` in ambient coordinates.
    #[inline]
    pub fn frame_vector(&self, i: usize) -> Vec3 {
        let mut e = [0.0; 3];
        for (j, dxj) in self.dx.iter().enumerate() {
            for c in 0..3 {
                e[c] += self.alpha[j][i] * dxj[c];
            }
        }
        e
    }

    /// Tangent projector `I − N Nᵀ`.
    pub fn projector(&self) -> [[f64; 3]; 3] {
        let n = self.normal;
        let mut p = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                p[a][b] = if a == b { 1.0 } else { 0.0 } - n[a] * n[b];
            }
        }
        p
    }

    /// Coordinate components `u^j = g^{jk} (u · ∂_k x)` of a tangent vector.
    #[inline]
    pub fn coordinate_components(&self, u: &Vec3) -> [f64; 2] {
        let c = [dot(u, &self.dx[0]), dot(u, &self.dx[1])];
        [
            self.ginv[0][0] * c[0] + self.ginv[0][1] * c[1],
            self.ginv[1][0] * c[0] + self.ginv[1][1] * c[1],
        ]
    }
}

/// Per-gridpoint geometry of an evolving graph surface.
#[derive(Debug, Clone)]
pub struct GeometryAtlas {
    grid: Grid3,
    order: FrameOrder,
    points: Vec<PointGeometry>,
}

impl GeometryAtlas {
    pub fn build(z: &HeightField) -> Result<Self> {
        GeometryAtlas::build_with_frame(z, FrameOrder::FirstAxis)
    }

    pub fn build_with_frame(z: &HeightField, order: FrameOrder) -> Result<Self> {
        let grid = *z.grid();
        let pd = parametrization_derivatives(z);
        let n = grid.len();

        let metrics: Vec<Result<Metric>> = (0..n)
            .into_par_iter()
            .map(|idx| metric(&pd.dx[0][idx], &pd.dx[1][idx], idx))
            .collect();
        let metrics: Vec<Metric> = metrics.into_iter().collect::<Result<_>>()?;

        let normals: Vec<Vec3> = (0..n)
            .map(|idx| normal_and_projector(&pd.dx[0][idx], &pd.dx[1][idx], idx).map(|(nv, _)| nv))
            .collect::<Result<_>>()?;

        let gamma = christoffel(&grid, &metrics);
        let gamma0: Vec<Mat2> = (0..n)
            .into_par_iter()
            .map(|idx| {
                time_symbols(
                    &metrics[idx].ginv,
                    &[pd.dtx[0][idx], pd.dtx[1][idx]],
                    &[pd.dx[0][idx], pd.dx[1][idx]],
                )
            })
            .collect();
        let alpha: Vec<Mat2> = metrics.iter().map(|m| orthonormal_frame(&m.g, order)).collect();
        let gamma_f = frame_symbols(&grid, &alpha, &gamma, &gamma0, &metrics);
        let sqrtdetg: Vec<f64> = metrics.iter().map(|m| m.sqrtdetg).collect();
        let big_g = big_g(&grid, &sqrtdetg);

        let points = (0..n)
            .map(|idx| PointGeometry {
                dx: [pd.dx[0][idx], pd.dx[1][idx]],
                v: pd.v[idx],
                dtx: [pd.dtx[0][idx], pd.dtx[1][idx]],
                g: metrics[idx].g,
                ginv: metrics[idx].ginv,
                sqrtdetg: metrics[idx].sqrtdetg,
                gamma: gamma[idx],
                gamma0: gamma0[idx],
                alpha: alpha[idx],
                gamma_f: gamma_f[idx],
                normal: normals[idx],
                big_g: big_g[idx],
            })
            .collect();
        Ok(GeometryAtlas { grid, order, points })
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn frame_order(&self) -> FrameOrder {
        self.order
    }

    pub fn points(&self) -> &[PointGeometry] {
        &self.points
    }

    #[inline]
    pub fn at(&self, idx: usize) -> &PointGeometry {
        &self.points[idx]
    }

    /// Surface velocity `V = ∂_t x` as a vector field.
    pub fn surface_velocity(&self) -> VectorField3 {
        let v: Vec<Vec3> = self.points.iter().map(|p| p.v).collect();
        VectorField3::from_points(self.grid, &v).expect("finite by construction")
    }
}

/// Tolerance used by [`covariant_derivative`] to decide tangency.
pub const TANGENCY_TOL: f64 = 1e-8;

/// Covariant derivative `∇_v u` at gridpoint `idx` along tangent vector `direction`:
/// `(v^i ∂_i u^j + v^i u^k Γ^j_{ik}) ∂_j x`.
pub fn covariant_derivative(
    u: &VectorField3,
    atlas: &GeometryAtlas,
    idx: usize,
    direction: &Vec3,
) -> Result<Vec3> {
    let grid = atlas.grid();
    grid.same_as(u.grid(), "covariant_derivative")?;
    let check = |k: usize| -> Result<()> {
        let uk = u.get(k);
        if dot(&uk, &atlas.at(k).normal).abs() > TANGENCY_TOL * norm(&uk) {
            return Err(Error::NotTangent(k));
        }
        Ok(())
    };
    check(idx)?;
    for axis in 1..3 {
        let s = grid.stride(axis);
        if idx >= s {
            check(idx - s)?;
        }
        if idx + s < grid.len() {
            check(idx + s)?;
        }
    }
    let p = atlas.at(idx);
    if dot(direction, &p.normal).abs() > TANGENCY_TOL * norm(direction) {
        return Err(Error::NotTangent(idx));
    }
    let comps = |k: usize| atlas.at(k).coordinate_components(&u.get(k));
    let uc = comps(idx);
    let vc = p.coordinate_components(direction);
    let mut out_c = [0.0; 2];
    for (j, oc) in out_c.iter_mut().enumerate() {
        let mut s = 0.0;
        for i in 0..2 {
            s += vc[i] * fd::diff(grid, idx, i + 1, |k| comps(k)[j]);
            for k in 0..2 {
                s += vc[i] * uc[k] * p.gamma[j][i][k];
            }
        }
        *oc = s;
    }
    let mut out = [0.0; 3];
    for c in 0..3 {
        out[c] = out_c[0] * p.dx[0][c] + out_c[1] * p.dx[1][c];
    }
    Ok(out)
}

/// Squared Frobenius norm `Σ_i |∇_{e_i} u|²` of the spatial covariant
/// derivative at gridpoint `idx`, using the atlas frame as directions.
pub fn frobenius_norm_sq(u: &VectorField3, atlas: &GeometryAtlas, idx: usize) -> Result<f64> {
    let p = atlas.at(idx);
    let mut s = 0.0;
    for i in 0..2 {
        let d = covariant_derivative(u, atlas, idx, &p.frame_vector(i))?;
        s += dot(&d, &d);
    }
    Ok(s)
}

/// Covariant derivative `P ∂_θ u` of a tangent field along a closed curve
/// sampled at equal parameter steps `h` (periodic central differences).
pub fn closed_curve_covariant_derivative(x: &[Vec3], u: &[Vec3], h: f64) -> Result<Vec<Vec3>> {
    let n = x.len();
    if u.len() != n {
        return Err(Error::DimMismatch(format!("{} curve points, {} vectors", n, u.len())));
    }
    if n < 3 {
        return Err(Error::GridTooSmall(format!("closed curve needs at least 3 samples, got {n}")));
    }
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidParameter(format!("h = {h} must be > 0")));
    }
    let central = |v: &[Vec3], k: usize| -> Vec3 {
        let (a, b) = (v[(k + 1) % n], v[(k + n - 1) % n]);
        [0, 1, 2].map(|c| (a[c] - b[c]) / (2.0 * h))
    };
    (0..n)
        .map(|k| {
            let t = central(x, k);
            let tt = dot(&t, &t);
            if tt == 0.0 {
                return Err(Error::DegenerateMetric { index: k, det: 0.0 });
            }
            let along = dot(&u[k], &t) / tt;
            let off: Vec3 = [0, 1, 2].map(|c| u[k][c] - along * t[c]);
            if norm(&off) > TANGENCY_TOL * norm(&u[k]) {
                return Err(Error::NotTangent(k));
            }
            let du = central(u, k);
            let s = dot(&du, &t) / tt;
            Ok(t.map(|c| s * c))
        })
        .collect()
}
