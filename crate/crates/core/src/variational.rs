//! Discrete energy and pointwise Euler–Lagrange coefficients.
//!
//! The unknowns are the frame coordinates `w = (w^1, w^2)` of the tangential
//! flow. With `α^0_μ = δ^0_μ` the regulariser is `Σ_μ λ_μ |D_μ w|²` where
//! `D_μ w^j = α^ν_μ ∂_ν w^j + w^i Γ̃^j_{μi}`, and `λ2 = λ1`.
//!
//! The optimality system has the form
//!
//! ```text
//! d^{νσ} ∂_{νσ} w^m + c^{σm}_i ∂_σ w^i + b^m_i w^i = a^m    inside
//! q^{νσ} ∂_σ w^m + p^{νm}_i w^i = 0                         on {ξ^ν = 0, 1}
//! ```
//!
//! Layouts: `b[m][i]`, `c[sigma][m][i]`, `d[nu][sigma]`, `p[nu][m][i]`,
//! `q[nu][sigma]`, Greek indices `0..3` with 0 = time, Latin `0..2`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fd;
use crate::geometry::{frobenius_norm_sq, GeometryAtlas, PointGeometry};
use crate::model::{FrameField, Grid3, ScalarField3, VectorField3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegParams {
    pub lambda0: f64,
    pub lambda1: f64,
}

impl RegParams {
    pub fn new(lambda0: f64, lambda1: f64) -> Result<Self> {
        if !(lambda0.is_finite() && lambda0 >= 0.0) {
            return Err(Error::InvalidParameter(format!("lambda0 = {lambda0} must be >= 0")));
        }
        if !(lambda1.is_finite() && lambda1 > 0.0) {
            return Err(Error::InvalidParameter(format!("lambda1 = {lambda1} must be > 0")));
        }
        Ok(RegParams { lambda0, lambda1 })
    }

    /// `λ_μ` with `λ_2 = λ_1`.
    #[inline]
    pub fn lambda(&self, mu: usize) -> f64 {
        if mu == 0 {
            self.lambda0
        } else {
            self.lambda1
        }
    }

    pub fn spatial_only(&self) -> RegParams {
        RegParams {
            lambda0: 0.0,
            lambda1: self.lambda1,
        }
    }
}

/// Which expression of the lower-order coefficients to use.
///
/// `Variational` is the Euler–Lagrange operator of the energy: the area-element
/// terms carry `∂_ν √det g / √det g = 2 G_ν` and the divergence term in `b`
/// enters with a minus sign. `NonSymmetric` uses the factor `G_ν` and a plus
/// sign; its operator is not self-adjoint. It is kept for comparison runs.
/// Both coincide on flat static surfaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientForm {
    #[default]
    Variational,
    NonSymmetric,
}

/// `∂_t f`, `∂_1 f`, `∂_2 f` at every gridpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct DataDerivatives {
    grid: Grid3,
    pub ft: Vec<f64>,
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
}

impl DataDerivatives {
    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    #[inline]
    pub fn spatial(&self, idx: usize) -> [f64; 2] {
        [self.f1[idx], self.f2[idx]]
    }
}

pub fn data_derivatives(f: &ScalarField3) -> DataDerivatives {
    let grid = *f.grid();
    DataDerivatives {
        grid,
        ft: fd::diff_field(&grid, f.values(), 0),
        f1: fd::diff_field(&grid, f.values(), 1),
        f2: fd::diff_field(&grid, f.values(), 2),
    }
}

/// Extended frame matrix `A[ν][μ] = α^ν_μ` with `α^0_μ = δ^0_μ`, `α^ν_0 = δ^ν_0`.
#[inline]
pub fn extended_alpha(p: &PointGeometry) -> [[f64; 3]; 3] {
    let a = p.alpha;
    [
        [1.0, 0.0, 0.0],
        [0.0, a[0][0], a[0][1]],
        [0.0, a[1][0], a[1][1]],
    ]
}

/// Frame components `α^i_m ∂_i f` of the surface gradient.
#[inline]
pub fn frame_gradient(p: &PointGeometry, df: [f64; 2]) -> [f64; 2] {
    [
        p.alpha[0][0] * df[0] + p.alpha[1][0] * df[1],
        p.alpha[0][1] * df[0] + p.alpha[1][1] * df[1],
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PointCoefficients {
    pub a: [f64; 2],
    pub b: [[f64; 2]; 2],
    pub c: [[[f64; 2]; 2]; 3],
    pub d: [[f64; 3]; 3],
    pub p: [[[f64; 2]; 2]; 3],
    pub q: [[f64; 3]; 3],
}

#[derive(Debug, Clone)]
pub struct ElCoefficients {
    grid: Grid3,
    reg: RegParams,
    points: Vec<PointCoefficients>,
}

impl ElCoefficients {
    /// Wrap externally supplied coefficients (used by tests and diagnostics).
    pub fn from_points(grid: Grid3, reg: RegParams, points: Vec<PointCoefficients>) -> Result<Self> {
        if points.len() != grid.len() {
            return Err(Error::DimMismatch(format!(
                "{} coefficient records for {} gridpoints",
                points.len(),
                grid.len()
            )));
        }
        Ok(ElCoefficients { grid, reg, points })
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn reg(&self) -> RegParams {
        self.reg
    }

    pub fn points(&self) -> &[PointCoefficients] {
        &self.points
    }

    #[inline]
    pub fn at(&self, idx: usize) -> &PointCoefficients {
        &self.points[idx]
    }
}

pub fn el_coefficients(
    atlas: &GeometryAtlas,
    df: &DataDerivatives,
    reg: RegParams,
) -> Result<ElCoefficients> {
    el_coefficients_with(atlas, df, reg, CoefficientForm::Variational)
}

pub fn el_coefficients_with(
    atlas: &GeometryAtlas,
    df: &DataDerivatives,
    reg: RegParams,
    form: CoefficientForm,
) -> Result<ElCoefficients> {
    let grid = *atlas.grid();
    grid.same_as(df.grid(), "el_coefficients")?;
    let (gfac, div_sign) = match form {
        CoefficientForm::Variational => (2.0, -1.0),
        CoefficientForm::NonSymmetric => (1.0, 1.0),
    };
    let lam = [reg.lambda(0), reg.lambda(1), reg.lambda(2)];

    let points = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let pg = atlas.at(idx);
            let ea = extended_alpha(pg);
            let gf = |j: usize, mu: usize, i: usize| pg.gamma_f[mu][j][i];

            // div_ag[mu][m][i] = ∂_ν(α^ν_μ Γ̃^m_{μi}),  div_aa[sigma][mu] = ∂_ν(α^ν_μ α^σ_μ)
            let mut div_ag = [[[0.0; 2]; 2]; 3];
            let mut div_aa = [[0.0; 3]; 3];
            for nu in 0..3 {
                for mu in 0..3 {
                    for m in 0..2 {
                        for i in 0..2 {
                            div_ag[mu][m][i] += fd::diff(&grid, idx, nu, |k| {
                                let pk = atlas.at(k);
                                extended_alpha(pk)[nu][mu] * pk.gamma_f[mu][m][i]
                            });
                        }
                    }
                    for (sigma, row) in div_aa.iter_mut().enumerate() {
                        row[mu] += fd::diff(&grid, idx, nu, |k| {
                            let e = extended_alpha(atlas.at(k));
                            e[nu][mu] * e[sigma][mu]
                        });
                    }
                }
            }
            // gw[mu] = Σ_ν G_ν α^ν_μ
            let mut gw = [0.0; 3];
            for (mu, g) in gw.iter_mut().enumerate() {
                *g = (0..3).map(|nu| pg.big_g[nu] * ea[nu][mu]).sum();
            }

            let psi = frame_gradient(pg, df.spatial(idx));
            let ft = df.ft[idx];
            let mut pc = PointCoefficients::default();
            for m in 0..2 {
                pc.a[m] = -psi[m] * ft;
                for i in 0..2 {
                    let mut s = 0.0;
                    for mu in 0..3 {
                        let quad: f64 = (0..2).map(|j| gf(j, mu, m) * gf(j, mu, i)).sum();
                        s += lam[mu]
                            * (quad - gfac * gw[mu] * gf(m, mu, i) + div_sign * div_ag[mu][m][i]);
                    }
                    pc.b[m][i] = psi[m] * psi[i] + s;
                }
            }
            for sigma in 0..3 {
                for m in 0..2 {
                    for i in 0..2 {
                        let mut s = 0.0;
                        for mu in 0..3 {
                            let mut term = ea[sigma][mu] * (gf(i, mu, m) - gf(m, mu, i));
                            if i == m {
                                term -= gfac * gw[mu] * ea[sigma][mu] + div_aa[sigma][mu];
                            }
                            s += lam[mu] * term;
                        }
                        pc.c[sigma][m][i] = s;
                    }
                }
            }
            for nu in 0..3 {
                for sigma in 0..3 {
                    let q: f64 = (0..3).map(|mu| lam[mu] * ea[nu][mu] * ea[sigma][mu]).sum();
                    pc.q[nu][sigma] = q;
                    pc.d[nu][sigma] = -q;
                }
                for m in 0..2 {
                    for i in 0..2 {
                        pc.p[nu][m][i] = (0..3).map(|mu| lam[mu] * ea[nu][mu] * gf(m, mu, i)).sum();
                    }
                }
            }
            pc
        })
        .collect();
    Ok(ElCoefficients { grid, reg, points })
}

/// Data and regulariser parts of the discrete energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyTerms {
    pub data: f64,
    pub regularizer: f64,
}

impl EnergyTerms {
    pub fn total(&self) -> f64 {
        self.data + self.regularizer
    }
}

/// `D_μ w^j` at one gridpoint, laid out `[mu][j]`.
pub fn frame_covariant_derivatives(
    w: &FrameField,
    atlas: &GeometryAtlas,
    idx: usize,
) -> [[f64; 2]; 3] {
    let grid = atlas.grid();
    let pg = atlas.at(idx);
    let ea = extended_alpha(pg);
    let wp = w.get(idx);
    let mut dw = [[0.0; 2]; 3]; // dw[nu][j] = ∂_ν w^j
    for (nu, row) in dw.iter_mut().enumerate() {
        for (j, e) in row.iter_mut().enumerate() {
            *e = fd::diff(grid, idx, nu, |k| w.component(j)[k]);
        }
    }
    let mut out = [[0.0; 2]; 3];
    for (mu, row) in out.iter_mut().enumerate() {
        for (j, e) in row.iter_mut().enumerate() {
            let mut s = 0.0;
            for nu in 0..3 {
                s += ea[nu][mu] * dw[nu][j];
            }
            for (i, wi) in wp.iter().enumerate() {
                s += wi * pg.gamma_f[mu][j][i];
            }
            *e = s;
        }
    }
    out
}

/// Residual `∂_t f + w^j α^i_j ∂_i f` of the optical flow equation.
pub fn ofc_residual(w: &FrameField, atlas: &GeometryAtlas, df: &DataDerivatives) -> Vec<f64> {
    (0..atlas.grid().len())
        .map(|idx| {
            let psi = frame_gradient(atlas.at(idx), df.spatial(idx));
            let wp = w.get(idx);
            df.ft[idx] + wp[0] * psi[0] + wp[1] * psi[1]
        })
        .collect()
}

fn point_terms(
    w: &FrameField,
    atlas: &GeometryAtlas,
    df: &DataDerivatives,
    reg: RegParams,
    idx: usize,
    with_time: bool,
) -> (f64, f64) {
    let pg = atlas.at(idx);
    let psi = frame_gradient(pg, df.spatial(idx));
    let wp = w.get(idx);
    let r = df.ft[idx] + wp[0] * psi[0] + wp[1] * psi[1];
    let dw = frame_covariant_derivatives(w, atlas, idx);
    let mut reg_sum = 0.0;
    for (mu, row) in dw.iter().enumerate() {
        if mu == 0 && !with_time {
            continue;
        }
        reg_sum += reg.lambda(mu) * (row[0] * row[0] + row[1] * row[1]);
    }
    (r * r * pg.sqrtdetg, reg_sum * pg.sqrtdetg)
}

fn check_inputs(w: &FrameField, atlas: &GeometryAtlas, df: &DataDerivatives) -> Result<()> {
    atlas.grid().same_as(w.grid(), "energy: flow")?;
    atlas.grid().same_as(df.grid(), "energy: data")
}

/// Riemann-sum energy over the whole spatiotemporal grid. Summation is
/// sequential in flat-index order.
pub fn energy_terms(
    w: &FrameField,
    atlas: &GeometryAtlas,
    df: &DataDerivatives,
    reg: RegParams,
) -> Result<EnergyTerms> {
    check_inputs(w, atlas, df)?;
    let grid = atlas.grid();
    let vol = grid.h0 * grid.h1 * grid.h2;
    let terms: Vec<(f64, f64)> = (0..grid.len())
        .into_par_iter()
        .map(|idx| point_terms(w, atlas, df, reg, idx, true))
        .collect();
    let (mut data, mut regularizer) = (0.0, 0.0);
    for (d, r) in terms {
        data += d;
        regularizer += r;
    }
    Ok(EnergyTerms {
        data: data * vol,
        regularizer: regularizer * vol,
    })
}

pub fn energy(w: &FrameField, atlas: &GeometryAtlas, df: &DataDerivatives, reg: RegParams) -> Result<f64> {
    energy_terms(w, atlas, df, reg).map(|e| e.total())
}

/// Spatial functional of a single frame (no temporal term), integrated over
/// the chart with weight `h1·h2`.
pub fn frame_energy(
    w: &FrameField,
    atlas: &GeometryAtlas,
    df: &DataDerivatives,
    reg: RegParams,
    t: usize,
) -> Result<EnergyTerms> {
    check_inputs(w, atlas, df)?;
    let grid = atlas.grid();
    if t >= grid.n0 {
        return Err(Error::InvalidParameter(format!("frame {t} out of range")));
    }
    let (mut data, mut regularizer) = (0.0, 0.0);
    for idx in t * grid.frame_len()..(t + 1) * grid.frame_len() {
        let (d, r) = point_terms(w, atlas, df, reg, idx, false);
        data += d;
        regularizer += r;
    }
    let area = grid.h1 * grid.h2;
    Ok(EnergyTerms {
        data: data * area,
        regularizer: regularizer * area,
    })
}

/// Spatial regulariser `λ1 Σ ‖∇u‖² √det g · h0 h1 h2` evaluated on the ambient
/// field through [`frobenius_norm_sq`], i.e. with the atlas frame only as a
/// set of directions. Independent of the frame up to rounding.
pub fn frobenius_regularizer(u: &VectorField3, atlas: &GeometryAtlas, lambda1: f64) -> Result<f64> {
    let grid = atlas.grid();
    grid.same_as(u.grid(), "frobenius_regularizer")?;
    let vals: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|idx| frobenius_norm_sq(u, atlas, idx).map(|v| v * atlas.at(idx).sqrtdetg))
        .collect::<Result<_>>()?;
    Ok(lambda1 * vals.iter().sum::<f64>() * grid.h0 * grid.h1 * grid.h2)
}
