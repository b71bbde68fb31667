//! Sparse linear system for the frame coordinates.
//!
//! Unknown `2·p + m` is `w^m` at gridpoint `p` (flat index within the solved
//! block). Every gridpoint contributes two rows, so the matrix is square:
//!
//! - spatial corners: the boundary condition along the outward diagonal
//!   `n = (0, s1, s2)`, with the flux split into a diagonal one-sided
//!   difference and a cross difference,
//! - other spatial boundary points: the boundary condition of their face,
//!   normal derivative one-sided inward, tangential ones central,
//!   multiplied by the outward sign,
//! - first and last frame, when `λ0 > 0` in spatiotemporal mode: the
//!   temporal boundary condition,
//! - everything else: the interior equation. At the first and last frame with
//!   `λ0 = 0` all time coefficients vanish and only spatial terms remain.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{FrameField, Grid3};
use crate::sparse::CsrMatrix;
use crate::variational::{ElCoefficients, PointCoefficients};

/// Which unknowns are solved for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssemblyMode {
    /// All frames at once, coupled through the time terms.
    Spatiotemporal,
    /// A single frame; requires `λ0 = 0`.
    Framewise(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Interior,
    SpatialFace { axis: usize, sign: i8 },
    Corner { s1: i8, s2: i8 },
    TemporalFace { sign: i8 },
}

#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub mode: AssemblyMode,
    pub grid: Grid3,
}

impl SparseSystem {
    pub fn len(&self) -> usize {
        self.rhs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rhs.is_empty()
    }

    /// `A x - rhs`.
    pub fn residual(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut r = self.matrix.matvec(x)?;
        for (ri, bi) in r.iter_mut().zip(&self.rhs) {
            *ri -= bi;
        }
        Ok(r)
    }

    /// Scatter a solution vector back into a frame field over the full grid.
    /// Frames outside the solved block are left untouched in `into`.
    pub fn store_solution(&self, x: &[f64], into: &mut FrameField) -> Result<()> {
        if x.len() != self.len() {
            return Err(Error::DimMismatch(format!("solution has {} entries, system {}", x.len(), self.len())));
        }
        let g = self.grid;
        let (t0, nt) = match self.mode {
            AssemblyMode::Spatiotemporal => (0, g.n0),
            AssemblyMode::Framewise(t) => (t, 1),
        };
        let mut all = into.to_unknowns();
        let off = 2 * g.index(t0, 0, 0);
        all[off..off + 2 * nt * g.frame_len()].copy_from_slice(x);
        *into = FrameField::from_unknowns(g, &all)?;
        Ok(())
    }
}

/// Frames and row classification used by a mode. Checks the mode against
/// the grid and regularisation weights.
fn mode_frames(grid: &Grid3, lambda0: f64, mode: AssemblyMode) -> Result<(usize, usize, bool)> {
    match mode {
        AssemblyMode::Spatiotemporal => {
            let temporal_bc = lambda0 > 0.0;
            if temporal_bc && grid.n0 < 3 {
                return Err(Error::GridTooSmall(format!(
                    "spatiotemporal solve with lambda0 > 0 needs at least 3 frames, got {}",
                    grid.n0
                )));
            }
            Ok((0, grid.n0, temporal_bc))
        }
        AssemblyMode::Framewise(t) => {
            if lambda0 != 0.0 {
                return Err(Error::ModeMismatch(format!(
                    "framewise solve requires lambda0 = 0, got {lambda0}"
                )));
            }
            if t >= grid.n0 {
                return Err(Error::DimMismatch(format!("frame {t} out of range 0..{}", grid.n0)));
            }
            Ok((t, 1, false))
        }
    }
}

fn edge_sign(k: usize, n: usize) -> i8 {
    if k == 0 {
        -1
    } else if k + 1 == n {
        1
    } else {
        0
    }
}

pub fn row_kind(grid: &Grid3, t: usize, i: usize, j: usize, temporal_bc: bool) -> RowKind {
    let s1 = edge_sign(i, grid.n1);
    let s2 = edge_sign(j, grid.n2);
    let s0 = edge_sign(t, grid.n0);
    match (s1, s2) {
        (0, 0) if temporal_bc && s0 != 0 => RowKind::TemporalFace { sign: s0 },
        (0, 0) => RowKind::Interior,
        (s, 0) => RowKind::SpatialFace { axis: 1, sign: s },
        (0, s) => RowKind::SpatialFace { axis: 2, sign: s },
        (s1, s2) => RowKind::Corner { s1, s2 },
    }
}

/// Row builder for one gridpoint.
struct Stencil<'a> {
    grid: &'a Grid3,
    t0: usize,
    pos: [usize; 3],
    h: [f64; 3],
    entries: Vec<(usize, f64)>,
}

impl Stencil<'_> {
    fn col(&self, off: [isize; 3], m: usize) -> usize {
        let t = (self.pos[0] as isize + off[0]) as usize;
        let i = (self.pos[1] as isize + off[1]) as usize;
        let j = (self.pos[2] as isize + off[2]) as usize;
        2 * (self.grid.index(t, i, j) - self.grid.index(self.t0, 0, 0)) + m
    }

    fn push(&mut self, off: [isize; 3], m: usize, v: f64) {
        let c = self.col(off, m);
        self.entries.push((c, v));
    }

    fn interior_along(&self, axis: usize) -> bool {
        let n = self.grid.dims()[axis];
        self.pos[axis] > 0 && self.pos[axis] + 1 < n
    }

    fn unit(axis: usize, k: isize) -> [isize; 3] {
        let mut o = [0; 3];
        o[axis] = k;
        o
    }

    /// `coef · ∂_axis w^m`; central where possible, otherwise one-sided inward.
    fn first(&mut self, axis: usize, m: usize, coef: f64, force_one_sided: bool) {
        let h = self.h[axis];
        if !force_one_sided && self.interior_along(axis) {
            self.push(Self::unit(axis, 1), m, coef / (2.0 * h));
            self.push(Self::unit(axis, -1), m, -coef / (2.0 * h));
        } else if self.pos[axis] == 0 {
            self.push(Self::unit(axis, 1), m, coef / h);
            self.push([0; 3], m, -coef / h);
        } else {
            self.push([0; 3], m, coef / h);
            self.push(Self::unit(axis, -1), m, -coef / h);
        }
    }

    fn second(&mut self, nu: usize, sigma: usize, m: usize, coef: f64) -> Result<()> {
        if !self.interior_along(nu) || !self.interior_along(sigma) {
            return Err(Error::GridTooSmall(format!(
                "second derivative along ({nu}, {sigma}) needed at boundary point {:?}",
                self.pos
            )));
        }
        if nu == sigma {
            let h2 = self.h[nu] * self.h[nu];
            self.push(Self::unit(nu, 1), m, coef / h2);
            self.push(Self::unit(nu, -1), m, coef / h2);
            self.push([0; 3], m, -2.0 * coef / h2);
        } else {
            let w = coef / (4.0 * self.h[nu] * self.h[sigma]);
            for (a, b, s) in [(1, 1, 1.0), (1, -1, -1.0), (-1, 1, -1.0), (-1, -1, 1.0)] {
                let mut o = [0; 3];
                o[nu] = a;
                o[sigma] = b;
                self.push(o, m, s * w);
            }
        }
        Ok(())
    }
}

fn axes(framewise: bool) -> std::ops::Range<usize> {
    if framewise {
        1..3
    } else {
        0..3
    }
}

fn interior_rows(st: &mut Stencil, pc: &PointCoefficients, m: usize, framewise: bool) -> Result<f64> {
    for nu in axes(framewise) {
        for sigma in axes(framewise) {
            if sigma < nu {
                continue;
            }
            let coef = if nu == sigma {
                pc.d[nu][nu]
            } else {
                pc.d[nu][sigma] + pc.d[sigma][nu]
            };
            if coef != 0.0 {
                st.second(nu, sigma, m, coef)?;
            }
        }
        for i in 0..2 {
            let coef = pc.c[nu][m][i];
            if coef != 0.0 {
                if !st.interior_along(nu) {
                    return Err(Error::GridTooSmall(format!(
                        "first derivative along {nu} needed at boundary point {:?}",
                        st.pos
                    )));
                }
                st.first(nu, i, coef, false);
            }
        }
    }
    for i in 0..2 {
        st.push([0; 3], i, pc.b[m][i]);
    }
    Ok(pc.a[m])
}

fn face_row(st: &mut Stencil, pc: &PointCoefficients, m: usize, nu: usize, sign: f64, framewise: bool) {
    for sigma in axes(framewise) {
        let coef = sign * pc.q[nu][sigma];
        if coef != 0.0 {
            st.first(sigma, m, coef, sigma == nu);
        }
    }
    for i in 0..2 {
        st.push([0; 3], i, sign * pc.p[nu][m][i]);
    }
}

fn corner_row(st: &mut Stencil, pc: &PointCoefficients, m: usize, s1: i8, s2: i8) {
    let s = [s1 as f64, s2 as f64];
    let a1 = s[0] * pc.q[1][1] + s[1] * pc.q[2][1];
    let a2 = s[0] * pc.q[1][2] + s[1] * pc.q[2][2];
    let beta = 0.5 * (a1 * s[0] + a2 * s[1]);
    let gamma = 0.5 * (a1 * s[0] - a2 * s[1]);
    let h = st.h[1];
    let (o1, o2) = (s1 as isize, s2 as isize);
    // β (w(p) - w(p - s)) / h
    st.push([0; 3], m, beta / h);
    st.push([0, -o1, -o2], m, -beta / h);
    // γ (w(p - s2 e2) - w(p - s1 e1)) / h
    st.push([0, 0, -o2], m, gamma / h);
    st.push([0, -o1, 0], m, -gamma / h);
    for i in 0..2 {
        let r = s[0] * pc.p[1][m][i] + s[1] * pc.p[2][m][i];
        st.push([0; 3], i, r);
    }
}

/// Assemble the linear system for the given mode.
/// Column entries and right-hand side of one row.
type Row = (Vec<(usize, f64)>, f64);

pub fn assemble(coeffs: &ElCoefficients, mode: AssemblyMode) -> Result<SparseSystem> {
    let grid = *coeffs.grid();
    let (t0, nt, temporal_bc) = mode_frames(&grid, coeffs.reg().lambda0, mode)?;
    let framewise = matches!(mode, AssemblyMode::Framewise(_));
    let npts = nt * grid.frame_len();
    let h = grid.spacing();

    let rows: Vec<Result<[Row; 2]>> = (0..npts)
        .into_par_iter()
        .map(|local| {
            let idx = grid.index(t0, 0, 0) + local;
            let (t, i, j) = grid.unindex(idx);
            let pc = coeffs.at(idx);
            let kind = row_kind(&grid, t, i, j, temporal_bc);
            let mut out: [Row; 2] = Default::default();
            for (m, slot) in out.iter_mut().enumerate() {
                let mut st = Stencil {
                    grid: &grid,
                    t0,
                    pos: [t, i, j],
                    h,
                    entries: Vec::with_capacity(24),
                };
                let rhs = match kind {
                    RowKind::Interior => interior_rows(&mut st, pc, m, framewise)?,
                    RowKind::SpatialFace { axis, sign } => {
                        face_row(&mut st, pc, m, axis, sign as f64, framewise);
                        0.0
                    }
                    RowKind::TemporalFace { sign } => {
                        face_row(&mut st, pc, m, 0, sign as f64, false);
                        0.0
                    }
                    RowKind::Corner { s1, s2 } => {
                        corner_row(&mut st, pc, m, s1, s2);
                        0.0
                    }
                };
                *slot = (st.entries, rhs);
            }
            Ok(out)
        })
        .collect();

    let n = 2 * npts;
    let mut row_lists = Vec::with_capacity(n);
    let mut rhs = Vec::with_capacity(n);
    for r in rows {
        for (entries, b) in r? {
            row_lists.push(entries);
            rhs.push(b);
        }
    }
    let matrix = CsrMatrix::from_rows(n, row_lists)?;
    Ok(SparseSystem {
        matrix,
        rhs,
        mode,
        grid,
    })
}

/// Pointwise residual of the discrete equations, evaluated directly from
/// difference quotients of `w` (no matrix). Row order matches [`assemble`].
pub fn el_residual(w: &FrameField, coeffs: &ElCoefficients, mode: AssemblyMode) -> Result<Vec<f64>> {
    let grid = *coeffs.grid();
    grid.same_as(w.grid(), "el_residual")?;
    let (t0, nt, temporal_bc) = mode_frames(&grid, coeffs.reg().lambda0, mode)?;
    let framewise = matches!(mode, AssemblyMode::Framewise(_));
    let [n0, n1, n2] = grid.dims();
    let [h0, h1, h2] = grid.spacing();
    let hs = [h0, h1, h2];

    let val = |t: usize, i: usize, j: usize, m: usize| w.component(m)[grid.index(t, i, j)];

    let mut out = Vec::with_capacity(2 * nt * grid.frame_len());
    for t in t0..t0 + nt {
        for i in 0..n1 {
            for j in 0..n2 {
                let pc = coeffs.at(grid.index(t, i, j));
                let at = |dt: isize, di: isize, dj: isize, m: usize| {
                    val(
                        (t as isize + dt) as usize,
                        (i as isize + di) as usize,
                        (j as isize + dj) as usize,
                        m,
                    )
                };
                let shift = |axis: usize, k: isize| -> (isize, isize, isize) {
                    match axis {
                        0 => (k, 0, 0),
                        1 => (0, k, 0),
                        _ => (0, 0, k),
                    }
                };
                let pos = [t, i, j];
                let lens = [n0, n1, n2];
                let inside = |axis: usize| pos[axis] > 0 && pos[axis] + 1 < lens[axis];
                // first derivative: central if possible (and not forced), else inward one-sided
                let d1 = |axis: usize, m: usize, one_sided: bool| -> f64 {
                    let (a, b, c) = shift(axis, 1);
                    if !one_sided && inside(axis) {
                        (at(a, b, c, m) - at(-a, -b, -c, m)) / (2.0 * hs[axis])
                    } else if pos[axis] == 0 {
                        (at(a, b, c, m) - at(0, 0, 0, m)) / hs[axis]
                    } else {
                        (at(0, 0, 0, m) - at(-a, -b, -c, m)) / hs[axis]
                    }
                };
                let wv = [at(0, 0, 0, 0), at(0, 0, 0, 1)];
                let on_i = i == 0 || i + 1 == n1;
                let on_j = j == 0 || j + 1 == n2;
                let on_t = t == 0 || t + 1 == n0;
                let sgn = |k: usize, n: usize| if k == 0 { -1.0 } else if k + 1 == n { 1.0 } else { 0.0 };
                let first_axis = if framewise { 1 } else { 0 };

                for m in 0..2 {
                    let r = if on_i && on_j {
                        let (s1, s2) = (sgn(i, n1), sgn(j, n2));
                        let (o1, o2) = (s1 as isize, s2 as isize);
                        // outward diagonal flux, diagonal and cross differences
                        let a1 = s1 * pc.q[1][1] + s2 * pc.q[2][1];
                        let a2 = s1 * pc.q[1][2] + s2 * pc.q[2][2];
                        let diag = (at(0, 0, 0, m) - at(0, -o1, -o2, m)) / h1;
                        let cross = (at(0, 0, -o2, m) - at(0, -o1, 0, m)) / h1;
                        let mut r = 0.5 * (a1 * s1 + a2 * s2) * diag + 0.5 * (a1 * s1 - a2 * s2) * cross;
                        for (ii, wi) in wv.iter().enumerate() {
                            r += (s1 * pc.p[1][m][ii] + s2 * pc.p[2][m][ii]) * wi;
                        }
                        r
                    } else if on_i || on_j || (temporal_bc && on_t) {
                        let (nu, s) = if on_i {
                            (1, sgn(i, n1))
                        } else if on_j {
                            (2, sgn(j, n2))
                        } else {
                            (0, sgn(t, n0))
                        };
                        let lo = if nu == 0 { 0 } else { first_axis };
                        let mut r = 0.0;
                        for sigma in lo..3 {
                            if pc.q[nu][sigma] != 0.0 {
                                r += pc.q[nu][sigma] * d1(sigma, m, sigma == nu);
                            }
                        }
                        for (ii, wi) in wv.iter().enumerate() {
                            r += pc.p[nu][m][ii] * wi;
                        }
                        s * r
                    } else {
                        let mut r = -pc.a[m];
                        for nu in first_axis..3 {
                            for sigma in first_axis..3 {
                                let d = pc.d[nu][sigma];
                                if d == 0.0 {
                                    continue;
                                }
                                let (a, b, c) = shift(nu, 1);
                                r += d * if nu == sigma {
                                    (at(a, b, c, m) - 2.0 * at(0, 0, 0, m) + at(-a, -b, -c, m)) / (hs[nu] * hs[nu])
                                } else {
                                    let (e, f, g) = shift(sigma, 1);
                                    (at(a + e, b + f, c + g, m) - at(a - e, b - f, c - g, m)
                                        - at(e - a, f - b, g - c, m)
                                        + at(-a - e, -b - f, -c - g, m))
                                        / (4.0 * hs[nu] * hs[sigma])
                                };
                            }
                            for ii in 0..2 {
                                if pc.c[nu][m][ii] != 0.0 {
                                    r += pc.c[nu][m][ii] * d1(nu, ii, false);
                                }
                            }
                        }
                        for (ii, wi) in wv.iter().enumerate() {
                            r += pc.b[m][ii] * wi;
                        }
                        r
                    };
                    out.push(r);
                }
            }
        }
    }
    Ok(out)
}
