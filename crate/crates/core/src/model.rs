//! Grid conventions and the field containers shared by every pipeline stage.
//!
//! All fields are stored row-major with index order `(t, ξ1, ξ2)`, time
//! slowest. Chart coordinates of gridpoint `(t, i, j)` are
//! `(t·h0, i·h1, j·h2)`.

use crate::error::{Error, Result};

/// Discrete spatiotemporal index space with uniform spacings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid3 {
    pub n0: usize,
    pub n1: usize,
    pub n2: usize,
    pub h0: f64,
    pub h1: f64,
    pub h2: f64,
}

impl Grid3 {
    pub fn new(n0: usize, n1: usize, n2: usize, h0: f64, h1: f64, h2: f64) -> Result<Self> {
        if n0 < 2 || n1 < 3 || n2 < 3 {
            return Err(Error::GridTooSmall(format!(
                "need n0 >= 2, n1 >= 3, n2 >= 3; got {n0}x{n1}x{n2}"
            )));
        }
        for h in [h0, h1, h2] {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::InvalidParameter(format!("grid spacing {h} must be positive")));
            }
        }
        if h1 != h2 {
            return Err(Error::InvalidParameter(format!(
                "spatial spacings must agree (h1 = {h1}, h2 = {h2})"
            )));
        }
        Ok(Grid3 { n0, n1, n2, h0, h1, h2 })
    }

    /// Grid on the unit cube with `h_σ = 1/N_σ`. Requires `n1 == n2`.
    pub fn unit_cube(n0: usize, n1: usize, n2: usize) -> Result<Self> {
        Grid3::new(n0, n1, n2, 1.0 / n0 as f64, 1.0 / n1 as f64, 1.0 / n2 as f64)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n0 * self.n1 * self.n2
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn frame_len(&self) -> usize {
        self.n1 * self.n2
    }

    #[inline]
    pub fn index(&self, t: usize, i: usize, j: usize) -> usize {
        t * self.n1 * self.n2 + i * self.n2 + j
    }

    #[inline]
    pub fn unindex(&self, idx: usize) -> (usize, usize, usize) {
        let plane = self.n1 * self.n2;
        (idx / plane, (idx % plane) / self.n2, idx % self.n2)
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        [self.n0, self.n1, self.n2]
    }

    #[inline]
    pub fn spacing(&self) -> [f64; 3] {
        [self.h0, self.h1, self.h2]
    }

    /// Chart coordinates `(t, ξ1, ξ2)` of a gridpoint.
    #[inline]
    pub fn coords(&self, t: usize, i: usize, j: usize) -> [f64; 3] {
        [t as f64 * self.h0, i as f64 * self.h1, j as f64 * self.h2]
    }

    /// Stride of the flat index along axis `a` (0 = t, 1 = ξ1, 2 = ξ2).
    #[inline]
    pub fn stride(&self, a: usize) -> usize {
        match a {
            0 => self.n1 * self.n2,
            1 => self.n2,
            _ => 1,
        }
    }

    pub fn same_as(&self, other: &Grid3, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::DimMismatch(format!("{what}: grids differ ({self:?} vs {other:?})")));
        }
        Ok(())
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(k) => Err(Error::NonFiniteValue(k)),
        None => Ok(()),
    }
}

/// Scalar data sampled on a [`Grid3`], e.g. the intensity `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField3 {
    grid: Grid3,
    values: Vec<f64>,
}

impl ScalarField3 {
    pub fn new(grid: Grid3, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimMismatch(format!(
                "{} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        check_finite(&values)?;
        Ok(ScalarField3 { grid, values })
    }

    pub fn from_fn(grid: Grid3, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        for t in 0..grid.n0 {
            for i in 0..grid.n1 {
                for j in 0..grid.n2 {
                    values.push(f(t, i, j));
                }
            }
        }
        ScalarField3::new(grid, values)
    }

    pub fn zeros(grid: Grid3) -> Self {
        ScalarField3 {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, t: usize, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(t, i, j)]
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.grid.frame_len();
        &self.values[t * n..(t + 1) * n]
    }
}

/// Height of the graph surface `x(t, ξ) = (ξ1, ξ2, z(t, ξ))`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightField(pub ScalarField3);

impl HeightField {
    pub fn new(grid: Grid3, values: Vec<f64>) -> Result<Self> {
        ScalarField3::new(grid, values).map(HeightField)
    }

    pub fn from_fn(grid: Grid3, f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        ScalarField3::from_fn(grid, f).map(HeightField)
    }

    pub fn flat(grid: Grid3) -> Self {
        HeightField(ScalarField3::zeros(grid))
    }
}

impl std::ops::Deref for HeightField {
    type Target = ScalarField3;
    fn deref(&self) -> &ScalarField3 {
        &self.0
    }
}

/// Ambient (x1, x2, x3) vector per gridpoint, stored as three planes.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField3 {
    grid: Grid3,
    comps: [Vec<f64>; 3],
}

impl VectorField3 {
    pub fn new(grid: Grid3, comps: [Vec<f64>; 3]) -> Result<Self> {
        for c in &comps {
            if c.len() != grid.len() {
                return Err(Error::DimMismatch(format!(
                    "vector component of length {} for a grid of {} points",
                    c.len(),
                    grid.len()
                )));
            }
            check_finite(c)?;
        }
        Ok(VectorField3 { grid, comps })
    }

    pub fn zeros(grid: Grid3) -> Self {
        let n = grid.len();
        VectorField3 {
            grid,
            comps: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
        }
    }

    pub fn from_points(grid: Grid3, points: &[[f64; 3]]) -> Result<Self> {
        let mut comps = [
            Vec::with_capacity(points.len()),
            Vec::with_capacity(points.len()),
            Vec::with_capacity(points.len()),
        ];
        for p in points {
            for (c, v) in comps.iter_mut().zip(p) {
                c.push(*v);
            }
        }
        VectorField3::new(grid, comps)
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn component(&self, k: usize) -> &[f64] {
        &self.comps[k]
    }

    #[inline]
    pub fn get(&self, idx: usize) -> [f64; 3] {
        [self.comps[0][idx], self.comps[1][idx], self.comps[2][idx]]
    }

    /// Interleaved `(n0, n1, n2, 3)` layout used for file output.
    pub fn interleaved(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * self.grid.len());
        for idx in 0..self.grid.len() {
            out.extend_from_slice(&self.get(idx));
        }
        out
    }

    pub fn from_interleaved(grid: Grid3, values: &[f64]) -> Result<Self> {
        if values.len() != 3 * grid.len() {
            return Err(Error::DimMismatch(format!(
                "{} values for a 3-vector field on {} points",
                values.len(),
                grid.len()
            )));
        }
        let points: Vec<[f64; 3]> = values.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        VectorField3::from_points(grid, &points)
    }
}

/// Orthonormal-frame coordinates `(w1, w2)` of a tangent field.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameField {
    grid: Grid3,
    w: [Vec<f64>; 2],
}

impl FrameField {
    pub fn new(grid: Grid3, w: [Vec<f64>; 2]) -> Result<Self> {
        for c in &w {
            if c.len() != grid.len() {
                return Err(Error::DimMismatch(format!(
                    "frame component of length {} for a grid of {} points",
                    c.len(),
                    grid.len()
                )));
            }
            check_finite(c)?;
        }
        Ok(FrameField { grid, w })
    }

    pub fn zeros(grid: Grid3) -> Self {
        let n = grid.len();
        FrameField {
            grid,
            w: [vec![0.0; n], vec![0.0; n]],
        }
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn component(&self, m: usize) -> &[f64] {
        &self.w[m]
    }

    #[inline]
    pub fn get(&self, idx: usize) -> [f64; 2] {
        [self.w[0][idx], self.w[1][idx]]
    }

    /// Unknown-vector layout: `w^m` at point `p` lives at `2·p + m`.
    pub fn to_unknowns(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(2 * self.grid.len());
        for idx in 0..self.grid.len() {
            x.push(self.w[0][idx]);
            x.push(self.w[1][idx]);
        }
        x
    }

    pub fn from_unknowns(grid: Grid3, x: &[f64]) -> Result<Self> {
        if x.len() != 2 * grid.len() {
            return Err(Error::DimMismatch(format!(
                "{} unknowns for a grid of {} points",
                x.len(),
                grid.len()
            )));
        }
        let w0 = x.iter().step_by(2).copied().collect();
        let w1 = x.iter().skip(1).step_by(2).copied().collect();
        FrameField::new(grid, [w0, w1])
    }
}

/// Raw 4D intensity data, dims `(n_t, n_x, n_y, n_z)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume4 {
    dims: [usize; 4],
    values: Vec<f64>,
}

impl Volume4 {
    pub fn new(dims: [usize; 4], values: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if values.len() != n {
            return Err(Error::DimMismatch(format!(
                "{} values for volume dims {dims:?}",
                values.len()
            )));
        }
        check_finite(&values)?;
        Ok(Volume4 { dims, values })
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn frame_dims(&self) -> [usize; 3] {
        [self.dims[1], self.dims[2], self.dims[3]]
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.dims[1] * self.dims[2] * self.dims[3];
        &self.values[t * n..(t + 1) * n]
    }

    /// Rescale to `[0, 1]` by the global min and max. A constant volume maps to zero.
    pub fn normalized(&self) -> Volume4 {
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let values = if span > 0.0 {
            self.values.iter().map(|v| (v - lo) / span).collect()
        } else {
            vec![0.0; self.values.len()]
        };
        Volume4 {
            dims: self.dims,
            values,
        }
    }
}
