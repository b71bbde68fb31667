//! Restarted GMRES.
//!
//! Arnoldi with modified Gram–Schmidt and Givens rotations. The true residual
//! `‖b − A x‖ / ‖b‖` is recomputed at every restart and decides convergence.
//! Dot products and norms are plain sequential sums, so iterates do not depend
//! on the thread count.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::assembly::SparseSystem;
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preconditioner {
    #[default]
    None,
    /// Right preconditioning with the inverted 2×2 diagonal blocks
    /// (both frame coordinates of one gridpoint). Not part of the plain method.
    BlockJacobi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub rel_tol: f64,
    pub max_iters: usize,
    pub restart: usize,
    /// One extra Gram–Schmidt pass per Arnoldi step.
    pub reorthogonalize: bool,
    pub preconditioner: Preconditioner,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rel_tol: 0.02,
            max_iters: 2000,
            restart: 30,
            reorthogonalize: false,
            preconditioner: Preconditioner::None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol.is_finite() && self.rel_tol > 0.0) {
            return Err(Error::InvalidParameter(format!("rel_tol = {} must be > 0", self.rel_tol)));
        }
        if self.restart < 1 {
            return Err(Error::InvalidParameter("restart must be >= 1".into()));
        }
        if self.max_iters < self.restart {
            return Err(Error::InvalidParameter(format!(
                "max_iters = {} must be >= restart = {}",
                self.max_iters, self.restart
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub rel_residual: f64,
    pub converged: bool,
    /// Arnoldi produced a zero vector before the tolerance was met.
    pub breakdown: bool,
    pub wall_time: Duration,
    /// Per restart cycle: the true relative residual at the start followed by
    /// the rotation estimates after each inner iteration.
    pub cycles: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Inverted 2×2 diagonal blocks; singular blocks fall back to identity.
struct BlockJacobi {
    inv: Vec<[[f64; 2]; 2]>,
}

impl BlockJacobi {
    fn new(a: &CsrMatrix) -> Result<Self> {
        if !a.nrows().is_multiple_of(2) {
            return Err(Error::DimMismatch("block preconditioner needs an even dimension".into()));
        }
        let inv = (0..a.nrows() / 2)
            .map(|p| {
                let (r0, r1) = (2 * p, 2 * p + 1);
                let m = [[a.get(r0, r0), a.get(r0, r1)], [a.get(r1, r0), a.get(r1, r1)]];
                let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
                let scale = m.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
                if det.abs() <= 1e-14 * scale * scale || scale == 0.0 {
                    [[1.0, 0.0], [0.0, 1.0]]
                } else {
                    [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]]
                }
            })
            .collect();
        Ok(BlockJacobi { inv })
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        for (p, b) in self.inv.iter().enumerate() {
            let (a0, a1) = (x[2 * p], x[2 * p + 1]);
            y[2 * p] = b[0][0] * a0 + b[0][1] * a1;
            y[2 * p + 1] = b[1][0] * a0 + b[1][1] * a1;
        }
        y
    }
}

/// Solve an assembled system.
pub fn gmres(system: &SparseSystem, config: &SolverConfig, x0: Option<&[f64]>) -> Result<(Vec<f64>, SolveReport)> {
    gmres_csr(&system.matrix, &system.rhs, config, x0)
}

/// GMRES on a bare matrix and right-hand side.
pub fn gmres_csr(
    a: &CsrMatrix,
    b: &[f64],
    config: &SolverConfig,
    x0: Option<&[f64]>,
) -> Result<(Vec<f64>, SolveReport)> {
    config.validate()?;
    let start = Instant::now();
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::DimMismatch(format!(
            "gmres: matrix {}x{}, rhs {}",
            n,
            a.ncols(),
            b.len()
        )));
    }
    if let Some(k) = b.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue(k));
    }
    let mut x = match x0 {
        Some(x0) if x0.len() != n => {
            return Err(Error::DimMismatch(format!("initial guess has {} entries, expected {n}", x0.len())))
        }
        Some(x0) => x0.to_vec(),
        None => vec![0.0; n],
    };

    let bnorm = norm(b);
    let mut report = SolveReport {
        iterations: 0,
        rel_residual: 0.0,
        converged: true,
        breakdown: false,
        wall_time: Duration::ZERO,
        cycles: Vec::new(),
    };
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        report.wall_time = start.elapsed();
        return Ok((x, report));
    }

    let precond = match config.preconditioner {
        Preconditioner::None => None,
        Preconditioner::BlockJacobi => Some(BlockJacobi::new(a)?),
    };
    let apply_m = |v: &[f64]| match &precond {
        Some(p) => p.apply(v),
        None => v.to_vec(),
    };

    let m = config.restart;
    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    loop {
        a.matvec_into(&x, &mut r)?;
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        let beta = norm(&r);
        let rel = beta / bnorm;
        report.rel_residual = rel;
        report.cycles.push(vec![rel]);
        if rel <= config.rel_tol {
            report.converged = true;
            break;
        }
        if report.iterations >= config.max_iters || report.breakdown {
            report.converged = false;
            break;
        }

        let mut v: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        v.push(r.iter().map(|ri| ri / beta).collect());
        // h[k] is column k of the Hessenberg matrix, length k + 2
        let mut h: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut cs: Vec<f64> = Vec::with_capacity(m);
        let mut sn: Vec<f64> = Vec::with_capacity(m);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;

        let mut k_done = 0;
        for k in 0..m {
            if report.iterations >= config.max_iters {
                break;
            }
            let z = apply_m(&v[k]);
            a.matvec_into(&z, &mut w)?;
            let wnorm0 = norm(&w);
            let mut col = vec![0.0; k + 2];
            let passes = if config.reorthogonalize { 2 } else { 1 };
            for _ in 0..passes {
                for (j, vj) in v.iter().enumerate() {
                    let hij = dot(&w, vj);
                    col[j] += hij;
                    axpy(-hij, vj, &mut w);
                }
            }
            let hnext = norm(&w);
            col[k + 1] = hnext;

            for j in 0..k {
                let t = cs[j] * col[j] + sn[j] * col[j + 1];
                col[j + 1] = -sn[j] * col[j] + cs[j] * col[j + 1];
                col[j] = t;
            }
            let denom = col[k].hypot(col[k + 1]);
            let (c, s) = if denom == 0.0 { (1.0, 0.0) } else { (col[k] / denom, col[k + 1] / denom) };
            cs.push(c);
            sn.push(s);
            col[k] = denom;
            col[k + 1] = 0.0;
            g[k + 1] = -s * g[k];
            g[k] *= c;
            h.push(col);
            report.iterations += 1;
            k_done = k + 1;

            let est = g[k + 1].abs() / bnorm;
            report.cycles.last_mut().expect("cycle started").push(est);

            if hnext <= 1e-14 * wnorm0.max(f64::MIN_POSITIVE) {
                // the Krylov space is invariant; what we have is the best iterate
                if est > config.rel_tol {
                    report.breakdown = true;
                }
                break;
            }
            if est <= config.rel_tol {
                break;
            }
            v.push(w.iter().map(|wi| wi / hnext).collect());
        }

        // back substitution on the rotated triangle
        let mut y = vec![0.0; k_done];
        for i in (0..k_done).rev() {
            let mut s = g[i];
            for j in i + 1..k_done {
                s -= h[j][i] * y[j];
            }
            y[i] = if h[i][i] != 0.0 { s / h[i][i] } else { 0.0 };
        }
        let mut update = vec![0.0; n];
        for (j, yj) in y.iter().enumerate() {
            axpy(*yj, &v[j], &mut update);
        }
        let update = apply_m(&update);
        axpy(1.0, &update, &mut x);
    }
    report.wall_time = start.elapsed();
    Ok((x, report))
}
