//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any failed.

#![allow(clippy::needless_range_loop)]

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use evflow::assembly::{assemble, el_residual, AssemblyMode};
use evflow::geometry::{closed_curve_covariant_derivative, FrameOrder, GeometryAtlas, Vec3};
use evflow::kinematics::{frame_coordinates, integrate_trajectories, Integrator};
use evflow::model::{FrameField, Grid3, HeightField, ScalarField3, VectorField3, Volume4};
use evflow::pipeline::{self, solve_flow, FlowParams, PipelineConfig, SolveMode, SynthConfig};
use evflow::render::{colorize, encode_ppm, flow_color, color_wheel, FlowImage};
use evflow::solver::{gmres_csr, Preconditioner, SolverConfig};
use evflow::sparse::CsrMatrix;
use evflow::synth::{generate, Lcg64, SurfaceSpec, SynthSpec, TextureSpec};
use evflow::variational::{
    data_derivatives, el_coefficients, energy_terms, frobenius_regularizer, ofc_residual, ElCoefficients,
    PointCoefficients, RegParams,
};
use evflow::evsf;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg)
    }
}

fn inf_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Solver settings for manufactured-flow recovery. The default tolerance of
/// 0.02 stops far short of the minimiser on these fixtures.
fn recovery_solver() -> SolverConfig {
    SolverConfig {
        rel_tol: 1e-5,
        max_iters: 20000,
        restart: 100,
        reorthogonalize: false,
        preconditioner: Preconditioner::BlockJacobi,
    }
}

fn blob_spec(surface: SurfaceSpec) -> SynthSpec {
    SynthSpec {
        surface,
        motion: [0.2, 0.1],
        texture: TextureSpec::GaussianBlobs { count: 12, width: 0.05, seed: 7 },
        noise: None,
    }
}

/// Relative RMS of `u - u_true` over the central 80% of the chart, all frames.
fn interior_rel_rms(u: &VectorField3, u_true: &VectorField3) -> f64 {
    let g = *u.grid();
    let (lo1, hi1) = (g.n1 / 10, g.n1 - g.n1 / 10);
    let (lo2, hi2) = (g.n2 / 10, g.n2 - g.n2 / 10);
    let (mut num, mut den) = (0.0, 0.0);
    for t in 0..g.n0 {
        for i in lo1..hi1 {
            for j in lo2..hi2 {
                let k = g.index(t, i, j);
                let (a, b) = (u.get(k), u_true.get(k));
                for c in 0..3 {
                    num += (a[c] - b[c]).powi(2);
                    den += b[c] * b[c];
                }
            }
        }
    }
    (num / den).sqrt()
}

// 1 ---------------------------------------------------------------------------

/// Banded Gaussian elimination without pivoting.
fn band_solve(a: &CsrMatrix, b: &[f64]) -> Vec<f64> {
    let n = a.nrows();
    let mut k = 0usize;
    for r in 0..n {
        for (c, _) in a.row(r) {
            k = k.max(r.abs_diff(c));
        }
    }
    let w = 2 * k + 1;
    let mut band = vec![0.0; n * w];
    let at = |r: usize, c: usize| r * w + (c + k - r);
    for r in 0..n {
        for (c, v) in a.row(r) {
            band[at(r, c)] = v;
        }
    }
    let mut x = b.to_vec();
    for p in 0..n {
        let piv = band[at(p, p)];
        for r in p + 1..(p + k + 1).min(n) {
            let l = band[at(r, p)] / piv;
            if l == 0.0 {
                continue;
            }
            for c in p..(p + k + 1).min(n) {
                band[at(r, c)] -= l * band[at(p, c)];
            }
            x[r] -= l * x[p];
        }
    }
    for p in (0..n).rev() {
        let mut s = x[p];
        for c in p + 1..(p + k + 1).min(n) {
            s -= band[at(p, c)] * x[c];
        }
        x[p] = s / band[at(p, p)];
    }
    x
}

/// Classical Horn-Schunck system for one frame of planar data, written from
/// scratch: `(f·w + f_t) ∇f − λ Δw = 0` with five-point Laplacian and
/// `∂_n w = 0` imposed one-sided against the inward (diagonal at corners)
/// neighbour, scaled by `λ/h`.
fn horn_schunck_rows(f: &[Vec<Vec<f64>>], h: [f64; 3], lambda: f64) -> (Vec<Vec<(usize, f64)>>, Vec<f64>) {
    let (n1, n2) = (f[0].len(), f[0][0].len());
    let d = |a: usize, n: usize, hh: f64, get: &dyn Fn(usize) -> f64| -> f64 {
        if a == 0 {
            (get(1) - get(0)) / hh
        } else if a + 1 == n {
            (get(a) - get(a - 1)) / hh
        } else {
            (get(a + 1) - get(a - 1)) / (2.0 * hh)
        }
    };
    let col = |i: usize, j: usize, m: usize| 2 * (i * n2 + j) + m;
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for i in 0..n1 {
        for j in 0..n2 {
            let fx = d(i, n1, h[1], &|a| f[0][a][j]);
            let fy = d(j, n2, h[2], &|a| f[0][i][a]);
            let ft = (f[1][i][j] - f[0][i][j]) / h[0];
            let grad = [fx, fy];
            let edge = |a: usize, n: usize| -> isize {
                if a == 0 {
                    -1
                } else if a + 1 == n {
                    1
                } else {
                    0
                }
            };
            let (s1, s2) = (edge(i, n1), edge(j, n2));
            for m in 0..2 {
                let mut row = Vec::new();
                if s1 != 0 || s2 != 0 {
                    let ii = (i as isize - s1) as usize;
                    let jj = (j as isize - s2) as usize;
                    row.push((col(i, j, m), lambda / h[1]));
                    row.push((col(ii, jj, m), -lambda / h[1]));
                    rhs.push(0.0);
                } else {
                    let c = lambda / (h[1] * h[1]);
                    for (ii, jj) in [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)] {
                        row.push((col(ii, jj, m), -c));
                    }
                    for (q, gq) in grad.iter().enumerate() {
                        let diag = if q == m { 4.0 * c } else { 0.0 };
                        row.push((col(i, j, q), diag + grad[m] * gq));
                    }
                    rhs.push(-ft * grad[m]);
                }
                row.retain(|e| e.1 != 0.0);
                row.sort_by_key(|e| e.0);
                rows.push(row);
            }
        }
    }
    (rows, rhs)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let g = Grid3::unit_cube(2, 64, 64).map_err(|e| e.to_string())?;
    let lambda = 0.05;
    let texture = |t: f64, x: f64, y: f64| {
        let (x, y) = (x - 0.03 * t, y - 0.02 * t);
        0.5 + 0.3 * (7.0 * x + 1.0).sin() * (5.0 * y).cos() + 0.2 * (x * y * 9.0).sin()
    };
    let f = ScalarField3::from_fn(g, |t, i, j| {
        let [t, x, y] = g.coords(t, i, j);
        texture(t, x, y)
    })
    .map_err(|e| e.to_string())?;
    let raw: Vec<Vec<Vec<f64>>> = (0..2)
        .map(|t| (0..64).map(|i| (0..64).map(|j| f.at(t, i, j)).collect()).collect())
        .collect();
    let (rows, rhs) = horn_schunck_rows(&raw, g.spacing(), lambda);

    let atlas = GeometryAtlas::build(&HeightField::flat(g)).map_err(|e| e.to_string())?;
    let reg = RegParams::new(0.0, lambda).map_err(|e| e.to_string())?;
    let coeffs = el_coefficients(&atlas, &data_derivatives(&f), reg).map_err(|e| e.to_string())?;
    let sys = assemble(&coeffs, AssemblyMode::Framewise(0)).map_err(|e| e.to_string())?;

    ensure(sys.len() == rows.len(), format!("{} rows vs {} oracle rows", sys.len(), rows.len()))?;
    let mut worst: f64 = 0.0;
    for (r, orow) in rows.iter().enumerate() {
        let lib: Vec<(usize, f64)> = sys.matrix.row(r).collect();
        let mut cols: Vec<usize> = lib.iter().chain(orow).map(|e| e.0).collect();
        cols.sort_unstable();
        cols.dedup();
        for c in cols {
            let a = sys.matrix.get(r, c);
            let b = orow.iter().find(|e| e.0 == c).map_or(0.0, |e| e.1);
            worst = worst.max((a - b).abs() / a.abs().max(1.0));
        }
        worst = worst.max((sys.rhs[r] - rhs[r]).abs() / rhs[r].abs().max(1.0));
    }
    ensure(worst <= 1e-14, format!("matrix/rhs entries differ by {worst:.3e}"))?;

    let oracle = CsrMatrix::from_rows(rows.len(), rows).map_err(|e| e.to_string())?;
    let x_ref = band_solve(&oracle, &rhs);
    let solver = SolverConfig {
        rel_tol: 1e-13,
        max_iters: 20000,
        restart: 100,
        reorthogonalize: true,
        preconditioner: Preconditioner::BlockJacobi,
    };
    let params = FlowParams::new(reg, SolveMode::Framewise, solver);
    let res = solve_flow(&HeightField::flat(g), &f, &params).map_err(|e| e.to_string())?;
    let x = res.w.to_unknowns();
    let diff = inf_norm_diff(&x[..x_ref.len()], &x_ref);
    ensure(diff <= 1e-8, format!("solutions differ by {diff:.3e}"))?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 10.0, format!("took {secs:.1} s"))?;
    Ok(format!(
        "entries agree to {worst:.1e} (relative), solutions to {diff:.1e}, {secs:.1} s"
    ))
}

// 2, 3 ------------------------------------------------------------------------

fn recovery(surface: SurfaceSpec) -> Result<(f64, f64, f64, f64), String> {
    let start = Instant::now();
    let g = Grid3::unit_cube(16, 64, 64).map_err(|e| e.to_string())?;
    let syn = generate(&blob_spec(surface), g).map_err(|e| e.to_string())?;
    let reg = RegParams::new(5e-4, 5e-3).map_err(|e| e.to_string())?;
    let params = FlowParams::new(reg, SolveMode::Spatiotemporal, recovery_solver());
    let res = solve_flow(&syn.z, &syn.f, &params).map_err(|e| e.to_string())?;
    ensure(res.converged(), format!("solver stopped at {:.2e}", res.rel_residual()))?;
    let err = interior_rel_rms(&res.u, &syn.u_true);
    let df = data_derivatives(&syn.f);
    let l2 = |v: Vec<f64>| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let r_flow = l2(ofc_residual(&res.w, &res.atlas, &df));
    let r_zero = l2(ofc_residual(&FrameField::zeros(g), &res.atlas, &df));
    Ok((err, r_flow / r_zero, start.elapsed().as_secs_f64(), res.iterations() as f64))
}

fn criterion_2() -> Outcome {
    let (err, _, secs, iters) = recovery(SurfaceSpec::Flat)?;
    ensure(err <= 0.10, format!("relative RMS error {:.1}%", 100.0 * err))?;
    ensure(secs < 120.0, format!("took {secs:.1} s"))?;
    Ok(format!("relative RMS error {:.2}%, {iters} iterations, {secs:.1} s", 100.0 * err))
}

fn criterion_3() -> Outcome {
    let (err, ratio, secs, iters) = recovery(SurfaceSpec::Bump { amplitude: 0.2, width: 0.2 })?;
    ensure(ratio <= 0.25, format!("residual ratio {ratio:.3}"))?;
    ensure(err <= 0.15, format!("relative RMS error {:.1}%", 100.0 * err))?;
    Ok(format!(
        "residual ratio {ratio:.3}, relative RMS error {:.2}%, {iters} iterations, {secs:.1} s",
        100.0 * err
    ))
}

// 4 ---------------------------------------------------------------------------

/// Closed-form derivatives of a height function at a point.
struct Jet {
    z1: f64,
    z2: f64,
    zt: f64,
    z11: f64,
    z12: f64,
    z22: f64,
    zt1: f64,
    zt2: f64,
}

struct Surface {
    name: &'static str,
    z: fn(f64, f64, f64) -> f64,
    jet: fn(f64, f64, f64) -> Jet,
}

fn wave_z(t: f64, x: f64, y: f64) -> f64 {
    0.3 * (2.0 * x + t).sin() * (1.5 * y).cos() + 0.2 * x * y
}

fn wave_jet(t: f64, x: f64, y: f64) -> Jet {
    let (s, c) = (2.0 * x + t).sin_cos();
    let (sy, cy) = (1.5 * y).sin_cos();
    let a = 0.3;
    Jet {
        z1: 2.0 * a * c * cy + 0.2 * y,
        z2: -1.5 * a * s * sy + 0.2 * x,
        zt: a * c * cy,
        z11: -4.0 * a * s * cy,
        z12: -3.0 * a * c * sy + 0.2,
        z22: -2.25 * a * s * cy,
        zt1: -2.0 * a * s * cy,
        zt2: -1.5 * a * c * sy,
    }
}

const BUMP_S2: f64 = 0.09;

fn bump_z(t: f64, x: f64, y: f64) -> f64 {
    let (bx, by) = (x - 0.4 - 0.2 * t, y - 0.5);
    0.25 * (-(bx * bx + by * by) / (2.0 * BUMP_S2)).exp()
}

fn bump_jet(t: f64, x: f64, y: f64) -> Jet {
    let (bx, by) = (x - 0.4 - 0.2 * t, y - 0.5);
    let e = bump_z(t, x, y);
    let s2 = BUMP_S2;
    let z1 = -bx / s2 * e;
    let z11 = (bx * bx / (s2 * s2) - 1.0 / s2) * e;
    let z12 = bx * by / (s2 * s2) * e;
    Jet {
        z1,
        z2: -by / s2 * e,
        zt: -0.2 * z1,
        z11,
        z12,
        z22: (by * by / (s2 * s2) - 1.0 / s2) * e,
        zt1: -0.2 * z11,
        zt2: -0.2 * z12,
    }
}

/// Max errors of (Γ^j_ik, Γ^j_0i, G_ν, V) over the region `[¼, ¾]³`.
fn geometry_errors(s: &Surface, n: usize) -> Result<[f64; 4], String> {
    let g = Grid3::unit_cube(n, n, n).map_err(|e| e.to_string())?;
    let z = HeightField::from_fn(g, |t, i, j| {
        let [t, x, y] = g.coords(t, i, j);
        (s.z)(t, x, y)
    })
    .map_err(|e| e.to_string())?;
    let atlas = GeometryAtlas::build(&z).map_err(|e| e.to_string())?;
    let mut err = [0.0f64; 4];
    let inside = |k: usize| 4 * k >= n && 4 * k <= 3 * n;
    for idx in 0..g.len() {
        let (t, i, j) = g.unindex(idx);
        if !(inside(t) && inside(i) && inside(j)) {
            continue;
        }
        let [tc, x, y] = g.coords(t, i, j);
        let q = (s.jet)(tc, x, y);
        let w = 1.0 + q.z1 * q.z1 + q.z2 * q.z2;
        let grad = [q.z1, q.z2];
        let hess = [[q.z11, q.z12], [q.z12, q.z22]];
        let zti = [q.zt1, q.zt2];
        let p = atlas.at(idx);
        for jj in 0..2 {
            for ii in 0..2 {
                for kk in 0..2 {
                    let exact = grad[jj] * hess[ii][kk] / w;
                    err[0] = err[0].max((p.gamma[jj][ii][kk] - exact).abs());
                }
                err[1] = err[1].max((p.gamma0[jj][ii] - grad[jj] * zti[ii] / w).abs());
            }
        }
        let dnu = [
            q.z1 * q.zt1 + q.z2 * q.zt2,
            q.z1 * q.z11 + q.z2 * q.z12,
            q.z1 * q.z12 + q.z2 * q.z22,
        ];
        for (nu, dn) in dnu.iter().enumerate() {
            err[2] = err[2].max((p.big_g[nu] - dn / (2.0 * w)).abs());
        }
        let v = [0.0, 0.0, q.zt];
        for c in 0..3 {
            err[3] = err[3].max((p.v[c] - v[c]).abs());
        }
    }
    Ok(err)
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let surfaces = [
        Surface { name: "wave", z: wave_z, jet: wave_jet },
        Surface { name: "moving bump", z: bump_z, jet: bump_jet },
    ];
    let names = ["christoffel", "time symbols", "G", "V"];
    let mut summary = Vec::new();
    for s in &surfaces {
        let e: Vec<[f64; 4]> = [16, 32, 64]
            .iter()
            .map(|&n| geometry_errors(s, n))
            .collect::<Result<_, _>>()?;
        let mut min_order = f64::INFINITY;
        for q in 0..4 {
            for w in e.windows(2) {
                let order = (w[0][q] / w[1][q]).log2();
                ensure(
                    order >= 1.9,
                    format!("{} {}: order {order:.2} ({:.2e} -> {:.2e})", s.name, names[q], w[0][q], w[1][q]),
                )?;
                min_order = min_order.min(order);
            }
        }
        summary.push(format!("{} min order {min_order:.2}", s.name));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 30.0, format!("took {secs:.1} s"))?;
    Ok(format!("{}, {secs:.1} s", summary.join(", ")))
}

// 5 ---------------------------------------------------------------------------

fn criterion_5() -> Outcome {
    let n = 360;
    let c = 0.7;
    let h = std::f64::consts::TAU / n as f64;
    let x: Vec<Vec3> = (0..n).map(|k| [(k as f64 * h).cos(), (k as f64 * h).sin(), 0.0]).collect();
    let u: Vec<Vec3> = (0..n).map(|k| [-c * (k as f64 * h).sin(), c * (k as f64 * h).cos(), 0.0]).collect();
    let d = closed_curve_covariant_derivative(&x, &u, h).map_err(|e| e.to_string())?;
    let worst = d.iter().map(|v| v[0].hypot(v[1]).hypot(v[2])).fold(0.0, f64::max);
    ensure(worst < 1e-10, format!("max |covariant derivative| {worst:.3e}"))?;
    Ok(format!("max |covariant derivative| {worst:.1e} (ambient derivative has norm {c})"))
}

// 6 ---------------------------------------------------------------------------

fn criterion_6() -> Outcome {
    let g = Grid3::unit_cube(4, 32, 32).map_err(|e| e.to_string())?;
    let z = HeightField::from_fn(g, |t, i, j| {
        let [t, x, y] = g.coords(t, i, j);
        3.0 * wave_z(t, x, y)
    })
    .map_err(|e| e.to_string())?;
    let a1 = GeometryAtlas::build_with_frame(&z, FrameOrder::FirstAxis).map_err(|e| e.to_string())?;
    let a2 = GeometryAtlas::build_with_frame(&z, FrameOrder::SecondAxis).map_err(|e| e.to_string())?;
    let spread = (0..g.len())
        .map(|k| {
            let (e, f) = (a1.at(k).frame_vector(0), a2.at(k).frame_vector(0));
            (0..3).map(|c| (e[c] - f[c]).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    ensure(spread > 0.1, format!("frames nearly coincide ({spread:.2e})"))?;

    let df = data_derivatives(&ScalarField3::zeros(g));
    let reg = RegParams::new(0.0, 1.0).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    let mut frame_coord_gap: f64 = 0.0;
    for seed in 1..=5u64 {
        let mut rng = Lcg64::new(seed);
        let pts: Vec<Vec3> = (0..g.len())
            .map(|k| {
                let (c1, c2) = (rng.uniform() - 0.5, rng.uniform() - 0.5);
                let p = a1.at(k);
                [0, 1, 2].map(|q| c1 * p.dx[0][q] + c2 * p.dx[1][q])
            })
            .collect();
        let u = VectorField3::from_points(g, &pts).map_err(|e| e.to_string())?;
        let r1 = frobenius_regularizer(&u, &a1, 1.0).map_err(|e| e.to_string())?;
        let r2 = frobenius_regularizer(&u, &a2, 1.0).map_err(|e| e.to_string())?;
        worst = worst.max((r1 - r2).abs() / r1);

        let w1 = frame_coordinates(&u, &a1).map_err(|e| e.to_string())?;
        let w2 = frame_coordinates(&u, &a2).map_err(|e| e.to_string())?;
        let e1 = energy_terms(&w1, &a1, &df, reg).map_err(|e| e.to_string())?.regularizer;
        let e2 = energy_terms(&w2, &a2, &df, reg).map_err(|e| e.to_string())?.regularizer;
        frame_coord_gap = frame_coord_gap.max((e1 - e2).abs() / e1);
    }
    ensure(worst <= 1e-8, format!("relative difference {worst:.3e}"))?;
    Ok(format!(
        "Frobenius regulariser differs by {worst:.1e} relative; frame-coordinate discretisation by {frame_coord_gap:.1e} (O(h^2))"
    ))
}

// 7 ---------------------------------------------------------------------------

fn random_coefficients(rng: &mut Lcg64, grid: Grid3, time_terms: bool) -> Vec<PointCoefficients> {
    let mut r = || 2.0 * rng.uniform() - 1.0;
    (0..grid.len())
        .map(|_| {
            let mut pc = PointCoefficients::default();
            for m in 0..2 {
                pc.a[m] = r();
                for i in 0..2 {
                    pc.b[m][i] = r();
                }
            }
            let first = if time_terms { 0 } else { 1 };
            for nu in first..3 {
                for m in 0..2 {
                    for i in 0..2 {
                        pc.c[nu][m][i] = r();
                        pc.p[nu][m][i] = r();
                    }
                }
                for s in first..3 {
                    pc.d[nu][s] = r();
                    pc.q[nu][s] = r();
                }
            }
            pc
        })
        .collect()
}

fn criterion_7() -> Outcome {
    let mut rng = Lcg64::new(2024);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for n0 in 2..=4 {
        for n1 in 3..=6 {
            for n2 in 3..=6 {
                let g = Grid3::new(n0, n1, n2, 0.3, 0.2, 0.2).map_err(|e| e.to_string())?;
                let mut setups = vec![(0.0, AssemblyMode::Spatiotemporal)];
                if n0 >= 3 {
                    setups.push((0.4, AssemblyMode::Spatiotemporal));
                }
                setups.extend((0..n0).map(|t| (0.0, AssemblyMode::Framewise(t))));
                for (l0, mode) in setups {
                    let pts = random_coefficients(&mut rng, g, l0 > 0.0);
                    let reg = RegParams::new(l0, 0.7).map_err(|e| e.to_string())?;
                    let co = ElCoefficients::from_points(g, reg, pts).map_err(|e| e.to_string())?;
                    let sys = assemble(&co, mode).map_err(|e| format!("{mode:?} on {g:?}: {e}"))?;
                    let w = FrameField::new(
                        g,
                        [
                            (0..g.len()).map(|_| rng.uniform() - 0.5).collect(),
                            (0..g.len()).map(|_| rng.uniform() - 0.5).collect(),
                        ],
                    )
                    .map_err(|e| e.to_string())?;
                    let x = match mode {
                        AssemblyMode::Spatiotemporal => w.to_unknowns(),
                        AssemblyMode::Framewise(t) => {
                            let s = 2 * t * g.frame_len();
                            w.to_unknowns()[s..s + 2 * g.frame_len()].to_vec()
                        }
                    };
                    let sparse = sys.residual(&x).map_err(|e| e.to_string())?;
                    let dense = el_residual(&w, &co, mode).map_err(|e| e.to_string())?;
                    ensure(sparse.len() == dense.len(), format!("{mode:?}: length mismatch"))?;
                    for (r, (a, b)) in sparse.iter().zip(&dense).enumerate() {
                        let scale: f64 =
                            sys.matrix.row(r).map(|(c, v)| (v * x[c]).abs()).sum::<f64>() + sys.rhs[r].abs();
                        worst = worst.max((a - b).abs() / scale.max(1.0));
                    }
                    cases += 1;
                }
            }
        }
    }
    ensure(worst <= 1e-14, format!("max difference {worst:.3e}"))?;
    Ok(format!("{cases} grid/mode cases, max difference {worst:.1e}"))
}

// 8 ---------------------------------------------------------------------------

fn dense_lu_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, p);
        b.swap(k, p);
        for r in k + 1..n {
            let l = a[r][k] / a[k][k];
            if l != 0.0 {
                for c in k..n {
                    a[r][c] -= l * a[k][c];
                }
                b[r] -= l * b[k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|c| a[k][c] * x[c]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    x
}

fn criterion_8() -> Outcome {
    let n = 200;
    let config = SolverConfig { rel_tol: 1e-10, ..SolverConfig::default() };
    let mut worst: f64 = 0.0;
    let mut max_iters = 0;
    for seed in 1..=5u64 {
        let mut rng = Lcg64::new(seed);
        let mut rows = Vec::with_capacity(n);
        for r in 0..n {
            let mut row = Vec::new();
            let mut off = 0.0;
            for _ in 0..6 {
                let c = (rng.next_u64() % n as u64) as usize;
                if c != r {
                    let v = 2.0 * rng.uniform() - 1.0;
                    off += v.abs();
                    row.push((c, v));
                }
            }
            row.push((r, off + 0.5 + rng.uniform()));
            rows.push(row);
        }
        let a = CsrMatrix::from_rows(n, rows).map_err(|e| e.to_string())?;
        let b: Vec<f64> = (0..n).map(|_| rng.uniform() - 0.5).collect();
        let (x, rep) = gmres_csr(&a, &b, &config, None).map_err(|e| e.to_string())?;
        ensure(rep.converged, format!("seed {seed}: not converged ({:.2e})", rep.rel_residual))?;
        for (c, cyc) in rep.cycles.iter().enumerate() {
            ensure(
                cyc.windows(2).all(|w| w[1] <= w[0]),
                format!("seed {seed}: residual increased inside cycle {c}"),
            )?;
        }
        let x_ref = dense_lu_solve(a.to_dense(), b);
        worst = worst.max(inf_norm_diff(&x, &x_ref));
        max_iters = max_iters.max(rep.iterations);
    }
    ensure(worst <= 1e-8, format!("max difference to LU {worst:.3e}"))?;

    let d = PipelineConfig::default().solver;
    ensure(
        (d.rel_tol, d.max_iters, d.restart) == (0.02, 2000, 30),
        format!("defaults are {}/{}/{}", d.rel_tol, d.max_iters, d.restart),
    )?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let g = Grid3::unit_cube(3, 16, 16).map_err(|e| e.to_string())?;
    let syn = generate(&blob_spec(SurfaceSpec::Flat), g).map_err(|e| e.to_string())?;
    let (zp, fp) = (dir.path().join("z.evsf"), dir.path().join("f.evsf"));
    evsf::write_scalar(&zp, &syn.z).map_err(|e| e.to_string())?;
    evsf::write_scalar(&fp, &syn.f).map_err(|e| e.to_string())?;
    let config = PipelineConfig { z: Some(zp), f: Some(fp), out: dir.path().join("out"), ..Default::default() };
    let outcome = pipeline::run_flow(&config).map_err(|e| e.to_string())?;
    let text = fs::read_to_string(dir.path().join("out/report.json")).map_err(|e| e.to_string())?;
    let report: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let s = &report["solver"];
    ensure(
        s["rel_tol"] == 0.02 && s["max_iters"] == 2000 && s["restart"] == 30,
        format!("report records solver {s}"),
    )?;
    ensure(outcome.report.rel_residual <= 0.02, "default run missed its tolerance".into())?;
    Ok(format!(
        "5 systems, max difference to LU {worst:.1e}, up to {max_iters} iterations; defaults 0.02/2000/30 recorded"
    ))
}

// 9 ---------------------------------------------------------------------------

fn criterion_9() -> Outcome {
    let g = Grid3::unit_cube(16, 64, 64).map_err(|e| e.to_string())?;
    let syn = generate(&blob_spec(SurfaceSpec::Flat), g).map_err(|e| e.to_string())?;
    // at λ1 = 5e-3 this fixture turns a 1e-8 residual into ~7e-6 forward error
    let lambda1 = 0.05;
    let reg = RegParams::new(0.0, lambda1).map_err(|e| e.to_string())?;
    let solver = SolverConfig { rel_tol: 1e-8, ..recovery_solver() };
    let st = solve_flow(&syn.z, &syn.f, &FlowParams::new(reg, SolveMode::Spatiotemporal, solver))
        .map_err(|e| e.to_string())?;
    let fw = solve_flow(&syn.z, &syn.f, &FlowParams::new(reg, SolveMode::Framewise, solver))
        .map_err(|e| e.to_string())?;
    ensure(st.converged() && fw.converged(), "a solve did not converge".into())?;
    let diff = inf_norm_diff(&st.w.to_unknowns(), &fw.w.to_unknowns());
    ensure(diff <= 1e-6, format!("solutions differ by {diff:.3e}"))?;
    Ok(format!("max difference {diff:.1e} over {} frames (lambda1 = {lambda1})", g.n0))
}

// 10 --------------------------------------------------------------------------

fn criterion_10() -> Outcome {
    let s = 10.0;
    let g = Grid3::new(11, 65, 65, 1.0, 1.0 / 64.0, 1.0 / 64.0).map_err(|e| e.to_string())?;
    let z = HeightField::flat(g);
    let v = [0.003, -0.002, 0.0];
    let m = VectorField3::from_points(g, &vec![v; g.len()]).map_err(|e| e.to_string())?;
    let seeds = [[0.2, 0.7], [0.5, 0.5], [0.31, 0.62]];
    let trs = integrate_trajectories(&m, &z, &seeds, 0, 10, s, Integrator::Euler).map_err(|e| e.to_string())?;
    let mut line_err: f64 = 0.0;
    for (tr, seed) in trs.iter().zip(&seeds) {
        ensure(tr.samples.len() == 11 && !tr.exited, "constant-field trajectory truncated".into())?;
        for (k, smp) in tr.samples.iter().enumerate() {
            let exact = [seed[0] + k as f64 * s * v[0], seed[1] + k as f64 * s * v[1], 0.0];
            line_err = line_err.max(inf_norm_diff(&smp.x, &exact));
        }
    }
    ensure(line_err <= 1e-14, format!("straight-line error {line_err:.3e}"))?;

    let omega = 0.01;
    let gr = Grid3::new(6, 41, 41, 1.0, 0.05, 0.05).map_err(|e| e.to_string())?;
    let pts: Vec<Vec3> = (0..gr.len())
        .map(|k| {
            let (_, i, j) = gr.unindex(k);
            let (x, y) = (i as f64 * 0.05, j as f64 * 0.05);
            [-omega * y, omega * x, 0.0]
        })
        .collect();
    let rot = VectorField3::from_points(gr, &pts).map_err(|e| e.to_string())?;
    let trs = integrate_trajectories(&rot, &HeightField::flat(gr), &[[1.2, 0.3], [0.9, 0.8]], 0, 5, s, Integrator::Euler)
        .map_err(|e| e.to_string())?;
    let factor = (1.0 + (s * omega).powi(2)).sqrt();
    let mut growth_err: f64 = 0.0;
    for tr in &trs {
        ensure(tr.samples.len() == 6, "rotation trajectory truncated".into())?;
        for p in tr.samples.windows(2) {
            let r = |x: Vec3| x[0].hypot(x[1]);
            growth_err = growth_err.max((r(p[1].x) / r(p[0].x) - factor).abs());
        }
    }
    ensure(growth_err <= 1e-12, format!("growth factor error {growth_err:.3e}"))?;
    Ok(format!("straight lines exact to {line_err:.1e}, growth factor error {growth_err:.1e}"))
}

// 11 --------------------------------------------------------------------------

fn plane_volume() -> Volume4 {
    let (nt, nx, ny, nz) = (3, 24, 24, 12);
    let mut values = vec![0.0; nt * nx * ny * nz];
    for t in 0..nt {
        let height = 5.0 + 0.5 * t as f64;
        for cx in (3..nx).step_by(5) {
            for cy in (3..ny).step_by(5) {
                let (px, py) = (cx as f64 + 0.3 * t as f64, cy as f64);
                for x in 0..nx {
                    for y in 0..ny {
                        for zz in 0..nz {
                            let d2 = (x as f64 - px).powi(2) + (y as f64 - py).powi(2) + (zz as f64 - height).powi(2);
                            values[((t * nx + x) * ny + y) * nz + zz] += (-d2 / 2.0).exp();
                        }
                    }
                }
            }
        }
    }
    Volume4::new([nt, nx, ny, nz], values).expect("finite fixture")
}

fn run_all_stages(root: &Path, threads: usize) -> Result<(), String> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| e.to_string())?;
    pool.install(|| -> Result<(), String> {
        let e = |e: pipeline::StageError| e.to_string();
        let vol_path = root.join("volume.evsf");
        evsf::write_volume(&vol_path, &plane_volume()).map_err(|e| e.to_string())?;
        let mut cfg = PipelineConfig {
            volume: Some(vol_path),
            grid: [16, 16],
            preprocess: evflow::preprocess::PreprocessConfig { sigma: [1.0; 3], ..Default::default() },
            out: root.join("pre"),
            ..Default::default()
        };
        pipeline::run_preprocess(&cfg).map_err(e)?;

        cfg.synth = Some(SynthConfig {
            spec: blob_spec(SurfaceSpec::Bump { amplitude: 0.2, width: 0.2 }),
            dims: [4, 24, 24],
        });
        cfg.out = root.join("syn");
        pipeline::run_synth(&cfg).map_err(e)?;

        cfg.z = Some(root.join("syn/z.evsf"));
        cfg.f = Some(root.join("syn/f.evsf"));
        cfg.out = root.join("flow");
        pipeline::run_flow(&cfg).map_err(e)?;

        cfg.m = Some(root.join("flow/m.evsf"));
        cfg.trajectories.threshold = 0.3;
        cfg.out = root.join("traj");
        pipeline::run_trajectories(&cfg).map_err(e)?;

        cfg.u = Some(root.join("flow/u.evsf"));
        cfg.out = root.join("render");
        pipeline::run_render(&cfg).map_err(e)?;
        Ok(())
    })
}

fn collect_files(dir: &Path, base: &Path, out: &mut Vec<(String, Vec<u8>)>) -> Result<(), String> {
    let mut entries: Vec<_> = fs::read_dir(dir).map_err(|e| e.to_string())?.filter_map(|e| e.ok()).collect();
    entries.sort_by_key(|e| e.path());
    for entry in entries {
        let p = entry.path();
        if p.is_dir() {
            collect_files(&p, base, out)?;
        } else {
            let name = p.strip_prefix(base).unwrap().display().to_string();
            // wall-clock fields differ between runs by design
            if name.ends_with("report.json") {
                continue;
            }
            out.push((name, fs::read(&p).map_err(|e| e.to_string())?));
        }
    }
    Ok(())
}

fn criterion_11() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let c = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_all_stages(a.path(), 1)?;
    run_all_stages(b.path(), 4)?;
    run_all_stages(c.path(), 4)?;
    let (mut fa, mut fb, mut fc) = (Vec::new(), Vec::new(), Vec::new());
    collect_files(a.path(), a.path(), &mut fa)?;
    collect_files(b.path(), b.path(), &mut fb)?;
    collect_files(c.path(), c.path(), &mut fc)?;
    ensure(fa.len() == fb.len() && fb.len() == fc.len(), "different artifact sets".into())?;
    for ((x, y), z) in fa.iter().zip(&fb).zip(&fc) {
        ensure(x.0 == y.0 && y.0 == z.0, format!("artifact names differ: {} / {}", x.0, y.0))?;
        ensure(x.1 == y.1 && y.1 == z.1, format!("{} differs between runs", x.0))?;
    }
    let kinds = ["evsf", "ppm", "csv"];
    for k in kinds {
        ensure(fa.iter().any(|f| f.0.ends_with(k)), format!("no .{k} artifact produced"))?;
    }
    Ok(format!("{} artifacts byte-identical at 1 and 4 threads", fa.len()))
}

// 12 --------------------------------------------------------------------------

fn golden_fixtures() -> Vec<(&'static str, FlowImage)> {
    let mut v = Vec::new();
    v.push(("white_1x1.ppm", colorize(&[[0.0, 0.0]], 1, 1, 1.0).expect("valid")));
    let grad = [[1.0, 0.0], [0.0, 1.0], [-0.5, 0.5], [0.25, -1.0]];
    v.push(("gradient_2x2.ppm", colorize(&grad, 2, 2, 1.0).expect("valid")));
    let n = 16;
    let field: Vec<[f64; 2]> = (0..n * n)
        .map(|k| {
            let (i, j) = ((k / n) as f64 - 7.5, (k % n) as f64 - 7.5);
            [j / 8.0, -i / 8.0]
        })
        .collect();
    v.push(("rotation_16x16.ppm", colorize(&field, n, n, 1.0).expect("valid")));
    let wheel = color_wheel();
    let ring: Vec<[u8; 3]> = (0..64)
        .map(|k| {
            let a = std::f64::consts::TAU * k as f64 / 64.0;
            flow_color(&wheel, a.cos(), a.sin())
        })
        .collect();
    v.push(("wheel_64x1.ppm", FlowImage { width: 64, height: 1, pixels: ring }));
    v
}

fn criterion_12() -> Outcome {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let bless = std::env::var_os("EVFLOW_BLESS").is_some();
    let fixtures = golden_fixtures();
    for (name, img) in &fixtures {
        let bytes = encode_ppm(img);
        let path = dir.join(name);
        if bless {
            fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
            fs::write(&path, &bytes).map_err(|e| e.to_string())?;
        }
        let golden = fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        ensure(golden == bytes, format!("{name} differs from its golden file"))?;
    }
    Ok(format!("{} golden images byte-identical", fixtures.len()))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 12] = [
        ("Horn-Schunck equivalence", criterion_1),
        ("manufactured flow recovery, flat surface", criterion_2),
        ("manufactured flow recovery, curved surface", criterion_3),
        ("geometry convergence", criterion_4),
        ("circle covariant derivative", criterion_5),
        ("frame invariance", criterion_6),
        ("sparse/pointwise assembly equivalence", criterion_7),
        ("GMRES correctness", criterion_8),
        ("framewise/spatiotemporal consistency", criterion_9),
        ("trajectory exactness", criterion_10),
        ("determinism across thread counts", criterion_11),
        ("renderer golden files", criterion_12),
    ];
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let id = k + 1;
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:2} PASS  {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:2} FAIL  {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
