//! Velocity reconstruction and trajectory integration.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dot, GeometryAtlas, Vec3};
use crate::model::{FrameField, Grid3, HeightField, ScalarField3, VectorField3};

/// `u = w^i e_i` in ambient coordinates.
pub fn reconstruct_u(w: &FrameField, atlas: &GeometryAtlas) -> Result<VectorField3> {
    let grid = *atlas.grid();
    grid.same_as(w.grid(), "reconstruct_u")?;
    let pts: Vec<Vec3> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let p = atlas.at(idx);
            let [w1, w2] = w.get(idx);
            let (e1, e2) = (p.frame_vector(0), p.frame_vector(1));
            [0, 1, 2].map(|c| w1 * e1[c] + w2 * e2[c])
        })
        .collect();
    VectorField3::from_points(grid, &pts)
}

/// Frame coordinates `w^i = e_i · u` of a tangent field.
pub fn frame_coordinates(u: &VectorField3, atlas: &GeometryAtlas) -> Result<FrameField> {
    let grid = *atlas.grid();
    grid.same_as(u.grid(), "frame_coordinates")?;
    let mut c = [vec![0.0; grid.len()], vec![0.0; grid.len()]];
    for idx in 0..grid.len() {
        let p = atlas.at(idx);
        let ui = u.get(idx);
        c[0][idx] = dot(&p.frame_vector(0), &ui);
        c[1][idx] = dot(&p.frame_vector(1), &ui);
    }
    FrameField::new(grid, c)
}

/// Total velocity `m = u + V`.
pub fn total_velocity(u: &VectorField3, atlas: &GeometryAtlas) -> Result<VectorField3> {
    let grid = *atlas.grid();
    grid.same_as(u.grid(), "total_velocity")?;
    let pts: Vec<Vec3> = (0..grid.len())
        .map(|idx| {
            let (a, v) = (u.get(idx), atlas.at(idx).v);
            [a[0] + v[0], a[1] + v[1], a[2] + v[2]]
        })
        .collect();
    VectorField3::from_points(grid, &pts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// `γ(k+1) = γ(k) + s·m(k, γ(k))`.
    #[default]
    Euler,
    /// Classical Runge–Kutta with `m` frozen at frame `k` during the step.
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub frame: usize,
    pub x: Vec3,
    pub xi: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seed: Vec3,
    pub samples: Vec<Sample>,
    /// The next step would have left the chart; the trajectory stops there.
    pub exited: bool,
}

/// Chart extent `[0, (n-1) h]` along each spatial axis.
fn chart_max(grid: &Grid3) -> [f64; 2] {
    [(grid.n1 - 1) as f64 * grid.h1, (grid.n2 - 1) as f64 * grid.h2]
}

fn in_chart(grid: &Grid3, xi: [f64; 2]) -> bool {
    let mx = chart_max(grid);
    xi[0].is_finite() && xi[1].is_finite() && (0.0..=mx[0]).contains(&xi[0]) && (0.0..=mx[1]).contains(&xi[1])
}

/// Bilinear interpolation of a per-gridpoint quantity at chart position `xi`
/// in frame `t`. `xi` must lie in the chart.
pub fn bilinear<F: Fn(usize) -> f64>(grid: &Grid3, t: usize, xi: [f64; 2], q: F) -> f64 {
    let locate = |x: f64, h: f64, n: usize| {
        let p = x / h;
        let i = (p.floor() as usize).min(n - 2);
        (i, p - i as f64)
    };
    let (i, a) = locate(xi[0], grid.h1, grid.n1);
    let (j, b) = locate(xi[1], grid.h2, grid.n2);
    let q00 = q(grid.index(t, i, j));
    let q10 = q(grid.index(t, i + 1, j));
    let q01 = q(grid.index(t, i, j + 1));
    let q11 = q(grid.index(t, i + 1, j + 1));
    (1.0 - a) * ((1.0 - b) * q00 + b * q01) + a * ((1.0 - b) * q10 + b * q11)
}

fn sample_m(m: &VectorField3, t: usize, xi: [f64; 2]) -> Vec3 {
    [0, 1, 2].map(|c| bilinear(m.grid(), t, xi, |k| m.component(c)[k]))
}

/// Integrate one trajectory per seed from `start_frame` through `end_frame`
/// (one step per frame transition). Seeds are chart points; their ambient
/// start is `(ξ1, ξ2, z(start_frame, ξ))`.
pub fn integrate_trajectories(
    m: &VectorField3,
    z: &HeightField,
    seeds: &[[f64; 2]],
    start_frame: usize,
    end_frame: usize,
    step: f64,
    integrator: Integrator,
) -> Result<Vec<Trajectory>> {
    let grid = *m.grid();
    grid.same_as(z.grid(), "integrate_trajectories")?;
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::InvalidParameter(format!("step = {step} must be > 0")));
    }
    if start_frame > end_frame || end_frame >= grid.n0 {
        return Err(Error::InvalidParameter(format!(
            "frame range {start_frame}..={end_frame} outside 0..{}",
            grid.n0
        )));
    }
    if let Some(s) = seeds.iter().find(|s| !in_chart(&grid, **s)) {
        return Err(Error::SeedOutOfDomain(s[0], s[1]));
    }

    let trajectories = seeds
        .par_iter()
        .map(|&xi0| {
            let x0 = [xi0[0], xi0[1], bilinear(&grid, start_frame, xi0, |k| z.values()[k])];
            let mut samples = vec![Sample {
                frame: start_frame,
                x: x0,
                xi: xi0,
            }];
            let mut exited = false;
            let (mut x, mut xi) = (x0, xi0);
            for k in start_frame..end_frame {
                let dx = match integrator {
                    Integrator::Euler => sample_m(m, k, xi).map(|c| step * c),
                    Integrator::Rk4 => {
                        let at = |d: Vec3, f: f64| -> Option<Vec3> {
                            let p = [xi[0] + f * d[0], xi[1] + f * d[1]];
                            in_chart(&grid, p).then(|| sample_m(m, k, p))
                        };
                        let k1 = sample_m(m, k, xi);
                        let stages = at(k1, 0.5 * step)
                            .and_then(|k2| at(k2, 0.5 * step).map(|k3| (k2, k3)))
                            .and_then(|(k2, k3)| at(k3, step).map(|k4| (k2, k3, k4)));
                        match stages {
                            Some((k2, k3, k4)) => {
                                [0, 1, 2].map(|c| step / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]))
                            }
                            None => {
                                exited = true;
                                break;
                            }
                        }
                    }
                };
                let nx = [x[0] + dx[0], x[1] + dx[1], x[2] + dx[2]];
                let nxi = [xi[0] + dx[0], xi[1] + dx[1]];
                if !in_chart(&grid, nxi) {
                    exited = true;
                    break;
                }
                x = nx;
                xi = nxi;
                samples.push(Sample { frame: k + 1, x, xi });
            }
            Trajectory {
                seed: x0,
                samples,
                exited,
            }
        })
        .collect();
    Ok(trajectories)
}

/// Strict maxima over the existing 8 spatial neighbours above `threshold`,
/// as chart points in row-major order.
pub fn detect_seeds(f: &ScalarField3, frame: usize, threshold: f64) -> Result<Vec<[f64; 2]>> {
    let grid = *f.grid();
    if frame >= grid.n0 {
        return Err(Error::InvalidParameter(format!("frame {frame} out of range 0..{}", grid.n0)));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidParameter(format!("threshold {threshold} outside [0, 1]")));
    }
    let mut seeds = Vec::new();
    for i in 0..grid.n1 {
        for j in 0..grid.n2 {
            let v = f.at(frame, i, j);
            if v <= threshold {
                continue;
            }
            let mut is_max = true;
            'nb: for di in -1isize..=1 {
                for dj in -1isize..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let (ni, nj) = (i as isize + di, j as isize + dj);
                    if ni < 0 || nj < 0 || ni >= grid.n1 as isize || nj >= grid.n2 as isize {
                        continue;
                    }
                    if f.at(frame, ni as usize, nj as usize) >= v {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                seeds.push([i as f64 * grid.h1, j as f64 * grid.h2]);
            }
        }
    }
    Ok(seeds)
}

pub const TRAJECTORY_CSV_HEADER: &str = "trajectory_id,frame,x1,x2,x3,xi1,xi2,exited";

pub fn write_trajectories_csv(out: &mut impl Write, trajectories: &[Trajectory]) -> std::io::Result<()> {
    writeln!(out, "{TRAJECTORY_CSV_HEADER}")?;
    for (id, tr) in trajectories.iter().enumerate() {
        for s in &tr.samples {
            writeln!(
                out,
                "{id},{},{:e},{:e},{:e},{:e},{:e},{}",
                s.frame, s.x[0], s.x[1], s.x[2], s.xi[0], s.xi[1], tr.exited as u8
            )?;
        }
    }
    Ok(())
}

pub fn save_trajectories_csv(path: impl AsRef<Path>, trajectories: &[Trajectory]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_trajectories_csv(&mut buf, trajectories).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
