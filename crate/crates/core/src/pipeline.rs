//! End-to-end stages shared by the CLI and the C interface.
//!
//! Every stage reads its inputs from files and writes its outputs to files,
//! so any stage can be rerun on its own. The in-memory entry points
//! ([`solve_flow`]) are what the file stages wrap.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::assembly::{assemble, el_residual, AssemblyMode};
use crate::error::{Error, Result};
use crate::evsf;
use crate::geometry::{FrameOrder, GeometryAtlas};
use crate::kinematics::{
    detect_seeds, integrate_trajectories, reconstruct_u, save_trajectories_csv, total_velocity, Integrator,
};
use crate::model::{FrameField, Grid3, HeightField, ScalarField3, VectorField3};
use crate::preprocess::{centers_csv, preprocess_volume, PreprocessConfig};
use crate::render::{render_sequence, write_sequence, MaxMagnitude};
use crate::solver::{gmres, SolveReport, SolverConfig};
use crate::synth::{generate, SynthSpec};
use crate::variational::{data_derivatives, el_coefficients_with, energy, CoefficientForm, RegParams};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    #[default]
    Spatiotemporal,
    Framewise,
}

impl std::str::FromStr for SolveMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spatiotemporal" => Ok(SolveMode::Spatiotemporal),
            "framewise" => Ok(SolveMode::Framewise),
            _ => Err(Error::Config(format!("unknown mode {s:?} (spatiotemporal | framewise)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub seed_frame: usize,
    /// Last frame reached; defaults to the last frame of the sequence.
    pub end_frame: Option<usize>,
    pub threshold: f64,
    pub step: f64,
    pub integrator: Integrator,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig {
            seed_frame: 0,
            end_frame: None,
            threshold: 0.5,
            step: 10.0,
            integrator: Integrator::Euler,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub max_magnitude: MaxMagnitude,
    pub per_frame: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub spec: SynthSpec,
    pub dims: [usize; 3],
}

/// Everything a run needs. Loaded from one JSON file; command-line flags
/// override individual keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub volume: Option<PathBuf>,
    pub z: Option<PathBuf>,
    pub f: Option<PathBuf>,
    pub m: Option<PathBuf>,
    pub u: Option<PathBuf>,
    /// Chart grid `(n1, n2)` produced by preprocessing.
    pub grid: [usize; 2],
    pub lambda0: f64,
    pub lambda1: f64,
    pub mode: SolveMode,
    pub coefficient_form: CoefficientForm,
    pub frame_order: FrameOrder,
    pub solver: SolverConfig,
    pub trajectories: TrajectoryConfig,
    pub preprocess: PreprocessConfig,
    pub render: RenderConfig,
    pub synth: Option<SynthConfig>,
    pub out: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            volume: None,
            z: None,
            f: None,
            m: None,
            u: None,
            grid: [64, 64],
            lambda0: 0.005,
            lambda1: 0.05,
            mode: SolveMode::Spatiotemporal,
            coefficient_form: CoefficientForm::Variational,
            frame_order: FrameOrder::FirstAxis,
            solver: SolverConfig::default(),
            trajectories: TrajectoryConfig::default(),
            preprocess: PreprocessConfig::default(),
            render: RenderConfig::default(),
            synth: None,
            out: PathBuf::from("out"),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn reg(&self) -> Result<RegParams> {
        RegParams::new(self.lambda0, self.lambda1)
    }

    /// Checks that do not need any input data.
    pub fn validate(&self) -> Result<()> {
        self.reg()?;
        self.solver.validate()?;
        if self.mode == SolveMode::Framewise && self.lambda0 != 0.0 {
            return Err(Error::ModeMismatch(format!(
                "framewise mode requires lambda0 = 0, got {}",
                self.lambda0
            )));
        }
        let tr = &self.trajectories;
        if !(tr.step.is_finite() && tr.step > 0.0) {
            return Err(Error::InvalidParameter(format!("step = {} must be > 0", tr.step)));
        }
        Ok(())
    }
}

/// A pipeline failure tagged with the stage it came from.
#[derive(Debug, thiserror::Error)]
#[error("{stage}: {source}")]
pub struct StageError {
    pub stage: &'static str,
    #[source]
    pub source: Error,
}

impl StageError {
    /// Whether the failure is a problem with the configuration or inputs
    /// rather than with the run itself.
    pub fn is_validation(&self) -> bool {
        self.stage == "input"
            || !matches!(self.source, Error::IoFailure { .. } | Error::NoCenters { .. } | Error::SingularFit(_))
    }
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> Stage<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

pub type StageResult<T> = std::result::Result<T, StageError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowParams {
    pub reg: RegParams,
    pub mode: SolveMode,
    pub solver: SolverConfig,
    pub form: CoefficientForm,
    pub frame_order: FrameOrder,
}

impl FlowParams {
    pub fn new(reg: RegParams, mode: SolveMode, solver: SolverConfig) -> Self {
        FlowParams {
            reg,
            mode,
            solver,
            form: CoefficientForm::Variational,
            frame_order: FrameOrder::FirstAxis,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowResult {
    pub w: FrameField,
    pub u: VectorField3,
    pub m: VectorField3,
    pub atlas: GeometryAtlas,
    /// One report for a spatiotemporal solve, one per frame otherwise.
    pub solves: Vec<SolveReport>,
    pub energy_before: f64,
    pub energy_after: f64,
    pub wall_time: Duration,
}

impl FlowResult {
    pub fn converged(&self) -> bool {
        self.solves.iter().all(|s| s.converged)
    }

    pub fn iterations(&self) -> usize {
        self.solves.iter().map(|s| s.iterations).sum()
    }

    pub fn rel_residual(&self) -> f64 {
        self.solves.iter().map(|s| s.rel_residual).fold(0.0, f64::max)
    }
}

/// Geometry, coefficients, assembly, solve and reconstruction for a surface pair.
pub fn solve_flow(z: &HeightField, f: &ScalarField3, params: &FlowParams) -> StageResult<FlowResult> {
    let start = Instant::now();
    z.grid().same_as(f.grid(), "solve_flow").stage("validate")?;
    params.solver.validate().stage("validate")?;
    if params.mode == SolveMode::Framewise && params.reg.lambda0 != 0.0 {
        return Err(Error::ModeMismatch(format!(
            "framewise mode requires lambda0 = 0, got {}",
            params.reg.lambda0
        )))
        .stage("validate");
    }
    let grid = *z.grid();
    let atlas = GeometryAtlas::build_with_frame(z, params.frame_order).stage("geometry")?;
    let df = data_derivatives(f);
    let coeffs = el_coefficients_with(&atlas, &df, params.reg, params.form).stage("coefficients")?;
    let w0 = FrameField::zeros(grid);
    let energy_before = energy(&w0, &atlas, &df, params.reg).stage("energy")?;

    let mut w = FrameField::zeros(grid);
    let mut solves = Vec::new();
    let modes: Vec<AssemblyMode> = match params.mode {
        SolveMode::Spatiotemporal => vec![AssemblyMode::Spatiotemporal],
        SolveMode::Framewise => (0..grid.n0).map(AssemblyMode::Framewise).collect(),
    };
    for mode in modes {
        let sys = assemble(&coeffs, mode).stage("assembly")?;
        let (x, report) = gmres(&sys, &params.solver, None).stage("solver")?;
        sys.store_solution(&x, &mut w).stage("solver")?;
        solves.push(report);
    }
    let energy_after = energy(&w, &atlas, &df, params.reg).stage("energy")?;
    let u = reconstruct_u(&w, &atlas).stage("kinematics")?;
    let m = total_velocity(&u, &atlas).stage("kinematics")?;
    Ok(FlowResult {
        w,
        u,
        m,
        atlas,
        solves,
        energy_before,
        energy_after,
        wall_time: start.elapsed(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveEntry {
    pub iterations: usize,
    pub rel_residual: f64,
    pub converged: bool,
    pub breakdown: bool,
    pub wall_time_s: f64,
}

/// One row per run, in the layout of the usual parameter sweep tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub lambda0: f64,
    pub lambda1: f64,
    pub runtime_s: f64,
    pub rel_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowReport {
    pub schema_version: u32,
    pub dims: [usize; 3],
    pub lambda0: f64,
    pub lambda1: f64,
    pub mode: SolveMode,
    pub coefficient_form: CoefficientForm,
    pub solver: SolverConfig,
    pub iterations: usize,
    pub rel_residual: f64,
    pub converged: bool,
    pub energy_before: f64,
    pub energy_after: f64,
    pub wall_time_s: f64,
    pub solves: Vec<SolveEntry>,
    pub table_row: TableRow,
}

impl FlowReport {
    pub fn new(result: &FlowResult, params: &FlowParams) -> Self {
        let wall = result.wall_time.as_secs_f64();
        FlowReport {
            schema_version: REPORT_SCHEMA_VERSION,
            dims: result.w.grid().dims(),
            lambda0: params.reg.lambda0,
            lambda1: params.reg.lambda1,
            mode: params.mode,
            coefficient_form: params.form,
            solver: params.solver,
            iterations: result.iterations(),
            rel_residual: result.rel_residual(),
            converged: result.converged(),
            energy_before: result.energy_before,
            energy_after: result.energy_after,
            wall_time_s: wall,
            solves: result
                .solves
                .iter()
                .map(|s| SolveEntry {
                    iterations: s.iterations,
                    rel_residual: s.rel_residual,
                    converged: s.converged,
                    breakdown: s.breakdown,
                    wall_time_s: s.wall_time.as_secs_f64(),
                })
                .collect(),
            table_row: TableRow {
                lambda0: params.reg.lambda0,
                lambda1: params.reg.lambda1,
                runtime_s: wall,
                rel_residual: result.rel_residual(),
            },
        }
    }
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> StageResult<&'a PathBuf> {
    p.as_ref()
        .ok_or_else(|| Error::Config(format!("missing input path `{key}`")))
        .stage("validate")
}

fn ensure_dir(dir: &Path) -> StageResult<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)).stage("output")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> StageResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(e.to_string()))
        .stage("output")?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e)).stage("output")
}

#[derive(Debug, Clone)]
pub struct FlowOutcome {
    pub report: FlowReport,
    pub artifacts: Vec<PathBuf>,
}

/// `w.evsf`, `u.evsf`, `m.evsf`, `report.json` and `flow_NNN.ppm` in `config.out`.
/// Artifacts are written even when the solver did not converge.
pub fn run_flow(config: &PipelineConfig) -> StageResult<FlowOutcome> {
    config.validate().stage("validate")?;
    let z = evsf::read_height(required(&config.z, "z")?).stage("input")?;
    let f = evsf::read_scalar(required(&config.f, "f")?).stage("input")?;
    let params = FlowParams {
        reg: config.reg().stage("validate")?,
        mode: config.mode,
        solver: config.solver,
        form: config.coefficient_form,
        frame_order: config.frame_order,
    };
    let result = solve_flow(&z, &f, &params)?;
    let out = &config.out;
    ensure_dir(out)?;
    let mut artifacts = vec![out.join("w.evsf"), out.join("u.evsf"), out.join("m.evsf")];
    evsf::write_frame_field(&artifacts[0], &result.w).stage("output")?;
    evsf::write_vector(&artifacts[1], &result.u).stage("output")?;
    evsf::write_vector(&artifacts[2], &result.m).stage("output")?;
    let images = render_sequence(&result.u, config.render.max_magnitude, config.render.per_frame).stage("render")?;
    artifacts.extend(write_sequence(out, "flow", &images).stage("render")?);
    let report = FlowReport::new(&result, &params);
    let rp = out.join("report.json");
    write_json(&rp, &report)?;
    artifacts.push(rp);
    Ok(FlowOutcome { report, artifacts })
}

/// Seeds from the intensity maxima at the seed frame, integrated through `m`.
pub fn run_trajectories(config: &PipelineConfig) -> StageResult<PathBuf> {
    config.validate().stage("validate")?;
    let m = evsf::read_vector(required(&config.m, "m")?).stage("input")?;
    let z = evsf::read_height(required(&config.z, "z")?).stage("input")?;
    let f = evsf::read_scalar(required(&config.f, "f")?).stage("input")?;
    let tc = &config.trajectories;
    let end = tc.end_frame.unwrap_or(m.grid().n0 - 1);
    let seeds = detect_seeds(&f, tc.seed_frame, tc.threshold).stage("seeds")?;
    let trs = integrate_trajectories(&m, &z, &seeds, tc.seed_frame, end, tc.step, tc.integrator).stage("trajectories")?;
    ensure_dir(&config.out)?;
    let path = config.out.join("trajectories.csv");
    save_trajectories_csv(&path, &trs).stage("output")?;
    Ok(path)
}

/// `z.evsf`, `f.evsf`, `centers.csv` from a 4D volume.
pub fn run_preprocess(config: &PipelineConfig) -> StageResult<Vec<PathBuf>> {
    let vol = evsf::read_volume(required(&config.volume, "volume")?).stage("input")?;
    let out = preprocess_volume(&vol, config.grid[0], config.grid[1], &config.preprocess).stage("preprocess")?;
    ensure_dir(&config.out)?;
    let paths = vec![config.out.join("z.evsf"), config.out.join("f.evsf"), config.out.join("centers.csv")];
    evsf::write_scalar(&paths[0], &out.z).stage("output")?;
    evsf::write_scalar(&paths[1], &out.f).stage("output")?;
    fs::write(&paths[2], centers_csv(&out.centers))
        .map_err(|e| Error::io(&paths[2], e))
        .stage("output")?;
    Ok(paths)
}

/// `z.evsf`, `f.evsf`, `w_true.evsf`, `u_true.evsf` for a manufactured sequence.
pub fn run_synth(config: &PipelineConfig) -> StageResult<Vec<PathBuf>> {
    let sc = config
        .synth
        .as_ref()
        .ok_or_else(|| Error::Config("missing `synth` section".into()))
        .stage("validate")?;
    let [n0, n1, n2] = sc.dims;
    let grid = Grid3::unit_cube(n0, n1, n2).stage("validate")?;
    let out = generate(&sc.spec, grid).stage("synth")?;
    ensure_dir(&config.out)?;
    let names = ["z.evsf", "f.evsf", "w_true.evsf", "u_true.evsf"];
    let paths: Vec<PathBuf> = names.iter().map(|n| config.out.join(n)).collect();
    evsf::write_scalar(&paths[0], &out.z).stage("output")?;
    evsf::write_scalar(&paths[1], &out.f).stage("output")?;
    evsf::write_frame_field(&paths[2], &out.w_true).stage("output")?;
    evsf::write_vector(&paths[3], &out.u_true).stage("output")?;
    Ok(paths)
}

/// Colour images of a stored tangential field.
pub fn run_render(config: &PipelineConfig) -> StageResult<Vec<PathBuf>> {
    let u = evsf::read_vector(required(&config.u, "u")?).stage("input")?;
    let images = render_sequence(&u, config.render.max_magnitude, config.render.per_frame).stage("render")?;
    ensure_dir(&config.out)?;
    write_sequence(&config.out, "flow", &images).stage("render")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Invariant checks on a surface pair: frame orthonormality, tangency of the
/// reconstructed flow, agreement of the sparse system with the pointwise
/// residual, and energy decrease of the solve.
pub fn verify_fixture(z: &HeightField, f: &ScalarField3, params: &FlowParams) -> StageResult<Vec<Check>> {
    let mut checks = Vec::new();
    let atlas = GeometryAtlas::build_with_frame(z, params.frame_order).stage("geometry")?;
    let mut worst: f64 = 0.0;
    for p in atlas.points() {
        let (e1, e2) = (p.frame_vector(0), p.frame_vector(1));
        let d = |a: &[f64; 3], b: &[f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        worst = worst
            .max((d(&e1, &e1) - 1.0).abs())
            .max((d(&e2, &e2) - 1.0).abs())
            .max(d(&e1, &e2).abs())
            .max(d(&e1, &p.normal).abs());
    }
    checks.push(Check {
        name: "frame_orthonormal".into(),
        passed: worst < 1e-10,
        detail: format!("max deviation {worst:.3e}"),
    });

    let df = data_derivatives(f);
    let coeffs = el_coefficients_with(&atlas, &df, params.reg, params.form).stage("coefficients")?;
    let mode = match params.mode {
        SolveMode::Spatiotemporal => AssemblyMode::Spatiotemporal,
        SolveMode::Framewise => AssemblyMode::Framewise(0),
    };
    let sys = assemble(&coeffs, mode).stage("assembly")?;
    let grid = *z.grid();
    let probe = FrameField::new(
        grid,
        [
            (0..grid.len()).map(|k| (0.37 * k as f64).sin()).collect(),
            (0..grid.len()).map(|k| (0.21 * k as f64).cos()).collect(),
        ],
    )
    .stage("verify")?;
    let x = match mode {
        AssemblyMode::Spatiotemporal => probe.to_unknowns(),
        AssemblyMode::Framewise(_) => probe.to_unknowns()[..2 * grid.frame_len()].to_vec(),
    };
    let sparse = sys.residual(&x).stage("assembly")?;
    let direct = el_residual(&probe, &coeffs, mode).stage("assembly")?;
    let mut rel: f64 = 0.0;
    for (r, (a, b)) in sparse.iter().zip(&direct).enumerate() {
        let scale: f64 = sys.matrix.row(r).map(|(c, v)| (v * x[c]).abs()).sum::<f64>() + sys.rhs[r].abs();
        rel = rel.max((a - b).abs() / scale.max(f64::MIN_POSITIVE));
    }
    checks.push(Check {
        name: "sparse_matches_pointwise".into(),
        passed: rel < 1e-13,
        detail: format!("max relative difference {rel:.3e}"),
    });

    let result = solve_flow(z, f, params)?;
    let mut tang: f64 = 0.0;
    for k in 0..grid.len() {
        let u = result.u.get(k);
        let n = result.atlas.at(k).normal;
        let un = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
        tang = tang.max((u[0] * n[0] + u[1] * n[1] + u[2] * n[2]).abs() / (1.0 + un));
    }
    checks.push(Check {
        name: "flow_tangent".into(),
        passed: tang <= 1e-10,
        detail: format!("max |u.N|/(1+|u|) {tang:.3e}"),
    });
    checks.push(Check {
        name: "energy_decreases".into(),
        passed: result.energy_after <= result.energy_before,
        detail: format!("{:.6e} -> {:.6e}", result.energy_before, result.energy_after),
    });
    checks.push(Check {
        name: "solver_converged".into(),
        passed: result.converged(),
        detail: format!("{} iterations, relative residual {:.3e}", result.iterations(), result.rel_residual()),
    });
    Ok(checks)
}

pub fn run_verify(config: &PipelineConfig) -> StageResult<(PathBuf, Vec<Check>)> {
    config.validate().stage("validate")?;
    let z = evsf::read_height(required(&config.z, "z")?).stage("input")?;
    let f = evsf::read_scalar(required(&config.f, "f")?).stage("input")?;
    let params = FlowParams {
        reg: config.reg().stage("validate")?,
        mode: config.mode,
        solver: config.solver,
        form: config.coefficient_form,
        frame_order: config.frame_order,
    };
    let checks = verify_fixture(&z, &f, &params)?;
    ensure_dir(&config.out)?;
    let path = config.out.join("verify.json");
    write_json(&path, &checks)?;
    Ok((path, checks))
}
