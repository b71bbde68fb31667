use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use evflow::pipeline::{self, PipelineConfig, SolveMode, StageError};
use evflow::render::MaxMagnitude;

/// Optical flow on evolving graph surfaces.
///
/// Settings come from the JSON file given by `--config` (all keys optional);
/// any flag given on the command line overrides the matching key.
#[derive(Parser)]
#[command(name = "evflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter, detect cells, fit the surface and sample intensities from a 4D volume.
    Preprocess {
        #[command(flatten)]
        common: Common,
        /// 4D volume (EVSF).
        #[arg(long)]
        volume: Option<PathBuf>,
        /// Chart grid size as `N1,N2`.
        #[arg(long, value_delimiter = ',', num_args = 2)]
        grid: Option<Vec<usize>>,
    },
    /// Generate a manufactured sequence with known flow.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Estimate the flow and write w, u, m, images and a report.
    Flow {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        surface: SurfaceInputs,
        #[command(flatten)]
        solve: SolveArgs,
    },
    /// Integrate trajectories through a total velocity field.
    Trajectories {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        surface: SurfaceInputs,
        /// Total velocity field (EVSF).
        #[arg(long)]
        m: Option<PathBuf>,
        /// Step size multiplier.
        #[arg(long)]
        step: Option<f64>,
    },
    /// Colour-code a stored tangential field.
    Render {
        #[command(flatten)]
        common: Common,
        /// Tangential field (EVSF).
        #[arg(long)]
        u: Option<PathBuf>,
        /// Fixed saturation magnitude instead of the 99th percentile.
        #[arg(long)]
        max_magnitude: Option<f64>,
        /// Normalise each frame on its own.
        #[arg(long)]
        per_frame: bool,
    },
    /// Run the invariant checks on a surface pair.
    Verify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        surface: SurfaceInputs,
        #[command(flatten)]
        solve: SolveArgs,
    },
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct SurfaceInputs {
    /// Height field (EVSF).
    #[arg(long)]
    z: Option<PathBuf>,
    /// Intensity field (EVSF).
    #[arg(long)]
    f: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    lambda0: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    /// `spatiotemporal` or `framewise`.
    #[arg(long)]
    mode: Option<SolveMode>,
    /// Relative residual tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    restart: Option<usize>,
}

const EXIT_FAILURE: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

fn load(common: &Common) -> Result<PipelineConfig, StageError> {
    let mut config = match &common.config {
        Some(p) => PipelineConfig::load(p).map_err(|source| StageError { stage: "config", source })?,
        None => PipelineConfig::default(),
    };
    if let Some(out) = &common.out {
        config.out = out.clone();
    }
    Ok(config)
}

fn apply_surface(config: &mut PipelineConfig, s: SurfaceInputs) {
    if s.z.is_some() {
        config.z = s.z;
    }
    if s.f.is_some() {
        config.f = s.f;
    }
}

fn apply_solve(config: &mut PipelineConfig, a: &SolveArgs) {
    if let Some(v) = a.lambda0 {
        config.lambda0 = v;
    }
    if let Some(v) = a.lambda1 {
        config.lambda1 = v;
    }
    if let Some(v) = a.mode {
        config.mode = v;
    }
    if let Some(v) = a.tol {
        config.solver.rel_tol = v;
    }
    if let Some(v) = a.max_iters {
        config.solver.max_iters = v;
    }
    if let Some(v) = a.restart {
        config.solver.restart = v;
    }
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn run(command: Command) -> Result<u8, StageError> {
    match command {
        Command::Preprocess { common, volume, grid } => {
            let mut config = load(&common)?;
            if volume.is_some() {
                config.volume = volume;
            }
            if let Some(g) = grid {
                config.grid = [g[0], g[1]];
            }
            print_paths(&pipeline::run_preprocess(&config)?);
        }
        Command::Synth { common } => {
            print_paths(&pipeline::run_synth(&load(&common)?)?);
        }
        Command::Flow { common, surface, solve } => {
            let mut config = load(&common)?;
            apply_surface(&mut config, surface);
            apply_solve(&mut config, &solve);
            let outcome = pipeline::run_flow(&config)?;
            print_paths(&outcome.artifacts);
            let r = &outcome.report;
            eprintln!(
                "{} iterations, relative residual {:.3e}, energy {:.6e} -> {:.6e}, {:.2} s",
                r.iterations, r.rel_residual, r.energy_before, r.energy_after, r.wall_time_s
            );
            if !r.converged {
                eprintln!("warning: solver did not reach rel_tol {:e}", r.solver.rel_tol);
                return Ok(EXIT_NOT_CONVERGED);
            }
        }
        Command::Trajectories { common, surface, m, step } => {
            let mut config = load(&common)?;
            apply_surface(&mut config, surface);
            if m.is_some() {
                config.m = m;
            }
            if let Some(s) = step {
                config.trajectories.step = s;
            }
            println!("{}", pipeline::run_trajectories(&config)?.display());
        }
        Command::Render { common, u, max_magnitude, per_frame } => {
            let mut config = load(&common)?;
            if u.is_some() {
                config.u = u;
            }
            if let Some(v) = max_magnitude {
                config.render.max_magnitude = MaxMagnitude::Fixed(v);
            }
            config.render.per_frame |= per_frame;
            print_paths(&pipeline::run_render(&config)?);
        }
        Command::Verify { common, surface, solve } => {
            let mut config = load(&common)?;
            apply_surface(&mut config, surface);
            apply_solve(&mut config, &solve);
            let (path, checks) = pipeline::run_verify(&config)?;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            println!("{}", path.display());
            if checks.iter().any(|c| !c.passed) {
                return Ok(EXIT_FAILURE);
            }
        }
    }
    Ok(0)
}

fn threads(command: &Command) -> Option<usize> {
    match command {
        Command::Preprocess { common, .. }
        | Command::Synth { common }
        | Command::Flow { common, .. }
        | Command::Trajectories { common, .. }
        | Command::Render { common, .. }
        | Command::Verify { common, .. } => common.threads,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = threads(&cli.command) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_FAILURE);
        }
    }
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { EXIT_INVALID } else { EXIT_FAILURE })
        }
    }
}
