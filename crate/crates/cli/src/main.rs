use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use ct_gbp::experiment::{self, ExperimentError, Scenario, SolverKind, SweepKind};
use ct_gbp::gbp::RunRecord;
use ct_gbp::io;
use ct_gbp::{ExperimentConfig, ScenarioSpec, SplineKind};

const CONFIG_FILE: &str = "config.json";

#[derive(Parser, Debug)]
#[command(name = "ct-gbp", version, about = "Continuous-time GBP experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a scenario and write ground truth, initial state and measurements.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Solve a scenario with one solver.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Scenario directory written by `simulate`; simulated from the config when absent.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "gbp")]
        solver: Solver,
    },
    /// Run both solvers over a grid of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        kind: Sweep,
        /// Comma-separated grid; defaults depend on the kind.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// Median spline evaluation timings (informational).
    BenchSpline {
        /// Output CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 101)]
        reps: usize,
        #[arg(long, default_value_t = 1000)]
        batch: usize,
        #[arg(long, value_enum, default_value = "bspline")]
        spline: Spline,
    },
    /// Compare two run records.
    Compare { a: PathBuf, b: PathBuf },
}

#[derive(Args, Debug)]
struct Common {
    /// JSON experiment config (or bare scenario); defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    dropout_nodes: Option<f64>,
    #[arg(long)]
    dropout_factors: Option<f64>,
    #[arg(long, value_enum)]
    spline: Option<Spline>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Solver {
    Gbp,
    Nlls,
}

impl From<Solver> for SolverKind {
    fn from(s: Solver) -> Self {
        match s {
            Solver::Gbp => SolverKind::Gbp,
            Solver::Nlls => SolverKind::Nlls,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Spline {
    Bspline,
    Zspline,
}

impl From<Spline> for SplineKind {
    fn from(s: Spline) -> Self {
        match s {
            Spline::Bspline => SplineKind::BSpline,
            Spline::Zspline => SplineKind::ZSpline,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Sweep {
    Perturbation,
    Noise,
    Dropout,
    Spline,
}

impl From<Sweep> for SweepKind {
    fn from(s: Sweep) -> Self {
        match s {
            Sweep::Perturbation => SweepKind::Perturbation,
            Sweep::Noise => SweepKind::Noise,
            Sweep::Dropout => SweepKind::Dropout,
            Sweep::Spline => SweepKind::Spline,
        }
    }
}

/// Error carrying the process exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn config(error: impl Into<anyhow::Error>) -> Self {
        Self { code: 2, error: error.into() }
    }

    fn solver(error: impl Into<anyhow::Error>) -> Self {
        Self { code: 3, error: error.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self { code: 1, error }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        if e.is_config() {
            Failure::config(e)
        } else {
            Failure::solver(e)
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn load_config(common: &Common) -> CliResult<ExperimentConfig> {
    let mut cfg = match &common.config {
        None => ExperimentConfig::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(Failure::config)?;
            let origin = path.display().to_string();
            match ExperimentConfig::from_json(&text, &origin) {
                Ok(cfg) => cfg,
                // A bare scenario is accepted as well.
                Err(ExperimentError::Json { .. }) if serde_json::from_str::<ScenarioSpec>(&text).is_ok() => {
                    ExperimentConfig {
                        scenario: serde_json::from_str(&text).expect("checked above"),
                        ..ExperimentConfig::default()
                    }
                }
                Err(e) => return Err(Failure::config(e)),
            }
        }
    };
    if let Some(seed) = common.seed {
        cfg.scenario.seed = seed;
        cfg.gbp.seed = seed;
    }
    if let Some(w) = common.workers {
        cfg.gbp.workers = w;
    }
    if let Some(n) = common.max_iters {
        cfg.gbp.max_iterations = n;
        cfg.nlls.max_iterations = n;
    }
    if common.dropout_nodes.is_some() || common.dropout_factors.is_some() {
        let d_n = common.dropout_nodes.unwrap_or(cfg.gbp.dropout_nodes);
        let d_f = common.dropout_factors.unwrap_or(cfg.gbp.dropout_factors);
        cfg.gbp = cfg.gbp.with_dropout(d_n, d_f);
    }
    if let Some(s) = common.spline {
        cfg.scenario.spline = s.into();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> CliResult<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut json = serde_json::to_string_pretty(cfg).map_err(anyhow::Error::from)?;
    json.push('\n');
    std::fs::write(dir.join(CONFIG_FILE), json).context("writing config")?;
    Ok(())
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn simulate(common: &Common) -> CliResult<()> {
    let cfg = load_config(common)?;
    let scenario = Scenario::simulate(&cfg.scenario).map_err(Failure::config)?;
    scenario.write_dir(&common.out)?;
    write_config(&common.out, &cfg)?;
    println!(
        "{} scenario: {} bases, {} absolute, {} visual measurements -> {}",
        cfg.scenario.setup.name(),
        scenario.truth.trajectory.len(),
        scenario.measurements.absolute.len(),
        scenario.measurements.visual.len(),
        common.out.display()
    );
    Ok(())
}

fn write_record_files(dir: &Path, stem: &str, record: &RunRecord) -> CliResult<()> {
    record
        .write_csv(create(&dir.join(format!("{stem}_run.csv")))?)
        .context("writing run record")?;
    experiment::write_energy(create(&dir.join(format!("{stem}_energy.csv")))?, record)
        .context("writing energy")?;
    Ok(())
}

fn solve(common: &Common, scenario_dir: Option<&Path>, solver: SolverKind) -> CliResult<()> {
    let mut cfg = load_config(common)?;
    let scenario = match scenario_dir {
        Some(dir) => {
            let s = Scenario::read_dir(dir)?;
            cfg.scenario = s.spec.clone();
            s
        }
        None => Scenario::simulate(&cfg.scenario).map_err(Failure::config)?,
    };
    let out = &common.out;
    write_config(out, &cfg)?;
    let setup = cfg.scenario.setup;
    let stem = format!("{}_{}", solver.name(), setup.name());
    let outcome = match experiment::run_experiment(&scenario, &cfg, solver) {
        Ok(o) => o,
        Err(ExperimentError::Solver { message, record }) => {
            write_record_files(out, &stem, &record)?;
            return Err(Failure::solver(anyhow!("{message}")));
        }
        Err(e) => return Err(e.into()),
    };
    write_record_files(out, &stem, &outcome.record)?;
    experiment::write_error_samples(create(&out.join(format!("{stem}_rmse.csv")))?, &outcome.errors)
        .context("writing rmse samples")?;
    let estimate = outcome.problem.trajectory().map_err(anyhow::Error::from)?;
    io::write_trajectory(create(&out.join(format!("{stem}_estimate.csv")))?, &estimate)
        .context("writing estimate")?;
    if !outcome.problem.landmarks.is_empty() {
        io::write_landmarks(
            create(&out.join(format!("{stem}_landmarks.csv")))?,
            &outcome.problem.landmark_estimates(),
        )
        .context("writing landmarks")?;
    }
    let snapshot = outcome.problem.graph.snapshot();
    serde_json::to_writer(create(&out.join(format!("{stem}_snapshot.json")))?, &snapshot)
        .map_err(anyhow::Error::from)?;
    let summary = outcome.summary(setup);
    let mut json = serde_json::to_string_pretty(&summary).map_err(anyhow::Error::from)?;
    json.push('\n');
    std::fs::write(out.join(format!("{stem}_summary.json")), json).context("writing summary")?;
    println!(
        "{stem}: {} iterations, energy {:.6e} -> {:.6e}, rmse R {:.3e} rad, t {:.3e} m",
        summary.iterations,
        summary.initial_energy,
        summary.final_energy,
        summary.rotation_rmse,
        summary.translation_rmse
    );
    Ok(())
}

fn sweep(common: &Common, kind: SweepKind, grid: Option<&[f64]>) -> CliResult<()> {
    let cfg = load_config(common)?;
    let grid = grid.map_or_else(|| kind.default_grid(), <[f64]>::to_vec);
    if grid.is_empty() {
        return Err(Failure::config(anyhow!("empty grid")));
    }
    if kind == SweepKind::Dropout {
        if let Some(d) = grid.iter().find(|d| !(0.0..1.0).contains(*d)) {
            return Err(Failure::config(anyhow!("dropout grid value {d} outside [0, 1)")));
        }
    }
    write_config(&common.out, &cfg)?;
    info!("{} sweep over {} points", kind.name(), grid.len());
    let rows = experiment::sweep(&cfg, kind, &grid);
    let path = common.out.join(format!("{}_{}_sweep.csv", kind.name(), cfg.scenario.setup.name()));
    experiment::write_sweep(create(&path)?, kind, &rows).context("writing sweep")?;
    let failed = rows.iter().filter(|r| r.gbp.final_energy.is_nan()).count();
    println!("{} rows -> {}", rows.len(), path.display());
    if failed > 0 {
        warn!("{failed} grid points failed");
    }
    Ok(())
}

fn bench_spline(out: Option<&Path>, reps: usize, batch: usize, kind: SplineKind) -> CliResult<()> {
    let rows = experiment::bench_spline(kind, reps, batch)?;
    let mut w: Box<dyn Write> = match out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    io::write_rows(&mut w, &rows).context("writing timings")?;
    w.flush().context("flushing timings")?;
    Ok(())
}

fn read_record(path: &Path) -> CliResult<RunRecord> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    RunRecord::read_csv(f)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(Failure::config)
}

fn compare(a: &Path, b: &Path) -> CliResult<()> {
    let (ra, rb) = (read_record(a)?, read_record(b)?);
    println!("iter,energy_a,energy_b,rel_diff");
    let n = ra.rows.len().max(rb.rows.len());
    let at = |r: &RunRecord, i: usize| r.rows.get(i).map_or(f64::NAN, |x| x.energy);
    for i in 0..n {
        let (ea, eb) = (at(&ra, i), at(&rb, i));
        println!("{i},{ea:e},{eb:e},{:e}", (ea - eb).abs() / ea.abs().max(eb.abs()));
    }
    let fa = ra.final_energy().unwrap_or(f64::NAN);
    let fb = rb.final_energy().unwrap_or(f64::NAN);
    println!(
        "# iterations {} vs {}; final energy {fa:e} vs {fb:e} (relative difference {:e})",
        ra.iterations(),
        rb.iterations(),
        (fa - fb).abs() / fa.abs().max(fb.abs())
    );
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate { common } => simulate(&common),
        Command::Solve { common, scenario, solver } => solve(&common, scenario.as_deref(), solver.into()),
        Command::Sweep { common, kind, grid } => sweep(&common, kind.into(), grid.as_deref()),
        Command::BenchSpline { out, reps, batch, spline } => bench_spline(out.as_deref(), reps, batch, spline.into()),
        Command::Compare { a, b } => compare(&a, &b),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
