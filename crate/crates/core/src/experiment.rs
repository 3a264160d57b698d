//! Scenario files, graph construction and the solver experiments run by the
//! command-line tool.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::sync::Arc;

use log::info;
use nalgebra::{DMatrix, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gbp::{self, ConfigError, RunRecord, SolveError, SolverConfig, CSV_HEADER};
use crate::graph::{FactorGraph, FactorSpec, GraphError, NodeId, ResidualError, VariableKind};
use crate::io::{self, IoError};
use crate::manifold::{Element, Pose};
use crate::nlls::{self, NllsConfig, NllsError};
use crate::robust::LossFunction;
use crate::sensors::{AbsolutePoseFactor, ReprojectionFactor, SplineSample};
use crate::sim::{self, ErrorSamples, GroundTruth, Measurements, ScenarioSpec, Setup, SpecError, RMSE_RATE};
use crate::spline::{SplineError, SplineKind, SplineTrajectory};

/// Relative energy change that counts as converged when reporting
/// iterations-to-convergence.
pub const CONVERGENCE_RTOL: f64 = 1e-6;

pub const SCENARIO_FILE: &str = "scenario.json";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";
pub const INITIAL_FILE: &str = "initial.csv";
pub const ABSOLUTE_FILE: &str = "absolute.csv";
pub const VISUAL_FILE: &str = "visual.csv";
pub const LANDMARKS_FILE: &str = "landmarks.csv";
pub const INITIAL_LANDMARKS_FILE: &str = "initial_landmarks.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    #[default]
    Gbp,
    Nlls,
}

impl SolverKind {
    pub fn name(&self) -> &'static str {
        match self {
            SolverKind::Gbp => "gbp",
            SolverKind::Nlls => "nlls",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioSpec,
    pub gbp: SolverConfig,
    pub nlls: NllsConfig,
    pub loss: LossFunction,
    /// Isotropic precision of the initial node beliefs.
    pub initial_precision: f64,
    /// Standard deviation (m) of the landmark priors that fix the gauge in
    /// the localization setup.
    pub landmark_prior_sigma: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioSpec::default(),
            gbp: SolverConfig::default(),
            nlls: NllsConfig::default(),
            loss: LossFunction::Trivial,
            initial_precision: 1.0,
            landmark_prior_sigma: 0.2,
        }
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("initial precision must be positive and finite, got {0}")]
    InitialPrecision(f64),
    #[error("landmark prior sigma must be positive and finite, got {0}")]
    LandmarkPrior(f64),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("measurement at t = {time}: {source}")]
    Measurement {
        time: f64,
        #[source]
        source: ResidualError,
    },
    #[error("scenario has no {0} file")]
    MissingFile(&'static str),
    #[error("solver failed: {message}")]
    Solver { message: String, record: RunRecord },
}

impl ExperimentError {
    /// Whether the error stems from invalid input rather than a solver run.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            ExperimentError::Spec(_)
                | ExperimentError::Config(_)
                | ExperimentError::InitialPrecision(_)
                | ExperimentError::LandmarkPrior(_)
                | ExperimentError::Json { .. }
        )
    }
}

impl From<std::io::Error> for ExperimentError {
    fn from(e: std::io::Error) -> Self {
        ExperimentError::Io(IoError::Io(e))
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.scenario.validate()?;
        self.gbp.validate()?;
        if !(self.initial_precision > 0.0 && self.initial_precision.is_finite()) {
            return Err(ExperimentError::InitialPrecision(self.initial_precision));
        }
        if !(self.landmark_prior_sigma > 0.0 && self.landmark_prior_sigma.is_finite()) {
            return Err(ExperimentError::LandmarkPrior(self.landmark_prior_sigma));
        }
        Ok(())
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = serde_json::from_str(text).map_err(|source| ExperimentError::Json {
            path: origin.to_string(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Ground truth, initial state and measurements of one simulated run.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub truth: GroundTruth,
    pub initial: SplineTrajectory,
    pub initial_landmarks: Vec<Vector3<f64>>,
    pub measurements: Measurements,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl Scenario {
    /// Motion, perturbation and noise draw from separate streams of the
    /// seed, so changing one level leaves the other draws untouched.
    pub fn simulate(spec: &ScenarioSpec) -> Result<Self, SpecError> {
        spec.validate()?;
        let truth = sim::generate_trajectory(spec, &mut stream(spec.seed, 0))?;
        let mut rng = stream(spec.seed, 1);
        let initial = sim::perturb_bases(&truth.trajectory, spec.perturbation(), &mut rng);
        let initial_landmarks = sim::perturb_landmarks(&truth.landmarks, spec.landmark_perturbation(), &mut rng);
        let measurements = sim::sample_measurements(&truth, spec, &mut stream(spec.seed, 2))?;
        Ok(Self {
            spec: spec.clone(),
            truth,
            initial,
            initial_landmarks,
            measurements,
        })
    }

    pub fn write_dir(&self, dir: &Path) -> Result<(), ExperimentError> {
        std::fs::create_dir_all(dir)?;
        let mut json = serde_json::to_string_pretty(&self.spec).expect("spec serializes");
        json.push('\n');
        std::fs::write(dir.join(SCENARIO_FILE), json)?;
        let create = |name: &str| -> Result<BufWriter<File>, ExperimentError> {
            Ok(BufWriter::new(File::create(dir.join(name))?))
        };
        io::write_trajectory(create(GROUND_TRUTH_FILE)?, &self.truth.trajectory)?;
        io::write_trajectory(create(INITIAL_FILE)?, &self.initial)?;
        match self.spec.setup {
            Setup::Absolute => io::write_absolute(create(ABSOLUTE_FILE)?, &self.measurements.absolute)?,
            Setup::Localization => {
                io::write_visual(create(VISUAL_FILE)?, &self.measurements.visual)?;
                io::write_landmarks(create(LANDMARKS_FILE)?, &self.truth.landmarks)?;
                io::write_landmarks(create(INITIAL_LANDMARKS_FILE)?, &self.initial_landmarks)?;
            }
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self, ExperimentError> {
        let path = dir.join(SCENARIO_FILE);
        let text = std::fs::read_to_string(&path).map_err(|_| ExperimentError::MissingFile(SCENARIO_FILE))?;
        let spec: ScenarioSpec = serde_json::from_str(&text).map_err(|source| ExperimentError::Json {
            path: path.display().to_string(),
            source,
        })?;
        spec.validate()?;
        let open = |name: &'static str| -> Result<BufReader<File>, ExperimentError> {
            File::open(dir.join(name))
                .map(BufReader::new)
                .map_err(|_| ExperimentError::MissingFile(name))
        };
        let trajectory = io::read_trajectory(open(GROUND_TRUTH_FILE)?, spec.spline)?;
        let initial = io::read_trajectory(open(INITIAL_FILE)?, spec.spline)?;
        let mut measurements = Measurements::default();
        let (mut landmarks, mut initial_landmarks) = (Vec::new(), Vec::new());
        match spec.setup {
            Setup::Absolute => measurements.absolute = io::read_absolute(open(ABSOLUTE_FILE)?)?,
            Setup::Localization => {
                measurements.visual = io::read_visual(open(VISUAL_FILE)?)?;
                landmarks = io::read_landmarks(open(LANDMARKS_FILE)?)?;
                initial_landmarks = io::read_landmarks(open(INITIAL_LANDMARKS_FILE)?)?;
            }
        }
        Ok(Self {
            spec,
            truth: GroundTruth { trajectory, landmarks },
            initial,
            initial_landmarks,
            measurements,
        })
    }
}

/// A factor graph together with the ids of its basis and landmark nodes.
#[derive(Clone, Debug)]
pub struct ProblemGraph {
    pub graph: FactorGraph,
    pub bases: Vec<NodeId>,
    pub landmarks: Vec<NodeId>,
    pub kind: SplineKind,
    pub start_time: f64,
    pub interval: f64,
}

fn isotropic_sqrt_info(dim: usize, sigma: f64) -> DMatrix<f64> {
    // A noiseless sensor still needs a finite weight.
    let w = if sigma > 0.0 { 1.0 / sigma } else { 1.0 };
    DMatrix::identity(dim, dim) * w
}

pub fn build_graph(scenario: &Scenario, config: &ExperimentConfig) -> Result<ProblemGraph, ExperimentError> {
    let spec = &scenario.spec;
    let mut graph = FactorGraph::new();
    let traj = &scenario.initial;
    let bases = traj
        .bases()
        .iter()
        .map(|p| {
            graph.add_variable(
                VariableKind::PoseBasis,
                Element::Pose(*p),
                DMatrix::identity(6, 6) * config.initial_precision,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let window = |segment: usize| bases[segment..segment + 4].to_vec();
    let mut landmarks = Vec::new();
    match spec.setup {
        Setup::Absolute => {
            let omega = isotropic_sqrt_info(6, spec.noise());
            for m in &scenario.measurements.absolute {
                let sample = SplineSample::locate(traj, m.time).map_err(|source| ExperimentError::Measurement {
                    time: m.time,
                    source,
                })?;
                let model = Arc::new(AbsolutePoseFactor::new(sample, m.pose, spec.absolute_extrinsic));
                graph.add_factor(
                    FactorSpec::new(model, window(sample.segment), omega.clone()).with_loss(config.loss),
                )?;
            }
        }
        Setup::Localization => {
            let prior = DMatrix::identity(3, 3) / config.landmark_prior_sigma.powi(2);
            for l in &scenario.initial_landmarks {
                let id = graph.add_variable(
                    VariableKind::Landmark,
                    Element::vector3(*l),
                    DMatrix::identity(3, 3) * config.initial_precision,
                )?;
                graph.add_prior(id, Element::vector3(*l), &prior)?;
                landmarks.push(id);
            }
            let extrinsic = graph.add_constant(Element::Pose(spec.camera_extrinsic))?;
            let omega = isotropic_sqrt_info(2, spec.noise());
            for m in &scenario.measurements.visual {
                let sample = SplineSample::locate(traj, m.time).map_err(|source| ExperimentError::Measurement {
                    time: m.time,
                    source,
                })?;
                let model = Arc::new(ReprojectionFactor::new(sample, m.pixel, spec.intrinsics));
                let mut neighbors = window(sample.segment);
                neighbors.push(landmarks[m.landmark]);
                neighbors.push(extrinsic);
                graph.add_factor(FactorSpec::new(model, neighbors, omega.clone()).with_loss(config.loss))?;
            }
        }
    }
    Ok(ProblemGraph {
        graph,
        bases,
        landmarks,
        kind: traj.kind(),
        start_time: traj.start_time(),
        interval: traj.interval(),
    })
}

impl ProblemGraph {
    /// Trajectory formed by the current basis means.
    pub fn trajectory(&self) -> Result<SplineTrajectory, SplineError> {
        let poses: Vec<Pose> = self
            .bases
            .iter()
            .map(|&id| *self.graph.value(id).and_then(Element::as_pose).expect("basis nodes hold poses"))
            .collect();
        SplineTrajectory::new(self.kind, self.start_time, self.interval, poses)
    }

    pub fn landmark_estimates(&self) -> Vec<Vector3<f64>> {
        self.landmarks
            .iter()
            .map(|&id| self.graph.value(id).and_then(Element::as_vector3).expect("landmark nodes hold 3-vectors"))
            .collect()
    }
}

/// Runs one solver in place, returning its telemetry.
pub fn run_solver(problem: &mut ProblemGraph, solver: SolverKind, config: &ExperimentConfig) -> Result<RunRecord, ExperimentError> {
    match solver {
        SolverKind::Gbp => gbp::solve(&mut problem.graph, &config.gbp).map_err(|e| match e {
            SolveError::Config(c) => ExperimentError::Config(c),
            other => ExperimentError::Solver {
                message: other.to_string(),
                record: RunRecord::default(),
            },
        }),
        SolverKind::Nlls => {
            let mut record = RunRecord::default();
            match nlls::gauss_newton_into(&mut problem.graph, &config.nlls, &mut record) {
                Ok(()) => Ok(record),
                Err(NllsError::Graph(e)) => Err(ExperimentError::Graph(e)),
                Err(e) => Err(ExperimentError::Solver {
                    message: e.to_string(),
                    record,
                }),
            }
        }
    }
}

/// Result of solving one scenario.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub solver: SolverKind,
    pub record: RunRecord,
    pub problem: ProblemGraph,
    pub errors: ErrorSamples,
    pub rotation_rmse: f64,
    pub translation_rmse: f64,
}

impl RunOutcome {
    pub fn iterations_to_convergence(&self) -> Option<usize> {
        self.record.iterations_to_convergence(CONVERGENCE_RTOL)
    }

    pub fn final_energy(&self) -> f64 {
        self.record.final_energy().unwrap_or(f64::NAN)
    }

    pub fn summary(&self, setup: Setup) -> RunSummary {
        RunSummary {
            solver: self.solver,
            setup,
            rotation_rmse: self.rotation_rmse,
            translation_rmse: self.translation_rmse,
            iterations: self.record.iterations(),
            iterations_to_convergence: self.iterations_to_convergence(),
            converged: self.record.converged,
            initial_energy: self.record.initial_energy().unwrap_or(f64::NAN),
            final_energy: self.final_energy(),
            factor_failures: self.record.factor_failures,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub solver: SolverKind,
    pub setup: Setup,
    pub rotation_rmse: f64,
    pub translation_rmse: f64,
    pub iterations: usize,
    pub iterations_to_convergence: Option<usize>,
    pub converged: bool,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub factor_failures: usize,
}

pub fn run_experiment(scenario: &Scenario, config: &ExperimentConfig, solver: SolverKind) -> Result<RunOutcome, ExperimentError> {
    let mut problem = build_graph(scenario, config)?;
    let record = run_solver(&mut problem, solver, config)?;
    let estimate = problem.trajectory()?;
    let errors = sim::trajectory_errors(&estimate, &scenario.truth.trajectory, RMSE_RATE)?;
    let (rotation_rmse, translation_rmse) = errors.rmse();
    info!(
        "{} {}: {} iterations, energy {:e}, rmse R {:e} t {:e}",
        solver.name(),
        scenario.spec.setup.name(),
        record.iterations(),
        record.final_energy().unwrap_or(f64::NAN),
        rotation_rmse,
        translation_rmse
    );
    Ok(RunOutcome {
        solver,
        record,
        problem,
        errors,
        rotation_rmse,
        translation_rmse,
    })
}

/// Writes `t,dr,dt` rows.
pub fn write_error_samples<W: std::io::Write>(out: W, errors: &ErrorSamples) -> Result<(), IoError> {
    #[derive(Serialize)]
    struct Row {
        t: f64,
        dr: f64,
        dt: f64,
    }
    io::write_rows(
        out,
        errors
            .t
            .iter()
            .zip(&errors.rotation)
            .zip(&errors.translation)
            .map(|((&t, &dr), &dt)| Row { t, dr, dt }),
    )
}

/// Writes `iter,energy` rows.
pub fn write_energy<W: std::io::Write>(out: W, record: &RunRecord) -> Result<(), IoError> {
    #[derive(Serialize)]
    struct Row {
        iter: usize,
        energy: f64,
    }
    io::write_rows(
        out,
        record.rows.iter().map(|r| Row {
            iter: r.iter,
            energy: r.energy,
        }),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Perturbation,
    Noise,
    Dropout,
    Spline,
}

impl SweepKind {
    pub fn name(&self) -> &'static str {
        match self {
            SweepKind::Perturbation => "perturbation",
            SweepKind::Noise => "noise",
            SweepKind::Dropout => "dropout",
            SweepKind::Spline => "spline",
        }
    }

    /// Default grid; spline kinds are encoded as 0 (B) and 1 (Z).
    pub fn default_grid(&self) -> Vec<f64> {
        match self {
            SweepKind::Perturbation | SweepKind::Noise => vec![1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1e0],
            SweepKind::Dropout => (0..=6).map(|k| k as f64 / 10.0).collect(),
            SweepKind::Spline => vec![0.0, 1.0],
        }
    }
}

pub fn spline_from_grid(value: f64) -> SplineKind {
    if value < 0.5 {
        SplineKind::BSpline
    } else {
        SplineKind::ZSpline
    }
}

/// Applies one grid value to a base configuration.
pub fn sweep_point(base: &ExperimentConfig, kind: SweepKind, value: f64) -> ExperimentConfig {
    let mut cfg = base.clone();
    match kind {
        SweepKind::Perturbation => cfg.scenario.perturbation = Some(value),
        SweepKind::Noise => cfg.scenario.noise = Some(value),
        SweepKind::Dropout => cfg.gbp = cfg.gbp.with_dropout(value, value),
        SweepKind::Spline => cfg.scenario.spline = spline_from_grid(value),
    }
    cfg
}

/// Metrics of one solver at one grid point; NaN when the run failed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverMetrics {
    pub rotation_rmse: f64,
    pub translation_rmse: f64,
    pub iterations: Option<usize>,
    pub iterations_to_convergence: Option<usize>,
    pub final_energy: f64,
}

impl SolverMetrics {
    pub fn failed() -> Self {
        Self {
            rotation_rmse: f64::NAN,
            translation_rmse: f64::NAN,
            iterations: None,
            iterations_to_convergence: None,
            final_energy: f64::NAN,
        }
    }

    fn from_outcome(o: &RunOutcome) -> Self {
        Self {
            rotation_rmse: o.rotation_rmse,
            translation_rmse: o.translation_rmse,
            iterations: Some(o.record.iterations()),
            iterations_to_convergence: o.iterations_to_convergence(),
            final_energy: o.final_energy(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub gbp: SolverMetrics,
    pub nlls: SolverMetrics,
}

fn metrics(scenario: &Result<Scenario, ExperimentError>, cfg: &ExperimentConfig, solver: SolverKind) -> SolverMetrics {
    let Ok(scenario) = scenario else {
        return SolverMetrics::failed();
    };
    match run_experiment(scenario, cfg, solver) {
        Ok(o) => SolverMetrics::from_outcome(&o),
        Err(e) => {
            log::warn!("{} run failed: {e}", solver.name());
            SolverMetrics::failed()
        }
    }
}

/// Runs both solvers at every grid point. Failed points become NaN rows.
pub fn sweep(base: &ExperimentConfig, kind: SweepKind, grid: &[f64]) -> Vec<SweepRow> {
    let mut rows = Vec::with_capacity(grid.len());
    let mut nlls_cache: Option<SolverMetrics> = None;
    for &value in grid {
        let cfg = sweep_point(base, kind, value);
        let scenario = Scenario::simulate(&cfg.scenario).map_err(ExperimentError::from);
        if let Err(e) = &scenario {
            log::warn!("{} = {value}: {e}", kind.name());
        }
        let gbp = metrics(&scenario, &cfg, SolverKind::Gbp);
        // Dropout does not affect the centralized baseline.
        let nlls = match (kind, nlls_cache) {
            (SweepKind::Dropout, Some(m)) => m,
            _ => {
                let m = metrics(&scenario, &cfg, SolverKind::Nlls);
                if kind == SweepKind::Dropout {
                    nlls_cache = Some(m);
                }
                m
            }
        };
        rows.push(SweepRow { value, gbp, nlls });
    }
    rows
}

/// Wide CSV with one row per grid point.
pub fn write_sweep<W: std::io::Write>(mut out: W, kind: SweepKind, rows: &[SweepRow]) -> Result<(), IoError> {
    writeln!(out, "{CSV_HEADER}")?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![kind.name().to_string()];
    for s in ["gbp", "nlls"] {
        for col in [
            "rotation_rmse",
            "translation_rmse",
            "iterations",
            "iterations_to_convergence",
            "final_energy",
        ] {
            header.push(format!("{s}_{col}"));
        }
    }
    w.write_record(&header)?;
    let opt = |v: Option<usize>| v.map_or_else(|| "NaN".to_string(), |n| n.to_string());
    for r in rows {
        let mut rec = vec![match kind {
            SweepKind::Spline => spline_from_grid(r.value).name().to_string(),
            _ => format!("{:e}", r.value),
        }];
        for m in [&r.gbp, &r.nlls] {
            rec.push(format!("{:e}", m.rotation_rmse));
            rec.push(format!("{:e}", m.translation_rmse));
            rec.push(opt(m.iterations));
            rec.push(opt(m.iterations_to_convergence));
            rec.push(format!("{:e}", m.final_energy));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Median time of one spline evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplineTiming {
    /// `pose`, `velocity` or `acceleration`.
    pub quantity: String,
    pub jacobians: bool,
    pub median_ns: f64,
}

/// Times cubic spline evaluation of the three motion quantities, with and
/// without basis Jacobians. Each repetition evaluates `batch` timestamps.
pub fn bench_spline(kind: SplineKind, reps: usize, batch: usize) -> Result<Vec<SplineTiming>, ExperimentError> {
    let spec = ScenarioSpec {
        spline: kind,
        ..ScenarioSpec::default()
    };
    let traj = sim::generate_trajectory(&spec, &mut stream(spec.seed, 0))?.trajectory;
    let (t0, t1) = traj.domain();
    let batch = batch.max(1);
    let times: Vec<f64> = (0..batch).map(|k| t0 + (t1 - t0) * (k as f64 + 0.5) / batch as f64).collect();
    let mut out = Vec::new();
    for (order, quantity) in ["pose", "velocity", "acceleration"].into_iter().enumerate() {
        for jacobians in [false, true] {
            let mut samples: Vec<f64> = (0..reps.max(1))
                .map(|_| {
                    let start = std::time::Instant::now();
                    for &t in &times {
                        std::hint::black_box(traj.evaluate(std::hint::black_box(t), order, jacobians).ok());
                    }
                    start.elapsed().as_nanos() as f64 / batch as f64
                })
                .collect();
            samples.sort_by(f64::total_cmp);
            out.push(SplineTiming {
                quantity: quantity.to_string(),
                jacobians,
                median_ns: samples[samples.len() / 2],
            });
        }
    }
    Ok(out)
}
