//! Continuous-time Gaussian belief propagation on Lie groups.

pub mod experiment;
pub mod gbp;
pub mod graph;
pub mod io;
pub mod linalg;
pub mod manifold;
pub mod nlls;
pub mod robust;
pub mod sensors;
pub mod sim;
pub mod spline;

pub use experiment::{ExperimentConfig, ExperimentError, RunSummary, Scenario, SolverKind, SweepKind};
pub use gbp::{solve, IterationRecord, RunRecord, Schedule, SolverConfig};
pub use graph::{FactorGraph, FactorId, FactorSpec, GraphSnapshot, NodeId, VariableKind};
pub use manifold::{Element, Pose, UnitQuaternion};
pub use nlls::{gauss_newton_solve, Damping, NllsConfig};
pub use robust::LossFunction;
pub use sensors::{AbsoluteMeasurement, Intrinsics, VisualMeasurement};
pub use sim::{ScenarioSpec, Setup};
pub use spline::{SplineKind, SplineTrajectory};
