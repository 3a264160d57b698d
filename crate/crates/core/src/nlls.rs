//! Centralized Gauss–Newton / Levenberg–Marquardt baseline over the same
//! factor graph.

use std::collections::BTreeMap;
use std::time::Instant;

use log::debug;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gbp::{lenient_energy, linearize_factor, relative_change_within, FactorLinearization, IterationRecord, RunRecord};
use crate::graph::{FactorGraph, GraphError, NodeId};
use crate::linalg::symmetrize;

/// Global tangent coordinates of the variables.
#[derive(Clone, Debug, PartialEq)]
pub struct VariableIndex {
    /// Node id → (offset, tangent dimension).
    pub blocks: BTreeMap<NodeId, (usize, usize)>,
    pub dim: usize,
}

impl VariableIndex {
    pub fn new(graph: &FactorGraph) -> Self {
        let mut blocks = BTreeMap::new();
        let mut dim = 0;
        for v in graph.variables() {
            let d = v.mean.tangent_dim();
            blocks.insert(v.id, (dim, d));
            dim += d;
        }
        Self { blocks, dim }
    }
}

/// `H = Σ J̆ᵀJ̆`, `g = Σ J̆ᵀr̆` in global tangent coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalEquations {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub index: VariableIndex,
}

pub fn build_normal_equations(graph: &FactorGraph) -> Result<NormalEquations, GraphError> {
    let index = VariableIndex::new(graph);
    let ids = graph.factor_ids();
    let lins: Vec<FactorLinearization> = ids
        .par_iter()
        .map(|&f| linearize_factor(graph, graph.factor(f).expect("id from graph")))
        .collect::<Result<_, _>>()?;
    let n = index.dim;
    let mut h = DMatrix::zeros(n, n);
    let mut g = DVector::zeros(n);
    for lin in &lins {
        for (a, node_a) in lin.nodes.iter().enumerate() {
            let (ga, da) = index.blocks[node_a];
            let la = lin.offsets[a];
            let mut gr = g.rows_mut(ga, da);
            gr -= lin.eta.rows(la, da);
            for (b, node_b) in lin.nodes.iter().enumerate() {
                let (gb, db) = index.blocks[node_b];
                let lb = lin.offsets[b];
                let mut hv = h.view_mut((ga, gb), (da, db));
                hv += lin.lambda.view((la, lb), (da, db));
            }
        }
    }
    Ok(NormalEquations {
        hessian: symmetrize(&h),
        gradient: g,
        index,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Damping {
    /// Plain Gauss–Newton; every step is accepted.
    None,
    /// Marquardt scaling `H + λ diag(H)`, λ ×10 on reject and ÷10 on accept.
    LevenbergMarquardt { initial_lambda: f64 },
}

impl Default for Damping {
    fn default() -> Self {
        Damping::LevenbergMarquardt { initial_lambda: 1e-4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NllsConfig {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub damping: Damping,
    /// Rejected trial steps allowed per iteration before giving up.
    pub max_rejections: usize,
}

impl Default for NllsConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: 1e-9,
            damping: Damping::default(),
            max_rejections: 12,
        }
    }
}

#[derive(Debug, Error)]
pub enum NllsError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("normal equations are singular at iteration {0}")]
    Singular(usize),
}

fn apply_step(graph: &mut FactorGraph, index: &VariableIndex, delta: &DVector<f64>) -> f64 {
    let mut max = 0.0f64;
    for (id, &(o, d)) in &index.blocks {
        let step = delta.rows(o, d).into_owned();
        max = max.max(step.norm());
        let v = graph.variable_mut(*id).expect("index built from graph");
        v.mean = v.mean.boxplus(&step);
    }
    max
}

/// Iterates `H δ = −g` until the relative energy change drops below the
/// tolerance or the iteration cap is hit.
pub fn gauss_newton_solve(graph: &mut FactorGraph, config: &NllsConfig) -> Result<RunRecord, NllsError> {
    let mut record = RunRecord::default();
    gauss_newton_into(graph, config, &mut record)?;
    Ok(record)
}

/// Like [`gauss_newton_solve`], appending rows to `record` so the telemetry
/// gathered before a failure is kept.
pub fn gauss_newton_into(graph: &mut FactorGraph, config: &NllsConfig, record: &mut RunRecord) -> Result<(), NllsError> {
    let (mut energy, fails) = lenient_energy(graph);
    record.factor_failures += fails;
    record.push(IterationRecord {
        iter: 0,
        energy,
        max_delta: 0.0,
        wall_ms: 0.0,
    });
    let mut lambda = match config.damping {
        Damping::None => 0.0,
        Damping::LevenbergMarquardt { initial_lambda } => initial_lambda,
    };
    for iter in 1..=config.max_iterations {
        let start = Instant::now();
        let ne = build_normal_equations(graph)?;
        let n = ne.index.dim;
        let neg_g = -&ne.gradient;
        let (new_energy, max_delta) = match config.damping {
            Damping::None => {
                let chol = ne.hessian.clone().cholesky().ok_or(NllsError::Singular(iter))?;
                let delta = chol.solve(&neg_g);
                let max_delta = apply_step(graph, &ne.index, &delta);
                (lenient_energy(graph).0, max_delta)
            }
            Damping::LevenbergMarquardt { .. } => {
                let mut accepted = None;
                for _ in 0..=config.max_rejections {
                    let mut damped = ne.hessian.clone();
                    for i in 0..n {
                        damped[(i, i)] += lambda * ne.hessian[(i, i)];
                    }
                    let Some(chol) = damped.cholesky() else {
                        lambda *= 10.0;
                        continue;
                    };
                    let delta = chol.solve(&neg_g);
                    let mut trial = graph.clone();
                    let max_delta = apply_step(&mut trial, &ne.index, &delta);
                    let (e, fails) = lenient_energy(&trial);
                    if fails == 0 && e <= energy {
                        lambda = (lambda / 10.0).max(1e-12);
                        *graph = trial;
                        accepted = Some((e, max_delta));
                        break;
                    }
                    lambda *= 10.0;
                }
                match accepted {
                    Some(x) => x,
                    // No descent direction left: the current state is final.
                    None => (energy, 0.0),
                }
            }
        };
        record.push(IterationRecord {
            iter,
            energy: new_energy,
            max_delta,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        debug!("nlls iter {iter}: energy {new_energy:e}, lambda {lambda:e}");
        let done = relative_change_within(energy, new_energy, config.tolerance);
        energy = new_energy;
        if done {
            record.converged = true;
            break;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{FactorSpec, VariableKind};
    use crate::manifold::{quat_exp, Element, Pose};
    use crate::sensors::{AbsolutePoseFactor, LinearFactor, SplineSample};
    use crate::spline::SplineKind;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn random_pose(rng: &mut ChaCha8Rng, rot: f64, trans: f64) -> Pose {
        let w = Vector3::from_fn(|_, _| rng.random_range(-rot..rot));
        let t = Vector3::from_fn(|_, _| rng.random_range(-trans..trans));
        Pose::new(quat_exp(&w), t)
    }

    fn pose_graph(rng: &mut ChaCha8Rng) -> FactorGraph {
        let mut g = FactorGraph::new();
        let ids: Vec<NodeId> = (0..5)
            .map(|_| {
                g.add_variable(VariableKind::PoseBasis, Element::Pose(random_pose(rng, 0.5, 1.0)), DMatrix::identity(6, 6))
                    .unwrap()
            })
            .collect();
        for w in 0..2 {
            for _ in 0..5 {
                let sample = SplineSample {
                    time: 0.0,
                    segment: w,
                    u: rng.random_range(0.0..1.0),
                    interval: 0.1,
                    kind: SplineKind::BSpline,
                };
                let m = Arc::new(AbsolutePoseFactor::new(sample, random_pose(rng, 0.5, 1.0), Pose::identity()));
                let omega = DMatrix::from_fn(6, 6, |i, j| if i == j { 2.0 } else { rng.random_range(-0.1..0.1) });
                g.add_factor(FactorSpec::new(m, ids[w..w + 4].to_vec(), omega)).unwrap();
            }
        }
        g
    }

    /// Stacked whitened residuals of every factor.
    fn stacked_residual(g: &FactorGraph) -> DVector<f64> {
        let parts: Vec<f64> = g
            .factors()
            .flat_map(|f| g.whitened_residual(f).unwrap().iter().copied().collect::<Vec<_>>())
            .collect();
        DVector::from_vec(parts)
    }

    #[test]
    fn hessian_matches_finite_difference_gauss_newton_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = pose_graph(&mut rng);
        let ne = build_normal_equations(&g).unwrap();
        let r0 = stacked_residual(&g);
        let h = 1e-6;
        let mut jfd = DMatrix::zeros(r0.len(), ne.index.dim);
        for (id, &(o, d)) in &ne.index.blocks {
            for c in 0..d {
                let shifted = |s: f64| {
                    let mut g2 = g.clone();
                    let v = g2.variable_mut(*id).unwrap();
                    let mut t = DVector::zeros(d);
                    t[c] = s;
                    v.mean = v.mean.boxplus(&t);
                    stacked_residual(&g2)
                };
                let col = (shifted(h) - shifted(-h)) / (2.0 * h);
                jfd.set_column(o + c, &col);
            }
        }
        let hfd = jfd.transpose() * &jfd;
        let gfd = jfd.transpose() * &r0;
        assert!((&ne.hessian - &hfd).amax() <= 1e-5 * hfd.amax());
        assert!((&ne.gradient - &gfd).amax() <= 1e-5 * gfd.amax());
        assert!((&ne.hessian - ne.hessian.transpose()).amax() < 1e-12);
    }

    #[test]
    fn unary_factor_hessian_is_its_information() {
        let mut g = FactorGraph::new();
        let x = g
            .add_variable(VariableKind::PoseBasis, Element::Pose(Pose::identity()), DMatrix::identity(6, 6))
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mean = Element::Pose(random_pose(&mut rng, 0.4, 1.0));
        let a = DMatrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
        let prec = &a * a.transpose() + DMatrix::identity(6, 6);
        let f = g.add_prior(x, mean, &prec).unwrap();
        let ne = build_normal_equations(&g).unwrap();
        let lin = linearize_factor(&g, g.factor(f).unwrap()).unwrap();
        assert_relative_eq!(ne.hessian, lin.lambda, epsilon = 1e-12);
        assert_relative_eq!(ne.gradient, -lin.eta, epsilon = 1e-12);
    }

    #[test]
    fn linear_problem_solved_in_one_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = FactorGraph::new();
        let ids: Vec<NodeId> = (0..4)
            .map(|_| {
                g.add_variable(VariableKind::GenericVector(2), Element::Vector(DVector::zeros(2)), DMatrix::zeros(2, 2))
                    .unwrap()
            })
            .collect();
        let mut rows = Vec::new();
        for k in 0..4 {
            for nb in [vec![k], vec![k, (k + 1) % 4]] {
                let blocks: Vec<DMatrix<f64>> = nb
                    .iter()
                    .map(|_| DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0)))
                    .collect();
                let b = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
                rows.push((nb.clone(), blocks.clone(), b.clone()));
                let model = Arc::new(LinearFactor::new(blocks, b));
                g.add_factor(FactorSpec::new(model, nb.iter().map(|&i| ids[i]).collect(), DMatrix::identity(2, 2)))
                    .unwrap();
            }
        }
        // dense least-squares oracle
        let mut a = DMatrix::zeros(2 * rows.len(), 8);
        let mut b = DVector::zeros(2 * rows.len());
        for (r, (nb, blocks, rhs)) in rows.iter().enumerate() {
            for (k, blk) in nb.iter().zip(blocks) {
                a.view_mut((2 * r, 2 * k), (2, 2)).copy_from(blk);
            }
            b.rows_mut(2 * r, 2).copy_from(rhs);
        }
        let x = (a.transpose() * &a).try_inverse().unwrap() * a.transpose() * b;
        let cfg = NllsConfig {
            max_iterations: 1,
            damping: Damping::None,
            ..NllsConfig::default()
        };
        gauss_newton_solve(&mut g, &cfg).unwrap();
        for (k, id) in ids.iter().enumerate() {
            let m = g.variable(*id).unwrap().mean.as_vector().unwrap().clone();
            assert!((m - x.rows(2 * k, 2)).amax() < 1e-10);
        }
    }

    #[test]
    fn lm_energy_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let mut g = pose_graph(&mut rng);
            let rec = gauss_newton_solve(&mut g, &NllsConfig::default()).unwrap();
            for w in rec.rows.windows(2) {
                assert!(w[1].energy <= w[0].energy);
            }
        }
    }

    #[test]
    fn singular_without_damping_fails() {
        let mut g = FactorGraph::new();
        let x = g
            .add_variable(VariableKind::GenericVector(2), Element::Vector(DVector::zeros(2)), DMatrix::zeros(2, 2))
            .unwrap();
        let model = Arc::new(LinearFactor::new(vec![DMatrix::from_row_slice(1, 2, &[1.0, 1.0])], DVector::from_vec(vec![1.0])));
        g.add_factor(FactorSpec::new(model, vec![x], DMatrix::identity(1, 1))).unwrap();
        let cfg = NllsConfig {
            damping: Damping::None,
            ..NllsConfig::default()
        };
        assert!(matches!(gauss_newton_solve(&mut g, &cfg), Err(NllsError::Singular(1))));
    }
}
