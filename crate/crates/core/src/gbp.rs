//! Gaussian belief propagation over manifold-valued variables.
//!
//! One iteration is a factor phase (linearize every factor at the current
//! means and emit factor-to-node messages) followed by a node phase (fuse the
//! incoming messages in the tangent space at the node mean and emit
//! node-to-factor messages). Both phases read only messages committed by the
//! previous phase, so vertex updates within a phase are independent.

use std::io::Write;
use std::time::Instant;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{
    Direction, Factor, FactorGraph, FactorId, GraphError, MessageTriplet, NodeId, VariableNode,
};
use crate::linalg::{inverse_spd, jitter_for, pinv_sym_rtol, solve_spd, symmetrize};
use crate::manifold::{so3_left_jacobian_inv, Element};
use crate::robust::triggs_correct;

/// Header comment written at the top of every CSV file.
pub const CSV_HEADER: &str = "# ct-gbp v1";

/// Relative eigenvalue cutoff when converting marginal messages to moment
/// form.
pub const MOMENT_RTOL: f64 = 1e-9;

/// A factor linearized at the current neighbor means.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorLinearization {
    /// Values of the variable neighbors, in edge order.
    pub point: Vec<Element>,
    pub nodes: Vec<NodeId>,
    /// Start of each variable's block in the stacked tangent vector.
    pub offsets: Vec<usize>,
    pub residual: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    /// `η⁰ = −J̆ᵀr̆`
    pub eta: DVector<f64>,
    /// `Λ⁰ = J̆ᵀJ̆`
    pub lambda: DMatrix<f64>,
}

impl FactorLinearization {
    pub fn dim(&self) -> usize {
        self.eta.len()
    }

    pub fn block_dim(&self, k: usize) -> usize {
        self.point[k].tangent_dim()
    }
}

/// Whitens, robustifies and linearizes one factor at the current state.
pub fn linearize_factor(graph: &FactorGraph, factor: &Factor) -> Result<FactorLinearization, GraphError> {
    let values = graph.neighbor_values(factor);
    let eval = factor
        .model
        .evaluate(&values, true)
        .map_err(|source| GraphError::Residual {
            factor: factor.id,
            source,
        })?;
    let omega = &factor.sqrt_information;
    let slots = factor.variable_slots();
    let mut offsets = Vec::with_capacity(slots.len());
    let mut dim = 0;
    for &s in slots {
        offsets.push(dim);
        dim += values[s].tangent_dim();
    }
    let m = eval.residual.len();
    let mut jac = DMatrix::zeros(m, dim);
    for (k, &s) in slots.iter().enumerate() {
        let block = eval.jacobians[s]
            .as_ref()
            .expect("residual models provide Jacobians for variable slots");
        jac.view_mut((0, offsets[k]), (m, block.ncols()))
            .copy_from(&(omega * block));
    }
    let rbar = omega * &eval.residual;
    if !rbar.iter().chain(jac.iter()).all(|v| v.is_finite()) {
        return Err(GraphError::Residual {
            factor: factor.id,
            source: crate::graph::ResidualError::NonFinite,
        });
    }
    let (r, j) = triggs_correct(&rbar, &jac, &factor.loss);
    let jt = j.transpose();
    let eta = -(&jt * &r);
    let lambda = symmetrize(&(&jt * &j));
    Ok(FactorLinearization {
        point: slots.iter().map(|&s| values[s].clone()).collect(),
        nodes: slots.iter().map(|&s| factor.neighbors[s]).collect(),
        offsets,
        residual: r,
        jacobian: j,
        eta,
        lambda,
    })
}

/// Inverse of `∂(x ⊞ (τ + δ)) ⊟ (x ⊞ τ) / ∂δ`.
fn dboxplus_inv(at: &Element, tau: &DVector<f64>) -> Option<DMatrix<f64>> {
    let rot = |n: usize| {
        let w = nalgebra::Vector3::new(tau[0], tau[1], tau[2]);
        let mut j = DMatrix::identity(n, n);
        j.view_mut((0, 0), (3, 3)).copy_from(&so3_left_jacobian_inv(&w));
        Some(j)
    };
    match at {
        Element::Pose(_) => rot(6),
        Element::Rotation(_) => rot(3),
        Element::Vector(_) => None,
    }
}

/// `JᵀΛJ`, skipped when `J` is the identity.
fn congruence(lambda: &DMatrix<f64>, j: Option<&DMatrix<f64>>) -> DMatrix<f64> {
    match j {
        Some(j) => symmetrize(&(j.transpose() * lambda * j)),
        None => lambda.clone(),
    }
}

/// Mean and precision (in the tangent at that mean) of a moment-form
/// factor-to-node message.
pub fn message_moments(msg: &MessageTriplet) -> (Element, DMatrix<f64>) {
    if msg.tangent.iter().all(|v| *v == 0.0) {
        return (msg.linearization.clone(), msg.precision.clone());
    }
    let mean = msg.linearization.boxplus(&msg.tangent);
    let jinv = dboxplus_inv(&msg.linearization, &msg.tangent);
    (mean, congruence(&msg.precision, jinv.as_ref()))
}

/// Re-expresses a Gaussian with the given mean and precision in the tangent
/// space at `at`: returns `(τ⁰, Λ⁰)` with `τ⁰ = mean ⊟ at`.
pub fn warp_to(mean: &Element, precision: &DMatrix<f64>, at: &Element) -> (DVector<f64>, DMatrix<f64>) {
    let tau = mean.boxminus(at);
    let j = match at {
        Element::Vector(_) => None,
        _ => Some(at.dboxplus_dtau(&tau)),
    };
    let lambda = congruence(precision, j.as_ref());
    (tau, lambda)
}

/// Information-form node-to-factor message moved to another linearization
/// point.
fn transport_information(msg: &MessageTriplet, to: &Element) -> (DVector<f64>, DMatrix<f64>) {
    if &msg.linearization == to {
        return (msg.tangent.clone(), msg.precision.clone());
    }
    let d = msg.linearization.boxminus(to);
    let j = match to {
        Element::Vector(_) => None,
        _ => Some(to.dboxplus_dtau(&d)),
    };
    let lambda = congruence(&msg.precision, j.as_ref());
    let eta = match &j {
        Some(j) => j.transpose() * &msg.tangent,
        None => msg.tangent.clone(),
    } + &lambda * d;
    (eta, lambda)
}

/// Result of fusing the incoming messages at one variable.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeUpdate {
    pub id: NodeId,
    /// `None` when the summed precision was singular and the mean was kept.
    pub belief: Option<(Element, DMatrix<f64>)>,
    /// Tangent norm of the applied mean increment.
    pub delta: f64,
    /// Outgoing messages, one per adjacent factor.
    pub messages: Vec<(FactorId, MessageTriplet)>,
}

/// Incoming factor-to-node messages of a variable, as (mean, precision at mean).
fn incoming(graph: &FactorGraph, node: &VariableNode) -> Vec<(FactorId, Option<(Element, DMatrix<f64>)>)> {
    node.factors()
        .iter()
        .map(|&fid| {
            let factor = graph.factor(fid).expect("adjacency is consistent");
            let edge = factor.edge_for(node.id).expect("variable neighbors own an edge");
            let msg = &edge.to_node.current;
            let m = (!msg.is_vacuous()).then(|| message_moments(msg));
            (fid, m)
        })
        .collect()
}

/// Node belief update followed by the emission of node-to-factor messages.
///
/// Each incoming message is warped into the tangent space at the current
/// mean and the contributions are summed. The mean moves by
/// `α_n (Λ⁺)⁻¹ Σ Λ⁰τ⁰` and the summed precision is carried along to the
/// new mean.
pub fn node_update(graph: &FactorGraph, id: NodeId, step: f64) -> NodeUpdate {
    let node = graph.variable(id).expect("node_update called on a variable");
    let msgs = incoming(graph, node);
    let n = node.mean.tangent_dim();

    let mut lambda = DMatrix::zeros(n, n);
    let mut info = DVector::zeros(n);
    for (_, m) in &msgs {
        if let Some((mean, prec)) = m {
            let (tau, l) = warp_to(mean, prec, &node.mean);
            info += &l * tau;
            lambda += l;
        }
    }

    let (mean, belief, delta) = match solve_spd(&lambda, &info) {
        Some(x) => {
            let inc = x * step;
            let mean = node.mean.boxplus(&inc);
            let jinv = dboxplus_inv(&node.mean, &inc);
            let prec = congruence(&lambda, jinv.as_ref());
            let delta = inc.norm();
            (mean.clone(), Some((mean, prec)), delta)
        }
        None => {
            debug!("node {id}: singular precision, update skipped");
            (node.mean.clone(), None, 0.0)
        }
    };

    let messages = node_messages(&msgs, &mean);
    NodeUpdate {
        id,
        belief,
        delta,
        messages,
    }
}

/// Node-to-factor messages at `mean`: for each factor the sum of all other
/// incoming messages, re-warped about `mean`.
fn node_messages(
    msgs: &[(FactorId, Option<(Element, DMatrix<f64>)>)],
    mean: &Element,
) -> Vec<(FactorId, MessageTriplet)> {
    let n = mean.tangent_dim();
    let warped: Vec<Option<(DVector<f64>, DMatrix<f64>)>> = msgs
        .iter()
        .map(|(_, m)| {
            m.as_ref().map(|(mu, prec)| {
                let (tau, l) = warp_to(mu, prec, mean);
                (&l * tau, l)
            })
        })
        .collect();
    // Exclusive sums via prefix and suffix accumulation.
    let k = warped.len();
    let zero = || (DVector::zeros(n), DMatrix::zeros(n, n));
    let mut prefix = Vec::with_capacity(k + 1);
    prefix.push(zero());
    for w in &warped {
        let (e, l) = prefix.last().unwrap().clone();
        prefix.push(match w {
            Some((we, wl)) => (e + we, l + wl),
            None => (e, l),
        });
    }
    let mut suffix = vec![zero(); k + 1];
    for i in (0..k).rev() {
        suffix[i] = match &warped[i] {
            Some((we, wl)) => (&suffix[i + 1].0 + we, &suffix[i + 1].1 + wl),
            None => suffix[i + 1].clone(),
        };
    }
    msgs.iter()
        .enumerate()
        .map(|(i, (fid, _))| {
            let eta = &prefix[i].0 + &suffix[i + 1].0;
            let lambda = symmetrize(&(&prefix[i].1 + &suffix[i + 1].1));
            (
                *fid,
                MessageTriplet {
                    linearization: mean.clone(),
                    tangent: eta,
                    precision: lambda,
                    direction: Direction::NodeToFactor,
                },
            )
        })
        .collect()
}

/// Outgoing node-to-factor message for one target, from the node's current
/// mailboxes and mean (no belief update).
pub fn node_to_factor_message(graph: &FactorGraph, node: NodeId, target: FactorId) -> Option<MessageTriplet> {
    let v = graph.variable(node)?;
    let msgs = incoming(graph, v);
    node_messages(&msgs, &v.mean)
        .into_iter()
        .find(|(f, _)| *f == target)
        .map(|(_, m)| m)
}

/// Information form `(η, Λ)` of the marginal on block `a` after
/// eliminating all other blocks, with the recipient's own incoming message
/// left out.
#[derive(Clone, Debug, PartialEq)]
pub struct Marginal {
    pub eta: DVector<f64>,
    pub lambda: DMatrix<f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("marginalization block is singular")]
pub struct SingularBlock;

/// Schur-complement marginalization onto block `a`.
///
/// `eta0`/`lambda0` carry the factor's own information (used for the `a`
/// rows, which excludes the recipient's message); `eta1`/`lambda1` carry the
/// factor information plus all incoming messages (used for the eliminated
/// rows).
pub fn marginalize(
    eta0: &DVector<f64>,
    lambda0: &DMatrix<f64>,
    eta1: &DVector<f64>,
    lambda1: &DMatrix<f64>,
    offsets: &[usize],
    dims: &[usize],
    a: usize,
) -> Result<Marginal, SingularBlock> {
    let (oa, da) = (offsets[a], dims[a]);
    let eta_a = eta0.rows(oa, da).into_owned();
    let lambda_aa = lambda0.view((oa, oa), (da, da)).into_owned();
    let others: Vec<usize> = (0..dims.len())
        .filter(|&k| k != a)
        .flat_map(|k| offsets[k]..offsets[k] + dims[k])
        .collect();
    if others.is_empty() {
        return Ok(Marginal {
            eta: eta_a,
            lambda: lambda_aa,
        });
    }
    let nb = others.len();
    let lambda_bb = DMatrix::from_fn(nb, nb, |i, j| lambda1[(others[i], others[j])]);
    let lambda_ab = DMatrix::from_fn(da, nb, |i, j| lambda1[(oa + i, others[j])]);
    let eta_b = DVector::from_fn(nb, |i, _| eta1[others[i]]);
    let chol = cholesky_once_jittered(&lambda_bb).ok_or(SingularBlock)?;
    let mut rhs = DMatrix::zeros(nb, da + 1);
    rhs.view_mut((0, 0), (nb, da)).copy_from(&lambda_ab.transpose());
    rhs.set_column(da, &eta_b);
    let sol = chol.solve(&rhs);
    let lambda = symmetrize(&(lambda_aa - &lambda_ab * sol.columns(0, da)));
    let eta = eta_a - &lambda_ab * sol.column(da);
    Ok(Marginal { eta, lambda })
}

fn cholesky_once_jittered(m: &DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = m.clone().cholesky() {
        return Some(c);
    }
    let n = m.nrows();
    (m + DMatrix::identity(n, n) * jitter_for(m)).cholesky()
}

/// Moment form of an information-form Gaussian: `(Λ⁺η, Λ)`.
fn to_moment(eta: &DVector<f64>, lambda: &DMatrix<f64>) -> DVector<f64> {
    // Single measurements often constrain only part of a node; directions
    // with negligible precision carry no mean.
    pinv_sym_rtol(lambda, MOMENT_RTOL) * eta
}

/// Outcome of one factor update.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorUpdate {
    pub id: FactorId,
    /// One message per variable edge, `None` where marginalization failed.
    pub messages: Vec<Option<MessageTriplet>>,
}

/// Factor update: fuses the factor's linearization with incoming
/// node-to-factor messages and emits one marginal message per neighbor.
///
/// The step size blends the new mean increment with the previous message's
/// mean (both expressed at the current linearization point); precisions are
/// not damped. A vacuous previous message contributes a zero increment.
pub fn factor_update(factor: &Factor, lin: &FactorLinearization, step: f64) -> FactorUpdate {
    let dims: Vec<usize> = (0..lin.point.len()).map(|k| lin.block_dim(k)).collect();
    let mut eta1 = lin.eta.clone();
    let mut lambda1 = lin.lambda.clone();
    for (k, edge) in factor.edges().iter().enumerate() {
        let (e, l) = transport_information(&edge.to_factor.current, &lin.point[k]);
        let (o, d) = (lin.offsets[k], dims[k]);
        let mut rows = eta1.rows_mut(o, d);
        rows += e;
        let mut block = lambda1.view_mut((o, o), (d, d));
        block += l;
    }
    let messages = factor
        .edges()
        .iter()
        .enumerate()
        .map(|(a, edge)| {
            let marginal = match marginalize(&lin.eta, &lin.lambda, &eta1, &lambda1, &lin.offsets, &dims, a) {
                Ok(m) => m,
                Err(SingularBlock) => {
                    warn!("factor {}: singular block while marginalizing onto {}", factor.id, edge.node);
                    return None;
                }
            };
            let at = &lin.point[a];
            let tau = to_moment(&marginal.eta, &marginal.lambda);
            if !(tau.iter().all(|v| v.is_finite()) && marginal.lambda.iter().all(|v| v.is_finite())) {
                warn!("factor {}: non-finite message to {}", factor.id, edge.node);
                return None;
            }
            let prev = &edge.to_node.current;
            let tau = if step < 1.0 {
                let prev_tau = if prev.is_vacuous() {
                    DVector::zeros(tau.len())
                } else {
                    message_moments(prev).0.boxminus(at)
                };
                tau * step + prev_tau * (1.0 - step)
            } else {
                tau
            };
            Some(MessageTriplet {
                linearization: at.clone(),
                tangent: tau,
                precision: marginal.lambda,
                direction: Direction::FactorToNode,
            })
        })
        .collect();
    FactorUpdate {
        id: factor.id,
        messages,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Synchronous,
    Dropout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub schedule: Schedule,
    /// Probability that a node skips an iteration.
    pub dropout_nodes: f64,
    /// Probability that a factor skips an iteration.
    pub dropout_factors: f64,
    /// Overrides every node's step size when set.
    pub node_step_size: Option<f64>,
    /// Overrides every factor's step size when set.
    pub factor_step_size: Option<f64>,
    pub max_iterations: usize,
    /// Stop once `|E_prev − E| ≤ tolerance · E_prev`.
    pub tolerance: f64,
    pub seed: u64,
    /// Worker threads; 0 uses the ambient rayon pool.
    pub workers: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            schedule: Schedule::Synchronous,
            dropout_nodes: 0.0,
            dropout_factors: 0.0,
            node_step_size: None,
            factor_step_size: None,
            max_iterations: 50,
            tolerance: 1e-9,
            seed: 0,
            workers: 0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("dropout probability must lie in [0, 1), got {0}")]
    Dropout(f64),
    #[error("step size must lie in (0, 1], got {0}")]
    StepSize(f64),
    #[error("tolerance must be finite and non-negative, got {0}")]
    Tolerance(f64),
}

impl SolverConfig {
    pub fn with_dropout(mut self, nodes: f64, factors: f64) -> Self {
        self.schedule = Schedule::Dropout;
        self.dropout_nodes = nodes;
        self.dropout_factors = factors;
        self
    }

    pub fn with_step_sizes(mut self, node: f64, factor: f64) -> Self {
        self.node_step_size = Some(node);
        self.factor_step_size = Some(factor);
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for p in [self.dropout_nodes, self.dropout_factors] {
            if !(0.0..1.0).contains(&p) {
                return Err(ConfigError::Dropout(p));
            }
        }
        for s in [self.node_step_size, self.factor_step_size].into_iter().flatten() {
            if !(s > 0.0 && s <= 1.0) {
                return Err(ConfigError::StepSize(s));
            }
        }
        if !(self.tolerance >= 0.0 && self.tolerance.is_finite()) {
            return Err(ConfigError::Tolerance(self.tolerance));
        }
        Ok(())
    }

    fn dropout(&self) -> (f64, f64) {
        match self.schedule {
            Schedule::Synchronous => (0.0, 0.0),
            Schedule::Dropout => (self.dropout_nodes, self.dropout_factors),
        }
    }
}

/// One telemetry row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub energy: f64,
    pub max_delta: f64,
    pub wall_ms: f64,
}

/// Per-iteration telemetry. Row 0 holds the initial state.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct RunRecord {
    pub rows: Vec<IterationRecord>,
    pub converged: bool,
    /// Total number of factor evaluations that failed and were skipped.
    pub factor_failures: usize,
}

impl RunRecord {
    pub fn push(&mut self, row: IterationRecord) {
        self.rows.push(row);
    }

    /// Number of iterations performed (excluding row 0).
    pub fn iterations(&self) -> usize {
        self.rows.len().saturating_sub(1)
    }

    pub fn initial_energy(&self) -> Option<f64> {
        self.rows.first().map(|r| r.energy)
    }

    pub fn final_energy(&self) -> Option<f64> {
        self.rows.last().map(|r| r.energy)
    }

    /// First iteration whose relative energy change drops below `rtol`.
    pub fn iterations_to_convergence(&self, rtol: f64) -> Option<usize> {
        self.rows.windows(2).find_map(|w| {
            let (prev, cur) = (w[0].energy, w[1].energy);
            relative_change_within(prev, cur, rtol).then_some(w[1].iter)
        })
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iter", "energy", "max_delta", "wall_ms"])?;
        for r in &self.rows {
            w.write_record([
                r.iter.to_string(),
                format!("{:e}", r.energy),
                format!("{:e}", r.max_delta),
                format!("{:.3}", r.wall_ms),
            ])?;
        }
        w.flush()
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self, csv::Error> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let mut rec = RunRecord::default();
        for row in rdr.deserialize() {
            let row: IterationRecord = row?;
            rec.push(row);
        }
        Ok(rec)
    }
}

/// `|prev − cur| ≤ rtol · prev`, treating two zero energies as converged.
pub fn relative_change_within(prev: f64, cur: f64, rtol: f64) -> bool {
    (prev - cur).abs() <= rtol * prev.abs()
}

/// Sum of robust energies over factors that can be evaluated; also returns
/// the number of factors that failed.
pub fn lenient_energy(graph: &FactorGraph) -> (f64, usize) {
    let ids = graph.factor_ids();
    let parts: Vec<Option<f64>> = ids
        .par_iter()
        .map(|&f| graph.factor_energy(graph.factor(f).unwrap()).ok())
        .collect();
    let failures = parts.iter().filter(|p| p.is_none()).count();
    (parts.into_iter().flatten().sum(), failures)
}

/// Per-iteration statistics returned by [`iterate`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationStats {
    pub max_delta: f64,
    pub factor_failures: usize,
    pub active_factors: usize,
    pub active_nodes: usize,
}

/// One factor phase followed by one node phase.
pub fn iterate(graph: &mut FactorGraph, config: &SolverConfig, rng: &mut ChaCha8Rng) -> IterationStats {
    let (d_n, d_f) = config.dropout();
    // Sample participation on one control path, in id order.
    let factor_ids: Vec<FactorId> = graph
        .factor_ids()
        .into_iter()
        .filter(|_| rng.random::<f64>() >= d_f)
        .collect();
    let node_ids: Vec<NodeId> = graph
        .variable_ids()
        .into_iter()
        .filter(|_| rng.random::<f64>() >= d_n)
        .collect();

    let factor_results: Vec<Result<FactorUpdate, GraphError>> = {
        let g = &*graph;
        factor_ids
            .par_iter()
            .map(|&fid| {
                let factor = g.factor(fid).expect("id from graph");
                let lin = linearize_factor(g, factor)?;
                let step = config.factor_step_size.unwrap_or(factor.step_size);
                Ok(factor_update(factor, &lin, step))
            })
            .collect()
    };
    let mut failures = 0;
    for res in factor_results {
        match res {
            Ok(update) => {
                let factor = graph.factor_mut(update.id).expect("id from graph");
                for (edge, msg) in factor.edges.iter_mut().zip(update.messages) {
                    if let Some(msg) = msg {
                        edge.to_node.commit(msg);
                    }
                }
            }
            Err(e) => {
                failures += 1;
                debug!("factor skipped: {e}");
            }
        }
    }

    let node_results: Vec<NodeUpdate> = {
        let g = &*graph;
        node_ids
            .par_iter()
            .map(|&nid| {
                let v = g.variable(nid).expect("id from graph");
                let step = config.node_step_size.unwrap_or(v.step_size);
                node_update(g, nid, step)
            })
            .collect()
    };
    let mut max_delta = 0.0f64;
    for update in node_results {
        max_delta = max_delta.max(update.delta);
        if let Some((mean, precision)) = update.belief {
            let v = graph.variable_mut(update.id).expect("id from graph");
            v.mean = mean;
            v.precision = precision;
        }
        for (fid, msg) in update.messages {
            let factor = graph.factor_mut(fid).expect("adjacency is consistent");
            let edge = factor
                .edges
                .iter_mut()
                .find(|e| e.node == update.id)
                .expect("variable neighbors own an edge");
            edge.to_factor.commit(msg);
        }
    }
    IterationStats {
        max_delta,
        factor_failures: failures,
        active_factors: factor_ids.len(),
        active_nodes: node_ids.len(),
    }
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("could not build worker pool: {0}")]
    Pool(String),
}

/// Iterates until the relative energy change falls below the tolerance or
/// the iteration cap is reached.
pub fn solve(graph: &mut FactorGraph, config: &SolverConfig) -> Result<RunRecord, SolveError> {
    config.validate()?;
    if config.workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| SolveError::Pool(e.to_string()))?;
        Ok(pool.install(|| solve_inner(graph, config)))
    } else {
        Ok(solve_inner(graph, config))
    }
}

fn solve_inner(graph: &mut FactorGraph, config: &SolverConfig) -> RunRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut record = RunRecord::default();
    let (e0, fail0) = lenient_energy(graph);
    record.factor_failures += fail0;
    record.push(IterationRecord {
        iter: 0,
        energy: e0,
        max_delta: 0.0,
        wall_ms: 0.0,
    });
    let mut prev = e0;
    for iter in 1..=config.max_iterations {
        let start = Instant::now();
        let stats = iterate(graph, config, &mut rng);
        let (energy, _) = lenient_energy(graph);
        record.factor_failures += stats.factor_failures;
        record.push(IterationRecord {
            iter,
            energy,
            max_delta: stats.max_delta,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        debug!("iter {iter}: energy {energy:e}, max delta {:e}", stats.max_delta);
        if relative_change_within(prev, energy, config.tolerance) {
            record.converged = true;
            break;
        }
        prev = energy;
    }
    record
}

/// Marginal covariance of a node belief (inverse of its precision), if
/// defined.
pub fn belief_covariance(graph: &FactorGraph, id: NodeId) -> Option<DMatrix<f64>> {
    inverse_spd(&graph.variable(id)?.precision)
}
