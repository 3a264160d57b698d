//! Bipartite factor graph: variable nodes carrying manifold Gaussian beliefs,
//! constant nodes, factors and the per-edge message mailboxes.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{is_symmetric_psd, symmetrize};
use crate::manifold::{Element, ElementKind};
use crate::robust::LossFunction;
use crate::spline::SplineError;

/// Default step size for both nodes and factors.
pub const DEFAULT_STEP_SIZE: f64 = 0.7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FactorId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

impl fmt::Display for FactorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("node {0} already exists")]
    DuplicateNode(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown factor {0}")]
    UnknownFactor(FactorId),
    #[error("node {0} is not a variable")]
    NotVariable(NodeId),
    #[error("precision must be a finite symmetric PSD {expected}x{expected} matrix")]
    InvalidPrecision { expected: usize },
    #[error("value of kind {found:?} does not match variable kind {expected:?}")]
    KindMismatch {
        expected: ElementKind,
        found: ElementKind,
    },
    #[error("factor expects {expected} neighbors, got {found}")]
    NeighborCount { expected: usize, found: usize },
    #[error("neighbor {slot} ({node}) does not satisfy slot {requirement:?}")]
    SlotMismatch {
        slot: usize,
        node: NodeId,
        requirement: Slot,
    },
    #[error("square-root information must be {0}x{0} and finite")]
    InvalidSqrtInformation(usize),
    #[error("step size must lie in (0, 1], got {0}")]
    InvalidStepSize(f64),
    #[error("factor {factor}: {source}")]
    Residual {
        factor: FactorId,
        #[source]
        source: ResidualError,
    },
}

/// Failure to evaluate a residual at the current state.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResidualError {
    #[error("landmark depth {depth} is not in front of the camera")]
    Cheirality { depth: f64 },
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error("non-finite residual")]
    NonFinite,
}

/// Semantic kind of an optimizable parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariableKind {
    PoseBasis,
    Rotation,
    Translation,
    Landmark,
    GenericVector(usize),
}

impl VariableKind {
    pub fn element_kind(&self) -> ElementKind {
        match self {
            VariableKind::PoseBasis => ElementKind::Pose,
            VariableKind::Rotation => ElementKind::Rotation,
            VariableKind::Translation | VariableKind::Landmark => ElementKind::Vector(3),
            VariableKind::GenericVector(n) => ElementKind::Vector(*n),
        }
    }

    pub fn tangent_dim(&self) -> usize {
        self.element_kind().tangent_dim()
    }
}

/// What a factor expects at one neighbor position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Slot {
    /// Must be a variable node; a Jacobian block is produced.
    Variable(ElementKind),
    /// Must be a constant node; folded into the residual.
    Constant(ElementKind),
    /// Either; a Jacobian block is produced and ignored for constants.
    Any(ElementKind),
}

impl Slot {
    pub fn kind(&self) -> ElementKind {
        match self {
            Slot::Variable(k) | Slot::Constant(k) | Slot::Any(k) => *k,
        }
    }
}

/// Raw (unwhitened) residual with one optional Jacobian block per slot.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub residual: DVector<f64>,
    /// `jacobians[k]` is `residual_dim × tangent_dim(slot k)`, `None` for
    /// constant-only slots or when Jacobians were not requested.
    pub jacobians: Vec<Option<DMatrix<f64>>>,
}

/// A measurement model over an ordered list of neighbor values.
pub trait ResidualModel: Send + Sync + fmt::Debug {
    /// Stable identifier used by graph snapshots.
    fn name(&self) -> &'static str;

    fn residual_dim(&self) -> usize;

    fn slots(&self) -> Vec<Slot>;

    fn evaluate(&self, values: &[&Element], with_jacobians: bool) -> Result<Evaluation, ResidualError>;

    /// Measurement payload for snapshots.
    fn payload(&self) -> serde_json::Value;
}

#[derive(Clone, Debug)]
pub struct VariableNode {
    pub id: NodeId,
    pub kind: VariableKind,
    pub mean: Element,
    pub precision: DMatrix<f64>,
    pub step_size: f64,
    pub(crate) factors: Vec<FactorId>,
}

impl VariableNode {
    pub fn factors(&self) -> &[FactorId] {
        &self.factors
    }

    /// A variable without factors carries no information beyond its prior belief.
    pub fn is_anchored(&self) -> bool {
        !self.factors.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct ConstantNode {
    pub id: NodeId,
    pub value: Element,
    pub(crate) factors: Vec<FactorId>,
}

#[derive(Clone, Debug)]
pub enum Node {
    Variable(VariableNode),
    Constant(ConstantNode),
}

impl Node {
    pub fn id(&self) -> NodeId {
        match self {
            Node::Variable(v) => v.id,
            Node::Constant(c) => c.id,
        }
    }

    pub fn value(&self) -> &Element {
        match self {
            Node::Variable(v) => &v.mean,
            Node::Constant(c) => &c.value,
        }
    }

    pub fn is_variable(&self) -> bool {
        matches!(self, Node::Variable(_))
    }

    pub fn factors(&self) -> &[FactorId] {
        match self {
            Node::Variable(v) => &v.factors,
            Node::Constant(c) => &c.factors,
        }
    }

    fn factors_mut(&mut self) -> &mut Vec<FactorId> {
        match self {
            Node::Variable(v) => &mut v.factors,
            Node::Constant(c) => &mut c.factors,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    NodeToFactor,
    FactorToNode,
}

/// Gaussian message expressed in the tangent space at `linearization`.
///
/// Node-to-factor messages are in information form: `tangent` holds the
/// information vector. Factor-to-node messages are in moment form: `tangent`
/// holds the mean increment, so the message mean is `linearization ⊞ tangent`.
#[derive(Clone, Debug, PartialEq)]
pub struct MessageTriplet {
    pub linearization: Element,
    pub tangent: DVector<f64>,
    pub precision: DMatrix<f64>,
    pub direction: Direction,
}

impl MessageTriplet {
    /// Identity element of the message product.
    pub fn vacuous(at: &Element, direction: Direction) -> Self {
        let n = at.tangent_dim();
        Self {
            linearization: at.clone(),
            tangent: DVector::zeros(n),
            precision: DMatrix::zeros(n, n),
            direction,
        }
    }

    pub fn is_vacuous(&self) -> bool {
        self.precision.iter().all(|v| *v == 0.0) && self.tangent.iter().all(|v| *v == 0.0)
    }

    pub fn dim(&self) -> usize {
        self.tangent.len()
    }
}

/// Current message plus the one it replaced.
#[derive(Clone, Debug, PartialEq)]
pub struct Mailbox {
    pub current: MessageTriplet,
    pub previous: MessageTriplet,
}

impl Mailbox {
    fn new(msg: MessageTriplet) -> Self {
        Self {
            previous: msg.clone(),
            current: msg,
        }
    }

    /// Makes `msg` visible, keeping the replaced message in `previous`.
    pub fn commit(&mut self, msg: MessageTriplet) {
        self.previous = std::mem::replace(&mut self.current, msg);
    }
}

/// Both directions of one factor–variable edge.
#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub node: NodeId,
    pub to_factor: Mailbox,
    pub to_node: Mailbox,
}

#[derive(Clone, Debug)]
pub struct Factor {
    pub id: FactorId,
    pub neighbors: Vec<NodeId>,
    pub model: Arc<dyn ResidualModel>,
    /// Ω with `ΩᵀΩ = Σ⁻¹`.
    pub sqrt_information: DMatrix<f64>,
    pub loss: LossFunction,
    pub step_size: f64,
    /// One entry per variable neighbor, aligned with `variable_slots`.
    pub(crate) edges: Vec<Edge>,
    pub(crate) variable_slots: Vec<usize>,
}

impl Factor {
    /// Positions in `neighbors` that refer to variable nodes.
    pub fn variable_slots(&self) -> &[usize] {
        &self.variable_slots
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_for(&self, node: NodeId) -> Option<&Edge> {
        self.edges.iter().find(|e| e.node == node)
    }
}

/// Arguments of [`FactorGraph::add_factor`].
#[derive(Clone, Debug)]
pub struct FactorSpec {
    pub neighbors: Vec<NodeId>,
    pub model: Arc<dyn ResidualModel>,
    pub sqrt_information: DMatrix<f64>,
    pub loss: LossFunction,
    pub step_size: f64,
}

impl FactorSpec {
    pub fn new(model: Arc<dyn ResidualModel>, neighbors: Vec<NodeId>, sqrt_information: DMatrix<f64>) -> Self {
        Self {
            neighbors,
            model,
            sqrt_information,
            loss: LossFunction::Trivial,
            step_size: DEFAULT_STEP_SIZE,
        }
    }

    pub fn with_loss(mut self, loss: LossFunction) -> Self {
        self.loss = loss;
        self
    }

    pub fn with_step_size(mut self, step: f64) -> Self {
        self.step_size = step;
        self
    }
}

/// The node's own belief as a node-to-factor message. Used to seed new edges
/// so that the first factor phase sees a proper prior on every neighbor.
fn belief_message(v: &VariableNode) -> MessageTriplet {
    MessageTriplet {
        linearization: v.mean.clone(),
        tangent: DVector::zeros(v.mean.tangent_dim()),
        precision: v.precision.clone(),
        direction: Direction::NodeToFactor,
    }
}

#[derive(Clone, Debug, Default)]
pub struct FactorGraph {
    nodes: BTreeMap<NodeId, Node>,
    factors: BTreeMap<FactorId, Factor>,
    next_node: usize,
    next_factor: usize,
}

impl FactorGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(&id)
    }

    pub fn variable(&self, id: NodeId) -> Option<&VariableNode> {
        match self.nodes.get(&id) {
            Some(Node::Variable(v)) => Some(v),
            _ => None,
        }
    }

    pub fn variable_mut(&mut self, id: NodeId) -> Option<&mut VariableNode> {
        match self.nodes.get_mut(&id) {
            Some(Node::Variable(v)) => Some(v),
            _ => None,
        }
    }

    pub fn factor(&self, id: FactorId) -> Option<&Factor> {
        self.factors.get(&id)
    }

    pub(crate) fn factor_mut(&mut self, id: FactorId) -> Option<&mut Factor> {
        self.factors.get_mut(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn variables(&self) -> impl Iterator<Item = &VariableNode> {
        self.nodes.values().filter_map(|n| match n {
            Node::Variable(v) => Some(v),
            Node::Constant(_) => None,
        })
    }

    pub fn variable_ids(&self) -> Vec<NodeId> {
        self.variables().map(|v| v.id).collect()
    }

    pub fn factors(&self) -> impl Iterator<Item = &Factor> {
        self.factors.values()
    }

    pub fn factor_ids(&self) -> Vec<FactorId> {
        self.factors.keys().copied().collect()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    /// Current value of a node (variable mean or constant value).
    pub fn value(&self, id: NodeId) -> Option<&Element> {
        self.nodes.get(&id).map(Node::value)
    }

    fn check_precision(kind: VariableKind, precision: &DMatrix<f64>) -> Result<(), GraphError> {
        let n = kind.tangent_dim();
        if precision.nrows() != n
            || precision.ncols() != n
            || !precision.iter().all(|v| v.is_finite())
            || !is_symmetric_psd(precision)
        {
            return Err(GraphError::InvalidPrecision { expected: n });
        }
        Ok(())
    }

    fn check_kind(kind: VariableKind, value: &Element) -> Result<(), GraphError> {
        if kind.element_kind() != value.kind() {
            return Err(GraphError::KindMismatch {
                expected: kind.element_kind(),
                found: value.kind(),
            });
        }
        Ok(())
    }

    pub fn add_variable(
        &mut self,
        kind: VariableKind,
        mean: Element,
        precision: DMatrix<f64>,
    ) -> Result<NodeId, GraphError> {
        let id = NodeId(self.next_node);
        self.add_variable_with_id(id, kind, mean, precision)
    }

    pub fn add_variable_with_id(
        &mut self,
        id: NodeId,
        kind: VariableKind,
        mean: Element,
        precision: DMatrix<f64>,
    ) -> Result<NodeId, GraphError> {
        if self.nodes.contains_key(&id) {
            return Err(GraphError::DuplicateNode(id));
        }
        Self::check_kind(kind, &mean)?;
        Self::check_precision(kind, &precision)?;
        self.nodes.insert(
            id,
            Node::Variable(VariableNode {
                id,
                kind,
                mean,
                precision: symmetrize(&precision),
                step_size: DEFAULT_STEP_SIZE,
                factors: Vec::new(),
            }),
        );
        self.next_node = self.next_node.max(id.0 + 1);
        Ok(id)
    }

    pub fn add_constant(&mut self, value: Element) -> Result<NodeId, GraphError> {
        let id = NodeId(self.next_node);
        self.add_constant_with_id(id, value)
    }

    pub fn add_constant_with_id(&mut self, id: NodeId, value: Element) -> Result<NodeId, GraphError> {
        if self.nodes.contains_key(&id) {
            return Err(GraphError::DuplicateNode(id));
        }
        self.nodes.insert(
            id,
            Node::Constant(ConstantNode {
                id,
                value,
                factors: Vec::new(),
            }),
        );
        self.next_node = self.next_node.max(id.0 + 1);
        Ok(id)
    }

    pub fn set_step_size(&mut self, id: NodeId, step: f64) -> Result<(), GraphError> {
        if !(step > 0.0 && step <= 1.0) {
            return Err(GraphError::InvalidStepSize(step));
        }
        self.variable_mut(id).ok_or(GraphError::NotVariable(id))?.step_size = step;
        Ok(())
    }

    pub fn add_factor(&mut self, spec: FactorSpec) -> Result<FactorId, GraphError> {
        let id = FactorId(self.next_factor);
        self.add_factor_with_id(id, spec)
    }

    pub(crate) fn add_factor_with_id(&mut self, id: FactorId, spec: FactorSpec) -> Result<FactorId, GraphError> {
        let slots = spec.model.slots();
        if slots.len() != spec.neighbors.len() {
            return Err(GraphError::NeighborCount {
                expected: slots.len(),
                found: spec.neighbors.len(),
            });
        }
        let m = spec.model.residual_dim();
        if spec.sqrt_information.nrows() != m
            || spec.sqrt_information.ncols() != m
            || !spec.sqrt_information.iter().all(|v| v.is_finite())
        {
            return Err(GraphError::InvalidSqrtInformation(m));
        }
        if !(spec.step_size > 0.0 && spec.step_size <= 1.0) {
            return Err(GraphError::InvalidStepSize(spec.step_size));
        }
        let mut variable_slots = Vec::new();
        let mut edges = Vec::new();
        for (slot, (&nid, req)) in spec.neighbors.iter().zip(&slots).enumerate() {
            let node = self.nodes.get(&nid).ok_or(GraphError::UnknownNode(nid))?;
            let ok = node.value().kind() == req.kind()
                && match req {
                    Slot::Variable(_) => node.is_variable(),
                    Slot::Constant(_) => !node.is_variable(),
                    Slot::Any(_) => true,
                };
            if !ok {
                return Err(GraphError::SlotMismatch {
                    slot,
                    node: nid,
                    requirement: *req,
                });
            }
            if let Node::Variable(v) = node {
                if spec.neighbors[..slot].contains(&nid) {
                    return Err(GraphError::SlotMismatch {
                        slot,
                        node: nid,
                        requirement: *req,
                    });
                }
                variable_slots.push(slot);
                edges.push(Edge {
                    node: nid,
                    to_factor: Mailbox::new(belief_message(v)),
                    to_node: Mailbox::new(MessageTriplet::vacuous(&v.mean, Direction::FactorToNode)),
                });
            }
        }
        for &nid in &spec.neighbors {
            let list = self.nodes.get_mut(&nid).expect("checked above").factors_mut();
            if !list.contains(&id) {
                list.push(id);
            }
        }
        self.factors.insert(
            id,
            Factor {
                id,
                neighbors: spec.neighbors,
                model: spec.model,
                sqrt_information: spec.sqrt_information,
                loss: spec.loss,
                step_size: spec.step_size,
                edges,
                variable_slots,
            },
        );
        self.next_factor = self.next_factor.max(id.0 + 1);
        Ok(id)
    }

    /// Removes a factor and its mailboxes. Information it carried is dropped.
    pub fn remove_factor(&mut self, id: FactorId) -> Result<Factor, GraphError> {
        let factor = self.factors.remove(&id).ok_or(GraphError::UnknownFactor(id))?;
        for nid in &factor.neighbors {
            if let Some(node) = self.nodes.get_mut(nid) {
                node.factors_mut().retain(|f| *f != id);
            }
        }
        Ok(factor)
    }

    /// Adds a unary prior `x ⊟ mean` weighted so that `ΩᵀΩ = precision`.
    pub fn add_prior(
        &mut self,
        node: NodeId,
        mean: Element,
        precision: &DMatrix<f64>,
    ) -> Result<FactorId, GraphError> {
        let var = self.variable(node).ok_or(GraphError::NotVariable(node))?;
        Self::check_kind(var.kind, &mean)?;
        Self::check_precision(var.kind, precision)?;
        let omega = crate::linalg::sqrt_information(precision);
        let model = Arc::new(crate::sensors::PriorFactor::new(mean));
        self.add_factor(FactorSpec::new(model, vec![node], omega))
    }

    /// Values of all neighbors of a factor, in slot order.
    pub fn neighbor_values(&self, factor: &Factor) -> Vec<&Element> {
        factor
            .neighbors
            .iter()
            .map(|n| self.nodes[n].value())
            .collect()
    }

    /// Whitened residual of one factor at the current state.
    pub fn whitened_residual(&self, factor: &Factor) -> Result<DVector<f64>, GraphError> {
        let values = self.neighbor_values(factor);
        let eval = factor
            .model
            .evaluate(&values, false)
            .map_err(|source| GraphError::Residual {
                factor: factor.id,
                source,
            })?;
        let r = &factor.sqrt_information * eval.residual;
        if !r.iter().all(|v| v.is_finite()) {
            return Err(GraphError::Residual {
                factor: factor.id,
                source: ResidualError::NonFinite,
            });
        }
        Ok(r)
    }

    /// `½ ρ(‖r̄‖²)` of one factor.
    pub fn factor_energy(&self, factor: &Factor) -> Result<f64, GraphError> {
        let r = self.whitened_residual(factor)?;
        Ok(0.5 * factor.loss.evaluate(r.norm_squared()).rho)
    }

    /// Total robust energy over all factors.
    pub fn graph_energy(&self) -> Result<f64, GraphError> {
        self.factors.values().map(|f| self.factor_energy(f)).sum()
    }

    /// Resets all mailboxes to their initial state: factor-to-node messages
    /// vacuous, node-to-factor messages seeded with the node's belief.
    pub fn reset_messages(&mut self) {
        let beliefs: BTreeMap<NodeId, MessageTriplet> =
            self.variables().map(|v| (v.id, belief_message(v))).collect();
        for factor in self.factors.values_mut() {
            for edge in &mut factor.edges {
                let seed = beliefs[&edge.node].clone();
                edge.to_node = Mailbox::new(MessageTriplet::vacuous(
                    &seed.linearization,
                    Direction::FactorToNode,
                ));
                edge.to_factor = Mailbox::new(seed);
            }
        }
    }

    pub fn snapshot(&self) -> GraphSnapshot {
        GraphSnapshot::from_graph(self)
    }
}

/// Serializable view of a graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSnapshot {
    pub nodes: Vec<NodeSnapshot>,
    pub factors: Vec<FactorSnapshot>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSnapshot {
    pub id: NodeId,
    /// `None` for constant nodes.
    pub kind: Option<VariableKind>,
    pub value: Element,
    pub precision: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorSnapshot {
    pub id: FactorId,
    pub model: String,
    pub neighbors: Vec<NodeId>,
    pub payload: serde_json::Value,
    pub sqrt_information: Vec<Vec<f64>>,
    pub loss: LossFunction,
    pub step_size: f64,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, m, |i, j| rows[i].get(j).copied().unwrap_or(f64::NAN))
}

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("unknown residual model '{0}'")]
    UnknownModel(String),
    #[error("invalid payload for '{model}': {source}")]
    Payload {
        model: String,
        #[source]
        source: serde_json::Error,
    },
}

impl GraphSnapshot {
    pub fn from_graph(graph: &FactorGraph) -> Self {
        let nodes = graph
            .nodes()
            .map(|n| match n {
                Node::Variable(v) => NodeSnapshot {
                    id: v.id,
                    kind: Some(v.kind),
                    value: v.mean.clone(),
                    precision: Some(matrix_rows(&v.precision)),
                },
                Node::Constant(c) => NodeSnapshot {
                    id: c.id,
                    kind: None,
                    value: c.value.clone(),
                    precision: None,
                },
            })
            .collect();
        let factors = graph
            .factors()
            .map(|f| FactorSnapshot {
                id: f.id,
                model: f.model.name().to_string(),
                neighbors: f.neighbors.clone(),
                payload: f.model.payload(),
                sqrt_information: matrix_rows(&f.sqrt_information),
                loss: f.loss,
                step_size: f.step_size,
            })
            .collect();
        Self { nodes, factors }
    }

    /// Rebuilds a graph (with fresh mailboxes) from the snapshot.
    pub fn restore(&self) -> Result<FactorGraph, SnapshotError> {
        let mut g = FactorGraph::new();
        for n in &self.nodes {
            match (n.kind, &n.precision) {
                (Some(kind), Some(p)) => {
                    g.add_variable_with_id(n.id, kind, n.value.clone(), matrix_from_rows(p))?;
                }
                _ => {
                    g.add_constant_with_id(n.id, n.value.clone())?;
                }
            }
        }
        for f in &self.factors {
            let model = crate::sensors::model_from_payload(&f.model, &f.payload)?;
            let spec = FactorSpec::new(model, f.neighbors.clone(), matrix_from_rows(&f.sqrt_information))
                .with_loss(f.loss)
                .with_step_size(f.step_size);
            g.add_factor_with_id(f.id, spec)?;
        }
        Ok(g)
    }
}
