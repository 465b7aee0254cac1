//! Generators with induced differential operators, adversarial losses and the
//! training loops.
//!
//! Two generator kinds exist. A process generator is one network `(x, xi) -> value`
//! read at every sensor. A physics generator has independent networks for `k` and
//! `u`; `f` and the boundary trace are induced from them:
//!
//! ```text
//! f~(x; xi) = -(1/10) (k~'(x; xi) u~'(x; xi) + k~(x; xi) u~''(x; xi))
//! b~(x; xi) = u~(x; xi),  x in {-1, 1}
//! ```
//!
//! The graph functions in this module build these quantities symbolically for
//! checking and inspection; [`fake`] computes the same rows in batches for training.

pub mod checkpoint;
pub mod fake;
pub mod losses;
pub mod train;

pub use checkpoint::{read_state, write_state, CheckpointError};
pub use fake::{fake_rows, FakeBatch};
pub use losses::{critic_gradients, generator_adjoint, vanilla_losses, wgan_gp_losses, CriticLosses, LossKind};
pub use train::{CheckpointSchedule, GroupData, TraceRow, TrainConfig, TrainState, Trainer};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, NodeId, VarId};
use crate::elliptic::DIFFUSION;
use crate::nn::{GraphParams, MlpParams, MlpSpec, NnError};
use crate::processes::SensorLayout;

#[derive(Debug, Error)]
pub enum GanError {
    #[error("noise vector has {got} entries, generator expects {expected}")]
    NoiseDim { expected: usize, got: usize },
    #[error("boundary trace requested at x = {0}, which is not -1 or 1")]
    NotBoundary(f64),
    #[error("{0}")]
    Layout(String),
    #[error("{0}")]
    Config(String),
    #[error("non-finite {what} at step {step}")]
    NonFinite { what: String, step: u64 },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    /// One network read at every sensor.
    Process,
    /// Networks for `k` and `u`; `f` and `b` are induced.
    Physics,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Field {
    K,
    U,
}

/// Generator parameters. `nets` is `[net]` for a process generator and
/// `[k_net, u_net]` for a physics generator.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorSet {
    pub kind: GeneratorKind,
    pub noise_dim: usize,
    pub nets: Vec<MlpParams>,
}

impl GeneratorSet {
    pub fn process(net: MlpParams, noise_dim: usize) -> Result<Self, GanError> {
        let g = Self {
            kind: GeneratorKind::Process,
            noise_dim,
            nets: vec![net],
        };
        g.validate()?;
        Ok(g)
    }

    pub fn physics(k_net: MlpParams, u_net: MlpParams, noise_dim: usize) -> Result<Self, GanError> {
        let g = Self {
            kind: GeneratorKind::Physics,
            noise_dim,
            nets: vec![k_net, u_net],
        };
        g.validate()?;
        Ok(g)
    }

    /// Xavier-initialized generator with `hidden_width` tanh layers (4 deep).
    pub fn init<R: Rng + ?Sized>(kind: GeneratorKind, noise_dim: usize, hidden_width: usize, rng: &mut R) -> Self {
        let spec = MlpSpec::scalar(1 + noise_dim, hidden_width);
        let count = match kind {
            GeneratorKind::Process => 1,
            GeneratorKind::Physics => 2,
        };
        Self {
            kind,
            noise_dim,
            nets: (0..count).map(|_| MlpParams::init(spec, rng)).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), GanError> {
        let expected = match self.kind {
            GeneratorKind::Process => 1,
            GeneratorKind::Physics => 2,
        };
        if self.nets.len() != expected {
            return Err(GanError::Config(format!(
                "{:?} generator needs {expected} networks, got {}",
                self.kind,
                self.nets.len()
            )));
        }
        for n in &self.nets {
            let s = n.spec();
            if s.input_width != 1 + self.noise_dim || s.output_width != 1 {
                return Err(GanError::Config(format!(
                    "generator network maps {} -> {}, expected {} -> 1",
                    s.input_width,
                    s.output_width,
                    1 + self.noise_dim
                )));
            }
        }
        Ok(())
    }

    /// Network producing `field` (the single network for a process generator).
    pub fn net(&self, field: Field) -> &MlpParams {
        match (self.kind, field) {
            (GeneratorKind::Process, _) => &self.nets[0],
            (GeneratorKind::Physics, Field::K) => &self.nets[0],
            (GeneratorKind::Physics, Field::U) => &self.nets[1],
        }
    }

    pub fn embed(&self, graph: &mut Graph, as_vars: bool) -> GraphGenerator {
        let nets = self
            .nets
            .iter()
            .map(|n| if as_vars { n.embed_vars(graph) } else { n.embed_constants(graph) })
            .collect();
        GraphGenerator {
            kind: self.kind,
            noise_dim: self.noise_dim,
            nets,
        }
    }
}

/// A generator embedded in an expression graph.
#[derive(Clone, Debug)]
pub struct GraphGenerator {
    pub kind: GeneratorKind,
    pub noise_dim: usize,
    pub nets: Vec<GraphParams>,
}

/// Fake snapshot row built in a graph. Each sensor that needs derivatives in
/// `x` gets its own leaf, listed in `x_leaves` with its position.
#[derive(Clone, Debug)]
pub struct GraphRow {
    pub nodes: Vec<NodeId>,
    pub x_leaves: Vec<(VarId, f64)>,
}

impl GraphRow {
    pub fn bind(&self, values: &mut crate::autodiff::LeafValues) {
        for &(v, x) in &self.x_leaves {
            values.set(v, x);
        }
    }
}

impl GraphGenerator {
    fn graph_net(&self, field: Field) -> &GraphParams {
        match (self.kind, field) {
            (GeneratorKind::Process, _) => &self.nets[0],
            (GeneratorKind::Physics, Field::K) => &self.nets[0],
            (GeneratorKind::Physics, Field::U) => &self.nets[1],
        }
    }

    pub fn gen_field(&self, graph: &mut Graph, field: Field, x: NodeId, xi: &[NodeId]) -> Result<NodeId, GanError> {
        if xi.len() != self.noise_dim {
            return Err(GanError::NoiseDim {
                expected: self.noise_dim,
                got: xi.len(),
            });
        }
        let mut input = Vec::with_capacity(1 + xi.len());
        input.push(x);
        input.extend_from_slice(xi);
        Ok(self.graph_net(field).forward(graph, &input)?[0])
    }

    /// `-(1/10) (k' u' + k u'')` at the leaf `x`.
    pub fn induced_f(&self, graph: &mut Graph, x: VarId, xi: &[NodeId]) -> Result<NodeId, GanError> {
        let k = self.gen_field(graph, Field::K, x.node(), xi)?;
        let u = self.gen_field(graph, Field::U, x.node(), xi)?;
        let dk = graph.grad(k, &[x])?[0];
        let du = graph.grad(u, &[x])?[0];
        let d2u = graph.grad(du, &[x])?[0];
        let a = graph.mul(dk, du);
        let b = graph.mul(k, d2u);
        let s = graph.add(a, b);
        Ok(graph.scale(-DIFFUSION, s))
    }

    /// Dirichlet trace `u~(x)` at a boundary point.
    pub fn induced_b(&self, graph: &mut Graph, x: f64, xi: &[NodeId]) -> Result<NodeId, GanError> {
        if x != -1.0 && x != 1.0 {
            return Err(GanError::NotBoundary(x));
        }
        let xn = graph.constant(x);
        self.gen_field(graph, Field::U, xn, xi)
    }

    /// Row `(K~, U~, F~, B~)` for one noise vector, in the layout's column order.
    pub fn fake_snapshot(&self, graph: &mut Graph, layout: &SensorLayout, xi: &[NodeId]) -> Result<GraphRow, GanError> {
        layout.validate().map_err(|e| GanError::Layout(e.to_string()))?;
        let mut nodes = Vec::with_capacity(layout.width());
        let mut x_leaves = Vec::new();
        match self.kind {
            GeneratorKind::Process => {
                for &x in layout.k.iter().chain(&layout.u).chain(&layout.f).chain(&layout.b) {
                    let xn = graph.constant(x);
                    nodes.push(self.gen_field(graph, Field::U, xn, xi)?);
                }
            }
            GeneratorKind::Physics => {
                for &x in &layout.k {
                    let xn = graph.constant(x);
                    nodes.push(self.gen_field(graph, Field::K, xn, xi)?);
                }
                for &x in &layout.u {
                    let xn = graph.constant(x);
                    nodes.push(self.gen_field(graph, Field::U, xn, xi)?);
                }
                for &x in &layout.f {
                    let v = graph.var();
                    x_leaves.push((v, x));
                    nodes.push(self.induced_f(graph, v, xi)?);
                }
                for &x in &layout.b {
                    nodes.push(self.induced_b(graph, x, xi)?);
                }
            }
        }
        Ok(GraphRow { nodes, x_leaves })
    }
}
