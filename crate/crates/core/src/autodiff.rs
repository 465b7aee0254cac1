//! Scalar reverse-mode automatic differentiation on an append-only expression graph.
//!
//! Differentiation does not accumulate numbers. [`Graph::grad`] walks the graph
//! backwards and *emits* the derivative expressions as new nodes of the same
//! graph, so a gradient is itself an ordinary node that can be differentiated
//! again. Nesting depth is limited only by graph size.
//!
//! ```
//! use pigan::autodiff::{Graph, LeafValues};
//!
//! let mut g = Graph::new();
//! let x = g.var();
//! let x2 = g.mul(x.node(), x.node());
//! let y = g.mul(x2, x.node());
//! let dy = g.grad(y, &[x]).unwrap()[0];
//! let d2y = g.grad(dy, &[x]).unwrap()[0];
//!
//! let mut vals = LeafValues::new(&g);
//! vals.set(x, 2.0);
//! let out = g.eval(&vals, &[y, dy, d2y]).unwrap();
//! assert_eq!(out, vec![8.0, 12.0, 12.0]);
//! ```

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Index of a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// A leaf variable of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct VarId {
    node: NodeId,
    slot: usize,
}

impl VarId {
    pub fn node(self) -> NodeId {
        self.node
    }

    /// Position among the graph's leaves, in creation order.
    pub fn slot(self) -> usize {
        self.slot
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Tanh,
    Exp,
    Sin,
    Cos,
    Sqrt,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Op {
    Leaf(usize),
    Const(f64),
    Unary(UnaryOp, NodeId),
    Binary(BinaryOp, NodeId, NodeId),
}

impl FromStr for UnaryOp {
    type Err = AutodiffError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "neg" => UnaryOp::Neg,
            "tanh" => UnaryOp::Tanh,
            "exp" => UnaryOp::Exp,
            "sin" => UnaryOp::Sin,
            "cos" => UnaryOp::Cos,
            "sqrt" => UnaryOp::Sqrt,
            "square" => UnaryOp::Square,
            _ => return Err(AutodiffError::UnknownOp(s.to_string())),
        })
    }
}

impl FromStr for BinaryOp {
    type Err = AutodiffError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "add" => BinaryOp::Add,
            "sub" => BinaryOp::Sub,
            "mul" => BinaryOp::Mul,
            "div" => BinaryOp::Div,
            _ => return Err(AutodiffError::UnknownOp(s.to_string())),
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("unknown op kind `{0}`")]
    UnknownOp(String),
    #[error("op `{op}` takes {expected} operand(s), got {got}")]
    Arity { op: String, expected: usize, got: usize },
    #[error("node {0} does not exist in this graph")]
    InvalidNode(NodeId),
    #[error("leaf {0} has no value")]
    MissingLeaf(NodeId),
    #[error("non-finite value {value} at node {node}")]
    NonFinite { node: NodeId, value: f64 },
}

/// Values for a graph's leaves, indexed by [`VarId::slot`].
#[derive(Clone, Debug, Default)]
pub struct LeafValues {
    values: Vec<Option<f64>>,
}

impl LeafValues {
    pub fn new(graph: &Graph) -> Self {
        Self {
            values: vec![None; graph.leaf_count()],
        }
    }

    pub fn set(&mut self, var: VarId, value: f64) {
        if var.slot >= self.values.len() {
            self.values.resize(var.slot + 1, None);
        }
        self.values[var.slot] = Some(value);
    }

    pub fn get(&self, var: VarId) -> Option<f64> {
        self.values.get(var.slot).copied().flatten()
    }
}

/// Append-only scalar expression graph.
///
/// Every operand id is strictly smaller than the id of the node using it.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    ops: Vec<Op>,
    values: Vec<f64>,
    leaves: Vec<NodeId>,
    one: Option<NodeId>,
    two: Option<NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    pub fn op(&self, id: NodeId) -> Op {
        self.ops[id.0]
    }

    fn push(&mut self, op: Op) -> NodeId {
        self.ops.push(op);
        self.values.push(f64::NAN);
        NodeId(self.ops.len() - 1)
    }

    /// New leaf variable.
    pub fn var(&mut self) -> VarId {
        let slot = self.leaves.len();
        let node = self.push(Op::Leaf(slot));
        self.leaves.push(node);
        VarId { node, slot }
    }

    pub fn constant(&mut self, c: f64) -> NodeId {
        self.push(Op::Const(c))
    }

    fn one(&mut self) -> NodeId {
        match self.one {
            Some(id) => id,
            None => {
                let id = self.constant(1.0);
                self.one = Some(id);
                id
            }
        }
    }

    fn two(&mut self) -> NodeId {
        match self.two {
            Some(id) => id,
            None => {
                let id = self.constant(2.0);
                self.two = Some(id);
                id
            }
        }
    }

    fn check(&self, id: NodeId) -> Result<(), AutodiffError> {
        if id.0 < self.ops.len() {
            Ok(())
        } else {
            Err(AutodiffError::InvalidNode(id))
        }
    }

    pub fn unary(&mut self, op: UnaryOp, a: NodeId) -> NodeId {
        debug_assert!(a.0 < self.ops.len());
        self.push(Op::Unary(op, a))
    }

    pub fn binary(&mut self, op: BinaryOp, a: NodeId, b: NodeId) -> NodeId {
        debug_assert!(a.0 < self.ops.len() && b.0 < self.ops.len());
        self.push(Op::Binary(op, a, b))
    }

    /// Builds a node from an op name such as `"tanh"` or `"mul"`.
    pub fn apply(&mut self, name: &str, operands: &[NodeId]) -> Result<NodeId, AutodiffError> {
        for &id in operands {
            self.check(id)?;
        }
        if let Ok(op) = name.parse::<UnaryOp>() {
            if operands.len() != 1 {
                return Err(AutodiffError::Arity {
                    op: name.to_string(),
                    expected: 1,
                    got: operands.len(),
                });
            }
            return Ok(self.unary(op, operands[0]));
        }
        let op: BinaryOp = name.parse()?;
        if operands.len() != 2 {
            return Err(AutodiffError::Arity {
                op: name.to_string(),
                expected: 2,
                got: operands.len(),
            });
        }
        Ok(self.binary(op, operands[0], operands[1]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(BinaryOp::Div, a, b)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.unary(UnaryOp::Neg, a)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(UnaryOp::Tanh, a)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(UnaryOp::Exp, a)
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        self.unary(UnaryOp::Sin, a)
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        self.unary(UnaryOp::Cos, a)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        self.unary(UnaryOp::Sqrt, a)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(UnaryOp::Square, a)
    }

    pub fn scale(&mut self, c: f64, a: NodeId) -> NodeId {
        let k = self.constant(c);
        self.mul(k, a)
    }

    /// Sum of a non-empty list; a zero constant when empty.
    pub fn sum(&mut self, terms: &[NodeId]) -> NodeId {
        match terms.split_first() {
            None => self.constant(0.0),
            Some((&first, rest)) => rest.iter().fold(first, |acc, &t| self.add(acc, t)),
        }
    }

    fn reachable(&self, outputs: &[NodeId]) -> Vec<bool> {
        let top = outputs.iter().map(|o| o.0).max().unwrap_or(0);
        let mut mark = vec![false; top + 1];
        for o in outputs {
            mark[o.0] = true;
        }
        for i in (0..=top).rev() {
            if !mark[i] {
                continue;
            }
            match self.ops[i] {
                Op::Unary(_, a) => mark[a.0] = true,
                Op::Binary(_, a, b) => {
                    mark[a.0] = true;
                    mark[b.0] = true;
                }
                _ => {}
            }
        }
        mark
    }

    /// Evaluates every node reachable from `outputs` and returns the output values.
    ///
    /// Values are cached on the graph and readable afterwards through [`Graph::value`].
    pub fn eval(&mut self, leaves: &LeafValues, outputs: &[NodeId]) -> Result<Vec<f64>, AutodiffError> {
        if outputs.is_empty() {
            return Ok(Vec::new());
        }
        for &o in outputs {
            self.check(o)?;
        }
        let mark = self.reachable(outputs);
        for (i, &needed) in mark.iter().enumerate() {
            if !needed {
                continue;
            }
            let v = match self.ops[i] {
                Op::Leaf(slot) => leaves
                    .values
                    .get(slot)
                    .copied()
                    .flatten()
                    .ok_or(AutodiffError::MissingLeaf(NodeId(i)))?,
                Op::Const(c) => c,
                Op::Unary(op, a) => {
                    let x = self.values[a.0];
                    match op {
                        UnaryOp::Neg => -x,
                        UnaryOp::Tanh => x.tanh(),
                        UnaryOp::Exp => x.exp(),
                        UnaryOp::Sin => x.sin(),
                        UnaryOp::Cos => x.cos(),
                        UnaryOp::Sqrt => x.sqrt(),
                        UnaryOp::Square => x * x,
                    }
                }
                Op::Binary(op, a, b) => {
                    let (x, y) = (self.values[a.0], self.values[b.0]);
                    match op {
                        BinaryOp::Add => x + y,
                        BinaryOp::Sub => x - y,
                        BinaryOp::Mul => x * y,
                        BinaryOp::Div => x / y,
                    }
                }
            };
            if !v.is_finite() {
                return Err(AutodiffError::NonFinite { node: NodeId(i), value: v });
            }
            self.values[i] = v;
        }
        Ok(outputs.iter().map(|o| self.values[o.0]).collect())
    }

    /// Cached value from the last [`Graph::eval`] that reached `id`.
    pub fn value(&self, id: NodeId) -> f64 {
        self.values[id.0]
    }

    fn accumulate(&mut self, adj: &mut [Option<NodeId>], target: NodeId, contrib: NodeId) {
        let slot = &mut adj[target.0];
        *slot = Some(match *slot {
            None => contrib,
            Some(prev) => self.add(prev, contrib),
        });
    }

    /// Emits nodes computing `d output / d wrt[i]` for each requested leaf.
    ///
    /// Leaves that `output` does not depend on get a zero constant.
    pub fn grad(&mut self, output: NodeId, wrt: &[VarId]) -> Result<Vec<NodeId>, AutodiffError> {
        self.check(output)?;
        let top = output.0;
        let mark = self.reachable(&[output]);
        let mut adj: Vec<Option<NodeId>> = vec![None; top + 1];
        adj[top] = Some(self.one());

        for i in (0..=top).rev() {
            if !mark[i] {
                continue;
            }
            let Some(g) = adj[i] else { continue };
            let node = NodeId(i);
            match self.ops[i] {
                Op::Leaf(_) | Op::Const(_) => {}
                Op::Unary(op, a) => {
                    let c = match op {
                        UnaryOp::Neg => self.neg(g),
                        UnaryOp::Tanh => {
                            let one = self.one();
                            let y2 = self.square(node);
                            let s = self.sub(one, y2);
                            self.mul(g, s)
                        }
                        UnaryOp::Exp => self.mul(g, node),
                        UnaryOp::Sin => {
                            let c = self.cos(a);
                            self.mul(g, c)
                        }
                        UnaryOp::Cos => {
                            let s = self.sin(a);
                            let gs = self.mul(g, s);
                            self.neg(gs)
                        }
                        UnaryOp::Sqrt => {
                            let two = self.two();
                            let d = self.mul(two, node);
                            self.div(g, d)
                        }
                        UnaryOp::Square => {
                            let two = self.two();
                            let d = self.mul(two, a);
                            self.mul(g, d)
                        }
                    };
                    self.accumulate(&mut adj, a, c);
                }
                Op::Binary(op, a, b) => match op {
                    BinaryOp::Add => {
                        self.accumulate(&mut adj, a, g);
                        self.accumulate(&mut adj, b, g);
                    }
                    BinaryOp::Sub => {
                        self.accumulate(&mut adj, a, g);
                        let ng = self.neg(g);
                        self.accumulate(&mut adj, b, ng);
                    }
                    BinaryOp::Mul => {
                        let ca = self.mul(g, b);
                        self.accumulate(&mut adj, a, ca);
                        let cb = self.mul(g, a);
                        self.accumulate(&mut adj, b, cb);
                    }
                    BinaryOp::Div => {
                        let ca = self.div(g, b);
                        self.accumulate(&mut adj, a, ca);
                        let q = self.div(ca, b);
                        let t = self.mul(q, a);
                        let cb = self.neg(t);
                        self.accumulate(&mut adj, b, cb);
                    }
                },
            }
        }

        Ok(wrt
            .iter()
            .map(|v| if v.node.0 <= top { adj[v.node.0] } else { None })
            .collect::<Vec<_>>()
            .into_iter()
            .map(|a| a.unwrap_or_else(|| self.constant(0.0)))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(build: impl FnOnce(&mut Graph, NodeId) -> NodeId, x: f64) -> Result<f64, AutodiffError> {
        let mut g = Graph::new();
        let v = g.var();
        let out = build(&mut g, v.node());
        let mut vals = LeafValues::new(&g);
        vals.set(v, x);
        Ok(g.eval(&vals, &[out])?[0])
    }

    #[test]
    fn primitive_values() {
        assert_eq!(single(|g, x| g.tanh(x), 0.0).unwrap(), 0.0);
        assert_eq!(single(|g, x| g.mul(x, x), 3.0).unwrap(), 9.0);
        assert_eq!(
            single(
                |g, x| {
                    let x2 = g.mul(x, x);
                    g.mul(x2, x)
                },
                2.0
            )
            .unwrap(),
            8.0
        );
        let v = single(
            |g, x| {
                let s = g.sin(x);
                g.exp(s)
            },
            1.0,
        )
        .unwrap();
        assert!((v - 2.3198).abs() < 1e-4);
    }

    #[test]
    fn two_leaves() {
        let mut g = Graph::new();
        let a = g.var();
        let b = g.var();
        let sa = g.sin(a.node());
        let eb = g.exp(b.node());
        let s = g.add(sa, eb);
        let mut vals = LeafValues::new(&g);
        vals.set(a, 0.0);
        vals.set(b, 0.0);
        assert_eq!(g.eval(&vals, &[s]).unwrap(), vec![1.0]);
    }

    #[test]
    fn reciprocal_of_zero_is_reported() {
        let err = single(
            |g, x| {
                let one = g.constant(1.0);
                g.div(one, x)
            },
            0.0,
        )
        .unwrap_err();
        assert!(matches!(err, AutodiffError::NonFinite { node, .. } if node == NodeId(2)));
    }

    #[test]
    fn missing_leaf_is_reported() {
        let mut g = Graph::new();
        let a = g.var();
        let b = g.var();
        let s = g.add(a.node(), b.node());
        let mut vals = LeafValues::new(&g);
        vals.set(a, 1.0);
        assert_eq!(g.eval(&vals, &[s]).unwrap_err(), AutodiffError::MissingLeaf(b.node()));
    }

    #[test]
    fn unused_leaf_needs_no_value() {
        let mut g = Graph::new();
        let a = g.var();
        let _b = g.var();
        let s = g.square(a.node());
        let mut vals = LeafValues::new(&g);
        vals.set(a, 3.0);
        assert_eq!(g.eval(&vals, &[s]).unwrap(), vec![9.0]);
    }

    #[test]
    fn named_ops() {
        let mut g = Graph::new();
        let a = g.var();
        assert!(matches!(g.apply("cosh", &[a.node()]), Err(AutodiffError::UnknownOp(_))));
        assert!(matches!(g.apply("mul", &[a.node()]), Err(AutodiffError::Arity { .. })));
        assert!(matches!(g.apply("tanh", &[NodeId(17)]), Err(AutodiffError::InvalidNode(_))));
        let t = g.apply("tanh", &[a.node()]).unwrap();
        let m = g.apply("mul", &[t, a.node()]).unwrap();
        let mut vals = LeafValues::new(&g);
        vals.set(a, 0.5);
        let v = g.eval(&vals, &[m]).unwrap()[0];
        assert_eq!(v, 0.5f64.tanh() * 0.5);
    }

    #[test]
    fn first_and_second_derivatives() {
        let mut g = Graph::new();
        let x = g.var();
        let t = g.tanh(x.node());
        let dt = g.grad(t, &[x]).unwrap()[0];
        let x2 = g.mul(x.node(), x.node());
        let x3 = g.mul(x2, x.node());
        let d1 = g.grad(x3, &[x]).unwrap()[0];
        let d2 = g.grad(d1, &[x]).unwrap()[0];

        let mut vals = LeafValues::new(&g);
        vals.set(x, 0.0);
        assert_eq!(g.eval(&vals, &[dt]).unwrap(), vec![1.0]);
        vals.set(x, 2.0);
        assert_eq!(g.eval(&vals, &[d2]).unwrap(), vec![12.0]);
    }

    #[test]
    fn gradient_penalty_of_linear_critic() {
        // D = w1 x1 + w2 x2; p = (|grad_x D| - 1)^2; dp/dw1 = 2(|w|-1) w1/|w|
        let mut g = Graph::new();
        let w1 = g.var();
        let w2 = g.var();
        let x1 = g.var();
        let x2 = g.var();
        let a = g.mul(w1.node(), x1.node());
        let b = g.mul(w2.node(), x2.node());
        let d = g.add(a, b);
        let gx = g.grad(d, &[x1, x2]).unwrap();
        let s1 = g.square(gx[0]);
        let s2 = g.square(gx[1]);
        let ss = g.add(s1, s2);
        let norm = g.sqrt(ss);
        let one = g.constant(1.0);
        let gap = g.sub(norm, one);
        let p = g.square(gap);
        let dp = g.grad(p, &[w1, w2]).unwrap();

        let mut vals = LeafValues::new(&g);
        vals.set(w1, 3.0);
        vals.set(w2, 4.0);
        vals.set(x1, 0.3);
        vals.set(x2, -1.7);
        let out = g.eval(&vals, &[p, dp[0], dp[1]]).unwrap();
        assert!((out[0] - 16.0).abs() < 1e-12);
        assert!((out[1] - 4.8).abs() < 1e-12);
        assert!((out[2] - 6.4).abs() < 1e-12);
    }

    #[test]
    fn independent_leaf_gets_zero() {
        let mut g = Graph::new();
        let x = g.var();
        let y = g.var();
        let e = g.exp(x.node());
        let d = g.grad(e, &[y]).unwrap()[0];
        let mut vals = LeafValues::new(&g);
        vals.set(x, 1.0);
        assert_eq!(g.eval(&vals, &[d]).unwrap(), vec![0.0]);
    }

    #[test]
    fn grad_leaves_existing_values_untouched() {
        let mut g = Graph::new();
        let x = g.var();
        let s = g.sin(x.node());
        let y = g.mul(s, x.node());
        let mut vals = LeafValues::new(&g);
        vals.set(x, 0.7);
        let before = g.eval(&vals, &[s, y]).unwrap();
        let _ = g.grad(y, &[x]).unwrap();
        let after = g.eval(&vals, &[s, y]).unwrap();
        assert_eq!(before, after);
    }
}
