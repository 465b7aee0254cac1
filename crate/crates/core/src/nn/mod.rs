//! Feed-forward tanh networks and the Adam optimizer.
//!
//! Parameters live in one flat `Vec<f64>`: for each layer the weight matrix
//! (row-major, `out x in`) followed by the bias vector. The same layout backs
//! checkpoints, Adam moments and gradients.

mod adam;
pub mod batch;

pub use adam::{AdamConfig, AdamState};

use ndarray::{ArrayBase, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, DataMut, Dimension};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Graph, LeafValues, NodeId, VarId};

/// Hyperbolic tangent, within a few ulp of `f64::tanh` and several times faster.
///
/// Branch-free so that loops over it vectorize: a rational form near zero,
/// `1 - 2 / (e^(2|x|) + 1)` elsewhere with an inline `exp`.
#[inline(always)]
pub fn tanh(x: f64) -> f64 {
    const P: [f64; 3] = [-9.643_991_794_250_523e-1, -9.928_772_310_019_186e1, -1.614_687_684_417_079_5e3];
    const Q: [f64; 3] = [1.128_116_784_916_329_3e2, 2.235_488_390_601_004_5e3, 4.844_063_053_251_255e3];
    let z = x.abs();
    let s = x * x;
    let p = (P[0] * s + P[1]) * s + P[2];
    let q = ((s + Q[0]) * s + Q[1]) * s + Q[2];
    let small = z + z * s * p / q;
    // tanh(20) rounds to 1
    let e = exp_bounded(2.0 * z.min(20.0));
    let large = 1.0 - 2.0 / (e + 1.0);
    (if z > 0.625 { large } else { small }).copysign(x)
}

/// `e^y` for `0 <= y <= 40`.
#[inline(always)]
fn exp_bounded(y: f64) -> f64 {
    const LN2_HI: f64 = 6.931_471_803_691_238e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    const SHIFT: f64 = 6_755_399_441_055_744.0; // 1.5 * 2^52
    let shifted = y * std::f64::consts::LOG2_E + SHIFT;
    let k = shifted - SHIFT;
    let r = (y - k * LN2_HI) - k * LN2_LO;
    // Taylor polynomial on |r| <= ln2 / 2
    let mut poly = 1.0 / 479_001_600.0;
    for c in [
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        poly = poly * r + c;
    }
    // the low mantissa bits of `shifted` hold k
    let scale = (shifted.to_bits().wrapping_sub(SHIFT.to_bits()).wrapping_add(1023)) << 52;
    poly * f64::from_bits(scale)
}

/// In-place `tanh` over a slice.
pub fn tanh_slice(v: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
        // SAFETY: features checked above
        unsafe { tanh_slice_avx2(v) };
        return;
    }
    for x in v {
        *x = tanh(*x);
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn tanh_slice_avx2(v: &mut [f64]) {
    for x in v {
        *x = tanh(*x);
    }
}

/// In-place `tanh` over an array of any memory layout.
pub fn tanh_array<S, D>(a: &mut ArrayBase<S, D>)
where
    S: DataMut<Elem = f64>,
    D: Dimension,
{
    match a.as_slice_memory_order_mut() {
        Some(v) => tanh_slice(v),
        None => a.mapv_inplace(tanh),
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("invalid network shape: {0}")]
    Shape(String),
    #[error("expected {expected} inputs, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("non-finite gradient at parameter {index}")]
    NonFiniteGradient { index: usize },
    #[error("parameter vector has length {got}, spec needs {expected}")]
    ParamCount { expected: usize, got: usize },
}

/// Shape of a fully connected network: tanh on hidden layers, identity on the output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_width: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub output_width: usize,
}

impl MlpSpec {
    pub fn new(input_width: usize, hidden_layers: usize, hidden_width: usize, output_width: usize) -> Self {
        Self {
            input_width,
            hidden_layers,
            hidden_width,
            output_width,
        }
    }

    /// Four hidden layers, scalar output.
    pub fn scalar(input_width: usize, hidden_width: usize) -> Self {
        Self::new(input_width, 4, hidden_width, 1)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.input_width == 0 || self.output_width == 0 {
            return Err(NnError::Shape(format!(
                "input and output widths must be positive ({} -> {})",
                self.input_width, self.output_width
            )));
        }
        if self.hidden_layers > 0 && self.hidden_width == 0 {
            return Err(NnError::Shape("hidden width must be positive".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` per layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers + 1);
        let mut prev = self.input_width;
        for _ in 0..self.hidden_layers {
            dims.push((prev, self.hidden_width));
            prev = self.hidden_width;
        }
        dims.push((prev, self.output_width));
        dims
    }

    pub fn layer_count(&self) -> usize {
        self.hidden_layers + 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct LayerSlot {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    b: usize,
}

/// Weights and biases of one network, or anything congruent to them
/// (gradients, optimizer moments).
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    spec: MlpSpec,
    slots: Vec<LayerSlot>,
    data: Vec<f64>,
}

fn slots_for(spec: &MlpSpec) -> Vec<LayerSlot> {
    let mut off = 0;
    spec.layer_dims()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let s = LayerSlot {
                fan_in,
                fan_out,
                w: off,
                b: off + fan_in * fan_out,
            };
            off += fan_in * fan_out + fan_out;
            s
        })
        .collect()
}

impl MlpParams {
    pub fn zeros(spec: MlpSpec) -> Self {
        let slots = slots_for(&spec);
        Self {
            data: vec![0.0; spec.param_count()],
            spec,
            slots,
        }
    }

    pub fn from_flat(spec: MlpSpec, data: Vec<f64>) -> Result<Self, NnError> {
        spec.validate()?;
        if data.len() != spec.param_count() {
            return Err(NnError::ParamCount {
                expected: spec.param_count(),
                got: data.len(),
            });
        }
        Ok(Self {
            slots: slots_for(&spec),
            spec,
            data,
        })
    }

    /// Uniform Xavier weights, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Self {
        let mut p = Self::zeros(spec);
        for slot in p.slots.clone() {
            let bound = xavier_bound(slot.fan_in, slot.fan_out);
            for w in &mut p.data[slot.w..slot.b] {
                *w = rng.random_range(-bound..=bound);
            }
        }
        p
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layer_count(&self) -> usize {
        self.slots.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    pub fn weight(&self, layer: usize) -> ArrayView2<'_, f64> {
        let s = self.slots[layer];
        ArrayView2::from_shape((s.fan_out, s.fan_in), &self.data[s.w..s.b]).expect("layout")
    }

    pub fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        let s = self.slots[layer];
        ArrayView1::from(&self.data[s.b..s.b + s.fan_out])
    }

    pub fn weight_mut(&mut self, layer: usize) -> ArrayViewMut2<'_, f64> {
        let s = self.slots[layer];
        ArrayViewMut2::from_shape((s.fan_out, s.fan_in), &mut self.data[s.w..s.b]).expect("layout")
    }

    pub fn bias_mut(&mut self, layer: usize) -> ArrayViewMut1<'_, f64> {
        let s = self.slots[layer];
        ArrayViewMut1::from(&mut self.data[s.b..s.b + s.fan_out])
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &MlpParams) {
        debug_assert_eq!(self.spec, other.spec);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|a| *a *= c);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies every parameter into `graph` as a constant node.
    pub fn embed_constants(&self, graph: &mut Graph) -> GraphParams {
        let nodes = self.data.iter().map(|&v| graph.constant(v)).collect();
        GraphParams {
            spec: self.spec,
            slots: self.slots.clone(),
            nodes,
            vars: None,
        }
    }

    /// Creates one leaf per parameter so outputs can be differentiated with respect to them.
    pub fn embed_vars(&self, graph: &mut Graph) -> GraphParams {
        let vars: Vec<VarId> = (0..self.data.len()).map(|_| graph.var()).collect();
        GraphParams {
            spec: self.spec,
            slots: self.slots.clone(),
            nodes: vars.iter().map(|v| v.node()).collect(),
            vars: Some(vars),
        }
    }
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// A network's parameters inside an expression graph.
#[derive(Clone, Debug)]
pub struct GraphParams {
    spec: MlpSpec,
    slots: Vec<LayerSlot>,
    nodes: Vec<NodeId>,
    vars: Option<Vec<VarId>>,
}

impl GraphParams {
    /// Parameter leaves in flat order; `None` when embedded as constants.
    pub fn vars(&self) -> Option<&[VarId]> {
        self.vars.as_deref()
    }

    /// Writes `params` into the leaf values of an [`MlpParams::embed_vars`] embedding.
    pub fn bind(&self, params: &MlpParams, values: &mut LeafValues) {
        if let Some(vars) = &self.vars {
            for (v, &p) in vars.iter().zip(params.as_slice()) {
                values.set(*v, p);
            }
        }
    }

    /// Emits the affine/tanh chain for one input vector.
    pub fn forward(&self, graph: &mut Graph, inputs: &[NodeId]) -> Result<Vec<NodeId>, NnError> {
        if inputs.len() != self.spec.input_width {
            return Err(NnError::WidthMismatch {
                expected: self.spec.input_width,
                got: inputs.len(),
            });
        }
        let last = self.slots.len() - 1;
        let mut act: Vec<NodeId> = inputs.to_vec();
        for (l, s) in self.slots.iter().enumerate() {
            let mut next = Vec::with_capacity(s.fan_out);
            for o in 0..s.fan_out {
                let mut acc = self.nodes[s.b + o];
                for (i, &a) in act.iter().enumerate() {
                    let w = self.nodes[s.w + o * s.fan_in + i];
                    let t = graph.mul(w, a);
                    acc = graph.add(acc, t);
                }
                next.push(if l == last { acc } else { graph.tanh(acc) });
            }
            act = next;
        }
        Ok(act)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tanh_matches_std() {
        let mut worst: f64 = 0.0;
        for i in -200_000..=200_000 {
            let x = i as f64 * 1e-4;
            let (a, b) = (tanh(x), x.tanh());
            worst = worst.max(((a - b) / b.abs().max(f64::MIN_POSITIVE)).abs());
        }
        assert!(worst < 1e-15, "{worst}");
        for x in [1e-300, -1e-12, 0.625, -0.625 - 1e-15, 30.0, -800.0] {
            assert!((tanh(x) - x.tanh()).abs() <= 4.0 * f64::EPSILON * x.tanh().abs(), "{x}");
        }
        assert!(tanh(-0.0).is_sign_negative());
    }

    #[test]
    fn xavier_bounds_and_zero_biases() {
        let spec = MlpSpec::scalar(5, 128);
        let p = MlpParams::init(spec, &mut ChaCha8Rng::seed_from_u64(3));
        let bound = xavier_bound(5, 128);
        assert!((bound - 0.212398).abs() < 1e-6);
        for l in 0..p.layer_count() {
            assert!(p.bias(l).iter().all(|&b| b == 0.0));
        }
        assert!(p.weight(0).iter().all(|w| w.abs() <= bound));
        assert!(p.weight(0).iter().any(|w| w.abs() > 0.9 * bound));
        let inner = xavier_bound(128, 128);
        assert!(p.weight(1).iter().all(|w| w.abs() <= inner));
    }

    #[test]
    fn init_is_deterministic() {
        let spec = MlpSpec::scalar(3, 16);
        let a = MlpParams::init(spec, &mut ChaCha8Rng::seed_from_u64(11));
        let b = MlpParams::init(spec, &mut ChaCha8Rng::seed_from_u64(11));
        let c = MlpParams::init(spec, &mut ChaCha8Rng::seed_from_u64(12));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn param_layout() {
        let spec = MlpSpec::new(2, 2, 3, 1);
        assert_eq!(spec.param_count(), (2 * 3 + 3) + (3 * 3 + 3) + (3 + 1));
        let mut p = MlpParams::zeros(spec);
        p.weight_mut(1)[[2, 0]] = 7.0;
        assert_eq!(p.as_slice()[9 + 6], 7.0);
        assert!(matches!(MlpParams::from_flat(spec, vec![0.0; 3]), Err(NnError::ParamCount { .. })));
        assert!(MlpSpec::new(0, 1, 1, 1).validate().is_err());
    }

    fn eval_graph(p: &MlpParams, x: &[f64]) -> Vec<f64> {
        let mut g = Graph::new();
        let gp = p.embed_constants(&mut g);
        let vars: Vec<_> = x.iter().map(|_| g.var()).collect();
        let ins: Vec<_> = vars.iter().map(|v| v.node()).collect();
        let out = gp.forward(&mut g, &ins).unwrap();
        let mut vals = LeafValues::new(&g);
        for (v, &xi) in vars.iter().zip(x) {
            vals.set(*v, xi);
        }
        g.eval(&vals, &out).unwrap()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = MlpParams::zeros(MlpSpec::scalar(3, 4));
        assert_eq!(eval_graph(&p, &[0.3, -2.0, 5.0]), vec![0.0]);
    }

    #[test]
    fn single_unit_chain() {
        let spec = MlpSpec::new(1, 1, 1, 1);
        let p = MlpParams::from_flat(spec, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(eval_graph(&p, &[0.0]), vec![0.0]);
        let y = eval_graph(&p, &[1.0])[0];
        assert!((y - 0.76159).abs() < 1e-5);
    }

    #[test]
    fn bias_only_network_is_tanh_composition() {
        let spec = MlpSpec::new(2, 3, 1, 1);
        // weights zero except the hidden->hidden and hidden->out ones
        let mut p = MlpParams::zeros(spec);
        p.bias_mut(0)[0] = 0.4;
        p.weight_mut(1)[[0, 0]] = 1.0;
        p.bias_mut(1)[0] = -0.2;
        p.weight_mut(2)[[0, 0]] = 1.0;
        p.bias_mut(2)[0] = 0.1;
        p.weight_mut(3)[[0, 0]] = 1.0;
        p.bias_mut(3)[0] = 0.05;
        let expected = ((0.4f64.tanh() - 0.2).tanh() + 0.1).tanh() + 0.05;
        assert_eq!(eval_graph(&p, &[9.0, -9.0]), vec![expected]);
    }

    #[test]
    fn width_mismatch() {
        let p = MlpParams::zeros(MlpSpec::scalar(3, 4));
        let mut g = Graph::new();
        let gp = p.embed_constants(&mut g);
        let x = g.var();
        assert_eq!(
            gp.forward(&mut g, &[x.node()]).unwrap_err(),
            NnError::WidthMismatch { expected: 3, got: 1 }
        );
    }
}
