//! Batched fake snapshots and their parameter gradients.
//!
//! For `n` noise vectors and `p` sensors of one block, the network input has
//! `n * p` rows `(x_i, xi_j)` ordered `j * p + i`, so the output column reshapes
//! directly into the `n x p` block of the snapshot matrix.

use ndarray::{s, Array2, ArrayView2};

use super::{Field, GanError, GeneratorKind, GeneratorSet};
use crate::elliptic::DIFFUSION;
use crate::nn::batch::TaylorPass;
use crate::nn::MlpParams;
use crate::processes::SensorLayout;

fn inputs(positions: &[f64], noise: ArrayView2<f64>) -> Array2<f64> {
    let (n, d) = noise.dim();
    let p = positions.len();
    let mut input = Array2::zeros((n * p, 1 + d));
    for j in 0..n {
        for (i, &x) in positions.iter().enumerate() {
            let mut row = input.row_mut(j * p + i);
            row[0] = x;
            row.slice_mut(s![1..]).assign(&noise.row(j));
        }
    }
    input
}

fn to_block(col: &Array2<f64>, n: usize, p: usize) -> Array2<f64> {
    col.view().into_shape_with_order((n, p)).expect("block shape").to_owned()
}

fn to_col(block: ArrayView2<f64>) -> Array2<f64> {
    let (n, p) = block.dim();
    block.to_owned().into_shape_with_order((n * p, 1)).expect("column shape")
}

enum BlockPass {
    Empty,
    Plain { net: usize, pass: TaylorPass },
    Induced { k: TaylorPass, u: TaylorPass },
}

/// Fake snapshot rows plus the forward state needed for their gradient.
pub struct FakeBatch {
    pub rows: Array2<f64>,
    blocks: Vec<BlockPass>,
    widths: [usize; 4],
    n: usize,
}

/// Generates one fake row per noise vector (`noise` is `n x noise_dim`).
pub fn fake_rows(gen: &GeneratorSet, layout: &SensorLayout, noise: ArrayView2<f64>) -> Result<FakeBatch, GanError> {
    if noise.ncols() != gen.noise_dim {
        return Err(GanError::NoiseDim {
            expected: gen.noise_dim,
            got: noise.ncols(),
        });
    }
    let n = noise.nrows();
    let fields: [(&Vec<f64>, Field); 4] = [
        (&layout.k, Field::K),
        (&layout.u, Field::U),
        (&layout.f, Field::U),
        (&layout.b, Field::U),
    ];
    let mut rows = Array2::zeros((n, layout.width()));
    let mut blocks = Vec::with_capacity(4);
    let mut widths = [0; 4];
    let mut col = 0;
    for (b, (pos, field)) in fields.into_iter().enumerate() {
        let p = pos.len();
        widths[b] = p;
        if p == 0 {
            blocks.push(BlockPass::Empty);
            continue;
        }
        let input = inputs(pos, noise);
        let induced = gen.kind == GeneratorKind::Physics && b == 2;
        let (values, pass) = if induced {
            let k = TaylorPass::run(gen.net(Field::K), input.clone(), 0, 1);
            let u = TaylorPass::run(gen.net(Field::U), input, 0, 2);
            let kd = k.d1.as_ref().expect("order 1");
            let ud = u.d1.as_ref().expect("order 2");
            let ud2 = u.d2.as_ref().expect("order 2");
            let f = (kd * ud + &k.value * ud2) * -DIFFUSION;
            (f, BlockPass::Induced { k, u })
        } else {
            let net = match (gen.kind, field) {
                (GeneratorKind::Physics, Field::K) => 0,
                (GeneratorKind::Physics, Field::U) => 1,
                (GeneratorKind::Process, _) => 0,
            };
            let pass = TaylorPass::run(&gen.nets[net], input, 0, 0);
            (pass.value.clone(), BlockPass::Plain { net, pass })
        };
        rows.slice_mut(s![.., col..col + p]).assign(&to_block(&values, n, p));
        blocks.push(pass);
        col += p;
    }
    Ok(FakeBatch { rows, blocks, widths, n })
}

impl FakeBatch {
    /// Gradients (one per generator network) of `sum(row_adj * rows)`.
    pub fn backward(&self, gen: &GeneratorSet, row_adj: ArrayView2<f64>) -> Vec<MlpParams> {
        assert_eq!(row_adj.dim(), self.rows.dim());
        let mut grads: Vec<MlpParams> = gen.nets.iter().map(|n| MlpParams::zeros(*n.spec())).collect();
        let mut col = 0;
        for (b, pass) in self.blocks.iter().enumerate() {
            let p = self.widths[b];
            if p == 0 {
                continue;
            }
            let adj = to_col(row_adj.slice(s![.., col..col + p]));
            col += p;
            match pass {
                BlockPass::Empty => {}
                BlockPass::Plain { net, pass } => {
                    pass.backward(&gen.nets[*net], &adj, None, None, &mut grads[*net]);
                }
                BlockPass::Induced { k, u } => {
                    // f = -c (k' u' + k u'')
                    let c = -DIFFUSION;
                    let kd = k.d1.as_ref().expect("order 1");
                    let ud = u.d1.as_ref().expect("order 2");
                    let ud2 = u.d2.as_ref().expect("order 2");
                    let k0 = ud2 * &adj * c;
                    let k1 = ud * &adj * c;
                    let u1 = kd * &adj * c;
                    let u2 = &k.value * &adj * c;
                    let (gk, gu) = grads.split_at_mut(1);
                    k.backward(gen.net(Field::K), &k0, Some(&k1), None, &mut gk[0]);
                    let zero = Array2::zeros(adj.raw_dim());
                    u.backward(gen.net(Field::U), &zero, Some(&u1), Some(&u2), &mut gu[0]);
                }
            }
        }
        debug_assert_eq!(self.n, row_adj.nrows());
        grads
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Graph, LeafValues, NodeId};
    use crate::processes::substream;
    use rand::Rng;

    fn layout() -> SensorLayout {
        SensorLayout {
            k: vec![-0.5, 0.25],
            u: vec![0.0],
            f: vec![-1.0, -0.2, 0.6],
            b: vec![-1.0, 1.0],
        }
    }

    fn noise(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = substream(seed, 1);
        Array2::from_shape_fn((n, d), |_| rng.sample(rand_distr::StandardNormal))
    }

    #[test]
    fn rows_match_graph_construction() {
        let mut rng = substream(3, 0);
        let gen = GeneratorSet::init(GeneratorKind::Physics, 2, 5, &mut rng);
        let xi = noise(3, 2, 4);
        let batch = fake_rows(&gen, &layout(), xi.view()).unwrap();
        assert_eq!(batch.rows.dim(), (3, 8));
        for j in 0..3 {
            let mut g = Graph::new();
            let gg = gen.embed(&mut g, false);
            let xin: Vec<NodeId> = xi.row(j).iter().map(|&v| g.constant(v)).collect();
            let row = gg.fake_snapshot(&mut g, &layout(), &xin).unwrap();
            let mut leaves = LeafValues::new(&g);
            row.bind(&mut leaves);
            let vals = g.eval(&leaves, &row.nodes).unwrap();
            for (a, b) in vals.iter().zip(batch.rows.row(j)) {
                assert!((a - b).abs() < 1e-13 * (1.0 + a.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn gradients_match_graph() {
        let mut rng = substream(5, 0);
        let gen = GeneratorSet::init(GeneratorKind::Physics, 2, 4, &mut rng);
        let xi = noise(2, 2, 6);
        let adj = Array2::from_shape_fn((2, 8), |(i, j)| ((i * 8 + j) as f64 * 0.37).sin());
        let batch = fake_rows(&gen, &layout(), xi.view()).unwrap();
        let grads = batch.backward(&gen, adj.view());

        let mut g = Graph::new();
        let gg = gen.embed(&mut g, true);
        let mut terms = Vec::new();
        let mut leaves_x = Vec::new();
        for j in 0..2 {
            let xin: Vec<NodeId> = xi.row(j).iter().map(|&v| g.constant(v)).collect();
            let row = gg.fake_snapshot(&mut g, &layout(), &xin).unwrap();
            for (c, &node) in row.nodes.iter().enumerate() {
                let w = g.constant(adj[[j, c]]);
                terms.push(g.mul(w, node));
            }
            leaves_x.extend(row.x_leaves);
        }
        let total = g.sum(&terms);
        let vars: Vec<_> = gg.nets.iter().flat_map(|n| n.vars().unwrap().to_vec()).collect();
        let dnodes = g.grad(total, &vars).unwrap();
        let mut leaves = LeafValues::new(&g);
        for (gp, net) in gg.nets.iter().zip(&gen.nets) {
            gp.bind(net, &mut leaves);
        }
        for (v, x) in leaves_x {
            leaves.set(v, x);
        }
        let expect = g.eval(&leaves, &dnodes).unwrap();
        let got: Vec<f64> = grads.iter().flat_map(|p| p.as_slice().to_vec()).collect();
        assert_eq!(expect.len(), got.len());
        for (e, a) in expect.iter().zip(&got) {
            assert!((e - a).abs() < 1e-11 * (1.0 + e.abs()), "{e} vs {a}");
        }
    }

    #[test]
    fn process_generator_reads_every_sensor() {
        let mut rng = substream(8, 0);
        let gen = GeneratorSet::init(GeneratorKind::Process, 4, 5, &mut rng);
        let l = SensorLayout::f_only(vec![-1.0, 0.0, 1.0]);
        let xi = noise(5, 4, 9);
        let b = fake_rows(&gen, &l, xi.view()).unwrap();
        assert_eq!(b.rows.dim(), (5, 3));
        let direct = crate::nn::batch::forward(
            &gen.nets[0],
            ndarray::array![[0.0, xi[[2, 0]], xi[[2, 1]], xi[[2, 2]], xi[[2, 3]]]].view(),
        );
        assert_eq!(direct[[0, 0]], b.rows[[2, 1]]);
        assert!(fake_rows(&gen, &l, noise(5, 3, 9).view()).is_err());
    }
}
