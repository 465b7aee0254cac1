//! Batched evaluation of [`MlpParams`] with hand-derived adjoints.
//!
//! Rows of an input matrix are independent samples. Everything here computes
//! the same quantities as the scalar graph route in [`crate::autodiff`] and is
//! tested against it; these kernels exist because training evaluates the
//! networks millions of times.
//!
//! * [`TaylorPass`]: value plus first and second derivative of the output
//!   along one input coordinate, with a backward pass to parameter gradients.
//! * [`critic_backward`]: ordinary backprop returning parameter and input gradients.
//! * [`gradient_penalty`]: `mean (|grad_x D| - 1)^2` and its parameter gradient
//!   (double backprop).

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};

use super::MlpParams;

fn affine(a: &ArrayView2<f64>, params: &MlpParams, layer: usize) -> Array2<f64> {
    let mut z = a.dot(&params.weight(layer).t());
    z += &params.bias(layer);
    z
}

fn linear(a: &ArrayView2<f64>, params: &MlpParams, layer: usize) -> Array2<f64> {
    a.dot(&params.weight(layer).t())
}

/// Plain forward pass; `input` is `batch x input_width`.
pub fn forward(params: &MlpParams, input: ArrayView2<f64>) -> Array2<f64> {
    let last = params.layer_count() - 1;
    let mut a = affine(&input, params, 0);
    if last > 0 {
        super::tanh_array(&mut a);
    }
    for l in 1..=last {
        let mut z = affine(&a.view(), params, l);
        if l < last {
            super::tanh_array(&mut z);
        }
        a = z;
    }
    a
}

fn accumulate_weight(grads: &mut MlpParams, layer: usize, z_adj: &Array2<f64>, a: &ArrayView2<f64>) {
    let mut gw = grads.weight_mut(layer);
    ndarray::linalg::general_mat_mul(1.0, &z_adj.t(), a, 1.0, &mut gw);
}

fn accumulate_bias(grads: &mut MlpParams, layer: usize, z_adj: &Array2<f64>) {
    let mut gb = grads.bias_mut(layer);
    gb += &z_adj.sum_axis(Axis(0));
}

struct TaylorLayer {
    h: Array2<f64>,
    dz: Option<Array2<f64>>,
    d2z: Option<Array2<f64>>,
    dh: Option<Array2<f64>>,
    d2h: Option<Array2<f64>>,
}

/// Forward pass that also propagates `d/dx` and `d^2/dx^2` along input column `x_col`.
pub struct TaylorPass {
    order: usize,
    x_col: usize,
    input: Array2<f64>,
    hidden: Vec<TaylorLayer>,
    /// Output value, `batch x output_width`.
    pub value: Array2<f64>,
    /// First derivative of the output (present when `order >= 1`).
    pub d1: Option<Array2<f64>>,
    /// Second derivative of the output (present when `order == 2`).
    pub d2: Option<Array2<f64>>,
}

impl TaylorPass {
    pub fn run(params: &MlpParams, input: Array2<f64>, x_col: usize, order: usize) -> Self {
        assert!(order <= 2, "derivative order above 2 is not supported");
        assert!(x_col < input.ncols());
        let batch = input.nrows();
        let last = params.layer_count() - 1;
        let mut hidden = Vec::with_capacity(last);

        let mut z = affine(&input.view(), params, 0);
        // d/dx of the first affine map is the weight column of x, d^2 vanishes.
        let mut dz = (order >= 1).then(|| {
            let col = params.weight(0).column(x_col).to_owned();
            col.broadcast((batch, col.len())).expect("broadcast").to_owned()
        });
        let mut d2z = (order >= 2).then(|| Array2::zeros(z.raw_dim()));

        for l in 1..=last {
            let mut h = z.clone();
            super::tanh_array(&mut h);
            let dh = dz.as_ref().map(|dz| {
                let mut out = dz.clone();
                Zip::from(&mut out).and(&h).for_each(|o, &h| *o *= 1.0 - h * h);
                out
            });
            let d2h = match (&dz, &d2z) {
                (Some(dz), Some(d2z)) => {
                    let mut out = Array2::zeros(h.raw_dim());
                    Zip::from(&mut out).and(&h).and(dz).and(d2z).for_each(|o, &h, &d1, &d2| {
                        let s = 1.0 - h * h;
                        *o = s * d2 - 2.0 * h * s * d1 * d1;
                    });
                    Some(out)
                }
                _ => None,
            };
            let next_z = affine(&h.view(), params, l);
            let next_dz = dh.as_ref().map(|dh| linear(&dh.view(), params, l));
            let next_d2z = d2h.as_ref().map(|d2h| linear(&d2h.view(), params, l));
            hidden.push(TaylorLayer {
                h,
                dz: dz.take(),
                d2z: d2z.take(),
                dh,
                d2h,
            });
            z = next_z;
            dz = next_dz;
            d2z = next_d2z;
        }

        Self {
            order,
            x_col,
            input,
            hidden,
            value: z,
            d1: dz,
            d2: d2z,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Parameter gradient of `sum(adj0 * value + adj1 * d1 + adj2 * d2)`,
    /// accumulated into `grads`.
    pub fn backward(
        &self,
        params: &MlpParams,
        adj0: &Array2<f64>,
        adj1: Option<&Array2<f64>>,
        adj2: Option<&Array2<f64>>,
        grads: &mut MlpParams,
    ) {
        assert!(adj1.is_none() || self.order >= 1);
        assert!(adj2.is_none() || self.order >= 2);
        let last = params.layer_count() - 1;
        let mut z_adj = adj0.clone();
        let mut dz_adj = match (adj1, adj2) {
            (None, Some(a2)) => Some(Array2::zeros(a2.raw_dim())),
            _ => adj1.cloned(),
        };
        let mut d2z_adj = adj2.cloned();

        for l in (1..=last).rev() {
            let layer = &self.hidden[l - 1];
            // affine layer l: z = h W^T + b, dz = dh W^T, d2z = d2h W^T
            accumulate_weight(grads, l, &z_adj, &layer.h.view());
            accumulate_bias(grads, l, &z_adj);
            if let (Some(a), Some(dh)) = (&dz_adj, &layer.dh) {
                accumulate_weight(grads, l, a, &dh.view());
            }
            if let (Some(a), Some(d2h)) = (&d2z_adj, &layer.d2h) {
                accumulate_weight(grads, l, a, &d2h.view());
            }
            let w = params.weight(l);
            let h_adj = z_adj.dot(&w);
            let dh_adj = dz_adj.as_ref().map(|a| a.dot(&w));
            let d2h_adj = d2z_adj.as_ref().map(|a| a.dot(&w));

            // tanh: h = tanh z, dh = s dz, d2h = s d2z - 2 h s dz^2, s = 1 - h^2
            let mut nz = h_adj;
            let (ndz, nd2z) = match (dh_adj, d2h_adj) {
                (None, _) => {
                    Zip::from(&mut nz).and(&layer.h).for_each(|g, &h| *g *= 1.0 - h * h);
                    (None, None)
                }
                (Some(mut g1), None) => {
                    let dz = layer.dz.as_ref().expect("order 1");
                    Zip::from(&mut nz).and(&mut g1).and(&layer.h).and(dz).for_each(|g0, g1, &h, &d1| {
                        let s = 1.0 - h * h;
                        *g0 = *g0 * s - 2.0 * h * s * d1 * *g1;
                        *g1 *= s;
                    });
                    (Some(g1), None)
                }
                (Some(mut g1), Some(mut g2)) => {
                    let dz = layer.dz.as_ref().expect("order 1");
                    let d2z = layer.d2z.as_ref().expect("order 2");
                    Zip::from(&mut nz)
                        .and(&mut g1)
                        .and(&mut g2)
                        .and(&layer.h)
                        .and(dz)
                        .and(d2z)
                        .for_each(|g0, g1, g2, &h, &d1, &d2| {
                            let s = 1.0 - h * h;
                            let hs = h * s;
                            *g0 = *g0 * s - 2.0 * hs * d1 * *g1 - (2.0 * hs * d2 + 2.0 * s * (s - 2.0 * h * h) * d1 * d1) * *g2;
                            *g1 = *g1 * s - 4.0 * hs * d1 * *g2;
                            *g2 *= s;
                        });
                    (Some(g1), Some(g2))
                }
            };
            z_adj = nz;
            dz_adj = ndz;
            d2z_adj = nd2z;
        }

        // first layer: z = x W^T + b, dz = e_x W^T, d2z = 0
        accumulate_weight(grads, 0, &z_adj, &self.input.view());
        accumulate_bias(grads, 0, &z_adj);
        if let Some(a) = &dz_adj {
            let col_sum = a.sum_axis(Axis(0));
            let mut gw = grads.weight_mut(0);
            let mut col = gw.slice_mut(s![.., self.x_col]);
            col += &col_sum;
        }
    }
}

/// Activations kept for backprop through a scalar-output network.
pub struct CriticPass {
    acts: Vec<Array2<f64>>,
    pub output: Array1<f64>,
}

impl CriticPass {
    pub fn run(params: &MlpParams, input: ArrayView2<f64>) -> Self {
        assert_eq!(params.spec().output_width, 1, "critic must have scalar output");
        let last = params.layer_count() - 1;
        let mut acts = Vec::with_capacity(last + 1);
        acts.push(input.to_owned());
        for l in 0..last {
            let mut z = affine(&acts[l].view(), params, l);
            super::tanh_array(&mut z);
            acts.push(z);
        }
        let out = affine(&acts[last].view(), params, last);
        Self {
            acts,
            output: out.column(0).to_owned(),
        }
    }
}

/// Backprop of `sum_j out_adj[j] * D(x_j)`. Adds parameter gradients into
/// `grads` (when given) and returns the input gradient, `batch x input_width`.
pub fn critic_backward(params: &MlpParams, pass: &CriticPass, out_adj: &Array1<f64>, mut grads: Option<&mut MlpParams>) -> Array2<f64> {
    let last = params.layer_count() - 1;
    let mut z_adj = out_adj.view().insert_axis(Axis(1)).to_owned();
    for l in (0..=last).rev() {
        if let Some(g) = grads.as_deref_mut() {
            accumulate_weight(g, l, &z_adj, &pass.acts[l].view());
            accumulate_bias(g, l, &z_adj);
        }
        let mut a_adj = z_adj.dot(&params.weight(l));
        if l == 0 {
            return a_adj;
        }
        Zip::from(&mut a_adj).and(&pass.acts[l]).for_each(|g, &h| *g *= 1.0 - h * h);
        z_adj = a_adj;
    }
    unreachable!()
}

/// Input gradient `grad_x D(x)` for every row.
pub fn critic_input_grad(params: &MlpParams, input: ArrayView2<f64>) -> (Array1<f64>, Array2<f64>) {
    let pass = CriticPass::run(params, input);
    let ones = Array1::ones(input.nrows());
    let g = critic_backward(params, &pass, &ones, None);
    (pass.output, g)
}

/// `scale * sum_j (|grad_x D(x_j)| - 1)^2` and its parameter gradient, added into `grads`.
///
/// Returns the unscaled mean penalty. A zero input gradient contributes zero
/// to the parameter gradient.
pub fn gradient_penalty(params: &MlpParams, input: ArrayView2<f64>, scale: f64, grads: &mut MlpParams) -> f64 {
    let pass = CriticPass::run(params, input);
    let last = params.layer_count() - 1;
    let batch = input.nrows();

    // backward chain: g_{L-1} = w_L, delta_l = g_l * s_l, g_{l-1} = delta_l W_l
    let w_out = params.weight(last).row(0).to_owned();
    let mut g: Vec<Array2<f64>> = vec![Array2::zeros((0, 0)); last + 1];
    let mut delta: Vec<Array2<f64>> = vec![Array2::zeros((0, 0)); last + 1];
    g[last] = w_out.broadcast((batch, w_out.len())).expect("broadcast").to_owned();
    for l in (1..=last).rev() {
        let mut d = g[l].clone();
        Zip::from(&mut d).and(&pass.acts[l]).for_each(|d, &h| *d *= 1.0 - h * h);
        g[l - 1] = d.dot(&params.weight(l - 1));
        delta[l] = d;
    }
    let input_grad = &g[0];

    let mut total = 0.0;
    let mut g_adj = Array2::zeros(input_grad.raw_dim());
    for (j, row) in input_grad.outer_iter().enumerate() {
        let r = row.dot(&row).sqrt();
        total += (r - 1.0) * (r - 1.0);
        if r > 0.0 {
            let c = scale * 2.0 * (r - 1.0) / r;
            g_adj.row_mut(j).assign(&(&row * c));
        }
    }

    // reverse the backward chain upwards
    let mut act_adj: Vec<Array2<f64>> = vec![Array2::zeros((0, 0)); last + 1];
    for l in 1..=last {
        // g_{l-1} = delta_l W_{l-1}
        let w = params.weight(l - 1);
        {
            let mut gw = grads.weight_mut(l - 1);
            ndarray::linalg::general_mat_mul(1.0, &delta[l].t(), &g_adj.view(), 1.0, &mut gw);
        }
        let delta_adj = g_adj.dot(&w.t());
        // delta_l = g_l * s_l
        let mut next_g_adj = delta_adj.clone();
        let mut a_adj = Array2::zeros(delta_adj.raw_dim());
        Zip::from(&mut next_g_adj)
            .and(&mut a_adj)
            .and(&delta_adj)
            .and(&g[l])
            .and(&pass.acts[l])
            .for_each(|ng, aa, &da, &gl, &h| {
                let s = 1.0 - h * h;
                *ng = da * s;
                // s = 1 - h^2
                *aa = -2.0 * h * (da * gl);
            });
        act_adj[l] = a_adj;
        g_adj = next_g_adj;
    }
    // g_{L-1} = w_out broadcast
    {
        let mut gw = grads.weight_mut(last);
        let mut row = gw.row_mut(0);
        row += &g_adj.sum_axis(Axis(0));
    }

    // forward chain, driven only by the activation adjoints
    let mut carry: Option<Array2<f64>> = None;
    for l in (1..=last).rev() {
        let mut a_adj = std::mem::take(&mut act_adj[l]);
        if let Some(c) = carry.take() {
            a_adj += &c;
        }
        Zip::from(&mut a_adj).and(&pass.acts[l]).for_each(|g, &h| *g *= 1.0 - h * h);
        accumulate_weight(grads, l - 1, &a_adj, &pass.acts[l - 1].view());
        accumulate_bias(grads, l - 1, &a_adj);
        if l > 1 {
            carry = Some(a_adj.dot(&params.weight(l - 1)));
        }
    }

    total / batch as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Graph, LeafValues};
    use crate::nn::MlpSpec;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_input(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.5..1.5))
    }

    #[test]
    fn single_column_input() {
        // `n x 1` times `1 x w` can come back column-major
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = MlpParams::init(MlpSpec::new(1, 3, 5, 1), &mut rng);
        let input = random_input(&mut rng, 7, 1);
        let pass = CriticPass::run(&params, input.view());
        let out = forward(&params, input.view());
        for i in 0..7 {
            let mut a = input.row(i).to_vec();
            for l in 0..params.layer_count() {
                let w = params.weight(l);
                let mut z: Vec<f64> = (0..w.nrows())
                    .map(|r| w.row(r).iter().zip(&a).map(|(p, q)| p * q).sum::<f64>() + params.bias(l)[r])
                    .collect();
                if l + 1 < params.layer_count() {
                    z.iter_mut().for_each(|v| *v = v.tanh());
                }
                a = z;
            }
            assert!(close(out[[i, 0]], a[0], 1e-13));
            assert!(close(pass.output[i], a[0], 1e-13));
        }
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn forward_matches_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = MlpParams::init(MlpSpec::new(3, 3, 5, 2), &mut rng);
        let x = random_input(&mut rng, 4, 3);
        let y = forward(&p, x.view());
        for (r, row) in x.outer_iter().enumerate() {
            let mut g = Graph::new();
            let gp = p.embed_constants(&mut g);
            let vars: Vec<_> = (0..3).map(|_| g.var()).collect();
            let ins: Vec<_> = vars.iter().map(|v| v.node()).collect();
            let out = gp.forward(&mut g, &ins).unwrap();
            let mut vals = LeafValues::new(&g);
            for (v, &xi) in vars.iter().zip(row.iter()) {
                vals.set(*v, xi);
            }
            let got = g.eval(&vals, &out).unwrap();
            for c in 0..2 {
                assert!(close(got[c], y[[r, c]], 1e-13));
            }
        }
    }

    /// Graph route for value, d/dx, d2/dx2 of a scalar net and their parameter
    /// gradients weighted by (w0, w1, w2).
    fn graph_taylor(p: &MlpParams, row: &[f64], x_col: usize, w: [f64; 3]) -> ([f64; 3], Vec<f64>) {
        let mut g = Graph::new();
        let gp = p.embed_vars(&mut g);
        let vars: Vec<_> = row.iter().map(|_| g.var()).collect();
        let ins: Vec<_> = vars.iter().map(|v| v.node()).collect();
        let y = gp.forward(&mut g, &ins).unwrap()[0];
        let d1 = g.grad(y, &[vars[x_col]]).unwrap()[0];
        let d2 = g.grad(d1, &[vars[x_col]]).unwrap()[0];
        let c0 = g.scale(w[0], y);
        let c1 = g.scale(w[1], d1);
        let c2 = g.scale(w[2], d2);
        let obj = g.sum(&[c0, c1, c2]);
        let pg = g.grad(obj, gp.vars().unwrap()).unwrap();
        let mut vals = LeafValues::new(&g);
        gp.bind(p, &mut vals);
        for (v, &xi) in vars.iter().zip(row) {
            vals.set(*v, xi);
        }
        let mut outs = vec![y, d1, d2];
        outs.extend(&pg);
        let all = g.eval(&vals, &outs).unwrap();
        ([all[0], all[1], all[2]], all[3..].to_vec())
    }

    #[test]
    fn taylor_pass_matches_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = MlpParams::init(MlpSpec::new(3, 3, 6, 1), &mut rng);
        let x = random_input(&mut rng, 5, 3);
        let x_col = 0;
        let pass = TaylorPass::run(&p, x.clone(), x_col, 2);
        let weights: Vec<[f64; 3]> = (0..5)
            .map(|_| {
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]
            })
            .collect();
        let a0 = Array2::from_shape_fn((5, 1), |(i, _)| weights[i][0]);
        let a1 = Array2::from_shape_fn((5, 1), |(i, _)| weights[i][1]);
        let a2 = Array2::from_shape_fn((5, 1), |(i, _)| weights[i][2]);
        let mut grads = MlpParams::zeros(*p.spec());
        pass.backward(&p, &a0, Some(&a1), Some(&a2), &mut grads);

        let mut expected = vec![0.0; p.spec().param_count()];
        for (r, row) in x.outer_iter().enumerate() {
            let (vals, pg) = graph_taylor(&p, row.as_slice().unwrap(), x_col, weights[r]);
            assert!(close(vals[0], pass.value[[r, 0]], 1e-12));
            assert!(close(vals[1], pass.d1.as_ref().unwrap()[[r, 0]], 1e-12));
            assert!(close(vals[2], pass.d2.as_ref().unwrap()[[r, 0]], 1e-12));
            for (e, g) in expected.iter_mut().zip(pg) {
                *e += g;
            }
        }
        for (i, (&e, &g)) in expected.iter().zip(grads.as_slice()).enumerate() {
            assert!(close(e, g, 1e-11), "param {i}: graph {e} vs batch {g}");
        }
    }

    #[test]
    fn taylor_first_order_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = MlpParams::init(MlpSpec::new(2, 2, 4, 1), &mut rng);
        let x = random_input(&mut rng, 3, 2);
        let pass = TaylorPass::run(&p, x.clone(), 1, 1);
        assert!(pass.d2.is_none());
        let a0 = Array2::from_elem((3, 1), 0.5);
        let a1 = Array2::from_elem((3, 1), -1.5);
        let mut grads = MlpParams::zeros(*p.spec());
        pass.backward(&p, &a0, Some(&a1), None, &mut grads);
        let mut expected = vec![0.0; p.spec().param_count()];
        for row in x.outer_iter() {
            let (_, pg) = graph_taylor(&p, row.as_slice().unwrap(), 1, [0.5, -1.5, 0.0]);
            for (e, g) in expected.iter_mut().zip(pg) {
                *e += g;
            }
        }
        for (&e, &g) in expected.iter().zip(grads.as_slice()) {
            assert!(close(e, g, 1e-11));
        }
    }

    #[test]
    fn critic_gradients_match_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = MlpParams::init(MlpSpec::new(4, 3, 5, 1), &mut rng);
        let x = random_input(&mut rng, 3, 4);
        let lambda = 0.37;

        let pass = CriticPass::run(&p, x.view());
        let adj = Array1::from(vec![0.3, -1.1, 0.8]);
        let mut grads = MlpParams::zeros(*p.spec());
        let in_grad = critic_backward(&p, &pass, &adj, Some(&mut grads));
        let pen = gradient_penalty(&p, x.view(), lambda / 3.0, &mut grads);

        let mut g = Graph::new();
        let gp = p.embed_vars(&mut g);
        let mut terms = Vec::new();
        let mut pen_terms = Vec::new();
        let mut input_vars = Vec::new();
        let mut input_grads = Vec::new();
        for r in 0..3 {
            let vars: Vec<_> = (0..4).map(|_| g.var()).collect();
            let ins: Vec<_> = vars.iter().map(|v| v.node()).collect();
            let d = gp.forward(&mut g, &ins).unwrap()[0];
            let gx = g.grad(d, &vars).unwrap();
            let sq: Vec<_> = gx.iter().map(|&n| g.square(n)).collect();
            let ss = g.sum(&sq);
            let norm = g.sqrt(ss);
            let one = g.constant(1.0);
            let gap = g.sub(norm, one);
            let p2 = g.square(gap);
            pen_terms.push(p2);
            terms.push(g.scale(adj[r], d));
            terms.push(g.scale(lambda / 3.0, p2));
            input_vars.push(vars);
            input_grads.push(gx);
        }
        let obj = g.sum(&terms);
        let pg = g.grad(obj, gp.vars().unwrap()).unwrap();
        let mut vals = LeafValues::new(&g);
        gp.bind(&p, &mut vals);
        for (r, vars) in input_vars.iter().enumerate() {
            for (c, v) in vars.iter().enumerate() {
                vals.set(*v, x[[r, c]]);
            }
        }
        let got = g.eval(&vals, &pg).unwrap();
        for (i, (&e, &b)) in got.iter().zip(grads.as_slice()).enumerate() {
            assert!(close(e, b, 1e-11), "param {i}: graph {e} vs batch {b}");
        }
        let pens = g.eval(&vals, &pen_terms).unwrap();
        assert!(close(pens.iter().sum::<f64>() / 3.0, pen, 1e-12));
        for r in 0..3 {
            let gx = g.eval(&vals, &input_grads[r]).unwrap();
            for c in 0..4 {
                assert!(close(gx[c] * adj[r], in_grad[[r, c]], 1e-12));
            }
        }
    }

    #[test]
    fn linear_critic_with_unit_weights_has_no_penalty() {
        let spec = MlpSpec::new(2, 0, 0, 1);
        let p = MlpParams::from_flat(spec, vec![0.6, 0.8, 0.0]).unwrap();
        let x = Array2::from_shape_vec((2, 2), vec![1.0, 2.0, -3.0, 0.5]).unwrap();
        let mut grads = MlpParams::zeros(spec);
        let pen = gradient_penalty(&p, x.view(), 1.0, &mut grads);
        assert!(pen.abs() < 1e-30);
        assert!(grads.as_slice().iter().all(|g| g.abs() < 1e-15));
    }
}
