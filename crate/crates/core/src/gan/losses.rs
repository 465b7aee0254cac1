//! Adversarial losses and their gradients with respect to the critic.
//!
//! WGAN-GP:
//! `L_g = -mean D(fake)`,
//! `L_d = mean D(fake) - mean D(real) + lambda mean (|grad D(x^)| - 1)^2`
//! with `x^ = eps real + (1 - eps) fake`.
//!
//! Vanilla: the critic output is a logit, `D = sigmoid(logit)`,
//! `L_g = mean log(1 - D(fake))`, `L_d = -mean log D(real) - mean log(1 - D(fake))`,
//! with probabilities clamped to `[1e-7, 1 - 1e-7]`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::GanError;
use crate::nn::batch::{self, critic_backward, gradient_penalty, CriticPass};
use crate::nn::MlpParams;

pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    WganGp,
    Vanilla,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CriticLosses {
    pub l_g: f64,
    pub l_d: f64,
    /// Mean squared gradient-norm deviation (before `lambda`); zero for vanilla.
    pub penalty: f64,
}

fn check(real: ArrayView2<f64>, fake: ArrayView2<f64>) -> Result<(), GanError> {
    if real.dim() != fake.dim() {
        return Err(GanError::Config(format!(
            "real batch {:?} and fake batch {:?} differ in shape",
            real.dim(),
            fake.dim()
        )));
    }
    Ok(())
}

/// `eps * real + (1 - eps) * fake`, row-wise.
pub fn interpolate(real: ArrayView2<f64>, fake: ArrayView2<f64>, eps: ArrayView1<f64>) -> Array2<f64> {
    let e = eps.insert_axis(Axis(1));
    let mut out = fake.to_owned();
    Zip::from(&mut out)
        .and(&real)
        .and_broadcast(&e)
        .for_each(|o, &r, &e| *o = e * r + (1.0 - e) * *o);
    out
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn logit_bounds() -> (f64, f64) {
    let lo = PROB_CLAMP.ln() - (-PROB_CLAMP).ln_1p();
    (lo, -lo)
}

/// `log sigmoid(l)` with clamping and its derivative in `l`.
fn log_d(l: f64) -> (f64, f64) {
    let (lo, hi) = logit_bounds();
    if l < lo {
        (PROB_CLAMP.ln(), 0.0)
    } else if l > hi {
        ((-PROB_CLAMP).ln_1p(), 0.0)
    } else {
        (-softplus(-l), 1.0 / (1.0 + l.exp()))
    }
}

/// `log(1 - sigmoid(l))` with clamping and its derivative in `l`.
fn log_one_minus_d(l: f64) -> (f64, f64) {
    let (v, d) = log_d(-l);
    (v, -d)
}

fn mean(a: &Array1<f64>) -> f64 {
    a.mean().unwrap_or(0.0)
}

pub fn wgan_gp_losses(
    critic: &MlpParams,
    real: ArrayView2<f64>,
    fake: ArrayView2<f64>,
    eps: ArrayView1<f64>,
    lambda: f64,
) -> Result<CriticLosses, GanError> {
    check(real, fake)?;
    let dr = batch::forward(critic, real).column(0).to_owned();
    let df = batch::forward(critic, fake).column(0).to_owned();
    let xhat = interpolate(real, fake, eps);
    let (_, g) = batch::critic_input_grad(critic, xhat.view());
    let penalty = g
        .outer_iter()
        .map(|r| {
            let n = r.dot(&r).sqrt();
            (n - 1.0) * (n - 1.0)
        })
        .sum::<f64>()
        / real.nrows().max(1) as f64;
    Ok(CriticLosses {
        l_g: -mean(&df),
        l_d: mean(&df) - mean(&dr) + lambda * penalty,
        penalty,
    })
}

pub fn vanilla_losses(critic: &MlpParams, real: ArrayView2<f64>, fake: ArrayView2<f64>) -> Result<CriticLosses, GanError> {
    check(real, fake)?;
    let lr = batch::forward(critic, real).column(0).to_owned();
    let lf = batch::forward(critic, fake).column(0).to_owned();
    let log_real = lr.mapv(|l| log_d(l).0);
    let log_fake = lf.mapv(|l| log_one_minus_d(l).0);
    Ok(CriticLosses {
        l_g: mean(&log_fake),
        l_d: -mean(&log_real) - mean(&log_fake),
        penalty: 0.0,
    })
}

/// Critic losses and the gradient of `L_d` with respect to the critic parameters.
pub fn critic_gradients(
    kind: LossKind,
    critic: &MlpParams,
    real: ArrayView2<f64>,
    fake: ArrayView2<f64>,
    eps: ArrayView1<f64>,
    lambda: f64,
) -> Result<(CriticLosses, MlpParams), GanError> {
    check(real, fake)?;
    let n = real.nrows() as f64;
    let mut grads = MlpParams::zeros(*critic.spec());
    let pr = CriticPass::run(critic, real);
    let pf = CriticPass::run(critic, fake);
    let losses = match kind {
        LossKind::WganGp => {
            critic_backward(critic, &pr, &Array1::from_elem(real.nrows(), -1.0 / n), Some(&mut grads));
            critic_backward(critic, &pf, &Array1::from_elem(fake.nrows(), 1.0 / n), Some(&mut grads));
            let xhat = interpolate(real, fake, eps);
            let penalty = gradient_penalty(critic, xhat.view(), lambda / n, &mut grads);
            let (mr, mf) = (mean(&pr.output), mean(&pf.output));
            CriticLosses {
                l_g: -mf,
                l_d: mf - mr + lambda * penalty,
                penalty,
            }
        }
        LossKind::Vanilla => {
            let (log_real, adj_real): (Vec<f64>, Vec<f64>) = pr.output.iter().map(|&l| log_d(l)).unzip();
            let (log_fake, adj_fake): (Vec<f64>, Vec<f64>) = pf.output.iter().map(|&l| log_one_minus_d(l)).unzip();
            let adj_r = Array1::from(adj_real).mapv(|d| -d / n);
            let adj_f = Array1::from(adj_fake).mapv(|d| -d / n);
            critic_backward(critic, &pr, &adj_r, Some(&mut grads));
            critic_backward(critic, &pf, &adj_f, Some(&mut grads));
            let mr = log_real.iter().sum::<f64>() / n;
            let mf = log_fake.iter().sum::<f64>() / n;
            CriticLosses {
                l_g: mf,
                l_d: -mr - mf,
                penalty: 0.0,
            }
        }
    };
    Ok((losses, grads))
}

/// Generator loss `weight * L_g` for critic outputs on fake rows, and its
/// derivative with respect to each output.
pub fn generator_adjoint(kind: LossKind, outputs: &Array1<f64>, weight: f64) -> (f64, Array1<f64>) {
    let n = outputs.len() as f64;
    match kind {
        LossKind::WganGp => (-weight * mean(outputs), Array1::from_elem(outputs.len(), -weight / n)),
        LossKind::Vanilla => {
            let (vals, ders): (Vec<f64>, Vec<f64>) = outputs.iter().map(|&l| log_one_minus_d(l)).unzip();
            (weight * vals.iter().sum::<f64>() / n, Array1::from(ders).mapv(|d| weight * d / n))
        }
    }
}
