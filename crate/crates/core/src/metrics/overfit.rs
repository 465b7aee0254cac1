use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use serde::Serialize;

use super::{w1_empirical, MetricsError};
use crate::nn::{batch, MlpParams};
use crate::processes::{derive_seed, substream};

/// Number of real-vs-real pairs behind the W1 noise floor.
pub const BASELINE_PAIRS: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OverfitReport {
    pub n: usize,
    /// W1 between generated samples and the training snapshots.
    pub w1_train: f64,
    /// W1 between generated samples and held-out snapshots.
    pub w1_validation: f64,
    pub baseline_mean: f64,
    pub baseline_std: f64,
    /// Critic estimate `mean D(real) - mean D(fake)` on each set.
    pub critic_train: Option<f64>,
    pub critic_validation: Option<f64>,
}

impl OverfitReport {
    /// Train/validation W1 gap in units of the real-vs-real spread.
    pub fn gap_in_baseline_std(&self) -> f64 {
        (self.w1_validation - self.w1_train) / self.baseline_std.max(f64::MIN_POSITIVE)
    }
}

fn pick(data: ArrayView2<f64>, n: usize, seed: u64, index: u64) -> Result<Array2<f64>, MetricsError> {
    if data.nrows() < n {
        return Err(MetricsError::InsufficientData {
            needed: n,
            have: data.nrows(),
        });
    }
    let mut rng = substream(seed, index);
    let idx = sample(&mut rng, data.nrows(), n).into_vec();
    Ok(data.select(Axis(0), &idx))
}

/// Mean and standard deviation of W1 between pairs of disjoint size-`n` draws from `pool`.
pub fn w1_baseline(pool: ArrayView2<f64>, n: usize, pairs: usize, seed: u64) -> Result<(f64, f64), MetricsError> {
    let seed = derive_seed(seed, "w1-baseline");
    let mut vals = Vec::with_capacity(pairs);
    for p in 0..pairs {
        let both = pick(pool, 2 * n, seed, p as u64)?;
        let (a, b) = both.view().split_at(Axis(0), n);
        vals.push(w1_empirical(a, b)?);
    }
    let mean = vals.iter().sum::<f64>() / pairs as f64;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (pairs.max(2) - 1) as f64;
    Ok((mean, var.sqrt()))
}

fn critic_gap(critic: &MlpParams, real: &Array2<f64>, fake: &Array2<f64>) -> f64 {
    let dr = batch::forward(critic, real.view());
    let df = batch::forward(critic, fake.view());
    dr.mean().unwrap_or(0.0) - df.mean().unwrap_or(0.0)
}

/// Overfitting diagnostics on `n` rows from each of the training, validation
/// and generated sets, plus the real-vs-real W1 floor drawn from `real_pool`.
pub fn overfit_report(
    critic: Option<&MlpParams>,
    train: ArrayView2<f64>,
    validation: ArrayView2<f64>,
    generated: ArrayView2<f64>,
    real_pool: ArrayView2<f64>,
    n: usize,
    seed: u64,
) -> Result<OverfitReport, MetricsError> {
    let s = derive_seed(seed, "overfit");
    let tr = pick(train, n, s, 0)?;
    let va = pick(validation, n, s, 1)?;
    let ge = pick(generated, n, s, 2)?;
    let (baseline_mean, baseline_std) = w1_baseline(real_pool, n, BASELINE_PAIRS, seed)?;
    Ok(OverfitReport {
        n,
        w1_train: w1_empirical(ge.view(), tr.view())?,
        w1_validation: w1_empirical(ge.view(), va.view())?,
        baseline_mean,
        baseline_std,
        critic_train: critic.map(|c| critic_gap(c, &tr, &ge)),
        critic_validation: critic.map(|c| critic_gap(c, &va, &ge)),
    })
}
