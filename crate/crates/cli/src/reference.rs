//! Monte-Carlo reference statistics and sampling-error baselines.

use std::collections::BTreeMap;

use ndarray::Array2;
use pigan::elliptic::{mc_reference, EventSampler, Grid1D, ReferenceStats, CHUNK};
use pigan::metrics::{relative_error, CoMoments, Correlation};
use pigan::processes::{derive_seed, GpSampler, ProcessSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Target};
use crate::CliError;

/// Relative error of a Monte-Carlo estimate from `paths` paths: mean and two
/// standard deviations over independent sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineError {
    pub field: String,
    pub statistic: String,
    pub paths: usize,
    pub mean: f64,
    pub two_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    /// Key of the data-defining part of the config this was computed for.
    pub data_key: String,
    /// `f` for process targets; `k`, `u` and `f` for elliptic targets.
    pub fields: BTreeMap<String, ReferenceStats>,
    pub corr_ku: Option<Correlation>,
    pub corr_kf: Option<Correlation>,
    pub skipped: usize,
    pub baseline: Vec<BaselineError>,
}

/// Mean and two sample standard deviations.
pub fn mean_two_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, 2.0 * var.sqrt())
}

/// Moments of `n` paths produced by `path(i)`, merged chunk by chunk in index order.
pub fn chunked_moments(n: usize, dim: usize, path: impl Fn(u64) -> Vec<f64> + Sync) -> CoMoments {
    let parts: Vec<CoMoments> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = ((c + 1) * CHUNK).min(n);
            let mut block = Array2::zeros((hi - lo, dim));
            for i in lo..hi {
                block.row_mut(i - lo).assign(&ndarray::ArrayView1::from(&path(i as u64)));
            }
            CoMoments::from_rows(block.view())
        })
        .collect();
    let mut total = CoMoments::new(dim);
    for p in &parts {
        total.merge(p);
    }
    total
}

fn process_stats(spec: &ProcessSpec, grid: &Grid1D, n: usize, seed: u64) -> Result<ReferenceStats, CliError> {
    let sampler = GpSampler::new(grid.points(), spec)?;
    let m = chunked_moments(n, grid.len(), |i| sampler.sample_indexed(seed, i));
    Ok(ReferenceStats::from_moments(grid, &m)?)
}

fn baseline_rows(
    reference: &BTreeMap<String, ReferenceStats>,
    sets: &[BTreeMap<String, (Vec<f64>, Vec<f64>)>],
    paths: usize,
) -> Result<Vec<BaselineError>, CliError> {
    let mut rows = Vec::new();
    for (field, stats) in reference {
        if !sets[0].contains_key(field) {
            continue;
        }
        let mut mean_err = Vec::new();
        let mut std_err = Vec::new();
        for s in sets {
            let (m, sd) = &s[field];
            mean_err.push(relative_error(m, &stats.mean)?);
            std_err.push(relative_error(sd, &stats.std)?);
        }
        for (statistic, errs) in [("mean", mean_err), ("std", std_err)] {
            let (mean, two_std) = mean_two_std(&errs);
            rows.push(BaselineError {
                field: field.clone(),
                statistic: statistic.into(),
                paths,
                mean,
                two_std,
            });
        }
    }
    Ok(rows)
}

fn moments_to_fields(m: &CoMoments) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    Ok((m.mean().to_vec(), m.std()?))
}

/// Reference statistics on the evaluation grid from `eval.reference_paths`
/// independent paths, plus the error of estimating mean/std from as many
/// full paths as there are training snapshots.
pub fn compute_reference(cfg: &ExperimentConfig, data_key: &str) -> Result<Reference, CliError> {
    let grid = Grid1D::new(cfg.eval.grid_points)?;
    let seed = derive_seed(cfg.data_seed, "reference");
    let bseed = derive_seed(cfg.data_seed, "baseline");
    let n_base = cfg.groups[0].snapshots;
    let sets = cfg.eval.baseline_sets;
    match &cfg.target {
        Target::Process { process } => {
            let stats = process_stats(process, &grid, cfg.eval.reference_paths, seed)?;
            let sampler = GpSampler::new(grid.points(), process)?;
            let mut base = Vec::with_capacity(sets);
            for s in 0..sets {
                let m = chunked_moments(n_base, grid.len(), |i| sampler.sample_indexed(bseed, s as u64 * n_base as u64 + i));
                base.push(BTreeMap::from([("f".to_string(), moments_to_fields(&m)?)]));
            }
            let fields = BTreeMap::from([("f".to_string(), stats)]);
            let baseline = baseline_rows(&fields, &base, n_base)?;
            Ok(Reference {
                data_key: data_key.into(),
                fields,
                corr_ku: None,
                corr_kf: None,
                skipped: 0,
                baseline,
            })
        }
        Target::Elliptic { k, f } => {
            let mc = mc_reference(k, f, cfg.eval.reference_paths, &grid, seed, false)?;
            let sampler = EventSampler::new(k, f, &grid, bseed)?;
            let m = grid.len();
            let mut base = Vec::with_capacity(sets);
            for s in 0..sets {
                let offset = s as u64 * n_base as u64;
                let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..n_base as u64)
                    .into_par_iter()
                    .map(|i| {
                        let (kp, _, up) = sampler.event(offset + i, &grid)?;
                        Ok((kp, up))
                    })
                    .collect::<Result<_, CliError>>()?;
                let mut km = CoMoments::new(m);
                let mut um = CoMoments::new(m);
                for (kp, up) in &rows {
                    km.push(kp);
                    um.push(up);
                }
                base.push(BTreeMap::from([
                    ("k".to_string(), moments_to_fields(&km)?),
                    ("u".to_string(), moments_to_fields(&um)?),
                ]));
            }
            let fields = BTreeMap::from([("k".to_string(), mc.k), ("u".to_string(), mc.u), ("f".to_string(), mc.f)]);
            let baseline = baseline_rows(&fields, &base, n_base)?;
            Ok(Reference {
                data_key: data_key.into(),
                fields,
                corr_ku: mc.corr_ku,
                corr_kf: mc.corr_kf,
                skipped: mc.skipped,
                baseline,
            })
        }
    }
}
