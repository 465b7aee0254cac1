//! Generator evaluation on the grid, metric rows and per-figure tables.

use std::collections::BTreeMap;
use std::path::PathBuf;

use ndarray::{s, Array2, ArrayView2};
use pigan::elliptic::DIFFUSION;
use pigan::gan::{fake_rows, Field, GeneratorKind, GeneratorSet, TraceRow};
use pigan::metrics::{relative_error, symmetric_eigenvalues, CoMoments, Correlation, PairMoments};
use pigan::nn::batch::TaylorPass;
use pigan::processes::{halton_gaussian, SensorLayout};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::plot::{LinePlot, Series};
use crate::reference::{mean_two_std, Reference};
use crate::workspace::{write_atomic, Workspace};
use crate::CliError;

/// Noise vectors per evaluation block.
pub const EVAL_CHUNK: usize = 64;

/// Leading modes drawn in spectra plots.
const PLOT_MODES: usize = 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct W1Row {
    pub step: u64,
    pub batch: usize,
    pub train: f64,
    pub validation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FieldStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Covariance eigenvalues, descending.
    pub spectra: Vec<f64>,
}

impl FieldStats {
    pub fn from_moments(m: &CoMoments) -> Result<Self, CliError> {
        Ok(Self {
            mean: m.mean().to_vec(),
            std: m.std()?,
            spectra: symmetric_eigenvalues(&m.covariance()?),
        })
    }

    pub fn from_rows(rows: ArrayView2<f64>) -> Result<Self, CliError> {
        Self::from_moments(&CoMoments::from_rows(rows))
    }
}

/// Statistics of one generator from Halton noise.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeneratorEval {
    pub noise_dim: usize,
    pub seed: u64,
    pub step: u64,
    /// Paths on the evaluation grid: `f` for process generators, `k`, `u`, `f` for physics ones.
    pub fields: BTreeMap<String, FieldStats>,
    /// Over interior grid points (`u` vanishes on the boundary).
    pub corr_ku: Option<Correlation>,
    pub corr_kf: Option<Correlation>,
    /// Fake snapshot rows of the first group's layout.
    pub sensors: FieldStats,
}

impl GeneratorEval {
    /// `(error of mean, error of std)` per field shared with the reference.
    pub fn relative_errors(&self, reference: &Reference) -> Result<BTreeMap<String, (f64, f64)>, CliError> {
        let mut out = BTreeMap::new();
        for (name, st) in &self.fields {
            if let Some(r) = reference.fields.get(name) {
                out.insert(name.clone(), (relative_error(&st.mean, &r.mean)?, relative_error(&st.std, &r.std)?));
            }
        }
        Ok(out)
    }
}

/// `n x dim` Halton points (indices `1..=n`) mapped to standard normals.
pub fn halton_noise(n: usize, dim: usize) -> Array2<f64> {
    let mut z = Array2::zeros((n, dim));
    for (i, mut row) in z.outer_iter_mut().enumerate() {
        for (v, h) in row.iter_mut().zip(halton_gaussian(i as u64 + 1, dim)) {
            *v = h;
        }
    }
    z
}

fn grid_input(points: &[f64], noise: ArrayView2<f64>) -> Array2<f64> {
    let (n, d) = noise.dim();
    let p = points.len();
    let mut input = Array2::zeros((n * p, 1 + d));
    for j in 0..n {
        for (i, &x) in points.iter().enumerate() {
            let mut row = input.row_mut(j * p + i);
            row[0] = x;
            row.slice_mut(s![1..]).assign(&noise.row(j));
        }
    }
    input
}

fn reshape(col: Array2<f64>, n: usize, p: usize) -> Array2<f64> {
    col.into_shape_with_order((n, p)).expect("block shape")
}

/// Generated paths on `points`: `(k, u, f)`, with `k`, `u` absent for process generators.
pub fn generator_paths(
    gen: &GeneratorSet,
    points: &[f64],
    noise: ArrayView2<f64>,
) -> (Option<Array2<f64>>, Option<Array2<f64>>, Array2<f64>) {
    let n = noise.nrows();
    let p = points.len();
    let input = grid_input(points, noise);
    match gen.kind {
        GeneratorKind::Process => {
            let pass = TaylorPass::run(&gen.nets[0], input, 0, 0);
            (None, None, reshape(pass.value, n, p))
        }
        GeneratorKind::Physics => {
            let k = TaylorPass::run(gen.net(Field::K), input.clone(), 0, 1);
            let u = TaylorPass::run(gen.net(Field::U), input, 0, 2);
            let kd = k.d1.as_ref().expect("order 1");
            let ud = u.d1.as_ref().expect("order 2");
            let ud2 = u.d2.as_ref().expect("order 2");
            let f = (kd * ud + &k.value * ud2) * -DIFFUSION;
            (Some(reshape(k.value, n, p)), Some(reshape(u.value, n, p)), reshape(f, n, p))
        }
    }
}

struct ChunkMoments {
    fields: Vec<(&'static str, CoMoments)>,
    ku: Option<PairMoments>,
    kf: Option<PairMoments>,
    sensors: CoMoments,
}

fn chunk_moments(gen: &GeneratorSet, points: &[f64], layout: &SensorLayout, noise: ArrayView2<f64>) -> Result<ChunkMoments, CliError> {
    let (k, u, f) = generator_paths(gen, points, noise);
    let m = points.len();
    let sensors = CoMoments::from_rows(fake_rows(gen, layout, noise)?.rows.view());
    let mut fields = vec![("f", CoMoments::from_rows(f.view()))];
    let (mut ku, mut kf) = (None, None);
    if let (Some(k), Some(u)) = (&k, &u) {
        fields.push(("k", CoMoments::from_rows(k.view())));
        fields.push(("u", CoMoments::from_rows(u.view())));
        let mut pku = PairMoments::new(m - 2);
        let mut pkf = PairMoments::new(m);
        for ((kr, ur), fr) in k.outer_iter().zip(u.outer_iter()).zip(f.outer_iter()) {
            let kr = kr.to_vec();
            pku.push(&kr[1..m - 1], &ur.to_vec()[1..m - 1]);
            pkf.push(&kr, &fr.to_vec());
        }
        ku = Some(pku);
        kf = Some(pkf);
    }
    Ok(ChunkMoments { fields, ku, kf, sensors })
}

/// Statistics of `gen` over the rows of `noise`, accumulated block by block in
/// a fixed order so the result does not depend on the thread count.
pub fn evaluate_generator(
    gen: &GeneratorSet,
    points: &[f64],
    layout: &SensorLayout,
    noise: ArrayView2<f64>,
    (noise_dim, seed, step): (usize, u64, u64),
) -> Result<GeneratorEval, CliError> {
    let n = noise.nrows();
    let parts: Vec<ChunkMoments> = (0..n.div_ceil(EVAL_CHUNK))
        .into_par_iter()
        .map(|c| {
            let rows = noise.slice(s![c * EVAL_CHUNK..((c + 1) * EVAL_CHUNK).min(n), ..]);
            chunk_moments(gen, points, layout, rows)
        })
        .collect::<Result<_, _>>()?;
    let mut iter = parts.into_iter();
    let mut total = iter
        .next()
        .ok_or_else(|| CliError::Config("evaluation needs at least one noise vector".into()))?;
    for p in iter {
        for ((_, a), (_, b)) in total.fields.iter_mut().zip(&p.fields) {
            a.merge(b);
        }
        if let (Some(a), Some(b)) = (&mut total.ku, &p.ku) {
            a.merge(b);
        }
        if let (Some(a), Some(b)) = (&mut total.kf, &p.kf) {
            a.merge(b);
        }
        total.sensors.merge(&p.sensors);
    }
    let mut fields = BTreeMap::new();
    for (name, m) in &total.fields {
        fields.insert(name.to_string(), FieldStats::from_moments(m)?);
    }
    Ok(GeneratorEval {
        noise_dim,
        seed,
        step,
        fields,
        corr_ku: total.ku.and_then(|p| p.correlation().ok()),
        corr_kf: total.kf.and_then(|p| p.correlation().ok()),
        sensors: FieldStats::from_moments(&total.sensors)?,
    })
}

/// Loss and W1 traces of one training run.
#[derive(Clone, Debug)]
pub struct RunTraces {
    pub noise_dim: usize,
    pub seed: u64,
    pub trace: Vec<TraceRow>,
    pub w1: Vec<W1Row>,
}

/// Everything the tables are built from.
pub struct EvalInputs<'a> {
    pub cfg: &'a ExperimentConfig,
    pub reference: &'a Reference,
    pub grid: &'a [f64],
    pub layout: &'a SensorLayout,
    pub training: &'a FieldStats,
    pub evals: &'a [GeneratorEval],
    pub runs: &'a [RunTraces],
    /// Mean and standard deviation of W1 between disjoint real samples.
    pub w1_baseline: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub source: &'static str,
    pub noise_dim: Option<usize>,
    pub seed: Option<u64>,
    pub step: Option<u64>,
    pub metric: String,
    pub value: f64,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

fn effective_dim(spectra: &[f64], fraction: f64) -> usize {
    let total: f64 = spectra.iter().sum();
    let mut acc = 0.0;
    for (i, e) in spectra.iter().enumerate() {
        acc += e;
        if acc >= fraction * total {
            return i + 1;
        }
    }
    spectra.len()
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Primary field for boundary statistics: `u` when generated, else `f`.
fn primary(fields: &BTreeMap<String, FieldStats>) -> (&str, &FieldStats) {
    match fields.get("u") {
        Some(u) => ("u", u),
        None => ("f", &fields["f"]),
    }
}

pub fn metric_rows(inp: &EvalInputs) -> Result<Vec<MetricRow>, CliError> {
    let mut rows = Vec::new();
    let mut push = |source, key: Option<(usize, u64, u64)>, metric: String, value: f64| {
        rows.push(MetricRow {
            source,
            noise_dim: key.map(|k| k.0),
            seed: key.map(|k| k.1),
            step: key.map(|k| k.2),
            metric,
            value,
        })
    };
    for (name, r) in &inp.reference.fields {
        push("reference", None, format!("lambda_max_{name}"), r.spectra[0]);
        push(
            "reference",
            None,
            format!("eff_dim_99_{name}"),
            effective_dim(&r.spectra, 0.99) as f64,
        );
    }
    if let Some(c) = inp.reference.corr_ku {
        push("reference", None, "corr_ku".into(), c.value);
    }
    if let Some(c) = inp.reference.corr_kf {
        push("reference", None, "corr_kf".into(), c.value);
    }
    push("train", None, "sensor_lambda_max".into(), inp.training.spectra[0]);
    for e in inp.evals {
        let key = Some((e.noise_dim, e.seed, e.step));
        for (field, (m, s)) in e.relative_errors(inp.reference)? {
            push("generated", key, format!("rel_err_mean_{field}"), m);
            push("generated", key, format!("rel_err_std_{field}"), s);
        }
        for (name, st) in &e.fields {
            push("generated", key, format!("lambda_max_{name}"), st.spectra[0]);
            push(
                "generated",
                key,
                format!("eff_dim_99_{name}"),
                effective_dim(&st.spectra, 0.99) as f64,
            );
        }
        let (name, st) = primary(&e.fields);
        push("generated", key, format!("std_lo_{name}"), st.std[0]);
        push("generated", key, format!("std_hi_{name}"), st.std[st.std.len() - 1]);
        if let Some(c) = e.corr_ku {
            push("generated", key, "corr_ku".into(), c.value);
        }
        if let Some(c) = e.corr_kf {
            push("generated", key, "corr_kf".into(), c.value);
        }
        push("generated", key, "sensor_lambda_max".into(), e.sensors.spectra[0]);
        push(
            "generated",
            key,
            "sensor_max_mean_gap".into(),
            max_gap(&e.sensors.mean, &inp.training.mean),
        );
        push(
            "generated",
            key,
            "sensor_max_std_gap".into(),
            max_gap(&e.sensors.std, &inp.training.std),
        );
    }
    Ok(rows)
}

fn write_table(ws: &Workspace, stem: &str, header: &str, rows: &[String], written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let path = ws.metrics(stem);
    write_atomic(&path, |w| {
        writeln!(w, "{header}")?;
        for r in rows {
            writeln!(w, "{r}")?;
        }
        Ok(())
    })?;
    written.push(path);
    Ok(())
}

fn write_plot(ws: &Workspace, stem: &str, plot: &LinePlot, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let path = ws.plot(stem);
    let svg = plot.render();
    write_atomic(&path, |w| w.write_all(svg.as_bytes()))?;
    written.push(path);
    Ok(())
}

fn sensor_columns(layout: &SensorLayout) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for (name, xs) in [("k", &layout.k), ("u", &layout.u), ("f", &layout.f), ("b", &layout.b)] {
        for (i, &x) in xs.iter().enumerate() {
            out.push((format!("{name}{i}"), x));
        }
    }
    out
}

fn by_dim<'a>(inp: &'a EvalInputs, d: usize) -> Vec<&'a GeneratorEval> {
    inp.evals.iter().filter(|e| e.noise_dim == d).collect()
}

/// Pointwise mean and two standard deviations across generators.
fn spread(vectors: &[&Vec<f64>]) -> Vec<(f64, f64)> {
    let m = vectors.first().map_or(0, |v| v.len());
    (0..m)
        .map(|i| mean_two_std(&vectors.iter().map(|v| v[i]).collect::<Vec<_>>()))
        .collect()
}

/// Writes `metrics.csv`, `sensors.csv` and the figure tables and plots; returns the files written.
pub fn write_tables(ws: &Workspace, inp: &EvalInputs) -> Result<Vec<PathBuf>, CliError> {
    let cfg = inp.cfg;
    let mut written = Vec::new();

    let rows: Vec<String> = metric_rows(inp)?
        .into_iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{}",
                cfg.name,
                r.source,
                opt(r.noise_dim),
                opt(r.seed),
                opt(r.step),
                r.metric,
                r.value
            )
        })
        .collect();
    write_table(
        ws,
        "metrics",
        "experiment,source,noise_dim,seed,step,metric,value",
        &rows,
        &mut written,
    )?;

    let cols = sensor_columns(inp.layout);
    let mut rows = Vec::new();
    for (c, (label, x)) in cols.iter().enumerate() {
        rows.push(format!("train,,,,{label},{x},{},{}", inp.training.mean[c], inp.training.std[c]));
    }
    for e in inp.evals {
        for (c, (label, x)) in cols.iter().enumerate() {
            rows.push(format!(
                "generated,{},{},{},{label},{x},{},{}",
                e.noise_dim, e.seed, e.step, e.sensors.mean[c], e.sensors.std[c]
            ));
        }
    }
    write_table(ws, "sensors", "source,noise_dim,seed,step,column,x,mean,std", &rows, &mut written)?;

    relative_error_table(ws, inp, &mut written)?;
    spectra_table(ws, inp, &mut written)?;
    mean_std_table(ws, inp, &mut written)?;
    if inp.reference.corr_ku.is_some() || inp.evals.iter().any(|e| e.corr_ku.is_some()) {
        correlation_table(ws, inp, &mut written)?;
    }
    if inp.runs.iter().any(|r| !r.w1.is_empty()) {
        w1_tables(ws, inp, &mut written)?;
    }
    if inp.runs.iter().any(|r| !r.trace.is_empty()) {
        critic_loss_table(ws, inp, &mut written)?;
    }
    Ok(written)
}

fn relative_error_table(ws: &Workspace, inp: &EvalInputs, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for &d in &inp.cfg.noise_dims {
        let evals = by_dim(inp, d);
        let errs: Vec<BTreeMap<String, (f64, f64)>> = evals.iter().map(|e| e.relative_errors(inp.reference)).collect::<Result<_, _>>()?;
        let Some(first) = errs.first() else { continue };
        for field in first.keys() {
            for (stat, pick) in [("mean", 0usize), ("std", 1)] {
                let v: Vec<f64> = errs.iter().map(|e| if pick == 0 { e[field].0 } else { e[field].1 }).collect();
                let (m, s) = mean_two_std(&v);
                rows.push(format!("{d},{field},{stat},generated,{m},{s},{}", v.len()));
            }
        }
    }
    for b in &inp.reference.baseline {
        rows.push(format!(
            ",{},{},monte_carlo_{},{},{},{}",
            b.field, b.statistic, b.paths, b.mean, b.two_std, inp.cfg.eval.baseline_sets
        ));
    }
    write_table(
        ws,
        &inp.cfg.figure("relative_error"),
        "noise_dim,field,statistic,source,mean,two_std,count",
        &rows,
        written,
    )
}

fn spectra_table(ws: &Workspace, inp: &EvalInputs, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let stem = inp.cfg.figure("spectra");
    let mut rows = Vec::new();
    let mut plot = LinePlot::new(&format!("{}: spectra of f", inp.cfg.name), "mode", "eigenvalue").log_y();
    for &d in &inp.cfg.noise_dims {
        let evals = by_dim(inp, d);
        if evals.is_empty() {
            continue;
        }
        let spectra: Vec<&Vec<f64>> = evals.iter().map(|e| &e.fields["f"].spectra).collect();
        let agg = spread(&spectra);
        for (i, (m, s)) in agg.iter().enumerate() {
            rows.push(format!("{d},generated,{},{m},{s}", i + 1));
        }
        plot.push(Series::new(
            format!("generated d={d}"),
            agg.iter()
                .take(PLOT_MODES)
                .enumerate()
                .map(|(i, p)| ((i + 1) as f64, p.0))
                .collect(),
        ));
    }
    if let Some(r) = inp.reference.fields.get("f") {
        for (i, e) in r.spectra.iter().enumerate() {
            rows.push(format!(",reference,{},{e},0", i + 1));
        }
        plot.push(
            Series::new(
                "reference",
                r.spectra
                    .iter()
                    .take(PLOT_MODES)
                    .enumerate()
                    .map(|(i, &e)| ((i + 1) as f64, e))
                    .collect(),
            )
            .dashed(),
        );
    }
    write_table(ws, &stem, "noise_dim,source,mode,mean,two_std", &rows, written)?;
    write_plot(ws, &stem, &plot, written)
}

fn mean_std_table(ws: &Workspace, inp: &EvalInputs, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let stem = inp.cfg.figure("mean_std");
    let mut rows = Vec::new();
    let Some(first) = inp.evals.first() else {
        return write_table(ws, &stem, "", &rows, written);
    };
    let (main, _) = primary(&first.fields);
    let mut plot = LinePlot::new(&format!("{}: mean and std of {main}", inp.cfg.name), "x", main);
    for field in first.fields.keys() {
        let reference = inp.reference.fields.get(field);
        for &d in &inp.cfg.noise_dims {
            let evals = by_dim(inp, d);
            if evals.is_empty() {
                continue;
            }
            let means = spread(&evals.iter().map(|e| &e.fields[field].mean).collect::<Vec<_>>());
            let stds = spread(&evals.iter().map(|e| &e.fields[field].std).collect::<Vec<_>>());
            for (i, x) in inp.grid.iter().enumerate() {
                let (rm, rs) = reference.map_or((String::new(), String::new()), |r| (r.mean[i].to_string(), r.std[i].to_string()));
                rows.push(format!(
                    "{field},{d},{x},{},{},{},{},{rm},{rs}",
                    means[i].0, means[i].1, stds[i].0, stds[i].1
                ));
            }
            if field == main {
                plot.push(Series::new(
                    format!("mean d={d}"),
                    inp.grid.iter().zip(&means).map(|(&x, m)| (x, m.0)).collect(),
                ));
                plot.push(Series::new(
                    format!("std d={d}"),
                    inp.grid.iter().zip(&stds).map(|(&x, s)| (x, s.0)).collect(),
                ));
            }
        }
        if field == main {
            if let Some(r) = reference {
                plot.push(Series::new("reference mean", inp.grid.iter().copied().zip(r.mean.iter().copied()).collect()).dashed());
                plot.push(Series::new("reference std", inp.grid.iter().copied().zip(r.std.iter().copied()).collect()).dashed());
            }
        }
    }
    write_table(
        ws,
        &stem,
        "field,noise_dim,x,gen_mean,gen_mean_two_std,gen_std,gen_std_two_std,ref_mean,ref_std",
        &rows,
        written,
    )?;
    write_plot(ws, &stem, &plot, written)
}

fn correlation_table(ws: &Workspace, inp: &EvalInputs, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for &d in &inp.cfg.noise_dims {
        let evals = by_dim(inp, d);
        for (pair, reference) in [("ku", inp.reference.corr_ku), ("kf", inp.reference.corr_kf)] {
            let v: Vec<f64> = evals
                .iter()
                .filter_map(|e| if pair == "ku" { e.corr_ku } else { e.corr_kf })
                .map(|c| c.value)
                .collect();
            if v.is_empty() {
                continue;
            }
            let (m, s) = mean_two_std(&v);
            rows.push(format!("{d},{pair},{m},{s},{}", opt(reference.map(|c| c.value))));
        }
    }
    write_table(
        ws,
        &inp.cfg.figure("correlation"),
        "noise_dim,pair,mean,two_std,reference",
        &rows,
        written,
    )
}

struct W1Agg {
    step: u64,
    train: (f64, f64),
    validation: Option<(f64, f64)>,
    samples: usize,
}

fn w1_aggregate(inp: &EvalInputs, d: usize) -> Vec<W1Agg> {
    let mut by_step: BTreeMap<u64, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in inp.runs.iter().filter(|r| r.noise_dim == d) {
        for w in &r.w1 {
            let e = by_step.entry(w.step).or_default();
            e.0.push(w.train);
            if let Some(v) = w.validation {
                e.1.push(v);
            }
        }
    }
    by_step
        .into_iter()
        .map(|(step, (t, v))| W1Agg {
            step,
            train: mean_two_std(&t),
            validation: (!v.is_empty()).then(|| mean_two_std(&v)),
            samples: t.len(),
        })
        .collect()
}

fn w1_tables(ws: &Workspace, inp: &EvalInputs, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let stem = inp.cfg.figure("w1_trace");
    let mut rows = Vec::new();
    let mut plot = LinePlot::new(&format!("{}: W1(generated, training)", inp.cfg.name), "step", "W1");
    let mut overfit_rows = Vec::new();
    let mut overfit = LinePlot::new(&format!("{}: W1 on training and validation", inp.cfg.name), "step", "W1");
    for &d in &inp.cfg.noise_dims {
        let agg = w1_aggregate(inp, d);
        for a in &agg {
            let (vm, vs) = a
                .validation
                .map_or((String::new(), String::new()), |v| (v.0.to_string(), v.1.to_string()));
            rows.push(format!("{d},{},{},{},{vm},{vs},{}", a.step, a.train.0, a.train.1, a.samples));
        }
        plot.push(Series::new(
            format!("d={d}"),
            agg.iter().map(|a| (a.step as f64, a.train.0)).collect(),
        ));
        if let Some((bm, bs)) = inp.w1_baseline {
            for a in agg.iter().filter(|a| a.validation.is_some()) {
                let v = a.validation.expect("filtered");
                overfit_rows.push(format!(
                    "{d},{},{},{},{},{},{bm},{}",
                    a.step,
                    a.train.0,
                    a.train.1,
                    v.0,
                    v.1,
                    2.0 * bs
                ));
            }
            overfit.push(Series::new(
                format!("training d={d}"),
                agg.iter().map(|a| (a.step as f64, a.train.0)).collect(),
            ));
            overfit.push(Series::new(
                format!("validation d={d}"),
                agg.iter().filter_map(|a| a.validation.map(|v| (a.step as f64, v.0))).collect(),
            ));
        }
    }
    write_table(
        ws,
        &stem,
        "noise_dim,step,w1_train_mean,w1_train_two_std,w1_validation_mean,w1_validation_two_std,samples",
        &rows,
        written,
    )?;
    write_plot(ws, &stem, &plot, written)?;
    if let Some((bm, _)) = inp.w1_baseline {
        let steps: Vec<f64> = inp.runs.iter().flat_map(|r| r.w1.iter().map(|w| w.step as f64)).collect();
        let (lo, hi) = steps
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &s| (a.min(s), b.max(s)));
        overfit.push(Series::new("real vs real", vec![(lo, bm), (hi, bm)]).dashed());
        let stem = inp.cfg.figure("w1_overfit");
        write_table(
            ws,
            &stem,
            "noise_dim,step,w1_train_mean,w1_train_two_std,w1_validation_mean,w1_validation_two_std,baseline_mean,baseline_two_std",
            &overfit_rows,
            written,
        )?;
        write_plot(ws, &stem, &overfit, written)?;
    }
    Ok(())
}

fn critic_loss_table(ws: &Workspace, inp: &EvalInputs, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let stem = inp.cfg.figure("critic_loss");
    let mut rows = Vec::new();
    let mut plot = LinePlot::new(&format!("{}: negative critic loss", inp.cfg.name), "step", "-L_d");
    for r in inp.runs {
        for t in &r.trace {
            for (g, (lt, lv)) in t.ld_train.iter().zip(&t.ld_validation).enumerate() {
                rows.push(format!("{},{},{},{g},{},{}", r.noise_dim, r.seed, t.step, -lt, opt(lv.map(|v| -v))));
            }
        }
        let label = format!("d={} seed={}", r.noise_dim, r.seed);
        plot.push(Series::new(
            format!("train {label}"),
            r.trace.iter().map(|t| (t.step as f64, -t.ld_train[0])).collect(),
        ));
        let val: Vec<(f64, f64)> = r
            .trace
            .iter()
            .filter_map(|t| t.ld_validation[0].map(|v| (t.step as f64, -v)))
            .collect();
        if !val.is_empty() {
            plot.push(Series::new(format!("validation {label}"), val).dashed());
        }
    }
    write_table(
        ws,
        &stem,
        "noise_dim,seed,step,group,neg_ld_train,neg_ld_validation",
        &rows,
        written,
    )?;
    write_plot(ws, &stem, &plot, written)
}
