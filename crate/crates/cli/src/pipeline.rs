//! The four stages of an experiment: synthesize data, train, evaluate, reproduce.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use ndarray::{concatenate, s, Array2, Axis};
use pigan::elliptic::{simulate_snapshots, Grid1D};
use pigan::gan::{read_state, train::write_trace_csv, write_state, GeneratorSet, GroupData, TrainState, Trainer};
use pigan::metrics::{w1_baseline, w1_empirical};
use pigan::processes::{derive_seed, read_dataset, sample_gp, substream, write_csv, write_dataset, SnapshotGroup};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{ExperimentConfig, Scale, Target};
use crate::eval::{evaluate_generator, halton_noise, write_tables, FieldStats, GeneratorEval, RunTraces, W1Row};
use crate::manifest::RunManifest;
use crate::reference::{compute_reference, Reference};
use crate::workspace::{write_atomic, Workspace};
use crate::CliError;

#[derive(Clone, Copy, Debug, Default)]
pub struct TrainOptions {
    /// Continue from `state.bin` when it belongs to the same run.
    pub resume: bool,
    /// Overrides the configured step budget.
    pub steps: Option<u64>,
}

/// Run description stored in every checkpoint.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct RunMeta {
    experiment: String,
    config_hash: String,
    resume_key: String,
    data_key: String,
    noise_dim: usize,
    seed: u64,
    #[serde(default)]
    w1: Vec<W1Row>,
}

/// Result of an evaluation, for callers that want the numbers without parsing CSVs.
pub struct EvalReport {
    pub reference: Reference,
    pub training: FieldStats,
    pub evals: Vec<GeneratorEval>,
    pub runs: Vec<RunTraces>,
    pub w1_baseline: Option<(f64, f64)>,
    pub files: Vec<PathBuf>,
}

pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub ws: Workspace,
    pub scale: Scale,
}

fn data_err(msg: impl Into<String>) -> CliError {
    CliError::Data(msg.into())
}

impl Experiment {
    /// `cfg` must already be scaled; it is validated and written to `config.toml`.
    pub fn new(cfg: ExperimentConfig, out: impl Into<PathBuf>, scale: Scale) -> Result<Self, CliError> {
        cfg.validate()?;
        let ws = Workspace::new(out);
        fs::create_dir_all(ws.root())?;
        let text = cfg.to_toml();
        write_atomic(&ws.config(), |w| w.write_all(text.as_bytes()))?;
        let exp = Self { cfg, ws, scale };
        let mut m = exp.manifest()?;
        m.add(&exp.ws, &exp.ws.config(), "config");
        m.save(&exp.ws)?;
        Ok(exp)
    }

    pub fn manifest(&self) -> Result<RunManifest, CliError> {
        RunManifest::load_or_new(&self.ws, &self.cfg, &self.scale.to_string())
    }

    /// Hash of everything the datasets and the reference depend on.
    pub fn data_key(&self) -> String {
        let c = &self.cfg;
        let groups: Vec<_> = c
            .groups
            .iter()
            .map(|g| json!({ "sensors": g.sensors, "snapshots": g.snapshots, "validation": g.validation, "constant": g.constant }))
            .collect();
        let value = json!({
            "target": c.target,
            "groups": groups,
            "data_seed": c.data_seed,
            "grid_points": c.eval.grid_points,
            "reference_paths": c.eval.reference_paths,
            "baseline_sets": c.eval.baseline_sets,
        });
        crate::config::canonical_hash(&value)
    }

    fn grid(&self) -> Result<Grid1D, CliError> {
        Ok(Grid1D::new(self.cfg.eval.grid_points)?)
    }

    fn synth_group(&self, g: usize) -> Result<SnapshotGroup, CliError> {
        let gc = &self.cfg.groups[g];
        let layout = self.cfg.layout(g)?;
        let n = gc.snapshots + gc.validation;
        let mut group = match &self.cfg.target {
            Target::Process { process } => {
                let seed = derive_seed(self.cfg.data_seed, &format!("group-{g}"));
                let rows = sample_gp(&layout.f, process, n, seed)?;
                let data = Array2::from_shape_vec((n, layout.width()), rows.concat()).expect("row width");
                SnapshotGroup::new(g, layout, data)?
            }
            Target::Elliptic { k, f } => simulate_snapshots(k, f, &layout, n, &self.grid()?, self.cfg.data_seed, g)?,
        };
        if let Some(c) = gc.constant {
            group.data.fill(c);
        }
        Ok(group)
    }

    /// Writes every snapshot group and the reference statistics.
    pub fn synth(&self) -> Result<(), CliError> {
        let t0 = Instant::now();
        let key = self.data_key();
        let mut m = self.manifest()?;
        for g in 0..self.cfg.groups.len() {
            let (train, validation) = self.synth_group(g)?.split_tail(self.cfg.groups[g].validation);
            let mut splits = vec![("train", train)];
            if validation.rows() > 0 {
                splits.push(("validation", validation));
            }
            for (split, data) in &splits {
                let meta = json!({ "experiment": self.cfg.name, "data_key": key, "split": split });
                let bin = self.ws.dataset(g, split, "bin");
                write_atomic(&bin, |w| write_dataset(w, data, meta).map_err(std::io::Error::other))?;
                let csv = self.ws.dataset(g, split, "csv");
                write_atomic(&csv, |w| write_csv(w, data))?;
                m.add(&self.ws, &bin, "dataset");
                m.add(&self.ws, &csv, "dataset");
            }
        }
        let reference = compute_reference(&self.cfg, &key)?;
        for p in self.write_reference(&reference)? {
            m.add(&self.ws, &p, "reference");
        }
        m.time("synth", t0.elapsed().as_secs_f64(), None);
        m.save(&self.ws)
    }

    fn write_reference(&self, r: &Reference) -> Result<Vec<PathBuf>, CliError> {
        let mut out = vec![self.ws.reference()];
        let text = serde_json::to_string_pretty(r)?;
        write_atomic(&self.ws.reference(), |w| w.write_all(text.as_bytes()))?;
        for (name, stats) in &r.fields {
            let p = self.ws.reference_dir().join(format!("{name}_stats.csv"));
            write_atomic(&p, |w| stats.write_csv(w))?;
            out.push(p);
            let p = self.ws.reference_dir().join(format!("{name}_spectra.csv"));
            write_atomic(&p, |w| stats.write_spectra_csv(w))?;
            out.push(p);
        }
        Ok(out)
    }

    /// True when datasets and reference on disk match the current data settings.
    pub fn data_is_current(&self) -> bool {
        let key = self.data_key();
        let reference_ok = self.load_reference().map(|r| r.data_key == key).unwrap_or(false);
        reference_ok && self.load_groups().is_ok()
    }

    pub fn load_reference(&self) -> Result<Reference, CliError> {
        let text = fs::read_to_string(self.ws.reference())
            .map_err(|e| data_err(format!("{}: {e} (run `synth` first)", self.ws.reference().display())))?;
        let r: Reference = serde_json::from_str(&text)?;
        if r.data_key != self.data_key() {
            return Err(data_err("reference statistics are stale; run `synth` again"));
        }
        Ok(r)
    }

    fn load_split(&self, g: usize, split: &str) -> Result<SnapshotGroup, CliError> {
        let path = self.ws.dataset(g, split, "bin");
        let file = fs::File::open(&path).map_err(|e| data_err(format!("{}: {e} (run `synth` first)", path.display())))?;
        let (header, group) = read_dataset(file)?;
        if header.meta.get("data_key").and_then(|v| v.as_str()) != Some(self.data_key().as_str()) {
            return Err(data_err(format!(
                "{} was synthesized for other settings; run `synth` again",
                path.display()
            )));
        }
        if group.layout != self.cfg.layout(g)? {
            return Err(data_err(format!("{}: sensor layout differs from the config", path.display())));
        }
        Ok(group)
    }

    pub fn load_groups(&self) -> Result<Vec<GroupData>, CliError> {
        (0..self.cfg.groups.len())
            .map(|g| {
                Ok(GroupData {
                    train: self.load_split(g, "train")?,
                    validation: if self.cfg.groups[g].validation > 0 {
                        Some(self.load_split(g, "validation")?)
                    } else {
                        None
                    },
                })
            })
            .collect()
    }

    fn run_meta(&self, noise_dim: usize, seed: u64, w1: Vec<W1Row>) -> RunMeta {
        RunMeta {
            experiment: self.cfg.name.clone(),
            config_hash: self.cfg.hash(),
            resume_key: self.cfg.resume_key(),
            data_key: self.data_key(),
            noise_dim,
            seed,
            w1,
        }
    }

    fn load_checkpoint(&self, noise_dim: usize, seed: u64) -> Result<(RunMeta, TrainState), CliError> {
        let path = self.ws.checkpoint(noise_dim, seed);
        let file = fs::File::open(&path).map_err(|e| data_err(format!("{}: {e} (run `train` first)", path.display())))?;
        let (header, state) = read_state(file)?;
        let meta: RunMeta = serde_json::from_value(header.meta)?;
        if meta.resume_key != self.cfg.resume_key() || meta.noise_dim != noise_dim || meta.seed != seed {
            return Err(data_err(format!("{} belongs to a different run", path.display())));
        }
        Ok((meta, state))
    }

    fn save_checkpoint(&self, noise_dim: usize, seed: u64, state: &TrainState, w1: &[W1Row]) -> Result<PathBuf, CliError> {
        let path = self.ws.checkpoint(noise_dim, seed);
        let meta = serde_json::to_value(self.run_meta(noise_dim, seed, w1.to_vec()))?;
        write_atomic(&path, |w| write_state(w, state, meta).map_err(std::io::Error::other))?;
        Ok(path)
    }

    /// W1 between generated and training snapshots of the first group, and
    /// between generated and validation snapshots when held out.
    fn w1_rows(&self, trainer: &Trainer, seed: u64) -> Result<Vec<W1Row>, CliError> {
        let e = &self.cfg.eval;
        let g = &trainer.groups()[0];
        let step = trainer.state().step;
        let n = e.w1_snapshots.min(g.train.rows());
        let stream = derive_seed(seed, "w1");
        (0..e.w1_batches)
            .into_par_iter()
            .map(|b| {
                let tag = step * e.w1_batches as u64 + b as u64;
                let fake = trainer.sample_fake(0, n, stream, tag)?;
                let mut rng = substream(derive_seed(seed, "w1-real"), tag);
                let idx = sample(&mut rng, g.train.rows(), n).into_vec();
                let real = g.train.data.select(Axis(0), &idx);
                let train = w1_empirical(fake.view(), real.view())?;
                let validation = match &g.validation {
                    Some(v) => {
                        let m = n.min(v.rows());
                        Some(w1_empirical(fake.slice(s![..m, ..]), v.data.slice(s![..m, ..]))?)
                    }
                    None => None,
                };
                Ok(W1Row {
                    step,
                    batch: b,
                    train,
                    validation,
                })
            })
            .collect()
    }

    /// Trains one generator; returns the number of steps taken in this call.
    pub fn train_run(&self, noise_dim: usize, seed: u64, opts: TrainOptions) -> Result<u64, CliError> {
        let groups = self.load_groups()?;
        let mut tc = self.cfg.train.to_train_config(seed);
        if let Some(s) = opts.steps {
            tc.steps = s;
        }
        let ckpt = self.ws.checkpoint(noise_dim, seed);
        let (mut trainer, mut w1) = if opts.resume && ckpt.exists() {
            let (meta, state) = self.load_checkpoint(noise_dim, seed)?;
            (Trainer::new(tc.clone(), groups, state)?, meta.w1)
        } else {
            let widths: Vec<usize> = self.cfg.groups.iter().map(|g| g.critic_width).collect();
            let t = Trainer::init(
                tc.clone(),
                groups,
                self.cfg.generator,
                noise_dim,
                self.cfg.network.generator_width,
                &widths,
            )?;
            (t, Vec::new())
        };
        let w1_every = self.cfg.eval.w1_every;
        let save_every = tc.checkpoints.every;
        let start = trainer.state().step;
        if w1_every > 0 && start == 0 && w1.is_empty() {
            w1.extend(self.w1_rows(&trainer, seed)?);
        }
        while trainer.state().step < tc.steps {
            trainer.step()?;
            let step = trainer.state().step;
            if w1_every > 0 && step % w1_every == 0 {
                w1.extend(self.w1_rows(&trainer, seed)?);
            }
            if save_every > 0 && step % save_every == 0 && step < tc.steps {
                self.save_checkpoint(noise_dim, seed, trainer.state(), &w1)?;
            }
        }
        let state = trainer.into_state();
        self.save_checkpoint(noise_dim, seed, &state, &w1)?;
        self.write_run_traces(noise_dim, seed, &state, &w1)?;
        Ok(state.step - start)
    }

    fn write_run_traces(&self, noise_dim: usize, seed: u64, state: &TrainState, w1: &[W1Row]) -> Result<(), CliError> {
        let dir = self.ws.run_dir(noise_dim, seed);
        write_atomic(&dir.join("trace.csv"), |w| write_trace_csv(w, &state.trace))?;
        write_atomic(&dir.join("w1_trace.csv"), |w| {
            writeln!(w, "step,batch,w1_train,w1_validation")?;
            for r in w1 {
                let v = r.validation.map_or(String::new(), |v| v.to_string());
                writeln!(w, "{},{},{},{v}", r.step, r.batch, r.train)?;
            }
            Ok(())
        })?;
        Ok(())
    }

    /// Trains every (noise dimension, seed) pair of the config.
    pub fn train(&self, opts: TrainOptions) -> Result<(), CliError> {
        let mut m = self.manifest()?;
        for &d in &self.cfg.noise_dims {
            for &s in &self.cfg.seeds {
                let t0 = Instant::now();
                let steps = self.train_run(d, s, opts)?;
                m.time(&format!("train/d{d}-s{s}"), t0.elapsed().as_secs_f64(), Some(steps));
                let dir = self.ws.run_dir(d, s);
                m.add(&self.ws, &self.ws.checkpoint(d, s), "checkpoint");
                m.add(&self.ws, &dir.join("trace.csv"), "trace");
                m.add(&self.ws, &dir.join("w1_trace.csv"), "trace");
                m.save(&self.ws)?;
            }
        }
        Ok(())
    }

    fn real_pool(&self, groups: &[GroupData]) -> Array2<f64> {
        let g = &groups[0];
        match &g.validation {
            Some(v) => concatenate(Axis(0), &[g.train.data.view(), v.data.view()]).expect("same width"),
            None => g.train.data.clone(),
        }
    }

    /// Statistics of every trained generator against the reference, plus the figure tables.
    pub fn eval(&self) -> Result<EvalReport, CliError> {
        let t0 = Instant::now();
        let reference = self.load_reference()?;
        let groups = self.load_groups()?;
        let layout = groups[0].train.layout.clone();
        let training = FieldStats::from_rows(groups[0].train.data.view())?;
        let grid = self.grid()?;
        let mut evals = Vec::new();
        let mut runs = Vec::new();
        for &d in &self.cfg.noise_dims {
            let noise = halton_noise(self.cfg.eval.paths, d);
            for &s in &self.cfg.seeds {
                let (meta, state) = self.load_checkpoint(d, s)?;
                let gens: Vec<(u64, &GeneratorSet)> = if state.kept.is_empty() {
                    vec![(state.step, &state.generator)]
                } else {
                    state.kept.iter().map(|(k, g)| (*k, g)).collect()
                };
                for (step, gen) in gens {
                    evals.push(evaluate_generator(gen, grid.points(), &layout, noise.view(), (d, s, step))?);
                }
                runs.push(RunTraces {
                    noise_dim: d,
                    seed: s,
                    trace: state.trace.clone(),
                    w1: meta.w1,
                });
            }
        }
        let w1_baseline = match &groups[0].validation {
            Some(v) if runs.iter().any(|r| !r.w1.is_empty()) => {
                let pool = self.real_pool(&groups);
                let n = self.cfg.eval.w1_snapshots.min(v.rows()).min(pool.nrows() / 2);
                let seed = derive_seed(self.cfg.data_seed, "w1-baseline");
                Some(w1_baseline(pool.view(), n, self.cfg.eval.baseline_pairs, seed)?)
            }
            _ => None,
        };
        let inputs = crate::eval::EvalInputs {
            cfg: &self.cfg,
            reference: &reference,
            grid: grid.points(),
            layout: &layout,
            training: &training,
            evals: &evals,
            runs: &runs,
            w1_baseline,
        };
        let files = write_tables(&self.ws, &inputs)?;
        let mut m = self.manifest()?;
        for f in &files {
            let role = if f.extension().is_some_and(|e| e == "svg") {
                "plot"
            } else {
                "metrics"
            };
            m.add(&self.ws, f, role);
        }
        m.time("eval", t0.elapsed().as_secs_f64(), None);
        m.save(&self.ws)?;
        Ok(EvalReport {
            reference,
            training,
            evals,
            runs,
            w1_baseline,
            files,
        })
    }

    /// Synthesizes (unless current data exist), trains, resuming finished or
    /// interrupted runs, and evaluates.
    pub fn reproduce(&self) -> Result<EvalReport, CliError> {
        let t0 = Instant::now();
        if !self.data_is_current() {
            self.synth()?;
        }
        self.train(TrainOptions { resume: true, steps: None })?;
        let report = self.eval()?;
        let mut m = self.manifest()?;
        m.time("reproduce", t0.elapsed().as_secs_f64(), None);
        m.save(&self.ws)?;
        Ok(report)
    }
}
