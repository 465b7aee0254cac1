//! Adversarial training with one critic per snapshot group.
//!
//! Every step draws from its own random stream `(seed, step)`, in loop order:
//! for each of `n_critic` rounds and each group, the real batch rows, any K/F
//! shuffles, the noise and the interpolation weights; then one noise set for
//! the generator update, shared by all groups. A run can therefore be stopped
//! and resumed from a checkpoint without changing any later step.

use ndarray::{s, Array1, Array2, Axis};
use rand::seq::{index::sample, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::fake::fake_rows;
use super::losses::{critic_gradients, generator_adjoint, vanilla_losses, wgan_gp_losses, LossKind};
use super::{GanError, GeneratorKind, GeneratorSet};
use crate::nn::batch::{critic_backward, CriticPass};
use crate::nn::{AdamConfig, AdamState, MlpParams, MlpSpec};
use crate::processes::{derive_seed, substream, SnapshotGroup};

/// Generators kept for evaluation: every `every` steps within the last `window` steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSchedule {
    pub every: u64,
    pub window: u64,
}

impl CheckpointSchedule {
    pub fn keeps(&self, step: u64, total: u64) -> bool {
        self.every > 0 && step.is_multiple_of(self.every) && step + self.window > total && step <= total
    }
}

impl Default for CheckpointSchedule {
    fn default() -> Self {
        // eleven generators from the last 10001 steps
        Self {
            every: 1000,
            window: 10_001,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    pub n_critic: usize,
    pub lambda: f64,
    pub batch: usize,
    pub adam: AdamConfig,
    /// Generator loss weight per group; empty means 1 for every group.
    #[serde(default)]
    pub group_weights: Vec<f64>,
    #[serde(default)]
    pub shuffle_kf: bool,
    pub loss: LossKind,
    pub seed: u64,
    /// Critic losses on training and validation data are recorded every `trace_every` steps (0 = never).
    #[serde(default)]
    pub trace_every: u64,
    #[serde(default)]
    pub checkpoints: CheckpointSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 100_000,
            n_critic: 5,
            lambda: 0.1,
            batch: 1000,
            adam: AdamConfig::default(),
            group_weights: Vec::new(),
            shuffle_kf: false,
            loss: LossKind::WganGp,
            seed: 0,
            trace_every: 0,
            checkpoints: CheckpointSchedule::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, groups: usize) -> Result<(), GanError> {
        if !(self.lambda >= 0.0) {
            return Err(GanError::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.n_critic == 0 {
            return Err(GanError::Config("n_critic must be >= 1".into()));
        }
        if self.batch == 0 {
            return Err(GanError::Config("batch must be >= 1".into()));
        }
        if !self.group_weights.is_empty() && self.group_weights.len() != groups {
            return Err(GanError::Config(format!(
                "{} group weights for {groups} groups",
                self.group_weights.len()
            )));
        }
        if self.group_weights.iter().any(|w| !(*w > 0.0)) {
            return Err(GanError::Config("group weights must be positive".into()));
        }
        Ok(())
    }

    pub fn weight(&self, group: usize) -> f64 {
        self.group_weights.get(group).copied().unwrap_or(1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupData {
    pub train: SnapshotGroup,
    pub validation: Option<SnapshotGroup>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: u64,
    /// Generator loss of this step, summed over groups with their weights.
    pub l_g: f64,
    /// Critic loss per group on training snapshots.
    pub ld_train: Vec<f64>,
    /// Critic loss per group on held-out snapshots.
    pub ld_validation: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub generator: GeneratorSet,
    pub critics: Vec<MlpParams>,
    pub gen_adam: Vec<AdamState>,
    pub critic_adam: Vec<AdamState>,
    pub trace: Vec<TraceRow>,
    /// Generator snapshots selected by the checkpoint schedule.
    pub kept: Vec<(u64, GeneratorSet)>,
}

impl TrainState {
    pub fn new(generator: GeneratorSet, critics: Vec<MlpParams>, adam: AdamConfig) -> Self {
        Self {
            step: 0,
            gen_adam: generator.nets.iter().map(|n| AdamState::new(adam, n.as_slice().len())).collect(),
            critic_adam: critics.iter().map(|c| AdamState::new(adam, c.as_slice().len())).collect(),
            generator,
            critics,
            trace: Vec::new(),
            kept: Vec::new(),
        }
    }
}

/// Per-step outcome.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub l_g: f64,
    /// Critic loss of the last inner round, summed over groups.
    pub l_d: f64,
}

pub struct Trainer {
    cfg: TrainConfig,
    groups: Vec<GroupData>,
    state: TrainState,
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || rng.random::<f64>())
}

fn finite(v: f64, what: &str, step: u64) -> Result<f64, GanError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(GanError::NonFinite { what: what.into(), step })
    }
}

impl Trainer {
    pub fn new(cfg: TrainConfig, groups: Vec<GroupData>, state: TrainState) -> Result<Self, GanError> {
        cfg.validate(groups.len())?;
        if groups.is_empty() {
            return Err(GanError::Config("at least one snapshot group is required".into()));
        }
        state.generator.validate()?;
        if state.critics.len() != groups.len() {
            return Err(GanError::Config(format!(
                "{} critics for {} groups",
                state.critics.len(),
                groups.len()
            )));
        }
        for (t, (g, c)) in groups.iter().zip(&state.critics).enumerate() {
            let w = g.train.layout.width();
            if c.spec().input_width != w || c.spec().output_width != 1 {
                return Err(GanError::Config(format!(
                    "critic {t} maps {} -> {}, group rows have width {w}",
                    c.spec().input_width,
                    c.spec().output_width
                )));
            }
            if g.train.rows() == 0 {
                return Err(GanError::Config(format!("group {t} has no training snapshots")));
            }
            if let Some(v) = &g.validation {
                if v.layout != g.train.layout {
                    return Err(GanError::Config(format!("group {t}: validation layout differs")));
                }
            }
            if state.generator.kind == GeneratorKind::Process && (!g.train.layout.b.is_empty()) {
                return Err(GanError::Config("process generators have no boundary trace".into()));
            }
        }
        Ok(Self { cfg, groups, state })
    }

    /// Fresh Xavier-initialized networks; `critic_widths` holds one hidden width per group.
    pub fn init(
        cfg: TrainConfig,
        groups: Vec<GroupData>,
        kind: GeneratorKind,
        noise_dim: usize,
        gen_width: usize,
        critic_widths: &[usize],
    ) -> Result<Self, GanError> {
        if critic_widths.len() != groups.len() {
            return Err(GanError::Config(format!(
                "{} critic widths for {} groups",
                critic_widths.len(),
                groups.len()
            )));
        }
        let mut rng = substream(derive_seed(cfg.seed, "init"), 0);
        let generator = GeneratorSet::init(kind, noise_dim, gen_width, &mut rng);
        let critics = groups
            .iter()
            .zip(critic_widths)
            .map(|(g, &w)| MlpParams::init(MlpSpec::scalar(g.train.layout.width(), w), &mut rng))
            .collect();
        let state = TrainState::new(generator, critics, cfg.adam);
        Self::new(cfg, groups, state)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn groups(&self) -> &[GroupData] {
        &self.groups
    }

    fn batch_size(&self, t: usize) -> usize {
        self.cfg.batch.min(self.groups[t].train.rows())
    }

    fn real_batch(&self, t: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let g = &self.groups[t].train;
        let n = self.batch_size(t);
        let mut real = if n == g.rows() {
            g.data.clone()
        } else {
            let idx = sample(rng, g.rows(), n).into_vec();
            g.data.select(Axis(0), &idx)
        };
        if self.cfg.shuffle_kf {
            let [k, _, f, _] = g.layout.blocks();
            for block in [k, f] {
                if block.is_empty() {
                    continue;
                }
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(rng);
                let cols = real.slice(s![.., block.clone()]).select(Axis(0), &perm);
                real.slice_mut(s![.., block]).assign(&cols);
            }
        }
        real
    }

    /// One generator update preceded by `n_critic` rounds of critic updates.
    pub fn step(&mut self) -> Result<StepReport, GanError> {
        let step = self.state.step;
        let mut rng = substream(derive_seed(self.cfg.seed, "train"), step);
        let noise_dim = self.state.generator.noise_dim;
        let mut l_d = 0.0;

        for _ in 0..self.cfg.n_critic {
            l_d = 0.0;
            for t in 0..self.groups.len() {
                let real = self.real_batch(t, &mut rng);
                let n = real.nrows();
                let xi = normal_matrix(&mut rng, n, noise_dim);
                let eps = uniform_vec(&mut rng, n);
                let layout = &self.groups[t].train.layout;
                let fake = fake_rows(&self.state.generator, layout, xi.view())?;
                let (losses, grads) = critic_gradients(
                    self.cfg.loss,
                    &self.state.critics[t],
                    real.view(),
                    fake.rows.view(),
                    eps.view(),
                    self.cfg.lambda,
                )?;
                l_d += finite(losses.l_d, "critic loss", step)?;
                self.state.critic_adam[t]
                    .step(self.state.critics[t].as_mut_slice(), grads.as_slice())
                    .map_err(|_| GanError::NonFinite {
                        what: format!("critic {t} gradient"),
                        step,
                    })?;
            }
        }

        let n_g = (0..self.groups.len()).map(|t| self.batch_size(t)).max().unwrap_or(1);
        let xi = normal_matrix(&mut rng, n_g, noise_dim);
        let gen = &self.state.generator;
        let mut grads: Vec<MlpParams> = gen.nets.iter().map(|n| MlpParams::zeros(*n.spec())).collect();
        let mut l_g = 0.0;
        for (t, group) in self.groups.iter().enumerate() {
            let fake = fake_rows(gen, &group.train.layout, xi.view())?;
            let critic = &self.state.critics[t];
            let pass = CriticPass::run(critic, fake.rows.view());
            let (loss, adj) = generator_adjoint(self.cfg.loss, &pass.output, self.cfg.weight(t));
            l_g += loss;
            let row_adj = critic_backward(critic, &pass, &adj, None);
            for (acc, g) in grads.iter_mut().zip(fake.backward(gen, row_adj.view())) {
                acc.add_assign(&g);
            }
        }
        finite(l_g, "generator loss", step)?;
        for (i, g) in grads.iter().enumerate() {
            let net = &mut self.state.generator.nets[i];
            self.state.gen_adam[i]
                .step(net.as_mut_slice(), g.as_slice())
                .map_err(|_| GanError::NonFinite {
                    what: "generator gradient".into(),
                    step,
                })?;
        }

        self.state.step += 1;
        let done = self.state.step;
        if self.cfg.trace_every > 0 && done.is_multiple_of(self.cfg.trace_every) {
            let (ld_train, ld_validation) = self.critic_losses(done)?;
            self.state.trace.push(TraceRow {
                step: done,
                l_g,
                ld_train,
                ld_validation,
            });
        }
        if self.cfg.checkpoints.keeps(done, self.cfg.steps) {
            self.state.kept.push((done, self.state.generator.clone()));
        }
        Ok(StepReport { step: done, l_g, l_d })
    }

    /// Critic loss per group on training snapshots and on the full validation
    /// set, with the same fake rows. The training subset matches the
    /// validation size (or the batch size when there is no validation set).
    pub fn critic_losses(&self, tag: u64) -> Result<(Vec<f64>, Vec<Option<f64>>), GanError> {
        let mut rng = substream(derive_seed(self.cfg.seed, "critic-eval"), tag);
        let mut train_l = Vec::new();
        let mut val_l = Vec::new();
        for (t, g) in self.groups.iter().enumerate() {
            let n_train = g.train.rows();
            let n = g.validation.as_ref().map_or(self.batch_size(t), |v| v.rows().min(n_train));
            let train = if n == n_train {
                g.train.data.clone()
            } else {
                let idx = sample(&mut rng, n_train, n).into_vec();
                g.train.data.select(Axis(0), &idx)
            };
            let xi = normal_matrix(&mut rng, n, self.state.generator.noise_dim);
            let eps = uniform_vec(&mut rng, n);
            let fake = fake_rows(&self.state.generator, &g.train.layout, xi.view())?.rows;
            let critic = &self.state.critics[t];
            let loss = |real: &Array2<f64>| -> Result<f64, GanError> {
                Ok(match self.cfg.loss {
                    LossKind::WganGp => wgan_gp_losses(critic, real.view(), fake.view(), eps.view(), self.cfg.lambda)?.l_d,
                    LossKind::Vanilla => vanilla_losses(critic, real.view(), fake.view())?.l_d,
                })
            };
            train_l.push(loss(&train)?);
            val_l.push(match &g.validation {
                Some(v) => {
                    let rows = v.data.slice(s![..n, ..]).to_owned();
                    Some(loss(&rows)?)
                }
                None => None,
            });
        }
        Ok((train_l, val_l))
    }

    /// Runs until `cfg.steps` steps are done, calling `on_step` after each one.
    pub fn run(&mut self, mut on_step: impl FnMut(&TrainState, &StepReport)) -> Result<(), GanError> {
        while self.state.step < self.cfg.steps {
            let r = self.step()?;
            on_step(&self.state, &r);
        }
        Ok(())
    }

    /// Fake rows for group `t` from `n` fresh noise vectors of stream `(seed, tag)`.
    pub fn sample_fake(&self, t: usize, n: usize, seed: u64, tag: u64) -> Result<Array2<f64>, GanError> {
        let mut rng = substream(seed, tag);
        let xi = normal_matrix(&mut rng, n, self.state.generator.noise_dim);
        Ok(fake_rows(&self.state.generator, &self.groups[t].train.layout, xi.view())?.rows)
    }
}

/// CSV of the loss trace: `step,l_g,ld_train_<t>,ld_validation_<t>...`.
pub fn write_trace_csv<W: std::io::Write>(mut out: W, trace: &[TraceRow]) -> std::io::Result<()> {
    let groups = trace.first().map_or(0, |r| r.ld_train.len());
    let mut head = vec!["step".to_string(), "l_g".to_string()];
    for t in 0..groups {
        head.push(format!("ld_train_{t}"));
        head.push(format!("ld_validation_{t}"));
    }
    writeln!(out, "{}", head.join(","))?;
    for r in trace {
        let mut cells = vec![r.step.to_string(), r.l_g.to_string()];
        for (a, b) in r.ld_train.iter().zip(&r.ld_validation) {
            cells.push(a.to_string());
            cells.push(b.map_or(String::new(), |v| v.to_string()));
        }
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}
