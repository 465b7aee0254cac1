//! Named experiments with their paper-scale settings.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use pigan::gan::{CheckpointSchedule, GeneratorKind, LossKind};
use pigan::processes::{KernelSpec, ProcessSpec, ScalarFn, Transform};

use crate::config::{EvalConfig, ExperimentConfig, GroupConfig, NetworkConfig, Sensors, SensorsConfig, Target, TrainSection};
use crate::CliError;

const NAMES: &[&str] = &[
    "gp-l1-s6",
    "gp-l1-s11",
    "gp-l0.5-s6",
    "gp-l0.5-s11",
    "gp-l0.2-s6",
    "gp-l0.2-s11",
    "gp-l0.2-s11-n10000",
    "gp-l0.2-s11-vanilla",
    "boundary-process",
    "boundary-process-vanilla",
    "forward-case1",
    "forward-case1-n300",
    "forward-case1-n3000",
    "forward-case2",
    "inv-case1",
    "inv-case2",
    "inv-case3",
    "inv-case4",
    "two-group",
];

pub fn names() -> &'static [&'static str] {
    NAMES
}

fn kernel(variance: f64, length: f64) -> KernelSpec {
    KernelSpec::new(variance, length).expect("preset kernel")
}

fn rate_kernel(variance: f64, rate: f64) -> KernelSpec {
    KernelSpec::from_rate(variance, rate).expect("preset kernel")
}

/// `k = exp(sin(3 pi (x + 1) / 2) / 5 + k^)`, `k^ ~ GP(0, 4/25 exp(-(x - x')^2))`.
pub fn diffusion_spec() -> ProcessSpec {
    ProcessSpec {
        mean: ScalarFn::Zero,
        kernel: rate_kernel(4.0 / 25.0, 1.0),
        transform: Transform::ExpShift {
            shift: ScalarFn::Sine {
                amplitude: 0.2,
                frequency: 1.5 * PI,
                offset: 1.0,
            },
        },
    }
}

/// `f ~ GP(1/2, 9/400 exp(-rate (x - x')^2))`.
pub fn forcing_spec(rate: f64) -> ProcessSpec {
    ProcessSpec::gaussian(ScalarFn::Constant { value: 0.5 }, rate_kernel(9.0 / 400.0, rate))
}

fn figures(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
}

fn count(n: usize) -> Sensors {
    Sensors::Count(n)
}

fn gp(name: &str, process: ProcessSpec, sensors: usize, snapshots: usize, validation: usize, loss: LossKind) -> ExperimentConfig {
    ExperimentConfig {
        name: name.into(),
        generator: GeneratorKind::Process,
        noise_dims: vec![4],
        seeds: vec![1, 2, 3],
        data_seed: 2019,
        target: Target::Process { process },
        groups: vec![GroupConfig {
            sensors: SensorsConfig {
                f: count(sensors),
                ..Default::default()
            },
            snapshots,
            validation,
            critic_width: 64,
            constant: None,
        }],
        network: NetworkConfig::default(),
        train: TrainSection {
            loss,
            ..TrainSection::default()
        },
        eval: EvalConfig::default(),
        figures: figures(&[
            ("w1_trace", "fig4_w1_trace"),
            ("spectra", "fig5_spectra"),
            ("mean_std", "fig6_mean_std"),
            ("critic_loss", "fig7a_critic_loss"),
            ("w1_overfit", "fig7b_w1_overfit"),
        ]),
    }
}

fn physics(
    name: &str,
    f: ProcessSpec,
    sensors: SensorsConfig,
    snapshots: usize,
    steps: u64,
    shuffle: bool,
    figs: &[(&str, &str)],
) -> ExperimentConfig {
    ExperimentConfig {
        name: name.into(),
        generator: GeneratorKind::Physics,
        noise_dims: vec![20],
        seeds: vec![1, 2, 3],
        data_seed: 2019,
        target: Target::Elliptic { k: diffusion_spec(), f },
        groups: vec![GroupConfig {
            sensors,
            snapshots,
            validation: 0,
            critic_width: 128,
            constant: None,
        }],
        network: NetworkConfig::default(),
        train: TrainSection {
            steps,
            batch: snapshots.min(1000),
            shuffle_kf: shuffle,
            checkpoints: CheckpointSchedule::default(),
            ..TrainSection::default()
        },
        eval: EvalConfig::default(),
        figures: figures(figs),
    }
}

fn sensors(k: usize, u: usize, f: usize, b: usize) -> SensorsConfig {
    SensorsConfig {
        k: count(k),
        u: count(u),
        f: count(f),
        b: count(b),
    }
}

fn forward_case1(name: &str, snapshots: usize, noise_dims: Vec<usize>) -> ExperimentConfig {
    let mut c = physics(
        name,
        forcing_spec(25.0),
        sensors(13, 0, 21, 2),
        snapshots,
        100_000,
        true,
        &[
            ("relative_error", "fig8_relative_error"),
            ("spectra", "fig9_f_spectra"),
            ("correlation", "table1_correlation"),
        ],
    );
    // the batch is the whole training set in this case
    c.train.batch = snapshots;
    c.noise_dims = noise_dims;
    c
}

fn inverse(name: &str, n_k: usize, n_u: usize) -> ExperimentConfig {
    let s = if n_u == 0 {
        sensors(n_k, 0, 13, 2)
    } else {
        sensors(n_k, n_u, 13, 0)
    };
    physics(
        name,
        forcing_spec(1.0),
        s,
        1000,
        200_000,
        false,
        &[("relative_error", "fig12_relative_error"), ("spectra", "fig12_f_spectra")],
    )
}

/// Paper-scale configuration of a named experiment.
pub fn preset(name: &str) -> Result<ExperimentConfig, CliError> {
    let gp_spec = |l: f64| ProcessSpec::gaussian(ScalarFn::Zero, kernel(1.0, l));
    let boundary = ProcessSpec {
        mean: ScalarFn::Zero,
        kernel: kernel(1.0, 0.2),
        transform: Transform::BoundaryFactor,
    };
    let cfg = match name {
        "gp-l1-s6" => gp(name, gp_spec(1.0), 6, 1000, 0, LossKind::WganGp),
        "gp-l1-s11" => gp(name, gp_spec(1.0), 11, 1000, 0, LossKind::WganGp),
        "gp-l0.5-s6" => gp(name, gp_spec(0.5), 6, 1000, 0, LossKind::WganGp),
        "gp-l0.5-s11" => gp(name, gp_spec(0.5), 11, 1000, 0, LossKind::WganGp),
        "gp-l0.2-s6" => gp(name, gp_spec(0.2), 6, 1000, 0, LossKind::WganGp),
        "gp-l0.2-s11" => gp(name, gp_spec(0.2), 11, 1000, 0, LossKind::WganGp),
        "gp-l0.2-s11-n10000" => gp(name, gp_spec(0.2), 11, 10_000, 1000, LossKind::WganGp),
        "gp-l0.2-s11-vanilla" => gp(name, gp_spec(0.2), 11, 10_000, 0, LossKind::Vanilla),
        "boundary-process" => gp(name, boundary, 11, 10_000, 0, LossKind::WganGp),
        "boundary-process-vanilla" => gp(name, boundary, 11, 10_000, 0, LossKind::Vanilla),
        "forward-case1" => forward_case1(name, 1000, vec![2, 4, 20, 50]),
        "forward-case1-n300" => forward_case1(name, 300, vec![20]),
        "forward-case1-n3000" => forward_case1(name, 3000, vec![20]),
        "forward-case2" => physics(
            name,
            forcing_spec(625.0 / 4.0),
            sensors(13, 0, 41, 2),
            10_000,
            200_000,
            true,
            &[("relative_error", "fig11_relative_error"), ("spectra", "fig11_f_spectra")],
        ),
        "inv-case1" => inverse(name, 1, 13),
        "inv-case2" => inverse(name, 5, 9),
        "inv-case3" => inverse(name, 9, 5),
        "inv-case4" => inverse(name, 13, 0),
        "two-group" => {
            let mut c = inverse(name, 13, 0);
            c.groups.push(GroupConfig {
                sensors: SensorsConfig {
                    u: Sensors::Positions(vec![0.0]),
                    ..Default::default()
                },
                snapshots: 1000,
                validation: 0,
                critic_width: 16,
                constant: None,
            });
            c.figures = figures(&[("relative_error", "fig13_relative_error"), ("spectra", "fig13_f_spectra")]);
            c
        }
        _ => {
            return Err(CliError::Config(format!(
                "unknown preset `{name}`; available presets: {}",
                NAMES.join(", ")
            )))
        }
    };
    Ok(cfg)
}
