use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pigan::processes::{read_dataset, write_dataset};
use pigan_cli::RunManifest;

fn pigan(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pigan"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const TINY_GP: &str = r#"
preset = "gp-l1-s6"
seeds = [1, 2]

[[groups]]
sensors = { f = 6 }
snapshots = 60
validation = 20
critic_width = 6

[network]
generator_width = 6

[train]
steps = 8
batch = 32
trace_every = 4
checkpoints = { every = 4, window = 5 }

[eval]
grid_points = 21
paths = 200
reference_paths = 500
w1_snapshots = 10
w1_batches = 2
w1_every = 4
baseline_pairs = 3
baseline_sets = 2
"#;

const TINY_PHYSICS: &str = r#"
preset = "forward-case1"
seeds = [3]
noise_dims = [2]

[[groups]]
sensors = { k = 3, f = 5, b = 2 }
snapshots = 40
critic_width = 6

[network]
generator_width = 6

[train]
steps = 4
batch = 16
trace_every = 2
checkpoints = { every = 2, window = 3 }

[eval]
grid_points = 21
paths = 100
reference_paths = 300
w1_every = 0
baseline_sets = 2
"#;

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.toml"), config).unwrap();
    dir
}

#[test]
fn lists_presets() {
    let dir = tempfile::tempdir().unwrap();
    let out = pigan(&["presets"], dir.path());
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l == "forward-case1"));
    assert_eq!(text.lines().count(), pigan_cli::presets::names().len());
}

#[test]
fn config_errors_exit_with_2() {
    let dir = setup("preset = \"gp-l1-s6\"\n[train]\nbatch = -3\n");
    let out = pigan(&["synth", "--config", "tiny.toml", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.batch"));

    let out = pigan(&["reproduce", "no-such-preset", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gp-l1-s6"));

    let out = pigan(&["train", "--out", "empty"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    let out = pigan(&["train", "--preset", "gp-l1-s6", "--scale", "huge"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_data_is_a_data_error() {
    let dir = setup(TINY_GP);
    let out = pigan(&["train", "--config", "tiny.toml", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("synth"));
}

#[test]
fn datasets_round_trip_byte_for_byte() {
    let dir = setup(TINY_PHYSICS);
    ok(&pigan(&["synth", "--config", "tiny.toml", "--out", "o"], dir.path()));
    let path = dir.path().join("o/data/group0_train.bin");
    let bytes = fs::read(&path).unwrap();
    let (header, group) = read_dataset(bytes.as_slice()).unwrap();
    assert_eq!(group.rows(), 40);
    assert_eq!(group.layout.width(), 3 + 5 + 2);
    let mut again = Vec::new();
    write_dataset(&mut again, &group, header.meta).unwrap();
    assert_eq!(again, bytes);
    // boundary reads of u vanish
    assert!(group
        .data
        .column(8)
        .iter()
        .chain(group.data.column(9).iter())
        .all(|v| v.abs() < 1e-12));
}

#[test]
fn zero_steps_writes_initial_checkpoints() {
    let dir = setup(TINY_GP);
    ok(&pigan(&["synth", "--config", "tiny.toml", "--out", "o"], dir.path()));
    ok(&pigan(&["train", "--out", "o", "--steps", "0"], dir.path()));
    let m: RunManifest = serde_json::from_str(&fs::read_to_string(dir.path().join("o/manifest.json")).unwrap()).unwrap();
    for s in [1, 2] {
        assert!(m.files.contains_key(&format!("runs/d4-s{s}/state.bin")));
        assert_eq!(m.timings[&format!("train/d4-s{s}")].steps, Some(0));
    }
    let root = dir.path().join("o");
    assert!(m.files.keys().all(|f| root.join(f).exists()));
    assert!(m.files.contains_key("data/group0_validation.bin"));
}

#[test]
fn reproduce_writes_everything_and_is_deterministic() {
    let dir = setup(TINY_GP);
    ok(&pigan(
        &["reproduce", "--config", "tiny.toml", "--out", "a", "--threads", "1"],
        dir.path(),
    ));
    ok(&pigan(
        &["reproduce", "--config", "tiny.toml", "--out", "b", "--threads", "3"],
        dir.path(),
    ));
    let m: RunManifest = serde_json::from_str(&fs::read_to_string(dir.path().join("a/manifest.json")).unwrap()).unwrap();
    for f in m.files.keys() {
        assert!(dir.path().join("a").join(f).exists(), "{f}");
        if f.ends_with(".csv") || f.ends_with(".bin") || f.ends_with(".svg") {
            assert_eq!(
                fs::read(dir.path().join("a").join(f)).unwrap(),
                fs::read(dir.path().join("b").join(f)).unwrap(),
                "{f} differs between thread counts"
            );
        }
    }
    for stem in [
        "metrics",
        "fig4_w1_trace",
        "fig5_spectra",
        "fig6_mean_std",
        "fig7a_critic_loss",
        "fig7b_w1_overfit",
    ] {
        assert!(m.files.contains_key(&format!("metrics/{stem}.csv")), "{stem}");
    }
    let metrics = fs::read_to_string(dir.path().join("a/metrics/metrics.csv")).unwrap();
    assert!(metrics.starts_with("experiment,source,noise_dim,seed,step,metric,value\n"));
    assert!(metrics.contains("generated,4,2,8,rel_err_std_f,"));

    // a second eval reproduces the tables exactly
    let before = fs::read(dir.path().join("a/metrics/fig5_spectra.csv")).unwrap();
    ok(&pigan(&["eval", "--out", "a"], dir.path()));
    assert_eq!(fs::read(dir.path().join("a/metrics/fig5_spectra.csv")).unwrap(), before);
}

#[test]
fn resume_continues_to_the_same_state() {
    let dir = setup(TINY_PHYSICS);
    ok(&pigan(&["synth", "--config", "tiny.toml", "--out", "o"], dir.path()));
    ok(&pigan(&["train", "--out", "o", "--steps", "2"], dir.path()));
    ok(&pigan(&["train", "--out", "o", "--resume"], dir.path()));
    let resumed = fs::read(dir.path().join("o/runs/d2-s3/state.bin")).unwrap();
    ok(&pigan(&["train", "--out", "o"], dir.path()));
    assert_eq!(fs::read(dir.path().join("o/runs/d2-s3/state.bin")).unwrap(), resumed);
}

#[test]
fn physics_eval_reports_correlations() {
    let dir = setup(TINY_PHYSICS);
    ok(&pigan(&["reproduce", "--config", "tiny.toml", "--out", "o"], dir.path()));
    let corr = fs::read_to_string(dir.path().join("o/metrics/table1_correlation.csv")).unwrap();
    assert!(corr.lines().any(|l| l.starts_with("2,ku,")), "{corr}");
    let rel = fs::read_to_string(dir.path().join("o/metrics/fig8_relative_error.csv")).unwrap();
    assert!(rel.lines().any(|l| l.contains(",u,std,monte_carlo_40,")), "{rel}");
    assert!(dir.path().join("o/plots/fig9_f_spectra.svg").exists());
}
