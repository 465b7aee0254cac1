use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mimalloc::MiMalloc;
use pigan_cli::{parse_config, presets, CliError, Experiment, ExperimentConfig, RunManifest, Scale, TrainOptions, Workspace};

#[global_allocator]
static GLOBAL: MiMalloc = MiMalloc;

#[derive(Parser)]
#[command(name = "pigan", version, about = "Physics-informed GANs for stochastic elliptic problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment config (may start with `preset = "<name>"`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset; see `pigan presets`.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Train only this seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    scale: Option<Scale>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize snapshot datasets and reference statistics.
    Synth(Common),
    /// Train every (noise dimension, seed) pair.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from existing checkpoints.
        #[arg(long)]
        resume: bool,
        /// Override the step budget (0 writes the initial state only).
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Evaluate trained generators and write metrics, figure tables and plots.
    Eval(Common),
    /// synth + train + eval.
    Reproduce {
        /// Preset name (same as --preset).
        name: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// List the named presets.
    Presets,
}

/// Resolves the config. Configs read back from an output directory are already scaled.
fn load(common: &Common) -> Result<Experiment, CliError> {
    let ws = Workspace::new(&common.out);
    let (mut cfg, scale): (ExperimentConfig, Scale) = match (&common.config, &common.preset) {
        (Some(path), _) => {
            let text = read(path)?;
            let mut cfg = parse_config(&text)?;
            let scale = common.scale.unwrap_or_default();
            cfg.apply_scale(scale);
            (cfg, scale)
        }
        (None, Some(name)) => {
            let mut cfg = presets::preset(name)?;
            let scale = common.scale.unwrap_or_default();
            cfg.apply_scale(scale);
            (cfg, scale)
        }
        (None, None) => {
            let path = ws.config();
            if !path.exists() {
                return Err(CliError::Config(format!(
                    "no --config or --preset given and {} does not exist",
                    path.display()
                )));
            }
            let cfg = parse_config(&read(&path)?)?;
            let m: Option<RunManifest> = fs::read_to_string(ws.manifest()).ok().and_then(|t| serde_json::from_str(&t).ok());
            let stored = match m.as_ref().map(|m| m.scale.as_str()) {
                Some("desk") => Scale::Desk,
                _ => Scale::Paper,
            };
            if common.scale.is_some_and(|s| s != stored) {
                return Err(CliError::Config(format!(
                    "{} is already resolved at {stored} scale; pass --preset or --config to rescale",
                    path.display()
                )));
            }
            (cfg, stored)
        }
    };
    if let Some(s) = common.seed {
        cfg.seeds = vec![s];
    }
    Experiment::new(cfg, &common.out, scale)
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn with_threads<T>(threads: Option<usize>, f: impl FnOnce() -> Result<T, CliError> + Send) -> Result<T, CliError>
where
    T: Send,
{
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?
            .install(f),
        None => f(),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Presets => {
            for name in presets::names() {
                println!("{name}");
            }
            Ok(())
        }
        Command::Synth(c) => {
            let exp = load(&c)?;
            with_threads(c.threads, || exp.synth())?;
            println!("data written to {}", exp.ws.root().display());
            Ok(())
        }
        Command::Train { common, resume, steps } => {
            let exp = load(&common)?;
            with_threads(common.threads, || exp.train(TrainOptions { resume, steps }))?;
            println!("checkpoints written to {}", exp.ws.root().join("runs").display());
            Ok(())
        }
        Command::Eval(c) => {
            let exp = load(&c)?;
            let report = with_threads(c.threads, || exp.eval())?;
            for f in &report.files {
                println!("{}", exp.ws.relative(f));
            }
            Ok(())
        }
        Command::Reproduce { name, mut common } => {
            if let Some(n) = name {
                if common.config.is_some() || common.preset.is_some() {
                    return Err(CliError::Config("give the preset either by name or with --preset/--config".into()));
                }
                common.preset = Some(n);
            }
            let exp = load(&common)?;
            let report = with_threads(common.threads, || exp.reproduce())?;
            println!(
                "{} generators evaluated; results in {}",
                report.evals.len(),
                exp.ws.root().display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
