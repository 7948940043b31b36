use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dcen::checkpoint;
use dcen::config;
use dcen::data::{generate_synthetic, load_dataset_dir, write_dataset, SynthConfig};
use dcen::evaluator::{evaluate_gzsl, GzslReport};
use dcen::sweep::{run_sweep, SweepSpec};
use dcen::trainer::{train, RunPaths, TrainConfig};
use dcen::{DcenError, Result};

#[derive(Parser)]
#[command(
    name = "dcen",
    version,
    about = "Dual-contrastive embedding network for generalized zero-shot learning"
)]
#[command(after_help = concat!(
    "Environment:\n  DCEN_WORKERS  threads used to build augmented views (default 1)\n",
    "  RUST_LOG      log filter (default info)"
))]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted-path override, e.g. `--set model.embed_dim=64`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn load<T: serde::de::DeserializeOwned + serde::Serialize + Default>(&self) -> Result<T> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        config::load(self.config.as_deref(), &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write checkpoint, metrics and the test report.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset's test splits.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a one-parameter ablation sweep.
    Sweep {
        /// Sweep spec (`param`, `values`, `repeats`, `base_config`).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the base training seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Dotted-path override applied to the base training config.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| DcenError::Io { path: dir.to_path_buf(), source: e })
}

fn write(path: PathBuf, text: &str) -> Result<()> {
    fs::write(&path, text).map_err(|e| DcenError::Io { path, source: e })
}

fn write_report(out: &Path, report: &GzslReport, label: &str) -> Result<()> {
    let table = report.to_table(label);
    print!("{table}");
    write(out.join("report.txt"), &table)?;
    write(out.join("report.csv"), &report.to_csv())?;
    write(out.join("report.json"), &report.to_json())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common, out } => {
            let cfg: SynthConfig = common.load()?;
            let ds = generate_synthetic(&cfg)?;
            write_dataset(&ds, &out)?;
            log::info!("wrote {} samples to {}", ds.samples.len(), out.display());
        }
        Command::Train { common, data, out } => {
            let cfg: TrainConfig = common.load()?;
            cfg.validate()?;
            let ds = load_dataset_dir(&data)?;
            create_dir(&out)?;
            write(out.join("config.toml"), &toml::to_string(&cfg).expect("config serializes"))?;
            let outcome = train(&ds, &cfg, Some(&out))?;
            let report = evaluate_gzsl(&outcome.state.encoders, &ds)?;
            write_report(&out, &report, mode_label(&cfg))?;
            log::info!("checkpoint {}", RunPaths::new(&out).checkpoint.display());
        }
        Command::Eval { checkpoint: path, data, out } => {
            let (state, cfg) = checkpoint::load(&path)?;
            let ds = load_dataset_dir(&data)?;
            let report = evaluate_gzsl(&state.encoders, &ds)?;
            create_dir(&out)?;
            write_report(&out, &report, mode_label(&cfg))?;
        }
        Command::Sweep { config: spec_path, data, out, seed, overrides } => {
            let spec = SweepSpec::from_file(&spec_path)?;
            let base_path = spec
                .base_config
                .as_ref()
                .map(|p| spec_path.parent().map(|d| d.join(p)).unwrap_or_else(|| p.clone()));
            let common = Common { config: base_path, seed, overrides };
            let base: TrainConfig = common.load()?;
            let ds = load_dataset_dir(&data)?;
            let outcome = run_sweep(&spec, &base, &ds, &out)?;
            println!("{}", outcome.csv_path.display());
            println!("{}", outcome.plot_path.display());
        }
    }
    Ok(())
}

fn mode_label(cfg: &TrainConfig) -> &'static str {
    use dcen::trainer::TrainMode::*;
    match cfg.mode {
        BasicZsl => "basic_zsl",
        ScmOnly => "scm_only",
        VcmOnly => "vcm_only",
        FullDcen => "full_dcen",
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
