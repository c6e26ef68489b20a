//! Command-line harness for the distillab training laboratory.

use clap::{Args, Parser, Subcommand};
use distillab::config::{ExperimentConfig, Overrides};
use distillab::{experiment, presets};
use distillab_core::awa::ScheduleKind;
use distillab_core::distill::TrainerKind;
use distillab_core::error::Error;
use std::path::PathBuf;

/// Output root: `--out-root` flag, else the DISTILLAB_OUT environment
/// variable, else the current directory.
const OUT_ENV: &str = "DISTILLAB_OUT";

#[derive(Parser)]
#[command(
    name = "distillab",
    version,
    about = "Self-knowledge distillation experiments on a desk-scale training core"
)]
struct Cli {
    /// Root directory for experiment outputs (overrides $DISTILLAB_OUT).
    #[arg(long, global = true)]
    out_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Run one experiment from a TOML config file.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Run a named preset (trend-desk, table1-desk, table2-desk, smoke-desk).
    Preset {
        name: String,
        /// Seeds override applied to every row, comma separated.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Epochs override applied to every row.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Rank the experiment summaries found under a directory.
    Compare { dir: PathBuf },
    /// Emit the epoch-sampled weight trajectory of a run record stream.
    Trajectory {
        run: PathBuf,
        /// Write CSV here instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct OverrideArgs {
    #[arg(long)]
    trainer: Option<String>,
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    alpha_tau: Option<f64>,
    #[arg(long)]
    lsr_eps: Option<f64>,
    /// Schedule kind: fixed | epoch_linear_up | epoch_linear_down.
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    fixed_value: Option<f64>,
    #[arg(long)]
    warmup_epochs: Option<usize>,
    #[arg(long)]
    train_per_class: Option<usize>,
    #[arg(long)]
    test_per_class: Option<usize>,
    #[arg(long)]
    label_noise: Option<f64>,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    looks: Option<u32>,
}

impl OverrideArgs {
    fn to_overrides(&self) -> Result<Overrides, Error> {
        let trainer = match &self.trainer {
            Some(t) => Some(t.parse::<TrainerKind>()?),
            None => None,
        };
        let schedule_kind = match self.schedule.as_deref() {
            None => None,
            Some("fixed") => Some(ScheduleKind::Fixed),
            Some("epoch_linear_up") | Some("up") => Some(ScheduleKind::EpochLinearUp),
            Some("epoch_linear_down") | Some("down") => Some(ScheduleKind::EpochLinearDown),
            Some(other) => {
                return Err(Error::config(format!("unknown schedule '{other}'")));
            }
        };
        Ok(Overrides {
            trainer,
            label: self.label.clone(),
            epochs: self.epochs,
            batch_size: self.batch_size,
            seeds: self.seeds.clone(),
            output_dir: self.output_dir.clone(),
            lr0: self.lr0,
            tau: self.tau,
            alpha: self.alpha,
            alpha_tau: self.alpha_tau,
            lsr_eps: self.lsr_eps,
            schedule_kind,
            fixed_value: self.fixed_value,
            warmup_epochs: self.warmup_epochs,
            train_per_class: self.train_per_class,
            test_per_class: self.test_per_class,
            label_noise_rate: self.label_noise,
            image_size: self.image_size,
            looks: self.looks,
        })
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Data(_) => 3,
        Error::Shape(_) | Error::Domain(_) | Error::Numeric(_) => 4,
        Error::State(_) | Error::Frozen(_) => 5,
        Error::Format { .. } => 6,
        Error::Io(_) => 7,
    }
}

fn out_root(cli_root: &Option<PathBuf>) -> PathBuf {
    cli_root
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn main() {
    let cli = Cli::parse();
    let root = out_root(&cli.out_root);
    let result = match &cli.command {
        Command::Run { config, overrides } => (|| {
            let mut cfg = ExperimentConfig::from_file(config)?;
            overrides.to_overrides()?.apply(&mut cfg);
            cfg.validate()?;
            let (row, dir) = experiment::run_experiment(&cfg, &root)?;
            println!("{}", row.format_line());
            println!("artifacts: {}", dir.display());
            Ok(())
        })(),
        Command::Preset {
            name,
            seeds,
            epochs,
        } => (|| {
            let mut rows = Vec::new();
            let preset_dir = root.join(name);
            for mut cfg in presets::preset(name)? {
                if let Some(seeds) = seeds {
                    cfg.seeds = seeds.clone();
                }
                if let Some(epochs) = epochs {
                    cfg.epochs = *epochs;
                    cfg.distill.schedule.warmup_epochs =
                        cfg.distill.schedule.warmup_epochs.min(epochs / 2);
                }
                let (row, _) = experiment::run_experiment(&cfg, &preset_dir)?;
                println!("{}", row.format_line());
                rows.push(row);
            }
            let ranked = experiment::compare_dir(&preset_dir)?;
            println!("\nranked (best first):");
            experiment::print_table(&ranked, std::io::stdout())?;
            println!(
                "comparison: {}",
                preset_dir.join("comparison.csv").display()
            );
            Ok(())
        })(),
        Command::Compare { dir } => (|| {
            let ranked = experiment::compare_dir(dir)?;
            experiment::print_table(&ranked, std::io::stdout())?;
            Ok(())
        })(),
        Command::Trajectory { run, output } => (|| {
            let csv = experiment::emit_trajectory(run)?;
            match output {
                Some(path) => std::fs::write(path, csv)?,
                None => print!("{csv}"),
            }
            Ok(())
        })(),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}
