use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use pegsim_core::hand::{fit_inverse_model, generate_dataset, read_dataset, write_dataset, DatasetOptions, FitOptions, Hand};
use pegsim_core::harness::{read_trials, summarize_rows, trial_rows, write_trials, Experiment, TrialRow};
use pegsim_core::world::parse_trace;
use pegsim_core::{ConfigError, ExperimentConfig, OutputFormat};

#[derive(Parser)]
#[command(name = "pegsim", version, about = "Simulated vision-driven peg-in-hole insertion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment config; defaults apply to anything it leaves out.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// csv or markdown
    #[arg(long)]
    format: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate hand transition records.
    GenDataset(Common),
    /// Fit the inverse hand model to a dataset.
    FitModel {
        #[command(flatten)]
        common: Common,
        /// Dataset file; generated from the config when omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Run the configured experiment.
    Run(Common),
    /// Run the ablation matrix.
    Ablate(Common),
    /// Re-aggregate a per-trial table.
    Report {
        #[command(flatten)]
        common: Common,
        /// Per-trial table; defaults to `<out_dir>/trials.csv`.
        #[arg(long)]
        trials: Option<PathBuf>,
    },
    /// Summarize a trial trace.
    Replay { trace: PathBuf },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Other(String),
}

fn other(e: impl std::fmt::Display) -> CliError {
    CliError::Other(e.to_string())
}

fn load(c: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.experiment.seed = s;
        cfg.model.seed = s;
    }
    if let Some(d) = &c.out_dir {
        cfg.output.out_dir = d.clone();
    }
    if let Some(f) = &c.format {
        cfg.output.format = OutputFormat::parse(f).ok_or_else(|| ConfigError::field("output.format", format!("unknown format {f:?}")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| other(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| other(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn dataset_options(cfg: &ExperimentConfig) -> DatasetOptions {
    DatasetOptions {
        n_triangles: cfg.model.triangles,
        n_transitions: cfg.model.transitions,
        seed: cfg.model.seed,
        ..DatasetOptions::default()
    }
}

/// Runs each config, writing traces when asked; returns all raw trials.
fn run_all(configs: &[ExperimentConfig]) -> Result<Vec<TrialRow>, CliError> {
    let mut rows = Vec::new();
    for cfg in configs {
        info!("running {} ({} trials)", cfg.label(), cfg.experiment.trials);
        let exp = Experiment::new(cfg.clone())?;
        let results = if cfg.output.traces {
            let dir = cfg.output.out_dir.join("traces").join(cfg.label().replace('/', "_"));
            let mut results = Vec::new();
            for (i, (r, trace)) in exp.run_traced().into_iter().enumerate() {
                write(&dir, &format!("trial_{i:04}.trace"), &trace)?;
                results.push(r);
            }
            results
        } else {
            exp.run()
        };
        rows.extend(trial_rows(cfg, &results));
    }
    Ok(rows)
}

fn publish(cfg: &ExperimentConfig, prefix: &str, rows: &[TrialRow]) -> Result<(), CliError> {
    let dir = &cfg.output.out_dir;
    write(dir, &format!("{prefix}trials.csv"), &write_trials(rows))?;
    let table = summarize_rows(rows).map_err(other)?;
    let text = table.render(cfg.output.format);
    let path = write(dir, &format!("{prefix}summary.{}", cfg.output.format.extension()), &text)?;
    print!("{text}");
    info!("wrote {}", path.display());
    Ok(())
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenDataset(c) => {
            let cfg = load(&c)?;
            let data = generate_dataset(&Hand::default(), &dataset_options(&cfg)).map_err(other)?;
            let path = write(&cfg.output.out_dir, "dataset.txt", &write_dataset(&data))?;
            println!("{} records -> {}", data.len(), path.display());
        }
        Command::FitModel { common, dataset } => {
            let cfg = load(&common)?;
            let data = match dataset {
                Some(p) => {
                    let text = fs::read_to_string(&p).map_err(|e| other(format!("{}: {e}", p.display())))?;
                    read_dataset(&text).map_err(other)?
                }
                None => generate_dataset(&Hand::default(), &dataset_options(&cfg)).map_err(other)?,
            };
            let opts = FitOptions { epochs: cfg.model.epochs, seed: cfg.model.seed, ..FitOptions::default() };
            let model = fit_inverse_model(&data, &opts).map_err(other)?;
            let path = write(&cfg.output.out_dir, "model.txt", &model.to_text())?;
            println!("train loss {:.6} val loss {:.6} -> {}", model.train_loss, model.val_loss, path.display());
        }
        Command::Run(c) => {
            let cfg = load(&c)?;
            let rows = run_all(std::slice::from_ref(&cfg))?;
            publish(&cfg, "", &rows)?;
        }
        Command::Ablate(c) => {
            let cfg = load(&c)?;
            let rows = run_all(&cfg.ablation_matrix())?;
            publish(&cfg, "ablation_", &rows)?;
        }
        Command::Report { common, trials } => {
            let cfg = load(&common)?;
            let path = trials.unwrap_or_else(|| cfg.output.out_dir.join("trials.csv"));
            let text = fs::read_to_string(&path).map_err(|e| other(format!("{}: {e}", path.display())))?;
            let rows = read_trials(&text).map_err(other)?;
            print!("{}", summarize_rows(&rows).map_err(other)?.render(cfg.output.format));
        }
        Command::Replay { trace } => {
            let text = fs::read_to_string(&trace).map_err(|e| other(format!("{}: {e}", trace.display())))?;
            let (_, s) = parse_trace(&text).map_err(other)?;
            println!("ticks {} duration {:.3} s", s.ticks, s.duration);
            for (tag, n) in &s.phases {
                println!("  {tag:<14} {n}");
            }
            println!("max depth {:.3} mm, final depth {:.3} mm", s.max_depth, s.final_depth);
            println!("final tilt {:.3} deg, final offset {:.3} mm", s.final_tilt_deg, s.final_offset);
            println!("jammed ticks {}", s.jammed_ticks);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
