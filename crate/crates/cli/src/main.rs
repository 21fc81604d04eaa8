use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lra_core::experiment::{
    export_representations, finetune_with, load_splits, rnn_train, run_experiment_with,
    write_filters, ExperimentConfig, MetricsRow,
};
use lra_core::io::load_network;
use lra_core::rnn::RnnConfig;
use lra_core::{Error, Result, Rng};

#[derive(Parser, Debug)]
#[command(
    name = "lra",
    version,
    about = "Train and inspect networks with local representation alignment"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a network from an experiment config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Continue training a saved network with backprop and SGD.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write linearized filters of one layer as 28x28 PGM images.
    Filters {
        #[arg(long)]
        model: PathBuf,
        /// Layer index, counted from 1.
        #[arg(long)]
        layer: usize,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Write per-layer representations of one data split as CSV.
    ExportReps {
        #[arg(long)]
        model: PathBuf,
        /// Experiment config providing the data section.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitName::Test)]
        split: SplitName,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the recurrent network on the sine-wave next-step task.
    RnnTrain {
        /// JSON with any subset of the RNN settings; defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SplitName {
    Train,
    Valid,
    Test,
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn progress(row: &MetricsRow) {
    eprintln!(
        "epoch {:>4}  train {:6.2}%  valid {:6.2}%  test {:6.2}%  depth {:.2}",
        row.epoch, row.train_err, row.valid_err, row.test_err, row.mean_depth
    );
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            out_dir,
            seed,
        } => {
            let cfg = load_config(&config, seed)?;
            cfg.validate()?;
            let splits = load_splits(&cfg.data, cfg.seed)?;
            let out = run_experiment_with(&cfg, &splits, Some(&out_dir), &mut progress)?;
            let last = out.metrics.last().expect("initial row");
            println!(
                "trained {} epochs, test error {:.2}%, outputs in {}",
                last.epoch,
                last.test_err,
                out_dir.display()
            );
        }
        Command::Finetune {
            config,
            model,
            out_dir,
            seed,
        } => {
            let cfg = load_config(&config, seed)?;
            cfg.validate()?;
            let net = load_network(&model)?;
            let splits = load_splits(&cfg.data, cfg.seed)?;
            let out = finetune_with(&cfg, &splits, net, Some(&out_dir), &mut progress)?;
            println!(
                "best validation error {:.2}% at epoch {} (test {:.2}%), outputs in {}",
                out.best.valid_err,
                out.best.epoch,
                out.best.test_err,
                out_dir.display()
            );
        }
        Command::Filters {
            model,
            layer,
            out_dir,
        } => {
            let net = load_network(&model)?;
            let paths = write_filters(&net, layer, &out_dir)?;
            println!("wrote {} filters to {}", paths.len(), out_dir.display());
        }
        Command::ExportReps {
            model,
            config,
            split,
            out_dir,
            seed,
        } => {
            let cfg = load_config(&config, seed)?;
            let net = load_network(&model)?;
            let splits = load_splits(&cfg.data, cfg.seed)?;
            let ds = match split {
                SplitName::Train => &splits.train,
                SplitName::Valid => &splits.valid,
                SplitName::Test => &splits.test,
            };
            if net.input_dim() != ds.input_dim() {
                return Err(Error::Config(format!(
                    "network expects {} inputs, data has {}",
                    net.input_dim(),
                    ds.input_dim()
                )));
            }
            let paths = export_representations(&net, ds, &out_dir, &mut Rng::new(cfg.seed))?;
            println!(
                "wrote {} files for {} examples to {}",
                paths.len(),
                ds.len(),
                out_dir.display()
            );
        }
        Command::RnnTrain {
            config,
            out_dir,
            seed,
        } => {
            let mut cfg = match config {
                Some(p) => {
                    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                    serde_json::from_str::<RnnConfig>(&text)
                        .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
                }
                None => RnnConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let out = rnn_train(&cfg, Some(&out_dir))?;
            for (e, m) in out.mse.iter().enumerate() {
                eprintln!("epoch {e:>4}  mse {m:.6}");
            }
            println!(
                "mse {:.6} -> {:.6}, outputs in {}",
                out.mse[0],
                out.mse.last().expect("initial mse"),
                out_dir.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
