//! `dne` — train text classifiers that resist synonym-substitution attacks,
//! and measure how well they resist them.
//!
//! Every subcommand takes `--config <file.toml>` plus any number of
//! `--set key.path=value` overrides. See the repository README for the
//! config format.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use dne_core::harness::{
    self, format_table, ExperimentSpec, Summary,
};

#[derive(Parser)]
#[command(name = "dne", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SpecArgs {
    /// Experiment config file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. --set train.alpha=1.0 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl SpecArgs {
    fn load(&self) -> anyhow::Result<ExperimentSpec> {
        ExperimentSpec::load(&self.config, &self.set)
            .with_context(|| format!("loading {}", self.config.display()))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic clustered corpus (embeddings, synonyms, splits).
    GenData(SpecArgs),
    /// Train a classifier; keeps the best-validation checkpoint.
    Train(SpecArgs),
    /// Clean accuracy of the deployed predictor on the test split.
    Eval(SpecArgs),
    /// Attack a trained checkpoint and report robust accuracy.
    Attack(SpecArgs),
    /// Train + evaluate + attack across the (alpha, lambda) grid.
    Sweep(SpecArgs),
    /// Full defense plus the four single-component removals.
    Ablate(SpecArgs),
}

fn print_summary(summary: &Summary) {
    print!("{}", format_table(summary));
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData(args) => {
            let spec = args.load()?;
            let Some(synth) = spec.synthetic else {
                bail!("config has no [synthetic] section");
            };
            // Files land where the data paths point.
            let dir = spec
                .data
                .embeddings
                .parent()
                .map(PathBuf::from)
                .unwrap_or_else(|| ".".into());
            let files = harness::generate_synthetic(&synth, &dir)?;
            println!(
                "wrote {} tokens x {} dims under {}",
                synth.vocab_size(),
                synth.dim,
                dir.display()
            );
            for p in [files.embeddings, files.synonyms, files.train, files.val, files.test] {
                println!("  {}", p.display());
            }
        }
        Command::Train(args) => {
            let spec = args.load()?;
            let inputs = harness::load_inputs(&spec)?;
            let (_, outcome) = harness::run_train(&spec, &inputs)?;
            println!("best val acc {:.4}", outcome.best_val);
            println!("checkpoint   {}", outcome.checkpoint.display());
            println!("metrics      {}", outcome.metrics.display());
        }
        Command::Eval(args) => {
            let spec = args.load()?;
            let clean = harness::run_eval(&spec)?;
            println!("clean acc {:.4} ({})", clean, spec.train.mode);
        }
        Command::Attack(args) => {
            let spec = args.load()?;
            let reports = harness::run_attack_cmd(&spec)?;
            for (kind, report) in reports {
                println!(
                    "{}: clean {:.4} robust {:.4} (avg {:.2} subs, {:.0} queries)",
                    kind, report.clean_acc, report.robust_acc,
                    report.avg_substitutions, report.avg_queries
                );
            }
        }
        Command::Sweep(args) => {
            let spec = args.load()?;
            let alphas = spec.sweep.alphas.clone();
            let lambdas = spec.sweep.lambdas.clone();
            let summary = harness::run_sweep(&spec, &alphas, &lambdas)?;
            print_summary(&summary);
        }
        Command::Ablate(args) => {
            let spec = args.load()?;
            let summary = harness::run_ablation(&spec)?;
            print_summary(&summary);
        }
    }
    Ok(())
}
