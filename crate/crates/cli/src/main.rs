use std::path::PathBuf;
use std::process::ExitCode;

use cimla::models::ModelKind;
use cimla_cli::commands::{self, BaselineMethod, EvalOptions};
use cimla_cli::config::{Overrides, RunConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "cimla",
    version,
    about = "Differential causal regulation from two observational datasets"
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-gene work (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a GRN pair and expression for both conditions.
    Simulate,
    /// Score every (TF, target) pair.
    Run {
        #[arg(long, value_parser = parse_model)]
        model: Option<ModelKind>,
    },
    /// Score pairs with a baseline method.
    Baseline {
        #[arg(long, value_enum)]
        method: BaselineMethod,
    },
    /// Evaluate a ranking against a ground-truth differential network.
    Eval {
        /// Ranking TSV (defaults to <out>/ranking.tsv).
        #[arg(long)]
        ranking: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        per_gene: bool,
        #[arg(long)]
        plots: bool,
    },
    /// Multi-seed method comparison (resumable).
    Bench,
    /// Exact checks of the causal identities.
    Oracle {
        #[command(subcommand)]
        action: OracleAction,
    },
}

#[derive(Subcommand)]
enum OracleAction {
    /// Run the fixture corpus and the randomized suites.
    Verify {
        /// Directory of .scm fixtures (default: the built-in corpus).
        #[arg(long)]
        fixtures: Option<PathBuf>,
        /// Random SCMs per lemma.
        #[arg(long, default_value_t = 50)]
        n_random: usize,
    },
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    match s {
        "forest" => Ok(ModelKind::Forest),
        "mlp" => Ok(ModelKind::Mlp),
        _ => Err(format!("expected forest or mlp, got {s}")),
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let overrides = Overrides {
        seed: cli.seed,
        workers: cli.workers,
        out: cli.out.clone(),
    };
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Simulate => {
            let m = commands::cmd_simulate(&cfg)?;
            eprintln!("wrote {} files to {}", m.manifest.outputs.len(), cfg.out.display());
        }
        Command::Run { model } => {
            let s = commands::cmd_run(&cfg, model)?;
            eprintln!("scored {} pairs; {} genes failed", s.ranking.len(), s.failures);
        }
        Command::Baseline { method } => {
            let s = commands::cmd_baseline(&cfg, method)?;
            eprintln!("wrote {} ({} pairs)", s.file.display(), s.ranking.len());
        }
        Command::Eval {
            ranking,
            truth,
            per_gene,
            plots,
        } => {
            let opts = EvalOptions {
                ranking: ranking.unwrap_or_else(|| cfg.out.join("ranking.tsv")),
                truth,
                per_gene,
                plots,
            };
            let s = commands::cmd_eval(&cfg, &opts)?;
            print!("{}", s.report.to_text());
        }
        Command::Bench => {
            let rows = cimla_cli::bench::cmd_bench(&cfg)?;
            eprintln!(
                "{} result rows in {}",
                rows.len(),
                cfg.out.join(cimla_cli::bench::RESULTS_FILE).display()
            );
        }
        Command::Oracle {
            action: OracleAction::Verify { fixtures, n_random },
        } => {
            let r = commands::cmd_oracle_verify(fixtures.as_deref(), n_random, cfg.seed.unwrap_or(0))?;
            for l in &r.lines {
                println!("{l}");
            }
            return Ok(r.all_as_expected);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
