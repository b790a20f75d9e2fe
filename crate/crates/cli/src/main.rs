//! `seqmix` command-line tool: turns raw tutoring logs into traces, picks a
//! number of clusters, fits mixtures of Markov chains, and runs
//! student-level cross-validated comparisons.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{
    EvaluateArgs, ExperimentArgs, IngestArgs, Outcome, SelectArgs, SelectMethod, SynthArgs, TrainArgs,
    DEFAULT_THRESHOLD,
};
use config::{ExperimentOverrides, GlobalOpts};
use seqmix::harness::{Strategy, StrategySpec};
use seqmix::mixture::{InitStrategy, SampleSize};

#[derive(Debug, Parser)]
#[command(name = "seqmix", version, about = "Mixtures of Markov chains for behavioral event traces")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert a raw action log (CSV) into a JSON-lines trace file.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Only feedback views of at least this many seconds count as
        /// feedback seeking (needs the optional `feedback_seconds` column).
        #[arg(long, default_value_t = 0.0)]
        min_feedback_seconds: f64,
    },
    /// Suggest a number of components.
    SelectK {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long, value_enum, default_value_t = SelectMethod::Ic)]
        method: SelectMethod,
        /// Smallest K tried (default 1 for `ic`, 2 otherwise).
        #[arg(long)]
        k_min: Option<usize>,
        #[arg(long, default_value_t = 5)]
        k_max: usize,
        /// Initialization used when fitting for `ic`.
        #[arg(long, default_value = "em_em")]
        strategy: InitStrategy,
        /// Sample size in the BIC penalty: `traces` or `events`.
        #[arg(long, default_value = "traces")]
        sample_size: SampleSize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Fit one model and write it with one DOT figure per component.
    Train {
        #[arg(long)]
        traces: PathBuf,
        /// baseline, em, em_em or k_em.
        #[arg(long)]
        strategy: Strategy,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        edge_threshold: f64,
    },
    /// Label and predict held-out traces with a saved model.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Also write each trace's assigned cluster as CSV.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Student-level cross-validation of several strategies.
    Experiment {
        #[arg(long)]
        traces: PathBuf,
        /// TOML config; command-line flags take precedence over it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        dataset: Option<String>,
        /// Comma-separated, e.g. `baseline,em:3,em_em:3,k_em:3`.
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<StrategySpec>>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        ci_level: Option<f64>,
        #[arg(long)]
        edge_threshold: Option<f64>,
    },
    /// Sample a synthetic corpus with known cluster labels.
    SynthGen {
        /// JSON synthetic spec; replaces the generator flags below.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Use symbols S0..S{m-1} instead of the six behavior patterns.
        #[arg(long)]
        alphabet_size: Option<usize>,
        /// Share of every transition row kept on the component's own symbols.
        #[arg(long, default_value_t = 0.8)]
        stay: f64,
        #[arg(long, default_value_t = 1000)]
        n_traces: usize,
        #[arg(long, default_value_t = 100)]
        students: usize,
        #[arg(long, default_value_t = 2)]
        min_len: usize,
        #[arg(long, default_value_t = 39)]
        max_len: usize,
        /// Geometric length law with this success probability (default uniform).
        #[arg(long)]
        geometric: Option<f64>,
        #[arg(long)]
        output: PathBuf,
        /// CSV of the generating component of every trace.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// JSON of the generating mixture.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let g = &cli.global;
    if let Some(jobs) = g.jobs.filter(|&j| j > 0) {
        // Best effort: the global pool can only be configured once.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    match cli.command {
        Command::Ingest { input, output, min_feedback_seconds } => {
            commands::ingest(g, &IngestArgs { input, output, min_feedback_seconds })
        }
        Command::SelectK { traces, method, k_min, k_max, strategy, sample_size, output } => {
            commands::select_k(g, &SelectArgs { traces, method, k_min, k_max, strategy, sample_size, output })
        }
        Command::Train { traces, strategy, k, out_dir, edge_threshold } => {
            commands::train(g, &TrainArgs { traces, strategy, k, out_dir, edge_threshold })
        }
        Command::Evaluate { model, traces, output, labels } => {
            commands::evaluate(g, &EvaluateArgs { model, traces, output, labels })
        }
        Command::Experiment { traces, config, out_dir, dataset, strategies, folds, ci_level, edge_threshold } => {
            let overrides = ExperimentOverrides { dataset, strategies, folds, ci_level, edge_threshold };
            commands::experiment(g, &ExperimentArgs { traces, config, out_dir, overrides })
        }
        Command::SynthGen {
            spec,
            k,
            alphabet_size,
            stay,
            n_traces,
            students,
            min_len,
            max_len,
            geometric,
            output,
            labels,
            truth,
        } => commands::synth_gen(
            g,
            &SynthArgs { spec, k, alphabet_size, stay, n_traces, students, min_len, max_len, geometric, output, labels, truth },
        ),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Outcome::Complete) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => {
            eprintln!("error: some requested artifacts were not produced; see warnings above");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
