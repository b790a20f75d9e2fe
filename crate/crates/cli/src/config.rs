use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Args};
use serde::{Deserialize, Serialize};

use seqmix::chain::DEFAULT_EDGE_THRESHOLD;
use seqmix::evaluation::AccuracyDenominator;
use seqmix::harness::{ExperimentConfig, StrategySpec};
use seqmix::mixture::FitConfig;

/// Flags accepted by every subcommand. Unset flags fall back to the config
/// file (where one applies) and then to the library defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct GlobalOpts {
    /// Master seed for every random choice.
    #[arg(long, global = true, env = "SEQMIX_SEED")]
    pub seed: Option<u64>,
    /// Additive smoothing pseudocount for all probability estimates.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// EM stops once the log-likelihood changes by less than this.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true)]
    pub max_iters: Option<usize>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Whether the initial-state term enters trace likelihoods.
    #[arg(long, global = true, action = ArgAction::Set, value_name = "BOOL")]
    pub score_initial: Option<bool>,
    /// Denominator of the per-trace accuracy.
    #[arg(long = "eq4-denominator", global = true, value_name = "predictions|length")]
    pub denominator: Option<AccuracyDenominator>,
}

/// Experiment config file. TOML, every key optional:
///
/// ```toml
/// dataset = "planted"
/// strategies = ["baseline", "em:3", "em_em:3", "k_em:3"]
/// folds = 5
/// seed = 7
/// alpha = 0.001
/// tol = 1e-10
/// max_iters = 500
/// score_initial = true
/// eq4_denominator = "predictions"
/// ci_level = 0.95
/// edge_threshold = 0.32
/// jobs = 0
/// em_em_starts = 10
/// em_em_short_iters = 20
/// em_em_short_tol = 1e-4
/// kmeans_restarts = 25
/// kmeans_max_iters = 15
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub dataset: Option<String>,
    pub strategies: Option<Vec<String>>,
    pub folds: Option<usize>,
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub score_initial: Option<bool>,
    pub eq4_denominator: Option<String>,
    pub ci_level: Option<f64>,
    pub edge_threshold: Option<f64>,
    pub jobs: Option<usize>,
    pub em_em_starts: Option<usize>,
    pub em_em_short_iters: Option<usize>,
    pub em_em_short_tol: Option<f64>,
    pub kmeans_restarts: Option<usize>,
    pub kmeans_max_iters: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Fully resolved settings shared by the model-fitting commands.
#[derive(Debug, Clone, Serialize)]
pub struct Settings {
    pub seed: u64,
    pub fit: FitConfig,
    pub denominator: AccuracyDenominator,
    pub jobs: usize,
}

impl Settings {
    pub fn resolve(global: &GlobalOpts, file: &FileConfig) -> Result<Self> {
        let mut fit = FitConfig::default();
        if let Some(a) = global.alpha.or(file.alpha) {
            fit.em.alpha = a;
        }
        if let Some(t) = global.tol.or(file.tol) {
            fit.em.tol = t;
        }
        if let Some(n) = global.max_iters.or(file.max_iters) {
            fit.em.max_iters = n;
        }
        if let Some(s) = global.score_initial.or(file.score_initial) {
            fit.em.score_initial = s;
        }
        if let Some(n) = file.em_em_starts {
            fit.em_em.n_starts = n;
        }
        if let Some(n) = file.em_em_short_iters {
            fit.em_em.short_iters = n;
        }
        if let Some(t) = file.em_em_short_tol {
            fit.em_em.short_tol = t;
        }
        if let Some(n) = file.kmeans_restarts {
            fit.kmeans.restarts = n;
        }
        if let Some(n) = file.kmeans_max_iters {
            fit.kmeans.max_iters = n;
        }
        if !(fit.em.alpha >= 0.0 && fit.em.alpha.is_finite()) {
            bail!("alpha must be a finite value >= 0, got {}", fit.em.alpha);
        }
        if fit.em.tol.is_nan() || fit.em.tol <= 0.0 {
            bail!("tol must be positive, got {}", fit.em.tol);
        }
        if fit.em_em.n_starts == 0 || fit.kmeans.restarts == 0 {
            bail!("em_em_starts and kmeans_restarts must be at least 1");
        }
        let denominator = match (global.denominator, &file.eq4_denominator) {
            (Some(d), _) => d,
            (None, Some(s)) => s.parse()?,
            (None, None) => AccuracyDenominator::default(),
        };
        let seed = global.seed.or(file.seed).unwrap_or(0);
        fit.kmeans.seed = seed;
        Ok(Self { seed, fit, denominator, jobs: global.jobs.or(file.jobs).unwrap_or(0) })
    }
}

/// Experiment-only overrides given on the command line.
#[derive(Debug, Clone, Default)]
pub struct ExperimentOverrides {
    pub dataset: Option<String>,
    pub strategies: Option<Vec<StrategySpec>>,
    pub folds: Option<usize>,
    pub ci_level: Option<f64>,
    pub edge_threshold: Option<f64>,
}

pub fn experiment_config(
    settings: &Settings,
    file: &FileConfig,
    overrides: &ExperimentOverrides,
    traces: &Path,
) -> Result<ExperimentConfig> {
    let strategies = match (&overrides.strategies, &file.strategies) {
        (Some(s), _) => s.clone(),
        (None, Some(names)) => names.iter().map(|s| s.parse()).collect::<seqmix::Result<_>>()?,
        (None, None) => ExperimentConfig::default().strategies,
    };
    let dataset = overrides.dataset.clone().or_else(|| file.dataset.clone()).unwrap_or_else(|| default_dataset_name(traces));
    let config = ExperimentConfig {
        dataset,
        strategies,
        fit: settings.fit,
        n_folds: overrides.folds.or(file.folds).unwrap_or(5),
        seed: settings.seed,
        denominator: settings.denominator,
        ci_level: overrides.ci_level.or(file.ci_level).unwrap_or(0.95),
        edge_threshold: overrides.edge_threshold.or(file.edge_threshold).unwrap_or(DEFAULT_EDGE_THRESHOLD),
        jobs: settings.jobs,
        ..ExperimentConfig::default()
    };
    config.validate()?;
    Ok(config)
}

fn default_dataset_name(traces: &Path) -> String {
    traces.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "dataset".into())
}

pub fn config_path_or_default(path: Option<&PathBuf>) -> Result<FileConfig> {
    path.map(|p| FileConfig::load(p)).transpose().map(Option::unwrap_or_default)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let file: FileConfig = toml::from_str("seed = 3\nalpha = 0.5\nfolds = 4\neq4_denominator = \"length\"").unwrap();
        let global = GlobalOpts { seed: Some(9), ..GlobalOpts::default() };
        let s = Settings::resolve(&global, &file).unwrap();
        assert_eq!(s.seed, 9);
        assert_eq!(s.fit.em.alpha, 0.5);
        assert_eq!(s.fit.kmeans.seed, 9);
        assert_eq!(s.denominator, AccuracyDenominator::Length);
        let cfg = experiment_config(&s, &file, &ExperimentOverrides::default(), Path::new("x/corpus.jsonl")).unwrap();
        assert_eq!(cfg.n_folds, 4);
        assert_eq!(cfg.dataset, "corpus");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("seeed = 1").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let global = GlobalOpts { alpha: Some(-1.0), ..GlobalOpts::default() };
        assert!(Settings::resolve(&global, &FileConfig::default()).is_err());
        let file: FileConfig = toml::from_str("strategies = [\"em\"]").unwrap();
        let s = Settings::resolve(&GlobalOpts::default(), &file).unwrap();
        assert!(experiment_config(&s, &file, &ExperimentOverrides::default(), Path::new("t")).is_err());
    }
}
