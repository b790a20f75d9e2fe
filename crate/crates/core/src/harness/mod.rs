//! Student-level cross-validation of the baseline chain and the three EM
//! initialization strategies, plus synthetic corpora with known structure.

mod ari;
mod bundle;
mod folds;
mod synthetic;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use ari::adjusted_rand_index;
pub use bundle::write_bundle;
pub use folds::{assign_folds, FoldAssignment};
pub use synthetic::{block_mixture, generate_synthetic, LengthLaw, SyntheticSpec};

use crate::chain::{fit_chain, FigureStyle, MarkovChain, DEFAULT_EDGE_THRESHOLD};
use crate::error::{Error, Result};
use crate::evaluation::{compute_metrics, paired_ci, predict_trace, AccuracyDenominator, MetricsReport, PairedCi, PredictionRecord};
use crate::mixture::{e_step, fit_mixture, FitConfig, InitStrategy, MixtureModel};
use crate::trace::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// One chain over all training traces.
    Baseline,
    /// EM from a random start.
    Em,
    EmEm,
    KEm,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Em => "em",
            Self::EmEm => "em_em",
            Self::KEm => "k_em",
        }
    }

    pub fn init(self) -> Option<InitStrategy> {
        match self {
            Self::Baseline => None,
            Self::Em => Some(InitStrategy::Random),
            Self::EmEm => Some(InitStrategy::EmEm),
            Self::KEm => Some(InitStrategy::KEm),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "baseline" => Ok(Self::Baseline),
            "em" | "random" => Ok(Self::Em),
            "em_em" | "emem" => Ok(Self::EmEm),
            "k_em" | "kem" => Ok(Self::KEm),
            other => Err(Error::Parameter(format!("unknown strategy `{other}`"))),
        }
    }
}

/// A strategy and its number of mixture components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub strategy: Strategy,
    pub k: usize,
}

impl StrategySpec {
    pub fn new(strategy: Strategy, k: usize) -> Self {
        let k = if strategy == Strategy::Baseline { 1 } else { k };
        Self { strategy, k }
    }
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.strategy {
            Strategy::Baseline => f.write_str("baseline"),
            s => write!(f, "{}:{}", s.name(), self.k),
        }
    }
}

/// `baseline`, or `<strategy>:<k>` such as `k_em:4`.
impl FromStr for StrategySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, k) = match s.split_once(':') {
            Some((name, k)) => {
                let k = k.trim().parse::<usize>().map_err(|_| Error::Parameter(format!("bad k in `{s}`")))?;
                (name, k)
            }
            None => (s, 1),
        };
        let strategy: Strategy = name.parse()?;
        if k == 0 {
            return Err(Error::Parameter(format!("k must be positive in `{s}`")));
        }
        if strategy != Strategy::Baseline && !s.contains(':') {
            return Err(Error::Parameter(format!("strategy `{s}` needs a component count, e.g. `{s}:2`")));
        }
        Ok(Self::new(strategy, k))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Name written into every summary row.
    pub dataset: String,
    pub strategies: Vec<StrategySpec>,
    pub fit: FitConfig,
    pub n_folds: usize,
    pub seed: u64,
    pub denominator: AccuracyDenominator,
    pub ci_level: f64,
    pub edge_threshold: f64,
    pub figure: FigureStyle,
    /// Worker threads; 0 lets the thread pool decide.
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: "dataset".into(),
            strategies: vec![
                StrategySpec::new(Strategy::Baseline, 1),
                StrategySpec::new(Strategy::Em, 2),
                StrategySpec::new(Strategy::EmEm, 2),
                StrategySpec::new(Strategy::KEm, 2),
            ],
            fit: FitConfig::default(),
            n_folds: 5,
            seed: 0,
            denominator: AccuracyDenominator::Predictions,
            ci_level: 0.95,
            edge_threshold: DEFAULT_EDGE_THRESHOLD,
            figure: FigureStyle::default(),
            jobs: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(Error::Parameter("no strategies configured".into()));
        }
        for (i, s) in self.strategies.iter().enumerate() {
            if self.strategies[..i].iter().any(|o| o.strategy == s.strategy) {
                return Err(Error::Parameter(format!("strategy `{}` listed twice", s.strategy.name())));
            }
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::Parameter(format!("ci level must lie in (0, 1), got {}", self.ci_level)));
        }
        Ok(())
    }
}

/// A single chain fitted on every training trace, unweighted.
pub fn run_baseline(train: &Dataset, alpha: f64) -> Result<MarkovChain> {
    fit_chain(train.alphabet(), train.traces(), None, alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    MacroAccT,
    MicroAcc,
    PrecisionWt,
    RecallWt,
    F1Wt,
    Iterations,
}

impl Metric {
    pub const ALL: [Metric; 6] =
        [Self::MacroAccT, Self::MicroAcc, Self::PrecisionWt, Self::RecallWt, Self::F1Wt, Self::Iterations];

    pub fn name(self) -> &'static str {
        match self {
            Self::MacroAccT => "macro_acc_t",
            Self::MicroAcc => "micro_acc",
            Self::PrecisionWt => "precision_wt",
            Self::RecallWt => "recall_wt",
            Self::F1Wt => "f1_wt",
            Self::Iterations => "iterations",
        }
    }
}

/// The five prediction metrics, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSummary {
    pub macro_acc_t: f64,
    pub micro_acc: f64,
    pub precision_wt: f64,
    pub recall_wt: f64,
    pub f1_wt: f64,
}

impl MetricSummary {
    fn of(r: &MetricsReport) -> Self {
        Self { macro_acc_t: r.macro_acc_t, micro_acc: r.micro_acc, precision_wt: r.precision_wt, recall_wt: r.recall_wt, f1_wt: r.f1_wt }
    }

    /// `None` for [`Metric::Iterations`].
    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::MacroAccT => Some(self.macro_acc_t),
            Metric::MicroAcc => Some(self.micro_acc),
            Metric::PrecisionWt => Some(self.precision_wt),
            Metric::RecallWt => Some(self.recall_wt),
            Metric::F1Wt => Some(self.f1_wt),
            Metric::Iterations => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterEvaluation {
    pub cluster: usize,
    pub n_traces: usize,
    /// `None` when no test trace was assigned to the cluster.
    pub metrics: Option<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldEvaluation {
    /// Metrics over every test prediction.
    pub pooled: MetricsReport,
    pub clusters: Vec<ClusterEvaluation>,
    /// Per-cluster metrics averaged with cluster test-trace counts as weights.
    pub weighted: MetricSummary,
    #[serde(skip)]
    pub records: Vec<PredictionRecord>,
}

/// Labels and predicts every test trace, then scores per cluster.
pub fn evaluate_model(model: &MixtureModel, test: &Dataset, score_initial: bool, denominator: AccuracyDenominator) -> Result<FoldEvaluation> {
    if test.is_empty() {
        return Err(Error::Parameter("empty test set".into()));
    }
    if &model.alphabet != test.alphabet() {
        return Err(Error::AlphabetMismatch(format!("model over {:?}, test data over {:?}", model.alphabet, test.alphabet())));
    }
    let records = test.traces().iter().map(|t| predict_trace(model, t, score_initial)).collect::<Result<Vec<_>>>()?;
    let pooled = compute_metrics(&records, test.alphabet(), denominator)?;
    let mut clusters = Vec::with_capacity(model.k());
    let mut weighted = MetricSummary::default();
    let n = records.len() as f64;
    for c in 0..model.k() {
        let members: Vec<PredictionRecord> = records.iter().filter(|r| r.assigned_cluster == c).cloned().collect();
        let metrics = if members.is_empty() { None } else { Some(compute_metrics(&members, test.alphabet(), denominator)?) };
        if let Some(m) = &metrics {
            let w = members.len() as f64 / n;
            weighted.macro_acc_t += w * m.macro_acc_t;
            weighted.micro_acc += w * m.micro_acc;
            weighted.precision_wt += w * m.precision_wt;
            weighted.recall_wt += w * m.recall_wt;
            weighted.f1_wt += w * m.f1_wt;
        }
        clusters.push(ClusterEvaluation { cluster: c, n_traces: members.len(), metrics });
    }
    if model.k() == 1 {
        weighted = MetricSummary::of(&pooled);
    }
    Ok(FoldEvaluation { pooled, clusters, weighted, records })
}

/// Trains one strategy on a training split.
pub fn train_strategy(train: &Dataset, spec: &StrategySpec, fit: &FitConfig, seed: u64) -> Result<MixtureModel> {
    match spec.strategy.init() {
        None => {
            let chain = run_baseline(train, fit.em.alpha)?;
            let mut model = MixtureModel::single(chain);
            model.config = fit.em;
            model.train_log_likelihood = e_step(&model, train, fit.em.score_initial)?.1;
            model.converged = true;
            model.seed = seed;
            Ok(model)
        }
        Some(init) => fit_mixture(train, spec.k, init, fit, seed),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldRun {
    pub model: MixtureModel,
    pub evaluation: FoldEvaluation,
    pub train_traces: usize,
    pub test_traces: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyRun {
    pub spec: StrategySpec,
    pub fold: usize,
    /// Failure message when training or evaluation failed.
    pub outcome: std::result::Result<FoldRun, String>,
}

impl StrategyRun {
    pub fn value(&self, metric: Metric) -> Option<f64> {
        let run = self.outcome.as_ref().ok()?;
        match metric {
            Metric::Iterations => Some(run.model.iterations as f64),
            m => run.evaluation.weighted.get(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub strategy: String,
    pub k: usize,
    pub metric: String,
    pub mean: Option<f64>,
    /// Sample SD across folds; undefined for fewer than two folds.
    pub sd: Option<f64>,
    pub folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub strategy_a: String,
    pub strategy_b: String,
    pub ci: PairedCi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResults {
    pub config: ExperimentConfig,
    pub folds: FoldAssignment,
    /// Fold-major, strategies in configuration order.
    pub runs: Vec<StrategyRun>,
    pub aggregates: Vec<AggregateRow>,
    pub comparisons: Vec<PairedComparison>,
    /// Comparisons that could not be computed, and why.
    pub notes: Vec<String>,
}

impl ExperimentResults {
    pub fn runs_for(&self, strategy: Strategy) -> impl Iterator<Item = &StrategyRun> {
        self.runs.iter().filter(move |r| r.spec.strategy == strategy)
    }

    pub fn failures(&self) -> impl Iterator<Item = (&StrategyRun, &str)> {
        self.runs.iter().filter_map(|r| r.outcome.as_ref().err().map(|e| (r, e.as_str())))
    }
}

fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_add(fold as u64)
}

fn run_job(data: &Dataset, folds: &FoldAssignment, config: &ExperimentConfig, fold: usize, spec: StrategySpec) -> StrategyRun {
    let outcome = (|| {
        let (train, test) = folds.split(data, fold)?;
        let model = train_strategy(&train, &spec, &config.fit, fold_seed(config.seed, fold))?;
        let evaluation = evaluate_model(&model, &test, config.fit.em.score_initial, config.denominator)?;
        Ok::<_, Error>(FoldRun { model, evaluation, train_traces: train.len(), test_traces: test.len() })
    })()
    .map_err(|e| e.to_string());
    StrategyRun { spec, fold, outcome }
}

fn mean_sd(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.len() > 1).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(mean), sd)
}

/// Trains every strategy on each fold's complement and evaluates it on
/// the fold, then aggregates across folds and compares strategies pairwise.
pub fn run_experiment(data: &Dataset, folds: &FoldAssignment, config: &ExperimentConfig) -> Result<ExperimentResults> {
    config.validate()?;
    let jobs: Vec<(usize, StrategySpec)> =
        (0..folds.n_folds).flat_map(|f| config.strategies.iter().map(move |s| (f, *s))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| Error::Parameter(format!("thread pool: {e}")))?;
    let runs: Vec<StrategyRun> =
        pool.install(|| jobs.par_iter().map(|&(f, s)| run_job(data, folds, config, f, s)).collect());

    let per_fold = |strategy: Strategy, metric: Metric| -> Vec<Option<f64>> {
        let mut v = vec![None; folds.n_folds];
        for r in runs.iter().filter(|r| r.spec.strategy == strategy) {
            v[r.fold] = r.value(metric);
        }
        v
    };

    let mut aggregates = Vec::new();
    for spec in &config.strategies {
        for metric in Metric::ALL {
            let values: Vec<f64> = per_fold(spec.strategy, metric).into_iter().flatten().collect();
            let (mean, sd) = mean_sd(&values);
            aggregates.push(AggregateRow { strategy: spec.strategy.name().into(), k: spec.k, metric: metric.name().into(), mean, sd, folds: values.len() });
        }
    }

    let mut comparisons = Vec::new();
    let mut notes = Vec::new();
    for (i, a) in config.strategies.iter().enumerate() {
        for b in &config.strategies[i + 1..] {
            for metric in Metric::ALL {
                let (xs, ys): (Vec<f64>, Vec<f64>) = per_fold(a.strategy, metric)
                    .into_iter()
                    .zip(per_fold(b.strategy, metric))
                    .filter_map(|(x, y)| Some((x?, y?)))
                    .unzip();
                match paired_ci(&xs, &ys, config.ci_level) {
                    Ok(mut ci) => {
                        ci.metric = metric.name().into();
                        comparisons.push(PairedComparison { strategy_a: a.strategy.name().into(), strategy_b: b.strategy.name().into(), ci });
                    }
                    Err(e) => notes.push(format!("{}/{} {}: {e}", a.strategy.name(), b.strategy.name(), metric.name())),
                }
            }
        }
    }

    Ok(ExperimentResults { config: config.clone(), folds: folds.clone(), runs, aggregates, comparisons, notes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::Alphabet;

    fn corpus(seed: u64) -> Dataset {
        let mix = block_mixture(&Alphabet::canonical(), 2, 0.85, seed).unwrap();
        let spec = SyntheticSpec { mixture: mix, n_traces: 120, n_students: 20, min_len: 4, max_len: 15, length_law: LengthLaw::Uniform, seed };
        generate_synthetic(&spec).unwrap().0
    }

    #[test]
    fn strategy_spec_parsing() {
        assert_eq!("k_em:4".parse::<StrategySpec>().unwrap(), StrategySpec::new(Strategy::KEm, 4));
        assert_eq!("baseline".parse::<StrategySpec>().unwrap().k, 1);
        assert!("em".parse::<StrategySpec>().is_err());
        assert!("em:0".parse::<StrategySpec>().is_err());
        assert!("hmm:2".parse::<StrategySpec>().is_err());
        assert_eq!(StrategySpec::new(Strategy::EmEm, 3).to_string(), "em_em:3");
    }

    #[test]
    fn baseline_matches_one_component_em() {
        let data = corpus(1);
        let folds = assign_folds(&data, 3, 5).unwrap();
        let config = ExperimentConfig {
            strategies: vec![StrategySpec::new(Strategy::Baseline, 1), StrategySpec::new(Strategy::Em, 1)],
            n_folds: 3,
            ..ExperimentConfig::default()
        };
        let res = run_experiment(&data, &folds, &config).unwrap();
        for fold in 0..3 {
            let get = |s: Strategy| res.runs.iter().find(|r| r.fold == fold && r.spec.strategy == s).unwrap();
            let (b, e) = (get(Strategy::Baseline), get(Strategy::Em));
            let (b, e) = (b.outcome.as_ref().unwrap(), e.outcome.as_ref().unwrap());
            assert_eq!(b.evaluation.weighted, e.evaluation.weighted);
            assert_eq!(b.evaluation.records, e.evaluation.records);
        }
    }

    #[test]
    fn single_fold_like_split() {
        let data = corpus(2);
        let folds = assign_folds(&data, 2, 0).unwrap();
        let config = ExperimentConfig { strategies: vec![StrategySpec::new(Strategy::KEm, 2)], n_folds: 2, ..ExperimentConfig::default() };
        let res = run_experiment(&data, &folds, &config).unwrap();
        assert_eq!(res.runs.len(), 2);
        assert!(res.comparisons.is_empty());
        for r in &res.runs {
            let run = r.outcome.as_ref().unwrap();
            assert_eq!(run.train_traces + run.test_traces, data.len());
        }
    }

    #[test]
    fn failures_are_isolated() {
        let data = corpus(3);
        let folds = assign_folds(&data, 2, 0).unwrap();
        // more components than distinct feature vectors makes K-means fail
        let config = ExperimentConfig {
            strategies: vec![StrategySpec::new(Strategy::Baseline, 1), StrategySpec::new(Strategy::KEm, 10_000)],
            n_folds: 2,
            ..ExperimentConfig::default()
        };
        let res = run_experiment(&data, &folds, &config).unwrap();
        assert_eq!(res.failures().count(), 2);
        assert!(res.runs_for(Strategy::Baseline).all(|r| r.outcome.is_ok()));
        assert!(!res.notes.is_empty());
    }

    #[test]
    fn comparisons_cover_every_pair_and_metric() {
        let data = corpus(4);
        let folds = assign_folds(&data, 3, 1).unwrap();
        let mut config = ExperimentConfig { n_folds: 3, ..ExperimentConfig::default() };
        config.fit.em_em.n_starts = 3;
        let res = run_experiment(&data, &folds, &config).unwrap();
        assert_eq!(res.comparisons.len(), 6 * Metric::ALL.len());
        assert_eq!(res.aggregates.len(), 4 * Metric::ALL.len());
    }

    #[test]
    fn duplicate_strategy_rejected() {
        let config = ExperimentConfig {
            strategies: vec![StrategySpec::new(Strategy::Em, 2), StrategySpec::new(Strategy::Em, 3)],
            ..ExperimentConfig::default()
        };
        assert!(config.validate().is_err());
    }

    #[test]
    fn baseline_rejects_empty_training() {
        let empty = Dataset::new(Alphabet::canonical(), vec![]).unwrap();
        assert!(run_baseline(&empty, 1e-3).is_err());
    }
}
