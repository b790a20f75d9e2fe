//! EM for mixtures of first-order Markov chains.
//!
//! Three ways to start EM are provided: random Dirichlet draws, the best of
//! several short random-start runs (emEM), and K-EM, where K-means on the
//! per-trace symbol proportions supplies one fitted chain per cluster and
//! cluster sizes supply the mixture weights.
//!
//! All likelihood arithmetic is done in log space.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};

use crate::chain::{fit_chain, MarkovChain};
use crate::error::{Error, Result};
use crate::kmeans::{kmeans, KMeansConfig};
use crate::math::log_sum_exp;
use crate::trace::{proportional_counts, Alphabet, Dataset, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    Random,
    EmEm,
    KEm,
}

impl InitStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::EmEm => "em_em",
            Self::KEm => "k_em",
        }
    }
}

impl fmt::Display for InitStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "random" | "em" => Ok(Self::Random),
            "em_em" | "emem" => Ok(Self::EmEm),
            "k_em" | "kem" => Ok(Self::KEm),
            other => Err(Error::Parameter(format!("unknown initialization strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    /// Additive smoothing pseudocount for every chain estimate.
    pub alpha: f64,
    /// Stop when successive log-likelihoods differ by less than this.
    pub tol: f64,
    pub max_iters: usize,
    /// Include the first-symbol probability in trace likelihoods.
    pub score_initial: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { alpha: 1e-3, tol: 1e-10, max_iters: 500, score_initial: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmEmConfig {
    pub n_starts: usize,
    pub short_iters: usize,
    pub short_tol: f64,
}

impl Default for EmEmConfig {
    fn default() -> Self {
        Self { n_starts: 10, short_iters: 20, short_tol: 1e-4 }
    }
}

/// Everything needed to fit one mixture besides data, K and seed.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FitConfig {
    pub em: EmConfig,
    pub em_em: EmEmConfig,
    /// `seed` is ignored; the fit seed is used instead.
    pub kmeans: KMeansConfig,
}

fn null_as_neg_inf<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub alphabet: Alphabet,
    pub weights: Vec<f64>,
    pub components: Vec<MarkovChain>,
    /// `-inf` until the model has been scored on training data.
    #[serde(deserialize_with = "null_as_neg_inf")]
    pub train_log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub init_strategy: Option<InitStrategy>,
    pub seed: u64,
    pub config: EmConfig,
    /// Degenerate components re-seeded during fitting.
    #[serde(default)]
    pub reseeded: usize,
    /// Training log-likelihood before the first M-step and after each one.
    #[serde(default)]
    pub log_likelihood_history: Vec<f64>,
    /// Log-likelihood plus [`log_prior`] at the same points. This is the
    /// quantity EM provably never decreases when `alpha > 0`.
    #[serde(default)]
    pub objective_history: Vec<f64>,
}

impl MixtureModel {
    pub fn new(alphabet: Alphabet, weights: Vec<f64>, components: Vec<MarkovChain>) -> Result<Self> {
        if components.is_empty() || weights.len() != components.len() {
            return Err(Error::Parameter(format!(
                "{} weights for {} components",
                weights.len(),
                components.len()
            )));
        }
        if weights.iter().any(|&w| !(w.is_finite() && w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter("mixture weights must be a probability vector".into()));
        }
        if let Some(c) = components.iter().find(|c| c.alphabet() != &alphabet) {
            return Err(Error::AlphabetMismatch(format!("component over {:?}, mixture over {alphabet:?}", c.alphabet())));
        }
        Ok(Self {
            alphabet,
            weights,
            components,
            train_log_likelihood: f64::NEG_INFINITY,
            iterations: 0,
            converged: false,
            init_strategy: None,
            seed: 0,
            config: EmConfig::default(),
            reseeded: 0,
            log_likelihood_history: Vec::new(),
            objective_history: Vec::new(),
        })
    }

    /// One-component mixture wrapping `chain`.
    pub fn single(chain: MarkovChain) -> Self {
        let alphabet = chain.alphabet().clone();
        Self::new(alphabet, vec![1.0], vec![chain]).expect("single-chain mixture is valid")
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    /// `ln w_j + ln P_j(events)` for every component.
    pub fn joint_log_scores(&self, events: &[usize], score_initial: bool) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.components)
            .map(|(&w, c)| {
                let lw = if w > 0.0 { w.ln() } else { f64::NEG_INFINITY };
                lw + c.log_likelihood(events, score_initial)
            })
            .collect()
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Posterior membership probabilities, one row per trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    pub matrix: Vec<Vec<f64>>,
    /// Mixture log-likelihood of each trace.
    pub trace_log_likelihood: Vec<f64>,
}

impl Responsibilities {
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.matrix.iter().map(|row| row[j]).collect()
    }
}

fn check_alphabet(model: &MixtureModel, data: &Dataset) -> Result<()> {
    if &model.alphabet != data.alphabet() {
        return Err(Error::AlphabetMismatch(format!(
            "model over {:?}, data over {:?}",
            model.alphabet,
            data.alphabet()
        )));
    }
    Ok(())
}

/// Posterior responsibilities and total log-likelihood.
pub fn e_step(model: &MixtureModel, data: &Dataset, score_initial: bool) -> Result<(Responsibilities, f64)> {
    check_alphabet(model, data)?;
    let mut matrix = Vec::with_capacity(data.len());
    let mut per_trace = Vec::with_capacity(data.len());
    for t in data.traces() {
        let scores = model.joint_log_scores(&t.events, score_initial);
        let lse = log_sum_exp(&scores);
        if lse == f64::NEG_INFINITY {
            return Err(Error::ZeroLikelihood { trace: t.trace_id.clone() });
        }
        matrix.push(scores.iter().map(|s| (s - lse).exp()).collect());
        per_trace.push(lse);
    }
    let total = per_trace.iter().sum();
    Ok((Responsibilities { matrix, trace_log_likelihood: per_trace }, total))
}

/// Parameters produced by one M-step.
#[derive(Debug, Clone, PartialEq)]
pub struct MStep {
    pub weights: Vec<f64>,
    pub components: Vec<MarkovChain>,
    /// Components whose responsibility mass fell below `1e-8 * n` and were
    /// re-fitted on the worst-explained trace instead.
    pub reseeded: Vec<usize>,
}

const DEGENERATE_MASS: f64 = 1e-8;

pub fn m_step(resp: &Responsibilities, data: &Dataset, alpha: f64) -> Result<MStep> {
    let n = data.len();
    if n == 0 || resp.matrix.len() != n {
        return Err(Error::Parameter(format!("{} responsibility rows for {n} traces", resp.matrix.len())));
    }
    let k = resp.matrix[0].len();
    let mut by_fit: Vec<usize> = (0..n).collect();
    by_fit.sort_by(|&a, &b| resp.trace_log_likelihood[a].total_cmp(&resp.trace_log_likelihood[b]));
    let mut worst = by_fit.into_iter();

    let mut weights = Vec::with_capacity(k);
    let mut components = Vec::with_capacity(k);
    let mut reseeded = Vec::new();
    for j in 0..k {
        let col = resp.column(j);
        let mass: f64 = col.iter().sum();
        if mass < DEGENERATE_MASS * n as f64 {
            let t = worst.next().unwrap_or(0);
            components.push(fit_chain(data.alphabet(), std::slice::from_ref(&data.traces()[t]), None, alpha)?);
            weights.push(1.0 / n as f64);
            reseeded.push(j);
        } else {
            components.push(fit_chain(data.alphabet(), data.traces(), Some(&col), alpha)?);
            weights.push(mass / n as f64);
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(MStep { weights, components, reseeded })
}

/// `alpha * Σ ln θ` over every smoothed parameter that enters the
/// likelihood: transition entries, plus initial entries when they are
/// scored.
///
/// Additive smoothing makes the M-step a MAP update under a symmetric
/// Dirichlet(1 + alpha) prior, so with `alpha > 0` EM ascends
/// `ll + log_prior` rather than `ll` itself; the raw likelihood can dip by
/// O(alpha) near a fixed point.
pub fn log_prior(model: &MixtureModel, alpha: f64, score_initial: bool) -> f64 {
    if alpha == 0.0 {
        return 0.0;
    }
    let ln_sum = |ps: &[f64]| ps.iter().map(|p| p.ln()).sum::<f64>();
    let total: f64 = model
        .components
        .iter()
        .map(|c| {
            let rows: f64 = c.transitions().iter().map(|r| ln_sum(r)).sum();
            rows + if score_initial { ln_sum(c.initial()) } else { 0.0 }
        })
        .sum();
    alpha * total
}

/// Alternates E- and M-steps until the log-likelihood changes by less than
/// `config.tol` or `config.max_iters` M-steps have run.
pub fn run_em(data: &Dataset, init: &MixtureModel, config: &EmConfig) -> Result<MixtureModel> {
    let mut model = init.clone();
    model.config = *config;
    let (mut resp, mut ll) = e_step(&model, data, config.score_initial)?;
    let mut history = vec![ll];
    let mut objective = vec![ll + log_prior(&model, config.alpha, config.score_initial)];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iters {
        let step = m_step(&resp, data, config.alpha)?;
        model.weights = step.weights;
        model.components = step.components;
        model.reseeded += step.reseeded.len();
        iterations += 1;
        let (next_resp, next_ll) = e_step(&model, data, config.score_initial)?;
        history.push(next_ll);
        objective.push(next_ll + log_prior(&model, config.alpha, config.score_initial));
        let delta = (next_ll - ll).abs();
        resp = next_resp;
        ll = next_ll;
        if delta < config.tol {
            converged = true;
            break;
        }
    }
    model.train_log_likelihood = ll;
    model.iterations = iterations;
    model.converged = converged;
    model.log_likelihood_history = history;
    model.objective_history = objective;
    Ok(model)
}

fn simplex_draw(rng: &mut impl Rng, m: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|x| x / total).collect()
}

/// Equal weights; initial vector and every transition row drawn uniformly
/// from the simplex.
pub fn init_random(alphabet: &Alphabet, k: usize, seed: u64) -> Result<MixtureModel> {
    if k == 0 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    let m = alphabet.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let components = (0..k)
        .map(|_| {
            let initial = simplex_draw(&mut rng, m);
            let rows = (0..m).map(|_| simplex_draw(&mut rng, m)).collect();
            MarkovChain::new(alphabet.clone(), initial, rows)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut model = MixtureModel::new(alphabet.clone(), vec![1.0 / k as f64; k], components)?;
    model.init_strategy = Some(InitStrategy::Random);
    model.seed = seed;
    Ok(model)
}

/// Short EM runs from `n_starts` random initializations; start `s` uses
/// seed `seed + s`.
pub fn em_em_candidates(data: &Dataset, k: usize, em_em: &EmEmConfig, em: &EmConfig, seed: u64) -> Result<Vec<MixtureModel>> {
    if em_em.n_starts == 0 {
        return Err(Error::Parameter("emEM needs at least one start".into()));
    }
    let short = EmConfig { tol: em_em.short_tol, max_iters: em_em.short_iters, ..*em };
    (0..em_em.n_starts as u64)
        .into_par_iter()
        .map(|s| {
            let init = init_random(data.alphabet(), k, seed.wrapping_add(s))?;
            run_em(data, &init, &short)
        })
        .collect()
}

/// The best short-run candidate, used as the starting model.
pub fn init_em_em(data: &Dataset, k: usize, em_em: &EmEmConfig, em: &EmConfig, seed: u64) -> Result<MixtureModel> {
    let candidates = em_em_candidates(data, k, em_em, em, seed)?;
    let mut best = candidates
        .into_iter()
        .reduce(|best, c| if c.train_log_likelihood > best.train_log_likelihood { c } else { best })
        .expect("at least one candidate");
    best.init_strategy = Some(InitStrategy::EmEm);
    best.seed = seed;
    Ok(best)
}

/// K-means on proportional counts, one fitted chain per cluster, weights
/// from cluster sizes.
pub fn init_k_em(data: &Dataset, k: usize, kmeans_config: &KMeansConfig, alpha: f64, seed: u64) -> Result<MixtureModel> {
    let m = data.alphabet().len();
    let features: Vec<Vec<f64>> = data.traces().iter().map(|t| proportional_counts(t, m)).collect();
    let clusters = kmeans(&features, k, &KMeansConfig { seed, ..*kmeans_config })?;
    let n = data.len() as f64;
    let mut weights = Vec::with_capacity(k);
    let mut components = Vec::with_capacity(k);
    for j in 0..k {
        let members: Vec<Trace> =
            data.traces().iter().zip(&clusters.assignment).filter(|(_, &a)| a == j).map(|(t, _)| t.clone()).collect();
        weights.push(members.len() as f64 / n);
        components.push(fit_chain(data.alphabet(), &members, None, alpha)?);
    }
    let mut model = MixtureModel::new(data.alphabet().clone(), weights, components)?;
    model.init_strategy = Some(InitStrategy::KEm);
    model.seed = seed;
    Ok(model)
}

pub fn initialize(data: &Dataset, k: usize, strategy: InitStrategy, config: &FitConfig, seed: u64) -> Result<MixtureModel> {
    match strategy {
        InitStrategy::Random => init_random(data.alphabet(), k, seed),
        InitStrategy::EmEm => init_em_em(data, k, &config.em_em, &config.em, seed),
        InitStrategy::KEm => init_k_em(data, k, &config.kmeans, config.em.alpha, seed),
    }
}

/// Initializes with `strategy` and runs EM to convergence.
pub fn fit_mixture(data: &Dataset, k: usize, strategy: InitStrategy, config: &FitConfig, seed: u64) -> Result<MixtureModel> {
    if data.is_empty() {
        return Err(Error::Estimation("cannot fit a mixture on an empty dataset".into()));
    }
    let init = initialize(data, k, strategy, config, seed)?;
    let mut model = run_em(data, &init, &config.em)?;
    model.init_strategy = Some(strategy);
    model.seed = seed;
    Ok(model)
}

/// What `n` means in the BIC penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSize {
    #[default]
    Traces,
    Events,
}

impl FromStr for SampleSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "traces" => Ok(Self::Traces),
            "events" => Ok(Self::Events),
            other => Err(Error::Parameter(format!("unknown sample size `{other}`, expected traces or events"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InformationCriteria {
    pub bic: f64,
    pub aic: f64,
    pub parameters: usize,
}

/// Free parameters: weights, initial distributions and transition rows.
pub fn parameter_count(k: usize, m: usize) -> usize {
    (k - 1) + k * (m - 1) + k * m * (m - 1)
}

pub fn information_criteria(model: &MixtureModel, data: &Dataset, sample_size: SampleSize) -> InformationCriteria {
    let p = parameter_count(model.k(), model.alphabet.len());
    let n = match sample_size {
        SampleSize::Traces => data.len(),
        SampleSize::Events => data.event_count(),
    } as f64;
    let ll = model.train_log_likelihood;
    InformationCriteria { bic: -2.0 * ll + p as f64 * n.ln(), aic: -2.0 * ll + 2.0 * p as f64, parameters: p }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcRow {
    pub k: usize,
    pub bic: f64,
    pub aic: f64,
    pub loglik: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcSelection {
    pub k_bic: usize,
    pub k_aic: usize,
    pub table: Vec<IcRow>,
}

impl IcSelection {
    /// BIC's choice as the lower end, AIC's as the upper end.
    pub fn range(&self) -> (usize, usize) {
        (self.k_bic.min(self.k_aic), self.k_bic.max(self.k_aic))
    }

    pub fn recommendation(&self) -> String {
        match self.range() {
            (lo, hi) if lo == hi => format!("K = {lo}"),
            (lo, hi) => format!("[{lo},{hi}]"),
        }
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "k,bic,aic,loglik,iterations")?;
        for r in &self.table {
            writeln!(out, "{},{},{},{},{}", r.k, r.bic, r.aic, r.loglik, r.iterations)?;
        }
        Ok(())
    }
}

fn argmin_by(table: &[IcRow], key: impl Fn(&IcRow) -> f64) -> usize {
    table.iter().reduce(|best, r| if key(r) < key(best) { r } else { best }).map(|r| r.k).expect("nonempty table")
}

/// Fits one model per K and reports the BIC- and AIC-minimizing K.
pub fn select_k_by_ic(
    data: &Dataset,
    k_range: &[usize],
    strategy: InitStrategy,
    config: &FitConfig,
    sample_size: SampleSize,
    seed: u64,
) -> Result<IcSelection> {
    let mut ks = k_range.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() {
        return Err(Error::Parameter("empty k range".into()));
    }
    let table = ks
        .par_iter()
        .map(|&k| {
            let model = fit_mixture(data, k, strategy, config, seed)?;
            let ic = information_criteria(&model, data, sample_size);
            Ok(IcRow { k, bic: ic.bic, aic: ic.aic, loglik: model.train_log_likelihood, iterations: model.iterations })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(IcSelection { k_bic: argmin_by(&table, |r| r.bic), k_aic: argmin_by(&table, |r| r.aic), table })
}
