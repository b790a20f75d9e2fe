//! Labeling test traces, dynamic next-event prediction and the metrics
//! computed from it.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::chain::MarkovChain;
use crate::error::{Error, Result};
use crate::math::{argmax, log_sum_exp};
use crate::mixture::MixtureModel;
use crate::trace::{Alphabet, Trace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub cluster: usize,
    pub posterior: Vec<f64>,
}

/// Maximum-posterior component; ties go to the lowest index.
pub fn label_trace(model: &MixtureModel, trace: &Trace, score_initial: bool) -> Label {
    let scores = model.joint_log_scores(&trace.events, score_initial);
    let lse = log_sum_exp(&scores);
    let posterior = if lse == f64::NEG_INFINITY {
        vec![1.0 / scores.len() as f64; scores.len()]
    } else {
        scores.iter().map(|s| (s - lse).exp()).collect()
    };
    Label { cluster: argmax(&scores), posterior }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionStep {
    /// One-based position of the predicted event.
    pub position: usize,
    pub actual: usize,
    pub predicted: usize,
}

impl PredictionStep {
    pub fn correct(&self) -> bool {
        self.actual == self.predicted
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub trace_id: String,
    pub student_id: String,
    pub assigned_cluster: usize,
    pub steps: Vec<PredictionStep>,
}

impl PredictionRecord {
    pub fn correct(&self) -> usize {
        self.steps.iter().filter(|s| s.correct()).count()
    }
}

fn dynamic_predictions(chain: &MarkovChain, trace: &Trace) -> Vec<PredictionStep> {
    trace
        .events
        .windows(2)
        .enumerate()
        .map(|(i, w)| PredictionStep { position: i + 2, actual: w[1], predicted: chain.predict_next(w[0]) })
        .collect()
}

fn require_predictable(trace: &Trace) -> Result<()> {
    if trace.len() < 2 {
        return Err(Error::Trace { trace: trace.trace_id.clone(), reason: "at least two events are needed to predict".into() });
    }
    Ok(())
}

/// Labels the trace, then predicts every event after the first from the
/// observed previous event under the assigned component.
pub fn predict_trace(model: &MixtureModel, trace: &Trace, score_initial: bool) -> Result<PredictionRecord> {
    require_predictable(trace)?;
    let label = label_trace(model, trace, score_initial);
    Ok(PredictionRecord {
        trace_id: trace.trace_id.clone(),
        student_id: trace.student_id.clone(),
        assigned_cluster: label.cluster,
        steps: dynamic_predictions(&model.components[label.cluster], trace),
    })
}

/// Dynamic prediction with a single chain and no labeling.
pub fn predict_with_chain(chain: &MarkovChain, trace: &Trace) -> Result<PredictionRecord> {
    require_predictable(trace)?;
    Ok(PredictionRecord {
        trace_id: trace.trace_id.clone(),
        student_id: trace.student_id.clone(),
        assigned_cluster: 0,
        steps: dynamic_predictions(chain, trace),
    })
}

/// Denominator of the per-trace accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyDenominator {
    /// Number of predictions made, `l - 1`.
    #[default]
    Predictions,
    /// Trace length `l`.
    Length,
}

impl std::str::FromStr for AccuracyDenominator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "predictions" => Ok(Self::Predictions),
            "length" => Ok(Self::Length),
            other => Err(Error::Parameter(format!("unknown accuracy denominator `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub symbol: String,
    /// Fractions in [0, 1]; 0/0 is taken as 0.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of predicted positions whose true symbol is this class.
    pub support: u64,
}

/// Support-weighted scores derived from a confusion matrix (rows are true
/// classes, columns predictions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionScores {
    pub micro_acc: f64,
    pub precision_wt: f64,
    pub recall_wt: f64,
    pub f1_wt: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub support: Vec<u64>,
    pub class_weights: Vec<f64>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Aggregates are percentages; per-class values are fractions.
pub fn confusion_scores(confusion: &[Vec<u64>]) -> ConfusionScores {
    let c = confusion.len();
    let total: u64 = confusion.iter().flatten().sum();
    let support: Vec<u64> = confusion.iter().map(|row| row.iter().sum()).collect();
    let predicted: Vec<u64> = (0..c).map(|j| confusion.iter().map(|row| row[j]).sum()).collect();
    let diag: Vec<u64> = (0..c).map(|i| confusion[i][i]).collect();
    let precision: Vec<f64> = (0..c).map(|i| ratio(diag[i], predicted[i])).collect();
    let recall: Vec<f64> = (0..c).map(|i| ratio(diag[i], support[i])).collect();
    let f1: Vec<f64> = precision
        .iter()
        .zip(&recall)
        .map(|(&p, &r)| if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 })
        .collect();
    let class_weights: Vec<f64> = support.iter().map(|&s| ratio(s, total)).collect();
    let weighted = |v: &[f64]| 100.0 * v.iter().zip(&class_weights).map(|(x, w)| x * w).sum::<f64>();
    ConfusionScores {
        micro_acc: 100.0 * ratio(diag.iter().sum(), total),
        precision_wt: weighted(&precision),
        recall_wt: weighted(&recall),
        f1_wt: weighted(&f1),
        precision,
        recall,
        f1,
        support,
        class_weights,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean per-trace accuracy, %.
    pub macro_acc_t: f64,
    /// Correct over all predictions, %.
    pub micro_acc: f64,
    pub precision_wt: f64,
    pub recall_wt: f64,
    pub f1_wt: f64,
    pub classes: Vec<ClassMetrics>,
    pub class_count: usize,
    pub class_weights: Vec<f64>,
    pub confusion: Vec<Vec<u64>>,
    pub n_traces: usize,
    pub n_predictions: u64,
    pub denominator: AccuracyDenominator,
}

/// Confusion matrix with labels, for external heatmap plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionHeatmap {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    /// Each row divided by its total; empty rows stay zero.
    pub row_normalized: Vec<Vec<f64>>,
}

impl MetricsReport {
    pub fn heatmap(&self) -> ConfusionHeatmap {
        ConfusionHeatmap {
            labels: self.classes.iter().map(|c| c.symbol.clone()).collect(),
            counts: self.confusion.clone(),
            row_normalized: self
                .confusion
                .iter()
                .map(|row| {
                    let total: u64 = row.iter().sum();
                    row.iter().map(|&x| ratio(x, total)).collect()
                })
                .collect(),
        }
    }
}

pub fn compute_metrics(records: &[PredictionRecord], alphabet: &Alphabet, denominator: AccuracyDenominator) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(Error::Parameter("no prediction records to score".into()));
    }
    let m = alphabet.len();
    let mut confusion = vec![vec![0u64; m]; m];
    let mut per_trace = 0.0;
    for r in records {
        for s in &r.steps {
            if s.actual >= m || s.predicted >= m {
                return Err(Error::AlphabetMismatch(format!("record `{}` has a symbol outside the alphabet", r.trace_id)));
            }
            confusion[s.actual][s.predicted] += 1;
        }
        let den = match denominator {
            AccuracyDenominator::Predictions => r.steps.len(),
            AccuracyDenominator::Length => r.steps.len() + 1,
        };
        per_trace += ratio(r.correct() as u64, den as u64);
    }
    let scores = confusion_scores(&confusion);
    let classes = (0..m)
        .map(|i| ClassMetrics {
            symbol: alphabet.symbol(i).to_owned(),
            precision: scores.precision[i],
            recall: scores.recall[i],
            f1: scores.f1[i],
            support: scores.support[i],
        })
        .collect();
    Ok(MetricsReport {
        macro_acc_t: 100.0 * per_trace / records.len() as f64,
        micro_acc: scores.micro_acc,
        precision_wt: scores.precision_wt,
        recall_wt: scores.recall_wt,
        f1_wt: scores.f1_wt,
        classes,
        class_count: m,
        class_weights: scores.class_weights,
        n_predictions: confusion.iter().flatten().sum(),
        confusion,
        n_traces: records.len(),
        denominator,
    })
}

/// Two-sided Student-t quantile, via the inverse regularized incomplete beta.
pub fn student_t_quantile(p: f64, dof: f64) -> f64 {
    StudentsT::new(0.0, 1.0, dof).expect("positive degrees of freedom").inverse_cdf(p)
}

/// `mean ± t · sd / √n` with the `(1 + level) / 2` quantile on `n - 1` dof.
pub fn t_interval(mean: f64, sd: f64, n: usize, level: f64) -> (f64, f64) {
    let half = student_t_quantile((1.0 + level) / 2.0, (n - 1) as f64) * sd / (n as f64).sqrt();
    (mean - half, mean + half)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedCi {
    pub metric: String,
    pub differences: Vec<f64>,
    pub diff_mean: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub diff_sd: f64,
    pub level: f64,
    pub lo: f64,
    pub hi: f64,
    /// The interval excludes zero.
    pub significant: bool,
}

/// Confidence interval for the mean of per-fold differences `a - b`.
pub fn paired_ci(a: &[f64], b: &[f64], level: f64) -> Result<PairedCi> {
    if a.len() != b.len() {
        return Err(Error::Parameter(format!("paired samples differ in length: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::Parameter("a paired interval needs at least two folds".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Parameter(format!("confidence level must lie in (0, 1), got {level}")));
    }
    let n = a.len();
    let differences: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let diff_mean = differences.iter().sum::<f64>() / n as f64;
    let diff_sd = (differences.iter().map(|d| (d - diff_mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let (lo, hi) = t_interval(diff_mean, diff_sd, n, level);
    Ok(PairedCi {
        metric: String::new(),
        differences,
        diff_mean,
        diff_sd,
        level,
        lo,
        hi,
        significant: lo > 0.0 || hi < 0.0,
    })
}
