use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{ExperimentResults, MetricSummary, StrategyRun};
use crate::error::Result;
use crate::evaluation::{ConfusionHeatmap, MetricsReport};

#[derive(Serialize)]
struct SummaryRow<'a> {
    dataset: &'a str,
    strategy: &'a str,
    k: usize,
    fold: usize,
    cluster: String,
    n_traces: usize,
    n_predictions: Option<u64>,
    macro_acc_t: Option<f64>,
    micro_acc: Option<f64>,
    precision_wt: Option<f64>,
    recall_wt: Option<f64>,
    f1_wt: Option<f64>,
    iterations: Option<usize>,
    converged: Option<bool>,
    status: String,
}

#[derive(Serialize)]
struct CiRow<'a> {
    strategy_a: &'a str,
    strategy_b: &'a str,
    metric: &'a str,
    diff_mean: f64,
    diff_sd: f64,
    level: f64,
    lo: f64,
    hi: f64,
    significant: bool,
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    strategy: &'a str,
    k: usize,
    fold: usize,
    weighted: &'a MetricSummary,
    pooled: &'a MetricsReport,
    clusters: &'a [super::ClusterEvaluation],
    heatmap: ConfusionHeatmap,
}

fn run_stem(run: &StrategyRun) -> String {
    format!("fold{}_{}", run.fold, run.spec.strategy.name())
}

fn summary_rows<'a>(results: &'a ExperimentResults) -> Vec<SummaryRow<'a>> {
    let dataset = results.config.dataset.as_str();
    let mut rows = Vec::new();
    for run in &results.runs {
        let strategy = run.spec.strategy.name();
        let base = |cluster: String, n_traces: usize| SummaryRow {
            dataset,
            strategy,
            k: run.spec.k,
            fold: run.fold,
            cluster,
            n_traces,
            n_predictions: None,
            macro_acc_t: None,
            micro_acc: None,
            precision_wt: None,
            recall_wt: None,
            f1_wt: None,
            iterations: None,
            converged: None,
            status: "ok".into(),
        };
        let fold_run = match &run.outcome {
            Ok(r) => r,
            Err(e) => {
                rows.push(SummaryRow { status: format!("failed: {e}"), ..base("all".into(), 0) });
                continue;
            }
        };
        let w = &fold_run.evaluation.weighted;
        rows.push(SummaryRow {
            n_predictions: Some(fold_run.evaluation.pooled.n_predictions),
            macro_acc_t: Some(w.macro_acc_t),
            micro_acc: Some(w.micro_acc),
            precision_wt: Some(w.precision_wt),
            recall_wt: Some(w.recall_wt),
            f1_wt: Some(w.f1_wt),
            iterations: Some(fold_run.model.iterations),
            converged: Some(fold_run.model.converged),
            ..base("all".into(), fold_run.test_traces)
        });
        if run.spec.k > 1 {
            for c in &fold_run.evaluation.clusters {
                let mut row = base(c.cluster.to_string(), c.n_traces);
                if let Some(m) = &c.metrics {
                    row.n_predictions = Some(m.n_predictions);
                    row.macro_acc_t = Some(m.macro_acc_t);
                    row.micro_acc = Some(m.micro_acc);
                    row.precision_wt = Some(m.precision_wt);
                    row.recall_wt = Some(m.recall_wt);
                    row.f1_wt = Some(m.f1_wt);
                } else {
                    row.status = "empty".into();
                }
                rows.push(row);
            }
        }
    }
    rows
}

const SUMMARY_HEADER: &[&str] = &[
    "dataset", "strategy", "k", "fold", "cluster", "n_traces", "n_predictions", "macro_acc_t", "micro_acc",
    "precision_wt", "recall_wt", "f1_wt", "iterations", "converged", "status",
];
const AGGREGATE_HEADER: &[&str] = &["strategy", "k", "metric", "mean", "sd", "folds"];
const CI_HEADER: &[&str] = &["strategy_a", "strategy_b", "metric", "diff_mean", "diff_sd", "level", "lo", "hi", "significant"];

/// The header is written explicitly so that empty tables still carry it.
fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes the results bundle under `dir` and returns every file written,
/// in a fixed order.
///
/// Layout: `config.json`, `folds.json`, `summary.csv`, `aggregate.csv`,
/// `ci.csv`, and `models/`, `metrics/`, `figures/` per fold and strategy.
pub fn write_bundle(dir: &Path, results: &ExperimentResults) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for sub in ["models", "metrics", "figures"] {
        fs::create_dir_all(dir.join(sub))?;
    }

    let path = dir.join("config.json");
    write_json(&path, &results.config)?;
    written.push(path);
    let path = dir.join("folds.json");
    write_json(&path, &results.folds)?;
    written.push(path);

    for run in &results.runs {
        let Ok(fold_run) = &run.outcome else { continue };
        let stem = run_stem(run);
        let path = dir.join("models").join(format!("{stem}.json"));
        write_json(&path, &fold_run.model)?;
        written.push(path);

        let ev = &fold_run.evaluation;
        let metrics = MetricsFile {
            strategy: run.spec.strategy.name(),
            k: run.spec.k,
            fold: run.fold,
            weighted: &ev.weighted,
            pooled: &ev.pooled,
            clusters: &ev.clusters,
            heatmap: ev.pooled.heatmap(),
        };
        let path = dir.join("metrics").join(format!("{stem}.json"));
        write_json(&path, &metrics)?;
        written.push(path);

        for (c, chain) in fold_run.model.components.iter().enumerate() {
            let name = format!("{stem}_c{c}");
            let dot = chain.to_figure(results.config.edge_threshold, &results.config.figure).to_dot(&name);
            let path = dir.join("figures").join(format!("{name}.dot"));
            fs::write(&path, dot)?;
            written.push(path);
        }
    }

    let path = dir.join("summary.csv");
    write_csv(&path, SUMMARY_HEADER, summary_rows(results))?;
    written.push(path);

    let path = dir.join("aggregate.csv");
    write_csv(&path, AGGREGATE_HEADER, &results.aggregates)?;
    written.push(path);

    let path = dir.join("ci.csv");
    write_csv(
        &path,
        CI_HEADER,
        results.comparisons.iter().map(|c| CiRow {
            strategy_a: &c.strategy_a,
            strategy_b: &c.strategy_b,
            metric: &c.ci.metric,
            diff_mean: c.ci.diff_mean,
            diff_sd: c.ci.diff_sd,
            level: c.ci.level,
            lo: c.ci.lo,
            hi: c.ci.hi,
            significant: c.ci.significant,
        }),
    )?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::SUMMARY_HEADER;
    use crate::trace::Alphabet;

    #[test]
    fn bundle_layout_and_row_counts() {
        let mix = block_mixture(&Alphabet::canonical(), 2, 0.85, 8).unwrap();
        let spec = SyntheticSpec { mixture: mix, n_traces: 80, n_students: 10, min_len: 3, max_len: 12, length_law: LengthLaw::Uniform, seed: 8 };
        let data = generate_synthetic(&spec).unwrap().0;
        let folds = assign_folds(&data, 2, 1).unwrap();
        let config = ExperimentConfig {
            strategies: vec![StrategySpec::new(Strategy::Baseline, 1), StrategySpec::new(Strategy::KEm, 2)],
            n_folds: 2,
            ..ExperimentConfig::default()
        };
        let res = run_experiment(&data, &folds, &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_bundle(dir.path(), &res).unwrap();
        assert!(files.iter().all(|f| f.exists()));
        for name in ["summary.csv", "aggregate.csv", "ci.csv", "config.json", "folds.json"] {
            assert!(dir.path().join(name).exists(), "{name}");
        }
        assert!(dir.path().join("figures/fold0_k_em_c1.dot").exists());
        let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        let baseline_rows = summary.lines().filter(|l| l.contains(",baseline,")).count();
        assert_eq!(baseline_rows, 2);
        // two folds x (weighted row + two cluster rows)
        assert_eq!(summary.lines().filter(|l| l.contains(",k_em,")).count(), 6);
        let ci = std::fs::read_to_string(dir.path().join("ci.csv")).unwrap();
        assert_eq!(ci.lines().count(), 1 + Metric::ALL.len());
        let aggregate = std::fs::read_to_string(dir.path().join("aggregate.csv")).unwrap();
        assert!(aggregate.starts_with("strategy,k,metric,mean,sd,folds\n"));
        assert!(summary.starts_with(&(SUMMARY_HEADER.join(",") + "\n")));
        assert!(ci.starts_with("strategy_a,strategy_b,metric,diff_mean,diff_sd,level,lo,hi,significant"));
    }
}
