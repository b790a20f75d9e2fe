use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use seqmix::chain::{FigureStyle, DEFAULT_EDGE_THRESHOLD};
use seqmix::evaluation::{label_trace, ConfusionHeatmap};
use seqmix::harness::{
    assign_folds, block_mixture, evaluate_model, generate_synthetic, run_experiment, train_strategy, write_bundle,
    ClusterEvaluation, LengthLaw, Metric, MetricSummary, Strategy, StrategySpec, SyntheticSpec,
};
use seqmix::kmeans::{suggest_k, wcss_curve};
use seqmix::mixture::{select_k_by_ic, InitStrategy, MixtureModel, SampleSize};
use seqmix::trace::{
    build_traces_with, read_raw_log, read_trace_file, write_trace_file, Alphabet, Dataset, IngestOptions,
    proportional_counts,
};

use crate::config::{config_path_or_default, experiment_config, ExperimentOverrides, FileConfig, GlobalOpts, Settings};
use crate::manifest::{sidecar_path, RunManifest};

/// What a command reports back to `main`: `Complete` maps to exit code 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Complete,
    /// Some requested artifacts could not be produced.
    Partial,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_traces(path: &Path, alphabet: Option<&Alphabet>) -> Result<Dataset> {
    read_trace_file(open(path)?, alphabet).with_context(|| format!("reading traces from {}", path.display()))
}

fn print_distribution(data: &Dataset) {
    let dist = data.symbol_distribution();
    let cells: Vec<String> =
        data.alphabet().symbols().iter().zip(&dist).map(|(s, p)| format!("{s} {p:.2}%")).collect();
    println!("symbol distribution: {}", cells.join(", "));
}

// ---------------------------------------------------------------- ingest

pub struct IngestArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    pub min_feedback_seconds: f64,
}

pub fn ingest(global: &GlobalOpts, args: &IngestArgs) -> Result<Outcome> {
    let options = IngestOptions { min_feedback_seconds: args.min_feedback_seconds };
    #[derive(Serialize)]
    struct Echo<'a> {
        input: &'a Path,
        output: &'a Path,
        min_feedback_seconds: f64,
    }
    let mut manifest = RunManifest::start(
        "ingest",
        global.seed.unwrap_or(0),
        Echo { input: &args.input, output: &args.output, min_feedback_seconds: args.min_feedback_seconds },
    )?;
    manifest.input(&args.input)?;
    let actions = read_raw_log(open(&args.input)?).with_context(|| format!("in {}", args.input.display()))?;
    let ingested = build_traces_with(&actions, &options)?;
    let data = &ingested.dataset;

    let mut w = create(&args.output)?;
    write_trace_file(data, &mut w)?;
    w.flush()?;

    println!(
        "{} actions -> {} traces ({} events); {} sessions dropped for having fewer than two actions",
        actions.len(),
        data.len(),
        data.event_count(),
        ingested.dropped
    );
    if data.is_empty() {
        manifest.warn("no session has two or more actions; the trace file is empty");
    } else {
        print_distribution(data);
    }
    manifest.outputs([&args.output])?;
    manifest.finish(&sidecar_path(&args.output))?;
    Ok(Outcome::Complete)
}

// ---------------------------------------------------------------- select-k

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectMethod {
    /// BIC and AIC of fitted mixtures.
    Ic,
    /// Majority vote of K-means validity indices.
    Indices,
    /// K-means within-cluster sum of squares per K (elbow graph).
    Wcss,
}

pub struct SelectArgs {
    pub traces: PathBuf,
    pub method: SelectMethod,
    pub k_min: Option<usize>,
    pub k_max: usize,
    pub strategy: InitStrategy,
    pub sample_size: SampleSize,
    pub output: PathBuf,
}

/// The K after which the WCSS curve bends most sharply (largest second
/// difference); `None` with fewer than three points.
fn elbow(points: &[(usize, f64)]) -> Option<usize> {
    points
        .windows(3)
        .map(|w| (w[1].0, (w[0].1 - w[1].1) - (w[1].1 - w[2].1)))
        .reduce(|best, c| if c.1 > best.1 { c } else { best })
        .map(|(k, _)| k)
}

pub fn select_k(global: &GlobalOpts, args: &SelectArgs) -> Result<Outcome> {
    let settings = Settings::resolve(global, &FileConfig::default())?;
    let k_min = args.k_min.unwrap_or(if args.method == SelectMethod::Ic { 1 } else { 2 });
    if k_min == 0 || args.k_max < k_min {
        bail!("invalid k range {k_min}..={}", args.k_max);
    }
    let ks: Vec<usize> = (k_min..=args.k_max).collect();
    #[derive(Serialize)]
    struct Echo<'a> {
        settings: &'a Settings,
        method: SelectMethod,
        k_range: &'a [usize],
        strategy: InitStrategy,
        sample_size: SampleSize,
    }
    let mut manifest = RunManifest::start(
        "select-k",
        settings.seed,
        Echo { settings: &settings, method: args.method, k_range: &ks, strategy: args.strategy, sample_size: args.sample_size },
    )?;
    manifest.input(&args.traces)?;
    let data = load_traces(&args.traces, None)?;
    if data.is_empty() {
        bail!("{} contains no traces", args.traces.display());
    }
    let features: Vec<Vec<f64>> = data.traces().iter().map(|t| proportional_counts(t, data.alphabet().len())).collect();

    let report = match args.method {
        SelectMethod::Ic => {
            let sel = select_k_by_ic(&data, &ks, args.strategy, &settings.fit, args.sample_size, settings.seed)?;
            println!("{:>3} {:>14} {:>14} {:>14} {:>6}", "k", "bic", "aic", "loglik", "iters");
            for r in &sel.table {
                println!("{:>3} {:>14.3} {:>14.3} {:>14.3} {:>6}", r.k, r.bic, r.aic, r.loglik, r.iterations);
            }
            println!("BIC picks K = {}, AIC picks K = {}; recommendation: {}", sel.k_bic, sel.k_aic, sel.recommendation());
            serde_json::json!({
                "method": "ic",
                "strategy": args.strategy,
                "sample_size": args.sample_size,
                "k_bic": sel.k_bic,
                "k_aic": sel.k_aic,
                "range": sel.range(),
                "recommendation": sel.recommendation(),
                "table": sel.table,
            })
        }
        SelectMethod::Indices => {
            let s = suggest_k(&features, &ks, &settings.fit.kmeans)?;
            for v in &s.votes {
                let vote = v.vote.map_or_else(|| "-".to_owned(), |k| k.to_string());
                println!("{:<20} votes K = {vote}", format!("{:?}", v.index));
            }
            println!("recommendation: K = {}", s.k_best);
            serde_json::json!({
                "method": "indices",
                "k_best": s.k_best,
                "recommendation": format!("K = {}", s.k_best),
                "votes": s.votes,
            })
        }
        SelectMethod::Wcss => {
            let curve = wcss_curve(&features, &ks, &settings.fit.kmeans)?;
            for (k, w) in &curve.points {
                println!("{k:>3} {w:>14.6}");
            }
            for (a, b) in &curve.violations {
                manifest.warn(format!("WCSS rises from K = {a} to K = {b}; more restarts may be needed"));
            }
            let elbow = elbow(&curve.points);
            if let Some(k) = elbow {
                println!("sharpest bend at K = {k}");
            }
            serde_json::json!({
                "method": "wcss",
                "points": curve.points,
                "violations": curve.violations,
                "elbow": elbow,
            })
        }
    };
    write_json(&args.output, &report)?;
    manifest.outputs([&args.output])?;
    manifest.finish(&sidecar_path(&args.output))?;
    Ok(Outcome::Complete)
}

// ---------------------------------------------------------------- train

pub struct TrainArgs {
    pub traces: PathBuf,
    pub strategy: Strategy,
    pub k: usize,
    pub out_dir: PathBuf,
    pub edge_threshold: f64,
}

pub fn train(global: &GlobalOpts, args: &TrainArgs) -> Result<Outcome> {
    let settings = Settings::resolve(global, &FileConfig::default())?;
    let spec = StrategySpec::new(args.strategy, args.k);
    if spec.k == 0 {
        bail!("k must be at least 1");
    }
    #[derive(Serialize)]
    struct Echo<'a> {
        settings: &'a Settings,
        strategy: String,
        edge_threshold: f64,
        figure: FigureStyle,
    }
    let style = FigureStyle::default();
    let mut manifest = RunManifest::start(
        "train",
        settings.seed,
        Echo { settings: &settings, strategy: spec.to_string(), edge_threshold: args.edge_threshold, figure: style },
    )?;
    manifest.input(&args.traces)?;
    let data = load_traces(&args.traces, None)?;
    let model = train_strategy(&data, &spec, &settings.fit, settings.seed)?;

    fs::create_dir_all(args.out_dir.join("figures"))?;
    let mut written = Vec::new();
    let model_path = args.out_dir.join("model.json");
    write_json(&model_path, &model)?;
    written.push(model_path);
    for (j, chain) in model.components.iter().enumerate() {
        let name = format!("component{j}");
        let path = args.out_dir.join("figures").join(format!("{name}.dot"));
        fs::write(&path, chain.to_figure(args.edge_threshold, &style).to_dot(&name))?;
        written.push(path);
    }

    println!(
        "{spec}: {} traces, log-likelihood {:.4}, {} iterations, weights [{}]",
        data.len(),
        model.train_log_likelihood,
        model.iterations,
        model.weights.iter().map(|w| format!("{w:.4}")).collect::<Vec<_>>().join(", ")
    );
    if spec.strategy != Strategy::Baseline && !model.converged {
        manifest.warn(format!(
            "EM did not converge: converged=false after {} iterations (tol {:e})",
            model.iterations, settings.fit.em.tol
        ));
    }
    if model.reseeded > 0 {
        manifest.warn(format!("{} degenerate component(s) were re-seeded during EM", model.reseeded));
    }
    manifest.outputs(&written)?;
    manifest.finish(&args.out_dir.join("manifest.json"))?;
    Ok(Outcome::Complete)
}

// ---------------------------------------------------------------- evaluate

pub struct EvaluateArgs {
    pub model: PathBuf,
    pub traces: PathBuf,
    pub output: PathBuf,
    pub labels: Option<PathBuf>,
}

#[derive(Serialize)]
struct EvaluationFile<'a> {
    n_traces: usize,
    weighted: &'a MetricSummary,
    pooled: &'a seqmix::evaluation::MetricsReport,
    clusters: &'a [ClusterEvaluation],
    heatmap: ConfusionHeatmap,
}

pub fn evaluate(global: &GlobalOpts, args: &EvaluateArgs) -> Result<Outcome> {
    let settings = Settings::resolve(global, &FileConfig::default())?;
    let mut manifest = RunManifest::start("evaluate", settings.seed, &settings)?;
    manifest.input(&args.model)?;
    manifest.input(&args.traces)?;
    let model: MixtureModel = serde_json::from_reader(open(&args.model)?)
        .with_context(|| format!("reading model {}", args.model.display()))?;
    let data = load_traces(&args.traces, Some(&model.alphabet)).context("test traces do not match the model alphabet")?;
    if data.is_empty() {
        bail!("{} contains no traces", args.traces.display());
    }
    let score_initial = settings.fit.em.score_initial;
    let ev = evaluate_model(&model, &data, score_initial, settings.denominator)?;
    write_json(
        &args.output,
        &EvaluationFile {
            n_traces: data.len(),
            weighted: &ev.weighted,
            pooled: &ev.pooled,
            clusters: &ev.clusters,
            heatmap: ev.pooled.heatmap(),
        },
    )?;
    let mut written = vec![args.output.clone()];
    if let Some(path) = &args.labels {
        let mut w = create(path)?;
        writeln!(w, "trace,student,cluster,posterior")?;
        for t in data.traces() {
            let l = label_trace(&model, t, score_initial);
            writeln!(w, "{},{},{},{}", t.trace_id, t.student_id, l.cluster, l.posterior[l.cluster])?;
        }
        w.flush()?;
        written.push(path.clone());
    }

    let w = &ev.weighted;
    println!(
        "{} traces, {} predictions: macro_acc_t {:.2}%, micro_acc {:.2}%, precision_wt {:.2}%, recall_wt {:.2}%, f1_wt {:.2}%",
        data.len(),
        ev.pooled.n_predictions,
        w.macro_acc_t,
        w.micro_acc,
        w.precision_wt,
        w.recall_wt,
        w.f1_wt
    );
    manifest.outputs(&written)?;
    manifest.finish(&sidecar_path(&args.output))?;
    Ok(Outcome::Complete)
}

// ---------------------------------------------------------------- experiment

pub struct ExperimentArgs {
    pub traces: PathBuf,
    pub config: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub overrides: ExperimentOverrides,
}

pub fn experiment(global: &GlobalOpts, args: &ExperimentArgs) -> Result<Outcome> {
    let file = config_path_or_default(args.config.as_ref())?;
    let settings = Settings::resolve(global, &file)?;
    let config = experiment_config(&settings, &file, &args.overrides, &args.traces)?;
    let mut manifest = RunManifest::start("experiment", config.seed, &config)?;
    manifest.input(&args.traces)?;
    if let Some(c) = &args.config {
        manifest.input(c)?;
    }
    let data = load_traces(&args.traces, None)?;
    let folds = assign_folds(&data, config.n_folds, config.seed)?;
    let results = run_experiment(&data, &folds, &config)?;
    fs::create_dir_all(&args.out_dir)?;
    let written = write_bundle(&args.out_dir, &results)?;

    println!("{} traces, {} students, {} folds {:?}", data.len(), data.students().len(), folds.n_folds, folds.sizes());
    println!("{:<10} {:>3} {:>12} {:>12} {:>12} {:>12} {:>12}", "strategy", "k", "macro_acc_t", "micro_acc", "precision", "recall", "f1");
    for spec in &config.strategies {
        let mean = |m: Metric| {
            results
                .aggregates
                .iter()
                .find(|a| a.strategy == spec.strategy.name() && a.metric == m.name())
                .and_then(|a| a.mean)
                .map_or_else(|| "-".to_owned(), |v| format!("{v:.2}"))
        };
        println!(
            "{:<10} {:>3} {:>12} {:>12} {:>12} {:>12} {:>12}",
            spec.strategy.name(),
            spec.k,
            mean(Metric::MacroAccT),
            mean(Metric::MicroAcc),
            mean(Metric::PrecisionWt),
            mean(Metric::RecallWt),
            mean(Metric::F1Wt)
        );
    }
    for c in results.comparisons.iter().filter(|c| c.ci.significant && c.ci.metric == Metric::MicroAcc.name()) {
        println!(
            "{} vs {}: micro_acc difference {:.2} [{:.2}, {:.2}] at {:.0}%",
            c.strategy_a,
            c.strategy_b,
            c.ci.diff_mean,
            c.ci.lo,
            c.ci.hi,
            c.ci.level * 100.0
        );
    }
    for note in &results.notes {
        manifest.warn(note.clone());
    }
    for run in results.runs.iter().filter(|r| r.outcome.as_ref().is_ok_and(|f| !f.model.converged)) {
        manifest.warn(format!("{} fold {}: EM did not converge (converged=false)", run.spec, run.fold));
    }
    let failures: Vec<String> = results.failures().map(|(r, e)| format!("{} fold {} failed: {e}", r.spec, r.fold)).collect();
    for f in &failures {
        manifest.warn(f.clone());
    }
    manifest.outputs(&written)?;
    manifest.finish(&args.out_dir.join("manifest.json"))?;
    Ok(if failures.is_empty() { Outcome::Complete } else { Outcome::Partial })
}

// ---------------------------------------------------------------- synth-gen

pub struct SynthArgs {
    pub spec: Option<PathBuf>,
    pub k: usize,
    pub alphabet_size: Option<usize>,
    pub stay: f64,
    pub n_traces: usize,
    pub students: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub geometric: Option<f64>,
    pub output: PathBuf,
    pub labels: Option<PathBuf>,
    pub truth: Option<PathBuf>,
}

pub fn synth_gen(global: &GlobalOpts, args: &SynthArgs) -> Result<Outcome> {
    let seed = global.seed.unwrap_or(0);
    let spec = match &args.spec {
        Some(path) => serde_json::from_reader::<_, SyntheticSpec>(open(path)?)
            .with_context(|| format!("reading synthetic spec {}", path.display()))?,
        None => {
            let alphabet = match args.alphabet_size {
                Some(m) => Alphabet::numbered(m)?,
                None => Alphabet::canonical(),
            };
            SyntheticSpec {
                mixture: block_mixture(&alphabet, args.k, args.stay, seed)?,
                n_traces: args.n_traces,
                n_students: args.students,
                min_len: args.min_len,
                max_len: args.max_len,
                length_law: args.geometric.map_or(LengthLaw::Uniform, |p| LengthLaw::Geometric { p }),
                seed,
            }
        }
    };
    let mut manifest = RunManifest::start("synth-gen", spec.seed, &spec)?;
    if let Some(p) = &args.spec {
        manifest.input(p)?;
    }
    let (data, labels) = generate_synthetic(&spec)?;
    let mut w = create(&args.output)?;
    write_trace_file(&data, &mut w)?;
    w.flush()?;
    let mut written = vec![args.output.clone()];
    if let Some(path) = &args.labels {
        let mut w = create(path)?;
        writeln!(w, "trace,component")?;
        for (t, l) in data.traces().iter().zip(&labels) {
            writeln!(w, "{},{l}", t.trace_id)?;
        }
        w.flush()?;
        written.push(path.clone());
    }
    if let Some(path) = &args.truth {
        write_json(path, &spec.mixture)?;
        written.push(path.clone());
    }
    println!("{} traces ({} events) from a {}-component mixture", data.len(), data.event_count(), spec.mixture.k());
    manifest.outputs(&written)?;
    manifest.finish(&sidecar_path(&args.output))?;
    Ok(Outcome::Complete)
}

pub const DEFAULT_THRESHOLD: f64 = DEFAULT_EDGE_THRESHOLD;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elbow_finds_the_bend() {
        let pts = [(1, 100.0), (2, 40.0), (3, 5.0), (4, 4.0), (5, 3.5)];
        assert_eq!(elbow(&pts), Some(3));
        assert_eq!(elbow(&pts[..2]), None);
    }
}
