//! First-order Markov chains: weighted estimation, scoring, next-symbol
//! prediction and DOT figure export.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{argmax, ln_or_neg_inf};
use crate::trace::{Alphabet, Trace};

const STOCHASTIC_TOL: f64 = 1e-9;

/// Initial-state distribution plus row-stochastic transition matrix.
///
/// Log tables are cached next to the probabilities so scoring never calls
/// `ln` in the inner loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ChainRepr", into = "ChainRepr")]
pub struct MarkovChain {
    alphabet: Alphabet,
    initial: Vec<f64>,
    transitions: Vec<Vec<f64>>,
    support: Vec<f64>,
    fallback_rows: Vec<usize>,
    log_initial: Vec<f64>,
    log_transitions: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ChainRepr {
    alphabet: Alphabet,
    initial: Vec<f64>,
    transitions: Vec<Vec<f64>>,
    support: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    uniform_fallback_rows: Vec<usize>,
}

impl TryFrom<ChainRepr> for MarkovChain {
    type Error = Error;

    fn try_from(r: ChainRepr) -> Result<Self> {
        let mut chain = MarkovChain::with_support(r.alphabet, r.initial, r.transitions, r.support)?;
        chain.fallback_rows = r.uniform_fallback_rows;
        Ok(chain)
    }
}

impl From<MarkovChain> for ChainRepr {
    fn from(c: MarkovChain) -> Self {
        ChainRepr {
            alphabet: c.alphabet,
            initial: c.initial,
            transitions: c.transitions,
            support: c.support,
            uniform_fallback_rows: c.fallback_rows,
        }
    }
}

fn check_distribution(what: &str, p: &[f64], m: usize) -> Result<()> {
    if p.len() != m {
        return Err(Error::Parameter(format!("{what} has length {}, expected {m}", p.len())));
    }
    if p.iter().any(|&x| !(x.is_finite() && x >= 0.0)) {
        return Err(Error::Parameter(format!("{what} has a negative or non-finite entry")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::Parameter(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

impl MarkovChain {
    /// Builds a chain from explicit parameters, with uniform support.
    pub fn new(alphabet: Alphabet, initial: Vec<f64>, transitions: Vec<Vec<f64>>) -> Result<Self> {
        let m = alphabet.len();
        Self::with_support(alphabet, initial, transitions, vec![1.0 / m as f64; m])
    }

    pub fn with_support(
        alphabet: Alphabet,
        initial: Vec<f64>,
        transitions: Vec<Vec<f64>>,
        support: Vec<f64>,
    ) -> Result<Self> {
        let m = alphabet.len();
        check_distribution("initial distribution", &initial, m)?;
        check_distribution("support", &support, m)?;
        if transitions.len() != m {
            return Err(Error::Parameter(format!("transition matrix has {} rows, expected {m}", transitions.len())));
        }
        for (i, row) in transitions.iter().enumerate() {
            check_distribution(&format!("transition row {i}"), row, m)?;
        }
        let log_initial = initial.iter().map(|&p| ln_or_neg_inf(p)).collect();
        let log_transitions = transitions.iter().flatten().map(|&p| ln_or_neg_inf(p)).collect();
        Ok(Self { alphabet, initial, transitions, support, fallback_rows: Vec::new(), log_initial, log_transitions })
    }

    /// Uniform initial distribution and transitions.
    pub fn uniform(alphabet: Alphabet) -> Self {
        let m = alphabet.len();
        let u = 1.0 / m as f64;
        Self::new(alphabet, vec![u; m], vec![vec![u; m]; m]).expect("uniform chain is valid")
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn transitions(&self) -> &[Vec<f64>] {
        &self.transitions
    }

    pub fn transition(&self, from: usize, to: usize) -> f64 {
        self.transitions[from][to]
    }

    /// Share of each symbol among the events the chain was fitted on.
    pub fn support(&self) -> &[f64] {
        &self.support
    }

    /// Rows that had no outgoing bigrams under zero smoothing and were set to uniform.
    pub fn fallback_rows(&self) -> &[usize] {
        &self.fallback_rows
    }

    /// `ln P(events)`; the first symbol is scored only when `score_initial` is set.
    /// A zero-probability step yields `-inf`.
    pub fn log_likelihood(&self, events: &[usize], score_initial: bool) -> f64 {
        let m = self.alphabet.len();
        let mut ll = match (score_initial, events.first()) {
            (true, Some(&first)) => self.log_initial[first],
            _ => 0.0,
        };
        for w in events.windows(2) {
            ll += self.log_transitions[w[0] * m + w[1]];
        }
        ll
    }

    /// Most probable successor of `current`; ties go to the lowest index.
    pub fn predict_next(&self, current: usize) -> usize {
        argmax(&self.transitions[current])
    }

    /// Stationary distribution by power iteration from the uniform vector.
    pub fn stationary_distribution(&self) -> Vec<f64> {
        let m = self.alphabet.len();
        let mut pi = vec![1.0 / m as f64; m];
        for _ in 0..100_000 {
            let mut next = vec![0.0; m];
            for (i, row) in self.transitions.iter().enumerate() {
                for (j, &p) in row.iter().enumerate() {
                    next[j] += pi[i] * p;
                }
            }
            let delta: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
            pi = next;
            if delta < 1e-15 {
                break;
            }
        }
        pi
    }

    /// Nodes sized by support and edges for transitions strictly above
    /// `edge_threshold`.
    pub fn to_figure(&self, edge_threshold: f64, style: &FigureStyle) -> Figure {
        let canonical = self.alphabet.is_canonical();
        let nodes = self
            .alphabet
            .symbols()
            .iter()
            .enumerate()
            .map(|(i, label)| FigureNode {
                label: label.clone(),
                support: self.support[i],
                width: style.node_base + style.node_scale * self.support[i],
                position: canonical.then(|| canonical_position(i)),
            })
            .collect();
        let mut edges = Vec::new();
        for (i, row) in self.transitions.iter().enumerate() {
            for (j, &p) in row.iter().enumerate() {
                if p > edge_threshold && p > 0.0 {
                    edges.push(FigureEdge { from: i, to: j, probability: p, penwidth: style.edge_base + style.edge_scale * p });
                }
            }
        }
        Figure { nodes, edges }
    }
}

/// Accumulates weighted first-symbol, bigram and symbol counts.
#[derive(Debug, Clone)]
struct ChainCounts {
    m: usize,
    initial: Vec<f64>,
    bigrams: Vec<f64>,
    symbols: Vec<f64>,
    traces: f64,
}

impl ChainCounts {
    fn new(m: usize) -> Self {
        Self { m, initial: vec![0.0; m], bigrams: vec![0.0; m * m], symbols: vec![0.0; m], traces: 0.0 }
    }

    fn add(&mut self, events: &[usize], weight: f64) {
        let Some(&first) = events.first() else { return };
        self.traces += weight;
        self.initial[first] += weight;
        for &e in events {
            self.symbols[e] += weight;
        }
        for w in events.windows(2) {
            self.bigrams[w[0] * self.m + w[1]] += weight;
        }
    }

    fn finish(self, alphabet: &Alphabet, alpha: f64) -> Result<MarkovChain> {
        let m = self.m;
        let ma = m as f64 * alpha;
        let initial: Vec<f64> = self.initial.iter().map(|&c| (alpha + c) / (ma + self.traces)).collect();
        let mut fallback_rows = Vec::new();
        let transitions = (0..m)
            .map(|i| {
                let row = &self.bigrams[i * m..(i + 1) * m];
                let out: f64 = row.iter().sum();
                if ma + out > 0.0 {
                    row.iter().map(|&c| (alpha + c) / (ma + out)).collect()
                } else {
                    fallback_rows.push(i);
                    vec![1.0 / m as f64; m]
                }
            })
            .collect();
        let total: f64 = self.symbols.iter().sum();
        let support = self.symbols.iter().map(|&c| c / total).collect();
        let mut chain = MarkovChain::with_support(alphabet.clone(), initial, transitions, support)?;
        chain.fallback_rows = fallback_rows;
        Ok(chain)
    }
}

/// Maximum-likelihood chain with additive smoothing `alpha`.
///
/// `weights`, when given, scale each trace's contribution to every count.
pub fn fit_chain(alphabet: &Alphabet, traces: &[Trace], weights: Option<&[f64]>, alpha: f64) -> Result<MarkovChain> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::Parameter(format!("smoothing pseudocount must be a finite value >= 0, got {alpha}")));
    }
    if let Some(w) = weights {
        if w.len() != traces.len() {
            return Err(Error::Parameter(format!("{} weights for {} traces", w.len(), traces.len())));
        }
        if w.iter().any(|&x| !(x.is_finite() && x >= 0.0)) {
            return Err(Error::Parameter("trace weights must be finite and nonnegative".into()));
        }
    }
    let m = alphabet.len();
    let mut counts = ChainCounts::new(m);
    for (i, t) in traces.iter().enumerate() {
        if let Some(&bad) = t.events.iter().find(|&&e| e >= m) {
            return Err(Error::AlphabetMismatch(format!("trace `{}` has event {bad} outside alphabet of size {m}", t.trace_id)));
        }
        counts.add(&t.events, weights.map_or(1.0, |w| w[i]));
    }
    if counts.traces.is_nan() || counts.traces <= 0.0 || counts.symbols.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Estimation("no trace with positive weight to fit a chain on".into()));
    }
    counts.finish(alphabet, alpha)
}

/// Constants for figure export.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FigureStyle {
    pub node_base: f64,
    pub node_scale: f64,
    pub edge_base: f64,
    pub edge_scale: f64,
}

impl Default for FigureStyle {
    fn default() -> Self {
        Self { node_base: 0.3, node_scale: 2.0, edge_base: 1.0, edge_scale: 6.0 }
    }
}

/// Edges at or below this probability are hidden by default.
pub const DEFAULT_EDGE_THRESHOLD: f64 = 0.32;

#[derive(Debug, Clone, PartialEq)]
pub struct FigureNode {
    pub label: String,
    pub support: f64,
    pub width: f64,
    /// Fixed layout coordinates, set for the canonical alphabet only.
    pub position: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FigureEdge {
    pub from: usize,
    pub to: usize,
    pub probability: f64,
    pub penwidth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    pub nodes: Vec<FigureNode>,
    pub edges: Vec<FigureEdge>,
}

/// Engagement states (FG, LE) on the left, knowledge states (HK, LK) in the
/// middle, disengagement states (KG, NI) on the right; low confidence on top.
fn canonical_position(index: usize) -> (f64, f64) {
    const LEFT: f64 = 0.0;
    const MIDDLE: f64 = 2.5;
    const RIGHT: f64 = 5.0;
    const UPPER: f64 = 2.5;
    const LOWER: f64 = 0.0;
    match index {
        0 => (MIDDLE, LOWER), // HK
        1 => (MIDDLE, UPPER), // LK
        2 => (LEFT, LOWER),   // FG
        3 => (LEFT, UPPER),   // LE
        4 => (RIGHT, LOWER),  // KG
        _ => (RIGHT, UPPER),  // NI
    }
}

fn escape(label: &str) -> String {
    label.replace('\\', "\\\\").replace('"', "\\\"")
}

impl Figure {
    /// Graphviz DOT text. Coordinates, when present, are pinned for `neato`.
    pub fn to_dot(&self, name: &str) -> String {
        let mut out = String::new();
        let pinned = self.nodes.iter().all(|n| n.position.is_some());
        let _ = writeln!(out, "digraph \"{}\" {{", escape(name));
        if pinned {
            out.push_str("  layout=neato;\n");
        }
        out.push_str("  node [shape=circle, fixedsize=true];\n");
        for n in &self.nodes {
            let _ = write!(
                out,
                "  \"{}\" [label=\"{}\\n{:.1}%\", width={:.4}",
                escape(&n.label),
                escape(&n.label),
                100.0 * n.support,
                n.width
            );
            if let Some((x, y)) = n.position {
                let _ = write!(out, ", pos=\"{x:.1},{y:.1}!\"");
            }
            out.push_str("];\n");
        }
        for e in &self.edges {
            let _ = writeln!(
                out,
                "  \"{}\" -> \"{}\" [label=\"{:.0}%\", penwidth={:.4}];",
                escape(&self.nodes[e.from].label),
                escape(&self.nodes[e.to].label),
                100.0 * e.probability,
                e.penwidth
            );
        }
        out.push_str("}\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ab() -> Alphabet {
        Alphabet::new(["A", "B"]).unwrap()
    }

    fn t(events: &[usize]) -> Trace {
        Trace::new("s", format!("{events:?}"), events.to_vec())
    }

    #[test]
    fn fit_two_traces_unsmoothed() {
        let c = fit_chain(&ab(), &[t(&[0, 0]), t(&[0, 1])], None, 0.0).unwrap();
        assert_eq!(c.initial(), [1.0, 0.0]);
        assert_eq!(c.transitions()[0], [0.5, 0.5]);
        assert_eq!(c.transitions()[1], [0.5, 0.5]);
        assert_eq!(c.fallback_rows(), [1]);
        assert_eq!(c.support(), [0.75, 0.25]);
    }

    #[test]
    fn fit_single_bigram_type() {
        let c = fit_chain(&ab(), &[t(&[0, 0, 0])], None, 0.0).unwrap();
        assert_eq!(c.transitions()[0], [1.0, 0.0]);
    }

    #[test]
    fn fit_laplace() {
        let c = fit_chain(&ab(), &[t(&[0, 0, 0])], None, 1.0).unwrap();
        assert_eq!(c.transitions()[0], [0.75, 0.25]);
        assert!(c.transitions().iter().flatten().all(|&p| p > 0.0));
        assert!(c.fallback_rows().is_empty());
    }

    #[test]
    fn weighted_fit_matches_duplication() {
        let traces = [t(&[0, 1, 1]), t(&[1, 0])];
        let weighted = fit_chain(&ab(), &traces, Some(&[2.0, 1.0]), 0.5).unwrap();
        let dup = [t(&[0, 1, 1]), Trace::new("s", "dup", vec![0, 1, 1]), t(&[1, 0])];
        let plain = fit_chain(&ab(), &dup, None, 0.5).unwrap();
        for (a, b) in weighted.transitions().iter().flatten().zip(plain.transitions().iter().flatten()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(fit_chain(&ab(), &[], None, 1.0), Err(Error::Estimation(_))));
        assert!(matches!(fit_chain(&ab(), &[t(&[0, 1])], Some(&[0.0]), 1.0), Err(Error::Estimation(_))));
        assert!(fit_chain(&ab(), &[t(&[0, 1])], None, -1.0).is_err());
        assert!(fit_chain(&ab(), &[t(&[0, 1])], Some(&[1.0, 2.0]), 1.0).is_err());
    }

    #[test]
    fn log_likelihood_examples() {
        let det = MarkovChain::new(ab(), vec![1.0, 0.0], vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(det.log_likelihood(&[0, 1, 0, 1], true), 0.0);

        let u = MarkovChain::uniform(Alphabet::canonical());
        assert!((u.log_likelihood(&[0, 3, 2, 5], true) - (-4.0 * 6f64.ln())).abs() < 1e-12);
        assert!((u.log_likelihood(&[0, 3, 2, 5], true) + 7.1670).abs() < 1e-4);

        let c = fit_chain(&ab(), &[t(&[0, 0]), t(&[0, 1])], None, 0.0).unwrap();
        assert!((c.log_likelihood(&[0, 1], true) - 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(c.log_likelihood(&[1, 0], true), f64::NEG_INFINITY);
        assert!((c.log_likelihood(&[1, 0], false) - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn predict_next_examples() {
        let six = Alphabet::canonical();
        let mut rows = vec![vec![1.0 / 6.0; 6]; 6];
        rows[0] = vec![0.1, 0.7, 0.2, 0.0, 0.0, 0.0];
        rows[1] = vec![0.5, 0.5, 0.0, 0.0, 0.0, 0.0];
        let c = MarkovChain::new(six.clone(), vec![1.0 / 6.0; 6], rows).unwrap();
        assert_eq!(c.predict_next(0), 1);
        assert_eq!(c.predict_next(1), 0);

        let fitted = fit_chain(&ab(), &[t(&[0, 0]), Trace::new("s", "x", vec![0, 0]), t(&[0, 1])], None, 0.0).unwrap();
        assert!((fitted.transition(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(fitted.predict_next(0), 0);
    }

    #[test]
    fn figure_threshold_rules() {
        let six = Alphabet::canonical();
        let mut rows = vec![vec![1.0 / 6.0; 6]; 6];
        rows[0] = vec![0.30, 0.2, 0.2, 0.1, 0.1, 0.1];
        rows[2] = vec![0.05, 0.05, 0.71, 0.09, 0.05, 0.05];
        let c = MarkovChain::new(six, vec![1.0 / 6.0; 6], rows).unwrap();
        let style = FigureStyle::default();

        let fig = c.to_figure(DEFAULT_EDGE_THRESHOLD, &style);
        assert!(fig.edges.iter().all(|e| e.from != 0));
        let fg = fig.edges.iter().find(|e| e.from == 2 && e.to == 2).unwrap();
        assert!((fg.penwidth - (1.0 + 6.0 * 0.71)).abs() < 1e-12);
        assert_eq!(fig.edges.len(), 1);

        let all = c.to_figure(0.0, &style);
        let positive = c.transitions().iter().flatten().filter(|&&p| p > 0.0).count();
        assert_eq!(all.edges.len(), positive);
        assert_eq!(positive, 36);
    }

    #[test]
    fn figure_layout_and_dot() {
        let c = MarkovChain::uniform(Alphabet::canonical());
        let fig = c.to_figure(0.5, &FigureStyle::default());
        let pos = |s: &str| fig.nodes.iter().find(|n| n.label == s).unwrap().position.unwrap();
        assert!(pos("FG").0 < pos("HK").0 && pos("HK").0 < pos("KG").0);
        assert!(pos("LE").0 < pos("LK").0 && pos("LK").0 < pos("NI").0);
        for (low, high) in [("LE", "FG"), ("LK", "HK"), ("NI", "KG")] {
            assert!(pos(low).1 > pos(high).1);
        }
        let dot = fig.to_dot("cluster 1");
        assert!(dot.starts_with("digraph \"cluster 1\" {"));
        assert!(dot.contains("width=0.6333"));
        assert!(!dot.contains("->"));

        let generic = MarkovChain::uniform(ab()).to_figure(0.0, &FigureStyle::default());
        assert!(generic.nodes.iter().all(|n| n.position.is_none()));
        assert!(!generic.to_dot("g").contains("neato"));
    }

    #[test]
    fn json_round_trip() {
        let c = fit_chain(&ab(), &[t(&[0, 0]), t(&[0, 1])], None, 0.0).unwrap();
        let json = serde_json::to_string(&c).unwrap();
        assert!(json.contains("\"alphabet\":[\"A\",\"B\"]"));
        let back: MarkovChain = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        let bad = r#"{"alphabet":["A","B"],"initial":[0.5,0.6],"transitions":[[1,0],[0,1]],"support":[0.5,0.5]}"#;
        assert!(serde_json::from_str::<MarkovChain>(bad).is_err());
    }

    #[test]
    fn stationary_of_two_state_chain() {
        // pi = (b, a)/(a+b) for rows (1-a, a), (b, 1-b)
        let c = MarkovChain::new(ab(), vec![0.5, 0.5], vec![vec![0.9, 0.1], vec![0.3, 0.7]]).unwrap();
        let pi = c.stationary_distribution();
        assert!((pi[0] - 0.75).abs() < 1e-12);
        assert!((pi[1] - 0.25).abs() < 1e-12);
    }
}
