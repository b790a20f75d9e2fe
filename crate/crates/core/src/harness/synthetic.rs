use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, Geometric};
use serde::{Deserialize, Serialize};

use crate::chain::MarkovChain;
use crate::error::{Error, Result};
use crate::mixture::MixtureModel;
use crate::trace::{Alphabet, Dataset, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "law")]
pub enum LengthLaw {
    /// Every length in `min..=max` equally likely.
    Uniform,
    /// `min` plus a geometric number of extra events, capped at `max`.
    Geometric { p: f64 },
}

/// Parameters of a synthetic corpus drawn from a known mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub mixture: MixtureModel,
    pub n_traces: usize,
    /// Traces are dealt round-robin to this many students.
    pub n_students: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub length_law: LengthLaw,
    pub seed: u64,
}

struct ChainSampler {
    initial: WeightedIndex<f64>,
    rows: Vec<WeightedIndex<f64>>,
}

impl ChainSampler {
    fn new(chain: &MarkovChain) -> Result<Self> {
        let bad = |e| Error::Parameter(format!("cannot sample from chain: {e}"));
        Ok(Self {
            initial: WeightedIndex::new(chain.initial()).map_err(bad)?,
            rows: chain.transitions().iter().map(|r| WeightedIndex::new(r).map_err(bad)).collect::<Result<_>>()?,
        })
    }

    fn sample(&self, rng: &mut impl Rng, len: usize) -> Vec<usize> {
        let mut events = Vec::with_capacity(len);
        let mut current = self.initial.sample(rng);
        events.push(current);
        while events.len() < len {
            current = self.rows[current].sample(rng);
            events.push(current);
        }
        events
    }
}

/// Draws a corpus and the generating component of every trace.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Vec<usize>)> {
    if spec.min_len < 2 || spec.max_len < spec.min_len {
        return Err(Error::Parameter(format!("invalid length range {}..={}", spec.min_len, spec.max_len)));
    }
    if spec.n_students == 0 {
        return Err(Error::Parameter("at least one student is required".into()));
    }
    let geometric = match spec.length_law {
        LengthLaw::Geometric { p } => Some(Geometric::new(p).map_err(|e| Error::Parameter(format!("geometric length law: {e}")))?),
        LengthLaw::Uniform => None,
    };
    let mix = &spec.mixture;
    let pick = WeightedIndex::new(&mix.weights).map_err(|e| Error::Parameter(format!("mixture weights: {e}")))?;
    let samplers = mix.components.iter().map(ChainSampler::new).collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut traces = Vec::with_capacity(spec.n_traces);
    let mut labels = Vec::with_capacity(spec.n_traces);
    for i in 0..spec.n_traces {
        let component = pick.sample(&mut rng);
        let len = match geometric {
            None => rng.random_range(spec.min_len..=spec.max_len),
            Some(g) => (spec.min_len as u64).saturating_add(g.sample(&mut rng)).min(spec.max_len as u64) as usize,
        };
        let events = samplers[component].sample(&mut rng, len);
        traces.push(Trace::new(format!("s{:04}", i % spec.n_students), format!("t{i:05}"), events));
        labels.push(component);
    }
    Ok((Dataset::new(mix.alphabet.clone(), traces)?, labels))
}

/// Mixture whose component `c` keeps `stay` of every row's mass on its own
/// block of symbols `{s : s % k == c}`, with random shares inside and
/// outside the block. Weights are uniform.
pub fn block_mixture(alphabet: &Alphabet, k: usize, stay: f64, seed: u64) -> Result<MixtureModel> {
    let m = alphabet.len();
    if k == 0 || k > m {
        return Err(Error::Parameter(format!("block mixture needs 1 <= k <= {m}")));
    }
    if !(stay > 0.0 && stay <= 1.0) || (k == 1 && stay < 1.0) {
        return Err(Error::Parameter(format!("invalid in-block mass {stay}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut row = |c: usize| -> Vec<f64> {
        let draws: Vec<f64> = (0..m).map(|_| 0.5 + rng.sample::<f64, _>(Exp1)).collect();
        let inside: f64 = (0..m).filter(|s| s % k == c).map(|s| draws[s]).sum();
        let outside: f64 = (0..m).filter(|s| s % k != c).map(|s| draws[s]).sum();
        (0..m)
            .map(|s| if s % k == c { stay * draws[s] / inside } else { (1.0 - stay) * draws[s] / outside })
            .collect()
    };
    let components = (0..k)
        .map(|c| {
            let initial = row(c);
            let rows = (0..m).map(|_| row(c)).collect();
            MarkovChain::new(alphabet.clone(), initial, rows)
        })
        .collect::<Result<Vec<_>>>()?;
    MixtureModel::new(alphabet.clone(), vec![1.0 / k as f64; k], components)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(mixture: MixtureModel, n: usize, seed: u64) -> SyntheticSpec {
        SyntheticSpec { mixture, n_traces: n, n_students: 10, min_len: 2, max_len: 39, length_law: LengthLaw::Uniform, seed }
    }

    #[test]
    fn deterministic_chain_gives_identical_traces() {
        let ab = Alphabet::new(["A", "B"]).unwrap();
        let det = MarkovChain::new(ab, vec![1.0, 0.0], vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let mut s = spec(MixtureModel::single(det), 20, 1);
        s.min_len = 5;
        s.max_len = 5;
        let (data, labels) = generate_synthetic(&s).unwrap();
        assert!(data.traces().iter().all(|t| t.events == [0, 1, 0, 1, 0]));
        assert!(labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn component_counts_are_binomial() {
        let a = Alphabet::canonical();
        let mix = block_mixture(&a, 2, 0.8, 3).unwrap();
        let (_, labels) = generate_synthetic(&spec(mix, 10_000, 9)).unwrap();
        let ones = labels.iter().filter(|&&l| l == 1).count() as f64;
        let sigma = (10_000.0f64 * 0.25).sqrt();
        assert!((ones - 5000.0).abs() < 3.0 * sigma, "{ones}");
    }

    #[test]
    fn bigram_frequencies_converge() {
        let a = Alphabet::canonical();
        let chain = block_mixture(&a, 2, 0.7, 5).unwrap().components[0].clone();
        let mut s = spec(MixtureModel::single(chain.clone()), 1, 4);
        s.min_len = 100_000;
        s.max_len = 100_000;
        let (data, _) = generate_synthetic(&s).unwrap();
        let events = &data.traces()[0].events;
        let mut counts = vec![vec![0.0; 6]; 6];
        for w in events.windows(2) {
            counts[w[0]][w[1]] += 1.0;
        }
        for (i, row) in counts.iter().enumerate() {
            let total: f64 = row.iter().sum();
            for (j, c) in row.iter().enumerate() {
                assert!((c / total - chain.transition(i, j)).abs() < 0.01, "row {i} col {j}");
            }
        }
    }

    #[test]
    fn lengths_respect_bounds() {
        let a = Alphabet::canonical();
        let mix = block_mixture(&a, 3, 0.8, 1).unwrap();
        let mut s = spec(mix, 500, 2);
        s.length_law = LengthLaw::Geometric { p: 0.1 };
        s.min_len = 3;
        s.max_len = 20;
        let (data, _) = generate_synthetic(&s).unwrap();
        assert!(data.traces().iter().all(|t| (3..=20).contains(&t.len())));
        assert_eq!(data.students().len(), 10);
        s.min_len = 1;
        assert!(generate_synthetic(&s).is_err());
    }

    #[test]
    fn block_mixture_mass() {
        let a = Alphabet::canonical();
        let mix = block_mixture(&a, 3, 0.8, 7).unwrap();
        for (c, comp) in mix.components.iter().enumerate() {
            for row in comp.transitions() {
                let inside: f64 = (0..6).filter(|s| s % 3 == c).map(|s| row[s]).sum();
                assert!((inside - 0.8).abs() < 1e-12);
            }
        }
    }
}
