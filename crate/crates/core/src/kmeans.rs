//! Lloyd's K-means with random restarts, elbow curves and a small
//! cluster-validity vote for choosing K.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { restarts: 25, max_iters: 15, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub wcss: f64,
    pub iterations_used: usize,
    /// Assignments stopped changing before `max_iters`.
    pub converged: bool,
    /// Which restart produced this result.
    pub restart: usize,
    /// WCSS after every iteration of the winning restart.
    pub wcss_history: Vec<f64>,
}

impl KMeansResult {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_distance(point, centroid);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

fn mean_of(features: &[Vec<f64>], assignment: &[usize], cluster: usize, dim: usize) -> Vec<f64> {
    let mut sum = vec![0.0; dim];
    let mut n = 0usize;
    for (p, _) in features.iter().zip(assignment).filter(|(_, &a)| a == cluster) {
        for (s, x) in sum.iter_mut().zip(p) {
            *s += x;
        }
        n += 1;
    }
    sum.iter_mut().for_each(|s| *s /= n as f64);
    sum
}

pub fn wcss(features: &[Vec<f64>], assignment: &[usize], centroids: &[Vec<f64>]) -> f64 {
    features.iter().zip(assignment).map(|(p, &a)| squared_distance(p, &centroids[a])).sum()
}

/// Indices of the first occurrence of every distinct vector.
fn distinct_indices(features: &[Vec<f64>]) -> Vec<usize> {
    let mut seen = HashSet::new();
    (0..features.len())
        .filter(|&i| seen.insert(features[i].iter().map(|x| x.to_bits()).collect::<Vec<_>>()))
        .collect()
}

fn validate(features: &[Vec<f64>], k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    if let Some(first) = features.first() {
        if features.iter().any(|f| f.len() != first.len()) {
            return Err(Error::Parameter("feature vectors have unequal lengths".into()));
        }
    }
    let distinct = distinct_indices(features);
    if k > distinct.len() {
        return Err(Error::Parameter(format!("k = {k} exceeds the {} distinct feature vectors", distinct.len())));
    }
    Ok(distinct)
}

fn lloyd(features: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iters: usize) -> (Vec<Vec<f64>>, Vec<usize>, usize, bool, Vec<f64>) {
    let k = centroids.len();
    let dim = features[0].len();
    let mut assignment: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    for iter in 1..=max_iters {
        let next: Vec<usize> = features.iter().map(|p| nearest(p, &centroids)).collect();
        if next == assignment {
            converged = true;
            break;
        }
        assignment = next;
        for (c, centroid) in centroids.iter_mut().enumerate() {
            if assignment.contains(&c) {
                *centroid = mean_of(features, &assignment, c, dim);
            }
        }
        repair_empty(features, &mut assignment, &mut centroids, k, dim);
        history.push(wcss(features, &assignment, &centroids));
        iterations = iter;
    }
    (centroids, assignment, iterations, converged, history)
}

/// Moves the point farthest from its centroid into each empty cluster.
fn repair_empty(features: &[Vec<f64>], assignment: &mut [usize], centroids: &mut [Vec<f64>], k: usize, dim: usize) {
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assignment.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else { return };
        let mut far = None;
        let mut far_d = -1.0;
        for (i, p) in features.iter().enumerate() {
            let donor = assignment[i];
            if sizes[donor] < 2 {
                continue;
            }
            let d = squared_distance(p, &centroids[donor]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let Some(i) = far else { return };
        let donor = assignment[i];
        assignment[i] = empty;
        centroids[empty] = features[i].clone();
        centroids[donor] = mean_of(features, assignment, donor, dim);
    }
}

/// Best-of-`restarts` K-means. Restart `r` draws its initial centroids,
/// distinct points sampled without replacement, from an RNG seeded with
/// `seed + r`.
pub fn kmeans(features: &[Vec<f64>], k: usize, config: &KMeansConfig) -> Result<KMeansResult> {
    let distinct = validate(features, k)?;
    if config.restarts == 0 || config.max_iters == 0 {
        return Err(Error::Parameter("restarts and max_iters must be at least 1".into()));
    }
    let mut best: Option<KMeansResult> = None;
    for r in 0..config.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(r as u64));
        let init = sample(&mut rng, distinct.len(), k).iter().map(|i| features[distinct[i]].clone()).collect();
        let (centroids, assignment, iterations_used, converged, wcss_history) = lloyd(features, init, config.max_iters);
        let total = wcss(features, &assignment, &centroids);
        if best.as_ref().is_none_or(|b| total < b.wcss) {
            best = Some(KMeansResult { k, centroids, assignment, wcss: total, iterations_used, converged, restart: r, wcss_history });
        }
    }
    Ok(best.expect("at least one restart"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WcssCurve {
    pub points: Vec<(usize, f64)>,
    /// Consecutive `(k, k')` pairs where WCSS rose when K grew, which means
    /// the restarts did not find the optimum.
    pub violations: Vec<(usize, usize)>,
}

pub fn wcss_curve(features: &[Vec<f64>], k_range: &[usize], config: &KMeansConfig) -> Result<WcssCurve> {
    if k_range.is_empty() {
        return Err(Error::Parameter("empty k range".into()));
    }
    let mut ks = k_range.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let points = ks
        .iter()
        .map(|&k| kmeans(features, k, config).map(|r| (k, r.wcss)))
        .collect::<Result<Vec<_>>>()?;
    let violations = points.windows(2).filter(|w| w[1].1 > w[0].1 + 1e-9).map(|w| (w[0].0, w[1].0)).collect();
    Ok(WcssCurve { points, violations })
}

/// Cluster-validity indices used by [`suggest_k`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidityIndex {
    Silhouette,
    CalinskiHarabasz,
    DaviesBouldin,
    Dunn,
}

impl ValidityIndex {
    pub const ALL: [ValidityIndex; 4] = [Self::Silhouette, Self::CalinskiHarabasz, Self::DaviesBouldin, Self::Dunn];

    pub fn lower_is_better(self) -> bool {
        matches!(self, Self::DaviesBouldin)
    }

    /// `None` when the index is undefined for this clustering.
    pub fn score(self, features: &[Vec<f64>], assignment: &[usize], k: usize) -> Option<f64> {
        let v = match self {
            Self::Silhouette => silhouette(features, assignment, k),
            Self::CalinskiHarabasz => calinski_harabasz(features, assignment, k),
            Self::DaviesBouldin => davies_bouldin(features, assignment, k),
            Self::Dunn => dunn(features, assignment, k),
        }?;
        v.is_finite().then_some(v)
    }
}

fn sizes(assignment: &[usize], k: usize) -> Vec<usize> {
    let mut s = vec![0; k];
    for &a in assignment {
        s[a] += 1;
    }
    s
}

fn centroids_of(features: &[Vec<f64>], assignment: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = features[0].len();
    (0..k).map(|c| mean_of(features, assignment, c, dim)).collect()
}

/// Mean silhouette width; singletons score 0.
pub fn silhouette(features: &[Vec<f64>], assignment: &[usize], k: usize) -> Option<f64> {
    let n = features.len();
    let sz = sizes(assignment, k);
    if k < 2 || k >= n || sz.iter().all(|&s| s <= 1) {
        return None;
    }
    let mut total = 0.0;
    for i in 0..n {
        let own = assignment[i];
        if sz[own] == 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if j != i {
                sums[assignment[j]] += squared_distance(&features[i], &features[j]).sqrt();
            }
        }
        let a = sums[own] / (sz[own] - 1) as f64;
        let b = (0..k).filter(|&c| c != own && sz[c] > 0).map(|c| sums[c] / sz[c] as f64).fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Some(total / n as f64)
}

/// Between-cluster over within-cluster dispersion, each per degree of freedom.
pub fn calinski_harabasz(features: &[Vec<f64>], assignment: &[usize], k: usize) -> Option<f64> {
    let n = features.len();
    if k < 2 || k >= n {
        return None;
    }
    let dim = features[0].len();
    let mut grand = vec![0.0; dim];
    for p in features {
        for (g, x) in grand.iter_mut().zip(p) {
            *g += x / n as f64;
        }
    }
    let sz = sizes(assignment, k);
    let cents = centroids_of(features, assignment, k);
    let between: f64 = (0..k).filter(|&c| sz[c] > 0).map(|c| sz[c] as f64 * squared_distance(&cents[c], &grand)).sum();
    let within = wcss(features, assignment, &cents);
    if within <= 0.0 {
        return None;
    }
    Some((between / (k - 1) as f64) / (within / (n - k) as f64))
}

/// Average worst-case ratio of scatter to centroid separation.
pub fn davies_bouldin(features: &[Vec<f64>], assignment: &[usize], k: usize) -> Option<f64> {
    if k < 2 {
        return None;
    }
    let sz = sizes(assignment, k);
    let cents = centroids_of(features, assignment, k);
    let mut scatter = vec![0.0; k];
    for (p, &a) in features.iter().zip(assignment) {
        scatter[a] += squared_distance(p, &cents[a]).sqrt() / sz[a] as f64;
    }
    let mut total = 0.0;
    for i in 0..k {
        let mut worst = 0.0f64;
        for j in (0..k).filter(|&j| j != i) {
            let sep = squared_distance(&cents[i], &cents[j]).sqrt();
            if sep <= 0.0 {
                return None;
            }
            worst = worst.max((scatter[i] + scatter[j]) / sep);
        }
        total += worst;
    }
    Some(total / k as f64)
}

/// Smallest between-cluster point distance over the largest cluster diameter.
pub fn dunn(features: &[Vec<f64>], assignment: &[usize], k: usize) -> Option<f64> {
    if k < 2 {
        return None;
    }
    let n = features.len();
    let mut min_between = f64::INFINITY;
    let mut max_diameter = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = squared_distance(&features[i], &features[j]).sqrt();
            if assignment[i] == assignment[j] {
                max_diameter = max_diameter.max(d);
            } else {
                min_between = min_between.min(d);
            }
        }
    }
    (max_diameter > 0.0 && min_between.is_finite()).then(|| min_between / max_diameter)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexVote {
    pub index: ValidityIndex,
    /// `(k, score)` for every K evaluated; `None` where undefined.
    pub scores: Vec<(usize, Option<f64>)>,
    /// `None` when the index abstains.
    pub vote: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSuggestion {
    pub k_best: usize,
    pub votes: Vec<IndexVote>,
}

/// Modal value; ties go to the smaller K.
pub fn majority_vote(votes: &[usize]) -> Option<usize> {
    let mut ks = votes.to_vec();
    ks.sort_unstable();
    ks.dedup();
    ks.into_iter().map(|k| (votes.iter().filter(|&&v| v == k).count(), k)).max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1))).map(|(_, k)| k)
}

/// Each validity index votes for its best K; the modal K wins.
pub fn suggest_k(features: &[Vec<f64>], k_range: &[usize], config: &KMeansConfig) -> Result<KSuggestion> {
    let n = features.len();
    let mut ks = k_range.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() || ks.iter().any(|&k| k < 2 || k + 1 > n) {
        return Err(Error::Parameter(format!("k range must lie within 2..={} for {n} points", n.saturating_sub(1))));
    }
    let runs = ks.iter().map(|&k| kmeans(features, k, config)).collect::<Result<Vec<_>>>()?;
    let votes: Vec<IndexVote> = ValidityIndex::ALL
        .iter()
        .map(|&index| {
            let scores: Vec<(usize, Option<f64>)> =
                runs.iter().map(|r| (r.k, index.score(features, &r.assignment, r.k))).collect();
            let mut vote: Option<(usize, f64)> = None;
            for &(k, s) in &scores {
                let Some(s) = s else { continue };
                let better = match vote {
                    None => true,
                    Some((_, b)) if index.lower_is_better() => s < b,
                    Some((_, b)) => s > b,
                };
                if better {
                    vote = Some((k, s));
                }
            }
            IndexVote { index, scores, vote: vote.map(|(k, _)| k) }
        })
        .collect();
    let cast: Vec<usize> = votes.iter().filter_map(|v| v.vote).collect();
    let k_best = majority_vote(&cast).ok_or_else(|| Error::Parameter("every validity index abstained".into()))?;
    Ok(KSuggestion { k_best, votes })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(seed: u64) -> KMeansConfig {
        KMeansConfig { seed, ..KMeansConfig::default() }
    }

    #[test]
    fn separable_pairs() {
        let f = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]];
        let r = kmeans(&f, 2, &cfg(3)).unwrap();
        assert_eq!(r.wcss, 0.0);
        let mut c = r.centroids.clone();
        c.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(c, vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert_eq!(r.assignment[0], r.assignment[1]);
        assert_ne!(r.assignment[0], r.assignment[2]);
    }

    #[test]
    fn single_cluster_is_mean() {
        let f = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![1.0, 3.0]];
        let r = kmeans(&f, 1, &cfg(0)).unwrap();
        assert!((r.centroids[0][0] - 1.0).abs() < 1e-15);
        assert!((r.centroids[0][1] - 1.0).abs() < 1e-15);
        // n * total variance = sum of squared deviations
        let ss = 1.0 + 1.0 + 1.0 + 0.0 + 1.0 + 4.0;
        assert!((r.wcss - ss).abs() < 1e-12);
    }

    #[test]
    fn k_exceeding_distinct_points() {
        let f = vec![vec![1.0], vec![1.0], vec![2.0]];
        assert!(matches!(kmeans(&f, 3, &cfg(0)), Err(Error::Parameter(_))));
        assert!(kmeans(&f, 2, &cfg(0)).is_ok());
        assert!(kmeans(&f, 0, &cfg(0)).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let f: Vec<Vec<f64>> = (0..30).map(|i| vec![(i * 7 % 11) as f64, (i * 3 % 5) as f64]).collect();
        let a = kmeans(&f, 3, &cfg(9)).unwrap();
        let b = kmeans(&f, 3, &cfg(9)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn empty_cluster_repair_keeps_all_clusters() {
        // one far outlier plus a tight blob; starting centroids can orphan a cluster
        let mut f: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 * 0.01]).collect();
        f.push(vec![100.0]);
        for seed in 0..20 {
            let r = kmeans(&f, 4, &KMeansConfig { restarts: 1, max_iters: 15, seed }).unwrap();
            assert!(r.cluster_sizes().iter().all(|&s| s >= 1), "seed {seed}: {:?}", r.cluster_sizes());
        }
    }

    #[test]
    fn wcss_curve_examples() {
        let f = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]];
        let c = wcss_curve(&f, &[1, 2], &cfg(0)).unwrap();
        assert!(c.points[0].1 > 0.0);
        assert_eq!(c.points[1].1, 0.0);

        let four = vec![vec![0.0], vec![1.0], vec![3.0], vec![7.0]];
        let c = wcss_curve(&four, &[1, 2, 3, 4], &cfg(0)).unwrap();
        assert_eq!(c.points[3], (4, 0.0));
        assert!(c.violations.is_empty());
        assert!(wcss_curve(&four, &[], &cfg(0)).is_err());
    }

    #[test]
    fn majority_vote_tie_prefers_smaller() {
        assert_eq!(majority_vote(&[3, 2, 3, 2]), Some(2));
        assert_eq!(majority_vote(&[5, 3, 3]), Some(3));
        assert_eq!(majority_vote(&[]), None);
    }

    #[test]
    fn singleton_clustering_abstains() {
        let f = vec![vec![0.0], vec![1.0], vec![2.0]];
        let assignment = vec![0, 1, 2];
        assert_eq!(ValidityIndex::Silhouette.score(&f, &assignment, 3), None);
        assert_eq!(ValidityIndex::CalinskiHarabasz.score(&f, &assignment, 3), None);
        assert_eq!(ValidityIndex::Dunn.score(&f, &assignment, 3), None);
        assert!(suggest_k(&f, &[3], &cfg(0)).is_err());
    }
}
