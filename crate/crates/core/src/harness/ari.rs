use std::collections::HashMap;

use crate::error::{Error, Result};

fn pairs(n: u64) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index of two labelings of the same items. Label values
/// are arbitrary; only the partition matters.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Parameter(format!("labelings differ in length: {} vs {}", a.len(), b.len())));
    }
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&n| pairs(n)).sum();
    let sum_rows: f64 = rows.values().map(|&n| pairs(n)).sum();
    let sum_cols: f64 = cols.values().map(|&n| pairs(n)).sum();
    let total = pairs(a.len() as u64);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_rows * sum_cols / total;
    let max = 0.5 * (sum_rows + sum_cols);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_relabelled() {
        let a = [0, 0, 1, 1, 2, 2];
        assert_eq!(adjusted_rand_index(&a, &a).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&a, &[5, 5, 3, 3, 9, 9]).unwrap(), 1.0);
    }

    #[test]
    fn six_point_fixture() {
        // contingency [[2,1],[0,2],[1,0]] for a=(0,0,0,1,1,2) b=(0,0,1,1,1,0);
        // index 2, row pairs 3+1+0=4, column pairs 3+3=6, total 15
        // expected 24/15=1.6, max 5 -> (2-1.6)/(5-1.6)
        let a = [0, 0, 0, 1, 1, 2];
        let b = [0, 0, 1, 1, 1, 0];
        let ari = adjusted_rand_index(&a, &b).unwrap();
        assert!((ari - 0.4 / 3.4).abs() < 1e-15);
        // sklearn.metrics.adjusted_rand_score
        assert!((ari - 0.11764705882352941).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch() {
        assert!(adjusted_rand_index(&[0, 1], &[0]).is_err());
    }
}
