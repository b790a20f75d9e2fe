use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::Dataset;

/// Student-level fold assignment, shared by every strategy of a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub n_folds: usize,
    pub seed: u64,
    pub folds: BTreeMap<String, usize>,
}

/// Shuffles the sorted student ids and deals them round-robin into folds.
pub fn assign_folds(data: &Dataset, n_folds: usize, seed: u64) -> Result<FoldAssignment> {
    let mut students: Vec<String> = data.students().into_iter().map(str::to_owned).collect();
    if n_folds == 0 || n_folds > students.len() {
        return Err(Error::Parameter(format!("cannot split {} students into {n_folds} folds", students.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    students.shuffle(&mut rng);
    let folds = students.into_iter().enumerate().map(|(i, s)| (s, i % n_folds)).collect();
    Ok(FoldAssignment { n_folds, seed, folds })
}

impl FoldAssignment {
    pub fn fold_of(&self, student: &str) -> Option<usize> {
        self.folds.get(student).copied()
    }

    /// Number of students per fold.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_folds];
        for &f in self.folds.values() {
            sizes[f] += 1;
        }
        sizes
    }

    /// `(train, test)` with fold `fold` held out.
    pub fn split(&self, data: &Dataset, fold: usize) -> Result<(Dataset, Dataset)> {
        if fold >= self.n_folds {
            return Err(Error::Parameter(format!("fold {fold} out of range for {} folds", self.n_folds)));
        }
        if let Some(t) = data.traces().iter().find(|t| self.fold_of(&t.student_id).is_none()) {
            return Err(Error::Parameter(format!("student `{}` has no fold", t.student_id)));
        }
        let test = data.filter(|t| self.fold_of(&t.student_id) == Some(fold));
        let train = data.filter(|t| self.fold_of(&t.student_id) != Some(fold));
        let train_students: HashSet<&str> = train.traces().iter().map(|t| t.student_id.as_str()).collect();
        if let Some(t) = test.traces().iter().find(|t| train_students.contains(t.student_id.as_str())) {
            return Err(Error::Parameter(format!("student `{}` appears in both train and test", t.student_id)));
        }
        Ok((train, test))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{Alphabet, Trace};

    fn students(n: usize) -> Dataset {
        let traces = (0..n * 2).map(|i| Trace::new(format!("st{}", i % n), format!("t{i}"), vec![0, 1])).collect();
        Dataset::new(Alphabet::new(["A", "B"]).unwrap(), traces).unwrap()
    }

    #[test]
    fn ten_students_five_folds() {
        let f = assign_folds(&students(10), 5, 1).unwrap();
        assert_eq!(f.sizes(), vec![2; 5]);
    }

    #[test]
    fn deterministic() {
        let d = students(17);
        assert_eq!(assign_folds(&d, 5, 42).unwrap(), assign_folds(&d, 5, 42).unwrap());
        assert_ne!(assign_folds(&d, 5, 42).unwrap(), assign_folds(&d, 5, 43).unwrap());
    }

    #[test]
    fn ninety_two_students() {
        let f = assign_folds(&students(92), 5, 7).unwrap();
        assert_eq!(f.sizes(), vec![19, 19, 18, 18, 18]);
    }

    #[test]
    fn too_few_students() {
        assert!(assign_folds(&students(3), 5, 0).is_err());
    }

    #[test]
    fn splits_keep_students_apart() {
        let d = students(12);
        let f = assign_folds(&d, 4, 3).unwrap();
        let mut seen = 0;
        for fold in 0..4 {
            let (train, test) = f.split(&d, fold).unwrap();
            assert_eq!(train.len() + test.len(), d.len());
            let tr: HashSet<_> = train.students().into_iter().collect();
            assert!(test.students().iter().all(|s| !tr.contains(s)));
            seen += test.len();
        }
        assert_eq!(seen, d.len());
    }
}
