//! How well two models cover each other's mistakes.
//!
//! For correct-prediction sets `a` and `b` over `N` samples the score is
//! `(|a ∪ b| - |a ∩ b| - ||a| - |b||) / N`: the symmetric difference, less the
//! imbalance between the two models, as a fraction of the dataset.

use std::fmt::Write as _;

use thiserror::Error;

use crate::confidence::argmax;
use crate::records::{align_records, AlignError, PairedDataset, PredictionRecord};

/// Predicted class of a logits vector: the maximum, lowest index on ties.
pub fn predicted_label(logits: &[f64]) -> usize {
    argmax(logits)
}

/// Per-sample correctness of one model, in dataset order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrectnessVector(pub Vec<bool>);

impl CorrectnessVector {
    pub fn model_a(paired: &PairedDataset) -> Self {
        CorrectnessVector(
            paired
                .samples
                .iter()
                .map(|s| predicted_label(&s.logits_a) == s.label)
                .collect(),
        )
    }

    pub fn model_b(paired: &PairedDataset) -> Self {
        CorrectnessVector(
            paired
                .samples
                .iter()
                .map(|s| predicted_label(&s.logits_b) == s.label)
                .collect(),
        )
    }

    pub fn count(&self) -> u64 {
        self.0.iter().filter(|&&c| c).count() as u64
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ComplementarityError {
    #[error("complementarity of an empty dataset is undefined")]
    Empty,
    #[error("correctness vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("at least two models are required, got {0}")]
    TooFewModels(usize),
    #[error("cannot align {first} with {second}: {source}")]
    Alignment {
        first: String,
        second: String,
        #[source]
        source: AlignError,
    },
}

/// The four counts entering the score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OverlapCounts {
    pub union: u64,
    pub intersection: u64,
    pub correct_a: u64,
    pub correct_b: u64,
    pub total: u64,
}

impl OverlapCounts {
    pub fn from_correctness(
        a: &CorrectnessVector,
        b: &CorrectnessVector,
    ) -> Result<Self, ComplementarityError> {
        if a.0.len() != b.0.len() {
            return Err(ComplementarityError::LengthMismatch(a.0.len(), b.0.len()));
        }
        let mut counts = OverlapCounts {
            union: 0,
            intersection: 0,
            correct_a: 0,
            correct_b: 0,
            total: a.0.len() as u64,
        };
        for (&ca, &cb) in a.0.iter().zip(&b.0) {
            counts.union += (ca || cb) as u64;
            counts.intersection += (ca && cb) as u64;
            counts.correct_a += ca as u64;
            counts.correct_b += cb as u64;
        }
        Ok(counts)
    }

    /// Integer numerator of the score.
    pub fn numerator(&self) -> u64 {
        // |a Δ b| >= ||a| - |b||, so this never underflows
        self.union - self.intersection - self.correct_a.abs_diff(self.correct_b)
    }

    pub fn score(&self) -> Result<f64, ComplementarityError> {
        if self.total == 0 {
            return Err(ComplementarityError::Empty);
        }
        Ok(self.numerator() as f64 / self.total as f64)
    }
}

/// Complementarity of the two correctness vectors.
pub fn complementarity_of(
    a: &CorrectnessVector,
    b: &CorrectnessVector,
) -> Result<f64, ComplementarityError> {
    OverlapCounts::from_correctness(a, b)?.score()
}

/// Complementarity of the two models in a paired dataset, with the dataset
/// size as denominator.
pub fn complementarity(paired: &PairedDataset) -> Result<f64, ComplementarityError> {
    complementarity_of(
        &CorrectnessVector::model_a(paired),
        &CorrectnessVector::model_b(paired),
    )
}

/// Symmetric all-pairs complementarity with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplementarityMatrix {
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl ComplementarityMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }

    /// CSV with a `model` column followed by one column per model. Values are
    /// unscaled with six decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model");
        for name in &self.names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (name, row) in self.names.iter().zip(&self.values) {
            out.push_str(name);
            for v in row {
                write!(out, ",{v:.6}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Human-readable table, values multiplied by ten.
    pub fn display_scaled(&self) -> String {
        let width = self.names.iter().map(String::len).max().unwrap_or(0).max(5);
        let mut out = format!("{:width$}", "");
        for name in &self.names {
            write!(out, " {name:>width$}").unwrap();
        }
        out.push('\n');
        for (name, row) in self.names.iter().zip(&self.values) {
            write!(out, "{name:width$}").unwrap();
            for v in row {
                write!(out, " {:>width$.2}", v * 10.0).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Complementarity of every pair of models. Each model is a name and its
/// records; every pair must align.
pub fn complementarity_matrix(
    models: &[(String, Vec<PredictionRecord>)],
) -> Result<ComplementarityMatrix, ComplementarityError> {
    let n = models.len();
    if n < 2 {
        return Err(ComplementarityError::TooFewModels(n));
    }
    let mut values = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let paired = align_records(&models[i].1, &models[j].1).map_err(|source| {
                ComplementarityError::Alignment {
                    first: models[i].0.clone(),
                    second: models[j].0.clone(),
                    source,
                }
            })?;
            let c = complementarity(&paired)?;
            values[i][j] = c;
            values[j][i] = c;
        }
    }
    Ok(ComplementarityMatrix {
        names: models.iter().map(|(name, _)| name.clone()).collect(),
        values,
    })
}

/// Indices `(i, j)`, `i < j`, of the largest off-diagonal entry. Ties go to
/// the lexicographically smallest pair of names (each pair's names sorted).
pub fn pick_best_pair(matrix: &ComplementarityMatrix) -> Result<(usize, usize), ComplementarityError> {
    let n = matrix.names.len();
    if n < 2 {
        return Err(ComplementarityError::TooFewModels(n));
    }
    let name_key = |i: usize, j: usize| {
        let (x, y) = (&matrix.names[i], &matrix.names[j]);
        if x <= y {
            (x.as_str(), y.as_str())
        } else {
            (y.as_str(), x.as_str())
        }
    };
    let mut best = (0, 1);
    for i in 0..n {
        for j in i + 1..n {
            let (v, bv) = (matrix.get(i, j), matrix.get(best.0, best.1));
            if v > bv || (v == bv && name_key(i, j) < name_key(best.0, best.1)) {
                best = (i, j);
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn cv(n: usize, correct: impl IntoIterator<Item = usize>) -> CorrectnessVector {
        let set: BTreeSet<usize> = correct.into_iter().collect();
        CorrectnessVector((0..n).map(|i| set.contains(&i)).collect())
    }

    /// Recount with explicit sets.
    fn set_oracle(a: &[bool], b: &[bool]) -> f64 {
        let sa: BTreeSet<usize> = (0..a.len()).filter(|&i| a[i]).collect();
        let sb: BTreeSet<usize> = (0..b.len()).filter(|&i| b[i]).collect();
        let union = sa.union(&sb).count() as f64;
        let inter = sa.intersection(&sb).count() as f64;
        let disparity = (sa.len() as f64 - sb.len() as f64).abs();
        (union - inter - disparity) / a.len() as f64
    }

    #[test]
    fn predicted_label_examples() {
        assert_eq!(predicted_label(&[0.1, 2.0, 0.5]), 1);
        assert_eq!(predicted_label(&[3.0, 3.0, 1.0]), 0);
        assert_eq!(predicted_label(&[-5.0, -1.0]), 1);
    }

    #[test]
    fn overlapping_halves() {
        let a = cv(10, 0..6);
        let b = cv(10, 4..10);
        let counts = OverlapCounts::from_correctness(&a, &b).unwrap();
        assert_eq!((counts.union, counts.intersection), (10, 2));
        assert_eq!(complementarity_of(&a, &b).unwrap(), 0.8);
        assert_eq!(set_oracle(&a.0, &b.0), 0.8);
    }

    #[test]
    fn disjoint_cover_and_identity() {
        assert_eq!(complementarity_of(&cv(10, 0..5), &cv(10, 5..10)).unwrap(), 1.0);
        let a = cv(10, [1, 3, 4]);
        assert_eq!(complementarity_of(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn errors() {
        assert_eq!(
            complementarity_of(&cv(0, []), &cv(0, [])),
            Err(ComplementarityError::Empty)
        );
        assert!(matches!(
            complementarity_of(&cv(2, []), &cv(3, [])),
            Err(ComplementarityError::LengthMismatch(2, 3))
        ));
    }

    fn matrix(names: &[&str], values: Vec<Vec<f64>>) -> ComplementarityMatrix {
        ComplementarityMatrix {
            names: names.iter().map(|s| s.to_string()).collect(),
            values,
        }
    }

    #[test]
    fn best_pair() {
        let m = matrix(
            &["m0", "m1", "m2"],
            vec![vec![0.0, 0.1, 0.2], vec![0.1, 0.0, 0.5], vec![0.2, 0.5, 0.0]],
        );
        assert_eq!(pick_best_pair(&m).unwrap(), (1, 2));

        let zero = matrix(&["c", "b", "a"], vec![vec![0.0; 3]; 3]);
        // names sorted within each pair: (b,c), (a,c), (a,b) -> (a,b) is indices (1,2)
        assert_eq!(pick_best_pair(&zero).unwrap(), (1, 2));

        let one = matrix(&["x"], vec![vec![0.0]]);
        assert_eq!(pick_best_pair(&one), Err(ComplementarityError::TooFewModels(1)));
    }

    #[test]
    fn csv_layout() {
        let m = matrix(&["a", "b"], vec![vec![0.0, 0.8], vec![0.8, 0.0]]);
        assert_eq!(m.to_csv(), "model,a,b\na,0.000000,0.800000\nb,0.800000,0.000000\n");
        assert!(m.display_scaled().contains("8.00"));
    }

    proptest! {
        #[test]
        fn matches_set_oracle(pairs in prop::collection::vec(any::<(bool, bool)>(), 1..=50)) {
            let a = CorrectnessVector(pairs.iter().map(|p| p.0).collect());
            let b = CorrectnessVector(pairs.iter().map(|p| p.1).collect());
            let c = complementarity_of(&a, &b).unwrap();
            prop_assert_eq!(c, set_oracle(&a.0, &b.0));
            prop_assert_eq!(c, complementarity_of(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&c));
            prop_assert_eq!(complementarity_of(&a, &a).unwrap(), 0.0);
        }
    }
}
