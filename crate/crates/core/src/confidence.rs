//! Softmax, confidence score functions and the two score comparisons the
//! cascade makes: the threshold test and the post-check.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfidenceError {
    #[error("logits must have at least 2 entries, got {0}")]
    TooShort(usize),
    #[error("non-finite logit at index {0}")]
    NonFinite(usize),
    #[error("probabilities must be non-negative and sum to one")]
    NotADistribution,
}

/// Output of [`softmax`]: non-negative entries summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Wraps probabilities computed elsewhere. Entries must be finite and
    /// non-negative with a sum within `1e-9` of one.
    pub fn from_probabilities(p: Vec<f64>) -> Result<Self, ConfidenceError> {
        if p.len() < 2 {
            return Err(ConfidenceError::TooShort(p.len()));
        }
        if let Some(i) = p.iter().position(|x| !x.is_finite()) {
            return Err(ConfidenceError::NonFinite(i));
        }
        if p.iter().any(|&x| x < 0.0) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(ConfidenceError::NotADistribution);
        }
        Ok(ProbVector(p))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest probability, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax; the maximum logit is subtracted before
/// exponentiation.
pub fn softmax(logits: &[f64]) -> Result<ProbVector, ConfidenceError> {
    if logits.len() < 2 {
        return Err(ConfidenceError::TooShort(logits.len()));
    }
    if let Some(i) = logits.iter().position(|z| !z.is_finite()) {
        return Err(ConfidenceError::NonFinite(i));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(ProbVector(exps.into_iter().map(|e| e / total).collect()))
}

/// The three logit-derived confidence scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScoreFunctionKind {
    /// Largest class probability. Higher is more confident.
    #[serde(rename = "max")]
    MaxProbability,
    /// Gap between the largest and second-largest probability. Higher is
    /// more confident.
    #[serde(rename = "diff")]
    Difference,
    /// Normalized entropy. Lower is more confident.
    #[serde(rename = "entropy")]
    EntropyNormalized,
}

impl ScoreFunctionKind {
    /// Order used when breaking ties between otherwise equal calibrations.
    pub const PREFERENCE: [ScoreFunctionKind; 3] = [
        ScoreFunctionKind::Difference,
        ScoreFunctionKind::MaxProbability,
        ScoreFunctionKind::EntropyNormalized,
    ];

    pub fn lower_is_better(self) -> bool {
        self == ScoreFunctionKind::EntropyNormalized
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScoreFunctionKind::MaxProbability => "max",
            ScoreFunctionKind::Difference => "diff",
            ScoreFunctionKind::EntropyNormalized => "entropy",
        }
    }
}

impl fmt::Display for ScoreFunctionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown score function {0:?}; expected max, diff or entropy")]
pub struct UnknownScoreFunction(pub String);

impl FromStr for ScoreFunctionKind {
    type Err = UnknownScoreFunction;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "max" => Ok(ScoreFunctionKind::MaxProbability),
            "diff" => Ok(ScoreFunctionKind::Difference),
            "entropy" => Ok(ScoreFunctionKind::EntropyNormalized),
            other => Err(UnknownScoreFunction(other.to_string())),
        }
    }
}

/// `-sum_{i=1..K} (i/K) ln(i/K)`, the entropy normalizer.
///
/// This is not `ln K`: for fewer than nine classes a uniform distribution
/// scores above one.
pub fn entropy_normalizer(classes: usize) -> f64 {
    let k = classes as f64;
    -(1..=classes)
        .map(|i| {
            let r = i as f64 / k;
            r * r.ln()
        })
        .sum::<f64>()
}

/// Confidence score of `p` under `kind`. The class count is `p.len()`.
pub fn score(p: &ProbVector, kind: ScoreFunctionKind) -> f64 {
    let probs = p.as_slice();
    match kind {
        ScoreFunctionKind::MaxProbability => probs.iter().copied().fold(0.0, f64::max),
        ScoreFunctionKind::Difference => {
            // top two by position, so a repeated maximum gives 0
            let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for &v in probs {
                if v > first {
                    second = first;
                    first = v;
                } else if v > second {
                    second = v;
                }
            }
            first - second
        }
        ScoreFunctionKind::EntropyNormalized => {
            let entropy: f64 = -probs
                .iter()
                .filter(|&&v| v > 0.0)
                .map(|&v| v * v.ln())
                .sum::<f64>();
            // -0.0 for one-hot inputs would otherwise leak out
            (entropy / entropy_normalizer(probs.len())).max(0.0)
        }
    }
}

/// True when the first model's answer is accepted without escalating.
/// Equality accepts.
pub fn passes_threshold(score: f64, lambda: f64, kind: ScoreFunctionKind) -> bool {
    if kind.lower_is_better() {
        score <= lambda
    } else {
        score >= lambda
    }
}

/// Which model's prediction the post-check keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Selection {
    A,
    B,
}

/// Post-check comparison. Ties favor model A.
pub fn better_score(score_a: f64, score_b: f64, kind: ScoreFunctionKind) -> Selection {
    let a_wins = if kind.lower_is_better() {
        score_a <= score_b
    } else {
        score_a >= score_b
    };
    if a_wins {
        Selection::A
    } else {
        Selection::B
    }
}
