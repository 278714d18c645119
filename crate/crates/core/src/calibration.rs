//! Offline replay of the cascade decision over a validation set and the
//! search for the accuracy-maximizing threshold.
//!
//! The accuracy of a configuration only changes when the threshold crosses
//! one of model A's scores, so searching the midpoints between consecutive
//! distinct scores (plus both ends of `[0, 1]`) finds the exact optimum. The
//! search itself sorts samples by score once and reads every candidate off
//! prefix sums; [`accuracy_at`] is the direct per-threshold evaluation.

use std::fmt::Write as _;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::confidence::{
    better_score, passes_threshold, score, softmax, ConfidenceError, ScoreFunctionKind, Selection,
};
use crate::phash::MemoryMethod;
use crate::records::PairedDataset;

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("calibration needs a nonempty dataset")]
    Empty,
    #[error("logits length mismatch: {0} vs {1}")]
    ClassMismatch(usize, usize),
    #[error(transparent)]
    Confidence(#[from] ConfidenceError),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("lambda must lie in [0, 1], got {0}")]
    LambdaOutOfRange(f64),
    #[error("first and second model are both {0}")]
    SameModel(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Everything needed to run the cascade.
///
/// A config without a second model describes a single-model baseline: model A
/// answers every sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadeConfig {
    pub first_model: String,
    #[serde(default)]
    pub second_model: Option<String>,
    pub score_fn: ScoreFunctionKind,
    pub lambda: f64,
    pub post_check: bool,
    pub memory: MemoryMethod,
}

impl CascadeConfig {
    pub fn pair(
        first: impl Into<String>,
        second: impl Into<String>,
        score_fn: ScoreFunctionKind,
        lambda: f64,
    ) -> Self {
        CascadeConfig {
            first_model: first.into(),
            second_model: Some(second.into()),
            score_fn,
            lambda,
            post_check: true,
            memory: MemoryMethod::None,
        }
    }

    pub fn single(model: impl Into<String>) -> Self {
        CascadeConfig {
            first_model: model.into(),
            second_model: None,
            score_fn: ScoreFunctionKind::Difference,
            lambda: 0.0,
            post_check: false,
            memory: MemoryMethod::None,
        }
    }

    pub fn with_memory(mut self, memory: MemoryMethod) -> Self {
        self.memory = memory;
        self
    }

    pub fn with_post_check(mut self, post_check: bool) -> Self {
        self.post_check = post_check;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(ConfigError::LambdaOutOfRange(self.lambda));
        }
        if self.second_model.as_deref() == Some(self.first_model.as_str()) {
            return Err(ConfigError::SameModel(self.first_model.clone()));
        }
        Ok(())
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, ConfigError> {
        let config: CascadeConfig = serde_json::from_reader(reader)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Self::from_reader(text.as_bytes())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Outcome of the cascade on one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub predicted: usize,
    pub used_second: bool,
    pub chosen: Selection,
    pub score_a: f64,
    pub score_b: Option<f64>,
}

/// Decision function of the cascade, evaluated from both models' logits.
///
/// Model B's output only enters when model A fails the threshold; with the
/// post-check the better-scoring model wins, otherwise B is taken as is.
pub fn cascade_decide_offline(
    logits_a: &[f64],
    logits_b: &[f64],
    score_fn: ScoreFunctionKind,
    lambda: f64,
    post_check: bool,
) -> Result<Decision, CalibrationError> {
    if logits_a.len() != logits_b.len() {
        return Err(CalibrationError::ClassMismatch(logits_a.len(), logits_b.len()));
    }
    let pa = softmax(logits_a)?;
    let sa = score(&pa, score_fn);
    if passes_threshold(sa, lambda, score_fn) {
        return Ok(Decision {
            predicted: pa.argmax(),
            used_second: false,
            chosen: Selection::A,
            score_a: sa,
            score_b: None,
        });
    }
    let pb = softmax(logits_b)?;
    let sb = score(&pb, score_fn);
    let chosen = if post_check {
        better_score(sa, sb, score_fn)
    } else {
        Selection::B
    };
    let predicted = match chosen {
        Selection::A => pa.argmax(),
        Selection::B => pb.argmax(),
    };
    Ok(Decision {
        predicted,
        used_second: true,
        chosen,
        score_a: sa,
        score_b: Some(sb),
    })
}

/// Accuracy and second-model usage at one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub lambda: f64,
    pub accuracy: f64,
    pub usage: f64,
}

pub fn accuracy_at(
    paired: &PairedDataset,
    score_fn: ScoreFunctionKind,
    lambda: f64,
    post_check: bool,
) -> Result<CurvePoint, CalibrationError> {
    if paired.is_empty() {
        return Err(CalibrationError::Empty);
    }
    let (mut correct, mut escalated) = (0usize, 0usize);
    for s in &paired.samples {
        let d = cascade_decide_offline(&s.logits_a, &s.logits_b, score_fn, lambda, post_check)?;
        correct += (d.predicted == s.label) as usize;
        escalated += d.used_second as usize;
    }
    let n = paired.len() as f64;
    Ok(CurvePoint {
        lambda,
        accuracy: correct as f64 / n,
        usage: escalated as f64 / n,
    })
}

fn scores_a(paired: &PairedDataset, score_fn: ScoreFunctionKind) -> Result<Vec<f64>, CalibrationError> {
    paired
        .samples
        .iter()
        .map(|s| Ok(score(&softmax(&s.logits_a)?, score_fn)))
        .collect()
}

/// Thresholds that realize every distinct cascade behavior within `[0, 1]`:
/// 0, 1 and the midpoints between consecutive distinct model-A scores.
pub fn candidate_lambdas(
    paired: &PairedDataset,
    score_fn: ScoreFunctionKind,
) -> Result<Vec<f64>, CalibrationError> {
    if paired.is_empty() {
        return Err(CalibrationError::Empty);
    }
    let mut scores = scores_a(paired, score_fn)?;
    Ok(candidates_from_scores(&mut scores, score_fn))
}

fn candidates_from_scores(scores: &mut [f64], score_fn: ScoreFunctionKind) -> Vec<f64> {
    scores.sort_by(f64::total_cmp);
    let mut out = vec![0.0, 1.0];
    for pair in scores.windows(2) {
        let (lo, hi) = (pair[0], pair[1]);
        if lo == hi {
            continue;
        }
        let mut mid = lo + (hi - lo) / 2.0;
        if mid <= lo || mid >= hi {
            // adjacent floats: fall back to the endpoint with the same behavior
            mid = if score_fn.lower_is_better() { lo } else { hi };
        }
        if (0.0..=1.0).contains(&mid) {
            out.push(mid);
        }
    }
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

/// Result of a threshold search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub config: CascadeConfig,
    pub accuracy: f64,
    pub second_model_usage: f64,
    pub curve: Vec<CurvePoint>,
}

impl CalibrationResult {
    /// `lambda,accuracy,usage` rows in ascending threshold order.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("lambda,accuracy,usage\n");
        for p in &self.curve {
            writeln!(out, "{},{},{}", p.lambda, p.accuracy, p.usage).unwrap();
        }
        out
    }
}

struct Scored {
    score_a: f64,
    pass_ok: bool,
    escalate_ok: bool,
}

struct Sweep {
    candidates: Vec<f64>,
    correct: Vec<usize>,
    escalated: Vec<usize>,
}

fn sweep(
    paired: &PairedDataset,
    score_fn: ScoreFunctionKind,
    post_check: bool,
) -> Result<Sweep, CalibrationError> {
    if paired.is_empty() {
        return Err(CalibrationError::Empty);
    }
    let mut scored = Vec::with_capacity(paired.len());
    for s in &paired.samples {
        if s.logits_a.len() != s.logits_b.len() {
            return Err(CalibrationError::ClassMismatch(s.logits_a.len(), s.logits_b.len()));
        }
        let (pa, pb) = (softmax(&s.logits_a)?, softmax(&s.logits_b)?);
        let (sa, sb) = (score(&pa, score_fn), score(&pb, score_fn));
        let escalated_pred = if post_check && better_score(sa, sb, score_fn) == Selection::A {
            pa.argmax()
        } else {
            pb.argmax()
        };
        scored.push(Scored {
            score_a: sa,
            pass_ok: pa.argmax() == s.label,
            escalate_ok: escalated_pred == s.label,
        });
    }
    scored.sort_by(|x, y| x.score_a.total_cmp(&y.score_a));

    let n = scored.len();
    let mut prefix_pass = vec![0usize; n + 1];
    let mut prefix_escalate = vec![0usize; n + 1];
    for (i, s) in scored.iter().enumerate() {
        prefix_pass[i + 1] = prefix_pass[i] + s.pass_ok as usize;
        prefix_escalate[i + 1] = prefix_escalate[i] + s.escalate_ok as usize;
    }

    let mut sorted_scores: Vec<f64> = scored.iter().map(|s| s.score_a).collect();
    let candidates = candidates_from_scores(&mut sorted_scores, score_fn);
    let mut correct = Vec::with_capacity(candidates.len());
    let mut escalated = Vec::with_capacity(candidates.len());
    for &lambda in &candidates {
        // sorted ascending: escalations form a prefix for max/diff and a
        // suffix for entropy
        let cut = if score_fn.lower_is_better() {
            sorted_scores.partition_point(|&s| passes_threshold(s, lambda, score_fn))
        } else {
            sorted_scores.partition_point(|&s| !passes_threshold(s, lambda, score_fn))
        };
        let (c, e) = if score_fn.lower_is_better() {
            // [0, cut) pass, the rest escalate
            (
                prefix_pass[cut] + (prefix_escalate[n] - prefix_escalate[cut]),
                n - cut,
            )
        } else {
            // [0, cut) escalate, the rest pass
            (prefix_escalate[cut] + (prefix_pass[n] - prefix_pass[cut]), cut)
        };
        correct.push(c);
        escalated.push(e);
    }
    Ok(Sweep {
        candidates,
        correct,
        escalated,
    })
}

/// Accuracy-maximizing threshold over [`candidate_lambdas`].
///
/// Among equally accurate thresholds the one with the least second-model
/// usage wins, then the smallest threshold (largest for entropy).
pub fn find_lambda_star(
    paired: &PairedDataset,
    score_fn: ScoreFunctionKind,
    post_check: bool,
) -> Result<CalibrationResult, CalibrationError> {
    let sweep = sweep(paired, score_fn, post_check)?;
    let n = paired.len() as f64;

    let better = |i: usize, j: usize| -> bool {
        // is candidate i preferred over j?
        let key_i = (sweep.correct[i], std::cmp::Reverse(sweep.escalated[i]));
        let key_j = (sweep.correct[j], std::cmp::Reverse(sweep.escalated[j]));
        if key_i != key_j {
            return key_i > key_j;
        }
        if score_fn.lower_is_better() {
            sweep.candidates[i] > sweep.candidates[j]
        } else {
            sweep.candidates[i] < sweep.candidates[j]
        }
    };
    let best = (1..sweep.candidates.len()).fold(0, |b, i| if better(i, b) { i } else { b });

    let curve = sweep
        .candidates
        .iter()
        .zip(sweep.correct.iter().zip(&sweep.escalated))
        .map(|(&lambda, (&c, &e))| CurvePoint {
            lambda,
            accuracy: c as f64 / n,
            usage: e as f64 / n,
        })
        .collect();

    let mut config = CascadeConfig::pair(
        paired.model_a.clone(),
        paired.model_b.clone(),
        score_fn,
        sweep.candidates[best],
    );
    config.post_check = post_check;
    Ok(CalibrationResult {
        config,
        accuracy: sweep.correct[best] as f64 / n,
        second_model_usage: sweep.escalated[best] as f64 / n,
        curve,
    })
}

/// Best post-checked calibration over all score functions and both model
/// orderings. Ties go to lower usage, then to the score-function order
/// diff, max, entropy, then to the original ordering.
pub fn auto_select(paired: &PairedDataset) -> Result<CalibrationResult, CalibrationError> {
    let swapped = paired.swapped();
    let mut best: Option<CalibrationResult> = None;
    for kind in ScoreFunctionKind::PREFERENCE {
        for data in [paired, &swapped] {
            let result = find_lambda_star(data, kind, true)?;
            let replace = match &best {
                None => true,
                Some(b) => {
                    result.accuracy > b.accuracy
                        || (result.accuracy == b.accuracy
                            && result.second_model_usage < b.second_model_usage)
                }
            };
            if replace {
                best = Some(result);
            }
        }
    }
    Ok(best.expect("at least one calibration ran"))
}
