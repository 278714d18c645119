//! Runtime cascade: memory lookup, model A, threshold test, model B,
//! post-check, memory insert.
//!
//! Every classified sample yields a [`StageTrace`] listing exactly the stages
//! that ran, in order. Metering prices those traces.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::CascadeConfig;
use crate::confidence::{
    better_score, passes_threshold, score, softmax, ConfidenceError, ScoreFunctionKind, Selection,
};
use crate::phash::{fingerprint, MemoStore, MemoryMethod};
use crate::records::{ImageBuffer, PredictionRecord, Stage};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("{model}: {reason}")]
pub struct ClassifierError {
    pub model: String,
    pub reason: String,
}

/// A model that produces logits for a sample id.
pub trait Classifier {
    fn name(&self) -> &str;
    fn infer(&self, id: &str) -> Result<Vec<f64>, ClassifierError>;
}

/// Serves precomputed logits by sample id.
#[derive(Debug, Clone)]
pub struct ReplayClassifier {
    name: String,
    logits: HashMap<String, Vec<f64>>,
}

impl ReplayClassifier {
    pub fn new(name: impl Into<String>, records: &[PredictionRecord]) -> Self {
        ReplayClassifier {
            name: name.into(),
            logits: records
                .iter()
                .map(|r| (r.id.clone(), r.logits.clone()))
                .collect(),
        }
    }
}

impl Classifier for ReplayClassifier {
    fn name(&self) -> &str {
        &self.name
    }

    fn infer(&self, id: &str) -> Result<Vec<f64>, ClassifierError> {
        self.logits.get(id).cloned().ok_or_else(|| ClassifierError {
            model: self.name.clone(),
            reason: format!("unknown sample id {id}"),
        })
    }
}

/// One input to the engine.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Option<ImageBuffer>,
    pub label: Option<usize>,
}

impl Sample {
    pub fn new(id: impl Into<String>) -> Self {
        Sample {
            id: id.into(),
            image: None,
            label: None,
        }
    }

    pub fn with_image(mut self, image: ImageBuffer) -> Self {
        self.image = Some(image);
        self
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Path {
    MemoryHit,
    ModelAOnly,
    #[serde(rename = "model_ab")]
    ModelAB,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Chosen {
    #[serde(rename = "memory")]
    Memory,
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub a: f64,
    pub b: Option<f64>,
}

/// What happened to one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub id: String,
    pub path: Path,
    pub chosen: Chosen,
    pub predicted: usize,
    pub label: Option<usize>,
    pub stages: Vec<Stage>,
    pub scores: Option<Scores>,
    /// Set when fingerprinting failed and the sample bypassed the memory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_error: Option<String>,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("sample {id}: {source}")]
    Classifier {
        id: String,
        #[source]
        source: ClassifierError,
    },
    #[error("sample {id}: memory method {method} needs an image")]
    MissingImage { id: String, method: MemoryMethod },
    #[error("sample {id}: {source}")]
    Confidence {
        id: String,
        #[source]
        source: ConfidenceError,
    },
    #[error("sample {id}: models disagree on class count ({a} vs {b})")]
    ClassMismatch { id: String, a: usize, b: usize },
    #[error("config names a second model but no second classifier was given")]
    MissingSecondModel,
    #[error("an empty batch has nothing to classify")]
    EmptyBatch,
}

struct Memory {
    method: MemoryMethod,
    store: MemoStore,
}

/// The runtime cascade over two classifiers (or one, for a baseline).
pub struct CascadeEngine {
    first: Box<dyn Classifier>,
    second: Option<Box<dyn Classifier>>,
    score_fn: ScoreFunctionKind,
    lambda: f64,
    post_check: bool,
    memory: Option<Memory>,
}

impl CascadeEngine {
    /// Engine for `config`. A config with a second model needs `second`;
    /// a memory method other than `none` starts with an empty unbounded store.
    pub fn new(
        config: &CascadeConfig,
        first: Box<dyn Classifier>,
        second: Option<Box<dyn Classifier>>,
    ) -> Result<Self, EngineError> {
        let second = match (&config.second_model, second) {
            (Some(_), None) => return Err(EngineError::MissingSecondModel),
            (None, _) => None,
            (Some(_), s) => s,
        };
        let memory = (config.memory != MemoryMethod::None).then(|| Memory {
            method: config.memory,
            store: MemoStore::new(),
        });
        Ok(CascadeEngine {
            first,
            second,
            score_fn: config.score_fn,
            lambda: config.lambda,
            post_check: config.post_check,
            memory,
        })
    }

    /// Replaces the memo store, e.g. with a bounded or preloaded one. Has no
    /// effect when the memory is disabled.
    pub fn with_store(mut self, store: MemoStore) -> Self {
        if let Some(memory) = &mut self.memory {
            memory.store = store;
        }
        self
    }

    pub fn memory_method(&self) -> MemoryMethod {
        self.memory.as_ref().map_or(MemoryMethod::None, |m| m.method)
    }

    pub fn store(&self) -> Option<&MemoStore> {
        self.memory.as_ref().map(|m| &m.store)
    }

    fn infer(model: &dyn Classifier, id: &str) -> Result<Vec<f64>, EngineError> {
        model.infer(id).map_err(|source| EngineError::Classifier {
            id: id.to_string(),
            source,
        })
    }

    pub fn classify(&mut self, sample: &Sample) -> Result<StageTrace, EngineError> {
        let id = sample.id.as_str();
        let mut stages = Vec::with_capacity(4);
        let mut memory_error = None;

        let key = match &mut self.memory {
            None => None,
            Some(memory) => {
                let image = sample.image.as_ref().ok_or_else(|| EngineError::MissingImage {
                    id: id.to_string(),
                    method: memory.method,
                })?;
                match fingerprint(image, memory.method) {
                    Ok(fp) => {
                        stages.push(Stage::MemoryLookup);
                        if let Some(label) = memory.store.lookup(&fp) {
                            return Ok(StageTrace {
                                id: id.to_string(),
                                path: Path::MemoryHit,
                                chosen: Chosen::Memory,
                                predicted: label,
                                label: sample.label,
                                stages,
                                scores: None,
                                memory_error: None,
                            });
                        }
                        Some(fp)
                    }
                    Err(e) => {
                        memory_error = Some(e.to_string());
                        None
                    }
                }
            }
        };

        let confidence_err = |source| EngineError::Confidence {
            id: id.to_string(),
            source,
        };

        stages.push(Stage::ModelA);
        let logits_a = Self::infer(self.first.as_ref(), id)?;
        let probs_a = softmax(&logits_a).map_err(confidence_err)?;
        let score_a = score(&probs_a, self.score_fn);

        let (path, chosen, predicted, score_b) = match &self.second {
            Some(second) if !passes_threshold(score_a, self.lambda, self.score_fn) => {
                stages.push(Stage::ModelB);
                let logits_b = Self::infer(second.as_ref(), id)?;
                if logits_b.len() != logits_a.len() {
                    return Err(EngineError::ClassMismatch {
                        id: id.to_string(),
                        a: logits_a.len(),
                        b: logits_b.len(),
                    });
                }
                let probs_b = softmax(&logits_b).map_err(confidence_err)?;
                let score_b = score(&probs_b, self.score_fn);
                let selection = if self.post_check {
                    better_score(score_a, score_b, self.score_fn)
                } else {
                    Selection::B
                };
                let (chosen, predicted) = match selection {
                    Selection::A => (Chosen::A, probs_a.argmax()),
                    Selection::B => (Chosen::B, probs_b.argmax()),
                };
                (Path::ModelAB, chosen, predicted, Some(score_b))
            }
            _ => (Path::ModelAOnly, Chosen::A, probs_a.argmax(), None),
        };

        if let (Some(memory), Some(fp)) = (&mut self.memory, key) {
            stages.push(Stage::MemoryInsert);
            memory.store.insert(fp, predicted);
        }

        Ok(StageTrace {
            id: id.to_string(),
            path,
            chosen,
            predicted,
            label: sample.label,
            stages,
            scores: Some(Scores {
                a: score_a,
                b: score_b,
            }),
            memory_error,
        })
    }

    /// Classifies `samples` strictly in order; the first classifier error
    /// aborts the batch.
    pub fn run_batch(&mut self, samples: &[Sample]) -> Result<BatchOutcome, EngineError> {
        if samples.is_empty() {
            return Err(EngineError::EmptyBatch);
        }
        let traces = samples
            .iter()
            .map(|s| self.classify(s))
            .collect::<Result<Vec<_>, _>>()?;
        let summary = BatchSummary::from_traces(&traces);
        Ok(BatchOutcome { traces, summary })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    pub traces: Vec<StageTrace>,
    pub summary: BatchSummary,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathCounts {
    pub memory_hit: usize,
    pub model_a_only: usize,
    pub model_ab: usize,
}

impl PathCounts {
    pub fn from_traces(traces: &[StageTrace]) -> Self {
        let mut counts = PathCounts::default();
        for t in traces {
            match t.path {
                Path::MemoryHit => counts.memory_hit += 1,
                Path::ModelAOnly => counts.model_a_only += 1,
                Path::ModelAB => counts.model_ab += 1,
            }
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub samples: usize,
    pub paths: PathCounts,
    pub metrics: Option<ClassificationMetrics>,
}

impl BatchSummary {
    pub fn from_traces(traces: &[StageTrace]) -> Self {
        BatchSummary {
            samples: traces.len(),
            paths: PathCounts::from_traces(traces),
            metrics: ClassificationMetrics::from_pairs(
                traces.iter().filter_map(|t| t.label.map(|l| (t.predicted, l))),
            ),
        }
    }
}

/// Accuracy and macro-averaged precision, recall and F1.
///
/// Only classes that occur among the true labels enter the macro means. A
/// class that is never predicted has precision 0, and F1 is 0 when precision
/// and recall are both 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub labelled: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ClassificationMetrics {
    /// Metrics from `(predicted, true)` pairs; `None` when there are none.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>) -> Option<Self> {
        let mut total = 0usize;
        let mut correct = 0usize;
        let mut true_pos: BTreeMap<usize, usize> = BTreeMap::new();
        let mut predicted: BTreeMap<usize, usize> = BTreeMap::new();
        let mut actual: BTreeMap<usize, usize> = BTreeMap::new();
        for (pred, label) in pairs {
            total += 1;
            *predicted.entry(pred).or_default() += 1;
            *actual.entry(label).or_default() += 1;
            if pred == label {
                correct += 1;
                *true_pos.entry(label).or_default() += 1;
            }
        }
        if total == 0 {
            return None;
        }
        let classes: BTreeSet<usize> = actual.keys().copied().collect();
        let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
        for c in &classes {
            let tp = *true_pos.get(c).unwrap_or(&0) as f64;
            let pred = *predicted.get(c).unwrap_or(&0) as f64;
            let precision = if pred > 0.0 { tp / pred } else { 0.0 };
            let recall = tp / actual[c] as f64;
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            p_sum += precision;
            r_sum += recall;
            f_sum += f1;
        }
        let k = classes.len() as f64;
        Some(ClassificationMetrics {
            labelled: total,
            accuracy: correct as f64 / total as f64,
            precision: p_sum / k,
            recall: r_sum / k,
            f1: f_sum / k,
        })
    }
}
