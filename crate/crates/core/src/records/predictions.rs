//! JSON Lines prediction records and id-alignment of two models' outputs.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One sample's precomputed model output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub id: String,
    pub label: usize,
    pub logits: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum RecordsError {
    #[error("malformed record at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("inconsistent logits length at line {line}: expected {expected}, found {found}")]
    InconsistentLength {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("logits at line {line} have {found} entries; at least 2 classes are required")]
    TooFewClasses { line: usize, found: usize },
    #[error("label {label} out of range for {classes} classes at line {line}")]
    LabelOutOfRange {
        line: usize,
        label: usize,
        classes: usize,
    },
    #[error("non-finite logit at line {line}")]
    NonFinite { line: usize },
    #[error("duplicate id {id} at line {line}")]
    DuplicateId { line: usize, id: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Parses a JSON Lines stream of prediction records.
///
/// The class count is taken from the first record and enforced on every
/// following line. Line numbers in errors are 1-based.
pub fn parse_prediction_records<R: BufRead>(
    reader: R,
) -> Result<Vec<PredictionRecord>, RecordsError> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut classes: Option<usize> = None;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let text = line.strip_suffix('\r').unwrap_or(&line);
        let record: PredictionRecord =
            serde_json::from_str(text).map_err(|e| RecordsError::Malformed {
                line: line_no,
                reason: e.to_string(),
            })?;

        let k = record.logits.len();
        match classes {
            None => {
                if k < 2 {
                    return Err(RecordsError::TooFewClasses {
                        line: line_no,
                        found: k,
                    });
                }
                classes = Some(k);
            }
            Some(expected) if expected != k => {
                return Err(RecordsError::InconsistentLength {
                    line: line_no,
                    expected,
                    found: k,
                });
            }
            Some(_) => {}
        }
        if record.logits.iter().any(|z| !z.is_finite()) {
            return Err(RecordsError::NonFinite { line: line_no });
        }
        if record.label >= k {
            return Err(RecordsError::LabelOutOfRange {
                line: line_no,
                label: record.label,
                classes: k,
            });
        }
        if !seen.insert(record.id.clone()) {
            return Err(RecordsError::DuplicateId {
                line: line_no,
                id: record.id,
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// Writes records as JSON Lines, one object per line with a trailing newline.
pub fn write_prediction_records<W: Write>(
    mut writer: W,
    records: &[PredictionRecord],
) -> std::io::Result<()> {
    for record in records {
        serde_json::to_writer(&mut writer, record)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// One sample seen by both models.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub id: String,
    pub label: usize,
    pub logits_a: Vec<f64>,
    pub logits_b: Vec<f64>,
}

/// Two models' records joined on sample id, ordered by ascending id.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    pub model_a: String,
    pub model_b: String,
    pub num_classes: usize,
    pub samples: Vec<PairedSample>,
}

impl PairedDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Renames the two models; alignment itself only knows them as `a` and `b`.
    pub fn with_names(mut self, model_a: impl Into<String>, model_b: impl Into<String>) -> Self {
        self.model_a = model_a.into();
        self.model_b = model_b.into();
        self
    }

    /// The same dataset with the model columns exchanged.
    pub fn swapped(&self) -> Self {
        PairedDataset {
            model_a: self.model_b.clone(),
            model_b: self.model_a.clone(),
            num_classes: self.num_classes,
            samples: self
                .samples
                .iter()
                .map(|s| PairedSample {
                    id: s.id.clone(),
                    label: s.label,
                    logits_a: s.logits_b.clone(),
                    logits_b: s.logits_a.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AlignError {
    #[error("cannot align an empty record list")]
    Empty,
    #[error("unmatched id {0}")]
    UnmatchedId(String),
    #[error("label disagreement for {0}")]
    LabelDisagreement(String),
    #[error("class count mismatch: {a} vs {b}")]
    ClassCountMismatch { a: usize, b: usize },
}

/// Joins two record lists on id.
///
/// Both lists must cover exactly the same ids with the same labels. When ids
/// are unmatched, the byte-lexicographically smallest one is reported.
pub fn align_records(
    a: &[PredictionRecord],
    b: &[PredictionRecord],
) -> Result<PairedDataset, AlignError> {
    let (Some(first_a), Some(first_b)) = (a.first(), b.first()) else {
        return Err(AlignError::Empty);
    };
    let (ka, kb) = (first_a.logits.len(), first_b.logits.len());
    if ka != kb {
        return Err(AlignError::ClassCountMismatch { a: ka, b: kb });
    }

    let by_id_a: BTreeMap<&str, &PredictionRecord> =
        a.iter().map(|r| (r.id.as_str(), r)).collect();
    let by_id_b: BTreeMap<&str, &PredictionRecord> =
        b.iter().map(|r| (r.id.as_str(), r)).collect();

    let unmatched = by_id_a
        .keys()
        .filter(|id| !by_id_b.contains_key(*id))
        .chain(by_id_b.keys().filter(|id| !by_id_a.contains_key(*id)))
        .min();
    if let Some(id) = unmatched {
        return Err(AlignError::UnmatchedId(id.to_string()));
    }

    let mut samples = Vec::with_capacity(by_id_a.len());
    for (id, ra) in &by_id_a {
        let rb = by_id_b[id];
        if ra.logits.len() != ka || rb.logits.len() != ka {
            return Err(AlignError::ClassCountMismatch {
                a: ra.logits.len(),
                b: rb.logits.len(),
            });
        }
        if ra.label != rb.label {
            return Err(AlignError::LabelDisagreement(id.to_string()));
        }
        samples.push(PairedSample {
            id: id.to_string(),
            label: ra.label,
            logits_a: ra.logits.clone(),
            logits_b: rb.logits.clone(),
        });
    }

    Ok(PairedDataset {
        model_a: "a".to_string(),
        model_b: "b".to_string(),
        num_classes: ka,
        samples,
    })
}
