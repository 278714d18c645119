//! Seeded synthetic data: paired prediction records from two models with
//! overlapping but distinct strengths, and random test images.
//!
//! Output depends only on the parameters, so generated files can be
//! checked in and regenerated bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::records::{align_records, ImageBuffer, PairedDataset, PredictionRecord};

/// Parameters of a synthetic model pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticParams {
    pub samples: usize,
    pub classes: usize,
    pub seed: u64,
    /// Fraction of samples both models get right.
    pub both_right: f64,
    /// Fraction only model A gets right.
    pub only_a: f64,
    /// Fraction only model B gets right. The rest both get wrong.
    pub only_b: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            samples: 500,
            classes: 10,
            seed: 20_240_601,
            both_right: 0.62,
            only_a: 0.14,
            only_b: 0.16,
        }
    }
}

/// Sample id for index `i`; zero-padded so byte order equals index order.
pub fn sample_id(i: usize) -> String {
    format!("s{i:05}")
}

struct LogitModel {
    noise: Normal<f64>,
    right_margin: Normal<f64>,
    wrong_margin: Normal<f64>,
}

impl LogitModel {
    fn logits(&self, rng: &mut ChaCha8Rng, classes: usize, label: usize, right: bool) -> Vec<f64> {
        let mut logits: Vec<f64> = (0..classes).map(|_| self.noise.sample(rng)).collect();
        let (winner, margin) = if right {
            (label, self.right_margin.sample(rng).abs())
        } else {
            let wrong = (label + rng.random_range(1..classes)) % classes;
            (wrong, self.wrong_margin.sample(rng).abs())
        };
        let top = logits
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != winner)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        // the winner must be the strict maximum
        logits[winner] = top + margin.max(1e-3);
        logits
    }
}

/// Records for model A and model B, in id order, with shared labels.
///
/// # Panics
/// If `classes < 2` or the outcome fractions are negative or exceed 1.
pub fn generate(params: &SyntheticParams) -> (Vec<PredictionRecord>, Vec<PredictionRecord>) {
    assert!(params.classes >= 2, "need at least two classes");
    let fractions = [params.both_right, params.only_a, params.only_b];
    assert!(
        fractions.iter().all(|f| (0.0..=1.0).contains(f)) && fractions.iter().sum::<f64>() <= 1.0,
        "outcome fractions must lie in [0, 1] and sum to at most 1"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let model_a = LogitModel {
        noise: Normal::new(0.0, 1.0).unwrap(),
        right_margin: Normal::new(3.0, 1.5).unwrap(),
        wrong_margin: Normal::new(0.8, 0.8).unwrap(),
    };
    let model_b = LogitModel {
        noise: Normal::new(0.0, 1.2).unwrap(),
        right_margin: Normal::new(3.5, 1.5).unwrap(),
        wrong_margin: Normal::new(1.0, 0.8).unwrap(),
    };

    let mut a = Vec::with_capacity(params.samples);
    let mut b = Vec::with_capacity(params.samples);
    for i in 0..params.samples {
        let label = rng.random_range(0..params.classes);
        let u: f64 = rng.random();
        let (right_a, right_b) = if u < params.both_right {
            (true, true)
        } else if u < params.both_right + params.only_a {
            (true, false)
        } else if u < params.both_right + params.only_a + params.only_b {
            (false, true)
        } else {
            (false, false)
        };
        let id = sample_id(i);
        a.push(PredictionRecord {
            id: id.clone(),
            label,
            logits: model_a.logits(&mut rng, params.classes, label, right_a),
        });
        b.push(PredictionRecord {
            id,
            label,
            logits: model_b.logits(&mut rng, params.classes, label, right_b),
        });
    }
    (a, b)
}

/// The generated pair, aligned and named `model_a` / `model_b`.
pub fn paired(params: &SyntheticParams) -> PairedDataset {
    let (a, b) = generate(params);
    align_records(&a, &b)
        .expect("generated records align")
        .with_names("model_a", "model_b")
}

/// Random grayscale image with uniformly distributed pixels in `1..=255`,
/// so total intensity is never zero.
pub fn random_image(rng: &mut impl Rng, width: usize, height: usize) -> ImageBuffer {
    ImageBuffer::from_fn_gray(width, height, |_, _| rng.random_range(1..=255))
}

/// `count` random images of side `side`, one per sample id, from `seed`.
pub fn random_images(count: usize, side: usize, seed: u64) -> Vec<ImageBuffer> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_image(&mut rng, side, side)).collect()
}
