//! Cascaded classification with two complementary models.
//!
//! A cheap first model answers every input; when its confidence score fails
//! a threshold, a second model is consulted and the more confident of the
//! two answers wins. An optional memory keyed by perceptual image hashes
//! skips both models for inputs seen before. Everything runs over replayed
//! model outputs and a linear per-stage cost model, so energy and latency
//! experiments are reproducible without a device or a neural-network runtime.
//!
//! | module | contents |
//! |---|---|
//! | [`records`] | prediction records, paired datasets, PNM images, cost profiles |
//! | [`confidence`] | softmax, score functions, threshold test, post-check |
//! | [`complementarity`] | pair complementarity and the all-pairs matrix |
//! | [`calibration`] | offline decision replay and threshold search |
//! | [`phash`] | dHash, complex-moment invariants, memo store |
//! | [`cascade`] | runtime engine with per-sample stage traces |
//! | [`metering`] | energy/latency aggregation and experiments |
//! | [`synthetic`] | seeded synthetic datasets |
//!
//! The guide in `book/` walks through each piece; its code listings are
//! compiled and run as doc-tests of this crate.

pub mod calibration;
pub mod cascade;
pub mod complementarity;
pub mod confidence;
pub mod metering;
pub mod phash;
pub mod records;
pub mod synthetic;

pub use calibration::{CascadeConfig, CalibrationResult};
pub use confidence::{ScoreFunctionKind, Selection};
pub use phash::{Fingerprint, MemoryMethod};
pub use records::{CostProfile, ImageBuffer, PairedDataset, PredictionRecord, Stage};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/complementarity.md")]
    mod complementarity {}
    #[doc = include_str!("../../../book/src/confidence.md")]
    mod confidence {}
    #[doc = include_str!("../../../book/src/calibration.md")]
    mod calibration {}
    #[doc = include_str!("../../../book/src/memory.md")]
    mod memory {}
    #[doc = include_str!("../../../book/src/cascade.md")]
    mod cascade {}
    #[doc = include_str!("../../../book/src/metering.md")]
    mod metering {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
