//! Ingestion of prediction records, images and cost profiles.

mod costs;
mod image;
mod predictions;

pub use costs::{CostError, CostProfile, MemoryCosts, Stage, StageCost, StageCosts};
pub use image::{load_image_pnm, to_grayscale, ImageBuffer, ImageError};
pub use predictions::{
    align_records, parse_prediction_records, write_prediction_records, AlignError, PairedDataset,
    PairedSample, PredictionRecord, RecordsError,
};
