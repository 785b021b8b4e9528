//! Dataset ingestion, tiling, augmentation and synthetic data.

pub mod augment;
pub mod dataset;
pub mod image_io;
pub mod synthetic;
pub mod tiling;

pub use augment::{augment_sample, AugmentPlan};
pub use dataset::{load_dataset, Dataset, Samples, Split};
pub use synthetic::{generate_synthetic, SynthParams};
pub use tiling::{stitch_predictions, tile_image, TileIndex, TileSpec};
