//! Change detection on registered image pairs: a pseudo-video temporal
//! encoder produces a coarse foreground mask that guides a global-local
//! spatial encoder-decoder, plus data loading, training and evaluation.

pub mod cfa_se;
pub mod config;
pub mod data;
pub mod error;
pub mod loss_metrics;
pub mod model;
pub mod nn;
pub mod pseudo_video;
pub mod temporal_encoder;
pub mod train;

pub use config::TrainConfig;
pub use error::{Error, Result};
pub use model::Ctma;
