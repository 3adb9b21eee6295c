//! Text-guided style transfer.
//!
//! A style network is optimized so that the change it makes to a content
//! image points, in a joint text-image embedding space, in the same
//! direction as the change from a source text ("Photo") to a style text.
//! Two modes are provided: per-image optimization of a small U-Net, and
//! decoder training for feed-forward transfer.

pub mod config;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod image;
pub mod losses;
pub mod network;
pub mod prompt;
pub mod report;
pub mod rng;
pub mod sampler;
pub mod trainer;

pub use candle_core;
pub use config::{default_config, load_config, Ablation, Mode, TrainConfig};
pub use error::{CheckpointError, Error, Result};
pub use image::Image;
pub use network::{stylize, FastStyler, StyleNetwork, UNetStyler};
pub use prompt::StylePrompt;
pub use report::LossReport;
