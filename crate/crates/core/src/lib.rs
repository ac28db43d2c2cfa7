//! Lung-nodule suspicion classification from CT patches: volume handling,
//! label aggregation, patch extraction, augmentation, a 3D residual network,
//! training, cross-validated evaluation and the experiment pipeline.

pub mod annotations;
pub mod augment;
pub mod cropping;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod shards;
pub mod splits;
pub mod synthetic;
pub mod task;
pub mod training;
pub mod volume;

pub use annotations::{BinaryLabel, NoduleRecord, SuspicionLevel};
pub use augment::AugmentConfig;
pub use cropping::{BoundingBox, Patch, CROP_SIZE};
pub use error::{Error, Result};
pub use evaluation::{Aggregation, MetricsReport, Prediction};
pub use model::checkpoint::Checkpoint;
pub use model::{Model, ModelConfig};
pub use pipeline::ExperimentConfig;
pub use rng::RngStream;
pub use splits::{grouped_kfold, FoldAssignment};
pub use task::Task;
pub use training::TrainConfig;
pub use volume::{CtVolume, NormalizationParams, VoxelSpacing};
