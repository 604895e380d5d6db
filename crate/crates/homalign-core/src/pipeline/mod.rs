//! Training, evaluation, ablations and the classical baseline.

mod ablation;
mod adam;
mod eval;
mod ransac;
mod train;

pub use ablation::{run_ablation_suite, AblationReport};
pub use adam::{adam_step, AdamHyper, AdamState};
pub use eval::{
    evaluate, evaluation_csv, CategoryAggregate, CorrespondenceConfig, Estimator, EvalRecord,
    Report, INLIER_THRESHOLD_PX, REFERENCE_FULL_SCALE_AVG_ERROR_IDENTITY,
    REFERENCE_FULL_SCALE_AVG_ERROR_OURS,
};
pub use ransac::{ransac_dlt, RansacConfig, RansacResult};
pub use train::{train, Ablation, TrainConfig, TrainOutput};

use alloc::string::String;
use alloc::vec::Vec;

use crate::checkpoint::CheckpointError;
use crate::geometry::GeometryError;
use crate::models::ModelError;
use crate::synth::{generate_pair, Category, GenConfig, PairSample, SynthError};
use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("non-finite loss at step {step} ({breakdown})")]
    NonFiniteLoss { step: u64, breakdown: String },
    #[error("RANSAC found no model with at least 4 inliers")]
    NoConsensus,
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// A deterministic stream of training pairs, addressable by index.
pub trait PairSource {
    fn get(&self, index: u64) -> Result<PairSample, SynthError>;
}

/// Synthetic stream cycling through the configured categories.
#[derive(Clone, Debug)]
pub struct SyntheticSource {
    pub gen: GenConfig,
    pub categories: Vec<Category>,
}

impl SyntheticSource {
    pub fn new(gen: GenConfig, categories: Vec<Category>) -> Self {
        debug_assert!(!categories.is_empty());
        Self { gen, categories }
    }
}

impl PairSource for SyntheticSource {
    fn get(&self, index: u64) -> Result<PairSample, SynthError> {
        let category = self.categories[(index % self.categories.len() as u64) as usize];
        generate_pair(&self.gen, category, index)
    }
}

/// Materializes a held-out evaluation set from a synthetic source.
pub fn held_out_pairs(
    source: &SyntheticSource,
    start_index: u64,
    count: usize,
) -> Result<Vec<PairSample>, SynthError> {
    (0..count as u64)
        .map(|i| source.get(start_index + i))
        .collect()
}

