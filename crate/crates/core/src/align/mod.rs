//! Multi-level contrastive alignment: the loss stack and the training loop.

mod loss;
mod model;
mod train;

pub use loss::{
    attend, global_contrastive_loss, local_contrastive_loss, match_score, similarity_matrix,
    total_loss, LossBreakdown, LossGraph, LossSwitches, SampleFeatures, Temperatures,
};
pub use model::{AlignmentModel, ArchConfig};
pub use train::{train, StepRecord, TrainConfig, TrainOutcome, TrainState};
