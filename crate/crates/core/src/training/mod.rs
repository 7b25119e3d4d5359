//! Triplet metric learning with P x K batches and Adam.

mod adam;
mod loss;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{batch_hard_loss, euclidean, mine_batch_hard, triplet_loss, MinedTriplet};
pub use train::{
    batch_gradients, tail_mean, train_loop, write_loss_curve, LabeledSequences, LrSchedule, StepGradients, TrainConfig,
    TrainOutcome, TripletConfig, FINAL_CHECKPOINT, LOSS_CURVE,
};
