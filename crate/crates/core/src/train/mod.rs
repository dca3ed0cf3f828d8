//! Training: Dice loss, AdamW, early-stopped fitting, transfer initialization,
//! cross-validation folds and ensemble voting.

mod adamw;
mod fit;
mod folds;
mod loss;
mod transfer;
mod vote;

pub use adamw::{adamw_step, AdamState, AdamWConfig};
pub use fit::{
    fit, fit_with_progress, image_batch, mask_batch, predict_probabilities, validation_loss, EarlyStopping,
    EpochRecord, Sample, StopReason, TrainConfig, TrainLog,
};
pub use folds::{make_folds, Fold, FoldPlan};
pub use loss::{dice_loss, DiceSums, DICE_SMOOTH};
pub use transfer::transfer_init;
pub use vote::plurality_vote;
