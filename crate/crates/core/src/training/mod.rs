//! Contrastive and matching objectives and the two-phase training loop.

mod loss;
mod trainer;

pub use loss::{
    anchor_similarity, batch_loss, itc_loss, itc_loss_value, itm_loss, mine_hard_negatives,
    total_loss, HardNegatives, LossVars, PROB_EPS,
};
pub use trainer::{
    read_log, train, validation_rsum, EarlyStopState, EpochRecord, TrainConfig, TrainOutcome,
    TrainOutput, BEST_CHECKPOINT, LOG_FILE, NONFINITE_DUMP,
};
