//! Training with cross-entropy on original and counterfactual samples plus
//! an optional contrastive term between an anchor, a same-bucket positive
//! and four negatives.

mod loss;
mod optim;
mod sampling;
mod train;

pub use loss::{cr_g_loss, cr_l_loss, dense_targets, xe_loss};
pub use optim::Adamax;
pub use sampling::{neg_sel, pos_sel, DatasetIndex, NegKind, Negative};
pub use train::{
    plan_sample, sample_loss, sample_rng, write_epoch_csv, CrMode, EpochStats, LossVars, SamplePlan, TrainConfig,
    Trainer, EPOCH_CSV_HEADER,
};
