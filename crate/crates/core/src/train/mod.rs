//! Stage-one sign pre-training, stage-two diagnosis training (with and
//! without reused encoder weights), the SGD schedule and checkpoints.

mod checkpoint;
mod eval;
mod fit;
mod loss;
mod optim;

pub use checkpoint::{load_checkpoint, load_checkpoint_as, save_checkpoint, Checkpoint, Stage, CHECKPOINT_VERSION};
pub use eval::{evaluate_diagnosis, evaluate_signs, macro_auroc_of};
pub use fit::{
    augment_draws, diagnosis_sample_gradients, epoch_order, finetune_diagnosis, pretrain_signs,
    sign_sample_gradients, train_scratch_baseline, EpochLog, TrainOptions, TrainOutcome,
};
pub use loss::{bce_with_logits, cross_entropy, inverse_frequency_weights};
pub use optim::{lr_at, sgd_update, Hyperparams};
