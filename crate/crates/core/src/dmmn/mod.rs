//! Multi-magnification segmentation network, written out by hand with its
//! backward pass.

mod checkpoint;
mod gradcheck;
mod loss;
mod metrics;
mod net;
pub mod ops;
mod tensor;
mod train;

pub use checkpoint::{Checkpoint, CheckpointHeader, CHECKPOINT_MAGIC};
pub use gradcheck::{
    grad_check, grad_check_against, grad_check_report, GradCheckOptions, GradCheckReport,
};
pub use loss::{loss, loss_sum, softmax};
pub use metrics::{miou, IouAccumulator};
pub use net::{argmax, DmmnConfig, DmmnModel, Network, PatchInput, TensorInfo, INIT_SCHEME};
pub use tensor::{Real, Tensor};
pub use train::{
    augment, evaluate, train, train_with_progress, AugmentConfig, Augmentation, EpochRecord,
    Geometry, TrainConfig, TrainHistory,
};
