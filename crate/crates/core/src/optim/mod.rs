//! Desk-scale training: a differentiable tabular softmax language model and
//! the three objectives used to fit, align and distil it.

mod model;
mod objectives;
mod train;

pub use model::{ContextSpec, Encoded, Gradient, SoftmaxLm};
pub use objectives::{
    dpo_loss_and_grad, encode_all, nll_encoded, sft_loss_and_grad, sigmoid, softplus,
    student_mle_loss_and_grad, DpoBatch, DpoConfig, LossReport,
};
pub use train::{
    train, train_or_err, Divergence, EpochStat, Objective, TrainConfig, TrainError, Trained,
};
