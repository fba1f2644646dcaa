//! Optimization: loss, Adam, the epoch loop and gradient checking.

pub mod adam;
pub mod gradcheck;
pub mod loss;
pub mod trainer;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{check_gradients, evaluate_tape, gradient_check, GradCheckConfig, GradCheckReport};
pub use loss::{bce_mean, compute_loss, LossBreakdown, BCE_EPS};
pub use trainer::{evaluate, loss_and_grads, train, train_logged, EpochRecord, TrainConfig, TrainOutcome, TrainStatus};
