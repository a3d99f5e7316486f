//! Meta-training and meta-testing.
//!
//! Each task builds its own tape: graph construction, task representations,
//! modulation of the shared initialization, the inner gradient-descent loop
//! and the adapted test loss. Per-task meta-gradients are summed in task
//! order and applied by the outer optimizer.

mod config;
mod optim;
mod params;
mod pipeline;
mod trainer;

pub use config::{Mode, Objective, OuterOptimizer, TrainConfig, Variant};
pub use optim::{OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use params::MetaParams;
pub(crate) use params::group_of;
pub use pipeline::{meta_test, overall_loss, task_forward, task_gradient, Diagnostics, TaskOutput};
pub use trainer::{batch_gradient, eval_episodes, evaluate, meta_train_step, StepMetrics, Trainer};
