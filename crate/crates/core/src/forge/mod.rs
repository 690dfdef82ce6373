//! Synthetic visual tasks and first-order training that populates a modelset.

mod network;
mod patterns;
mod task;
mod train;

pub use network::{argmax, Gradients, Network, Trace};
pub use patterns::{catalog, Interval, PatternFamily, PatternKind, RgbRange};
pub use task::{generate_task_suite, sample_batch, suite_capacity, Batch, TaskSpec, DEFAULT_IMAGE_SIZE};
pub use train::{
    build_modelset, checkpoint_file, slot_seed, train_first_order, training_batch, LrSchedule,
    TrainConfig, MAX_ATTEMPTS,
};
