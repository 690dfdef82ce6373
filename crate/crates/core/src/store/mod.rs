//! Checkpoint persistence, modelset manifests and evaluation splits.

mod checkpoint;
pub mod container;
mod modelset;
mod split;

pub use checkpoint::{
    conv_name, expected_tensors, load_checkpoint, save_checkpoint, Checkpoint, FC_BIAS, FC_WEIGHT,
    FIRST_ORDER_KIND,
};
pub use modelset::{Manifest, ManifestRow, ModelSet, MANIFEST_FILE, MANIFEST_SCHEMA_VERSION};
pub use split::{
    make_split, RetrievalTask, SplitMode, SplitPlan, TaskSplit, CLASSIFICATION_TRAIN_FRACTION,
    QUERIES_PER_TASK, RETRIEVAL_TRAIN_TASK_FRACTION,
};
