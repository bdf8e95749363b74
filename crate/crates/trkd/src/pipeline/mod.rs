//! Desk-scale teacher-to-student distillation: synthetic class-clustered
//! data, a small feed-forward embedding network with hand-derived backprop,
//! SGD with momentum under a warmup/decay learning-rate schedule, and
//! training loops for every implemented distillation method.

mod checkpoint;
mod data;
mod mlp;
mod optim;
mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use data::{gen_dataset, Dataset, DatasetSplits, SyntheticDatasetConfig};
pub use mlp::{ForwardCache, LayerGrads, Mlp, MlpGrads, MlpSpec};
pub use optim::{sgd_step, DistillMethod, TrainConfig};
pub use trainer::{
    distill_student, embed_dataset, evaluate_eer, train_teacher, AamHyper, StudentRun,
    TeacherEpochRecord, TeacherRun, TrainLogRecord,
};

pub(crate) use trainer::example_objective;
