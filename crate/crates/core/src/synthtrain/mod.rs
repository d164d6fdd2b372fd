//! Synthetic pose data and a small regressor trained through the full loss
//! stack, used to compare rotation heads and the auxiliary keypoint head.

pub mod data;
pub mod experiments;
pub mod net;
pub mod train;

pub use data::{default_model, generate_dataset, read_dataset, write_dataset, Sample, SynthConfig, FEATURE_DIM};
pub use experiments::{
    ablate_keypoint_head, ablation_table_csv, compare_representations, ExperimentTable, RunResult, VariantSummary,
    WITHOUT_KP, WITH_KP,
};
pub use net::{OutputLayout, RotMode, ToyNet};
pub use train::{
    evaluate, predicted_pose, split, train, EpochLog, EvalMetrics, LrSchedule, Scene, TrainConfig, TrainLog,
};
