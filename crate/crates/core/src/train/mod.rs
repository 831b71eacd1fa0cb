//! Optimization, run configuration, checkpoints, datasets, the training
//! loop, inference/evaluation and the gradient-check suite.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod gradcheck;
pub mod trainer;

pub use adam::{adam_update, Adam, AdamConfig};
pub use checkpoint::{Models, TrainingState};
pub use config::RunConfig;
pub use dataset::{list_images, prepare_data, write_synthetic_sources, Dataset, PrepareOptions, PrepareReport, Sample};
pub use eval::{evaluate, evaluate_with, infer, EvalReport, EvalRow};
pub use gradcheck::{run_gradcheck, GradcheckReport, Selector};
pub use trainer::{batch_indices, run, RunPaths, StepLog, Trainer, LOG_HEADER};
