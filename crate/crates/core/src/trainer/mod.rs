//! Curriculum training, checkpoints, evaluation and the ablation harness.

mod ablate;
mod checkpoint;
mod config;
mod eval;
mod objective;
mod train;

pub use ablate::{
    ablate, ablation_cells, run_experiment, AblationRow, AblationTable, RunResult, GRID_T_TARGET, SWEEP_T_TARGETS,
};
pub use checkpoint::{Checkpoint, MAGIC};
pub use config::{EvalConfig, ExperimentConfig, TimeSampling, TrainConfig};
pub use eval::{
    copy_compositor, copy_compositor_scores, eval_dataset, evaluate, evaluate_checkpoint, generate, score_image,
    EvalReport, Generation, SampleMetrics,
};
pub use objective::{prepare_sample, record_objective, ObjectiveVars, PreparedSample};
pub use train::{probe_leakage, thread_count, StepRecord, TrainData, Trainer};
