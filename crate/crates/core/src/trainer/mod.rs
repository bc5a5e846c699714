//! Optimization, the training loop, checkpoints, ensembling, component
//! sweeps and the full-pipeline gradient check.

mod adam;
mod checkpoint;
mod config;
mod ensemble;
mod gradcheck;
mod model;
mod sweep;
mod train;

pub use adam::{lr_schedule, AdamState};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{ModelConfig, TrainConfig};
pub use ensemble::ensemble_average;
pub use gradcheck::{
    gradcheck, gradcheck_grid, pipeline_grid, pipeline_name, shrink, GradcheckDims, GradcheckReport, GRADCHECK_STEP,
    GRADCHECK_TOL,
};
pub use model::{Forward, Model};
pub use sweep::{apply_candidate, greedy_sweep, parse_candidates, Candidate, Component, SweepReport, SweepRow};
pub use train::{batch_gradients, evaluate, mean_loss, predict_dataset, train, LogRecord, TrainEvent, GRAD_CHUNK};

#[cfg(test)]
mod tests;
