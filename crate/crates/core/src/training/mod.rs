//! Optimization: character-level CTC pre-training of the first layer,
//! last-step cross-entropy pre-training of the rest, then CTC on intents.

mod asr;
mod config;
mod optim;
mod phase;
mod pipeline;

pub use asr::AsrModel;
pub use config::{Mode, Phase, Schedule, TrainConfig};
pub use optim::{clip_grad_norm, AdamW, OptimizerConfig};
pub use phase::{Example, LogRow, TrainLog};
pub use pipeline::{pretrain_asr, pretrain_ce, run_pipeline, train_ctc, PipelineData, PipelineResult};
