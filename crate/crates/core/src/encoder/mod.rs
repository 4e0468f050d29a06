//! Unidirectional LSTMP encoder with input frame stacking and time
//! reduction between layers.

mod checkpoint;
mod config;
mod frames;
mod lstmp;
mod model;
mod stream;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CmvnStats, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::EncoderConfig;
pub use frames::{stack_frames, time_reduce, FrameStacker, TimeReducer};
pub use lstmp::{LstmpLayer, LstmpState};
pub use model::{Dropout, EncoderModel, OutputHead};
pub use stream::EncoderState;
