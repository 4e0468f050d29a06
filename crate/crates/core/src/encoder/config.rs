use serde::{Deserialize, Serialize};

use crate::error::{Result, SluError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub feature_dim: usize,
    /// Left context frames concatenated to each input frame.
    pub stack_left: usize,
    /// Keep every `frame_skip`-th stacked frame.
    pub frame_skip: usize,
    pub hidden_dim: usize,
    pub proj_dim: usize,
    /// One reduction factor per LSTMP layer after the first; the encoder has
    /// `1 + reductions.len()` layers.
    pub reductions: Vec<usize>,
    /// Width of the tanh layer in the output head.
    pub head_dim: usize,
    /// Number of non-blank labels `V`. The blank is label `V`.
    pub vocab_size: usize,
    pub hop_ms: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            feature_dim: 8,
            stack_left: 7,
            frame_skip: 3,
            hidden_dim: 64,
            proj_dim: 32,
            reductions: vec![4, 4],
            head_dim: 64,
            vocab_size: 12,
            hop_ms: 10.0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(SluError::Config(msg.to_string()));
        if self.feature_dim == 0 || self.hidden_dim == 0 || self.proj_dim == 0 || self.head_dim == 0 {
            return bad("encoder dimensions must be positive");
        }
        if self.frame_skip == 0 {
            return bad("frame_skip must be >= 1");
        }
        if self.reductions.contains(&0) {
            return bad("reduction factors must be >= 1");
        }
        if self.vocab_size == 0 {
            return bad("vocab_size must be >= 1");
        }
        if !(self.hop_ms > 0.0) {
            return bad("hop_ms must be positive");
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        1 + self.reductions.len()
    }

    pub fn blank_index(&self) -> usize {
        self.vocab_size
    }

    pub fn stacked_dim(&self) -> usize {
        self.feature_dim * (self.stack_left + 1)
    }

    pub fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.stacked_dim()
        } else {
            self.proj_dim * self.reductions[layer - 1]
        }
    }

    /// Input frames covered by one output step.
    pub fn frames_per_step(&self) -> usize {
        self.frame_skip * self.reductions.iter().product::<usize>()
    }

    /// Milliseconds of input covered by one output step.
    pub fn step_ms(&self) -> f64 {
        self.frames_per_step() as f64 * self.hop_ms
    }

    /// Output steps produced for `frames` input frames.
    pub fn output_steps(&self, frames: usize) -> usize {
        self.reductions
            .iter()
            .fold(frames.div_ceil(self.frame_skip), |t, &l| t.div_ceil(l))
    }

    /// Output steps produced by the first layer.
    pub fn first_layer_steps(&self, frames: usize) -> usize {
        frames.div_ceil(self.frame_skip)
    }
}
