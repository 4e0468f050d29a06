use super::frames::{FrameStacker, TimeReducer};
use super::lstmp::LstmpState;
use super::model::EncoderModel;
use crate::error::{Result, SluError};
use crate::numerics::{log_softmax_rows, Tensor2};

/// Per-stream encoder state: the stacking buffer, one reduction buffer per
/// upper layer and the recurrent state of every layer.
#[derive(Clone, Debug)]
pub struct EncoderState {
    stacker: FrameStacker,
    reducers: Vec<TimeReducer>,
    layers: Vec<LstmpState>,
    frames_seen: usize,
    rows_emitted: usize,
    closed: bool,
}

impl EncoderState {
    pub fn new(model: &EncoderModel) -> Self {
        let cfg = &model.config;
        Self {
            stacker: FrameStacker::new(cfg.stack_left, cfg.frame_skip),
            reducers: cfg.reductions.iter().map(|&l| TimeReducer::new(l)).collect(),
            layers: model.layers.iter().map(|l| l.initial_state()).collect(),
            frames_seen: 0,
            rows_emitted: 0,
            closed: false,
        }
    }

    pub fn frames_seen(&self) -> usize {
        self.frames_seen
    }

    pub fn rows_emitted(&self) -> usize {
        self.rows_emitted
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }
}

impl EncoderModel {
    /// Feeds `chunk` (any number of frames) and returns the lattice rows whose
    /// receptive field is now complete.
    pub fn stream_push(&self, state: &mut EncoderState, chunk: &Tensor2) -> Result<Tensor2> {
        if state.closed {
            return Err(SluError::Contract("push after the stream was closed".into()));
        }
        if chunk.rows() > 0 && chunk.cols() != self.config.feature_dim {
            return Err(SluError::Dimension {
                op: "stream_push",
                left: chunk.shape(),
                right: (0, self.config.feature_dim),
            });
        }
        let mut top = Vec::new();
        for frame in chunk.row_iter() {
            state.frames_seen += 1;
            if let Some(stacked) = state.stacker.push(frame) {
                self.feed_layer(state, 0, &stacked, &mut top)?;
            }
        }
        self.emit(state, top)
    }

    /// Flushes the partial reduction windows and ends the stream.
    pub fn stream_close(&self, state: &mut EncoderState) -> Result<Tensor2> {
        if state.closed {
            return Err(SluError::Contract("stream closed twice".into()));
        }
        state.closed = true;
        let mut top = Vec::new();
        for l in 1..self.layers.len() {
            if let Some(window) = state.reducers[l - 1].flush() {
                self.feed_layer(state, l, &window, &mut top)?;
            }
        }
        self.emit(state, top)
    }

    fn feed_layer(&self, state: &mut EncoderState, l: usize, x: &[f64], top: &mut Vec<Vec<f64>>) -> Result<()> {
        let out = self.layers[l].step(x, &mut state.layers[l])?;
        if l + 1 == self.layers.len() {
            top.push(out);
        } else if let Some(window) = state.reducers[l].push(&out) {
            self.feed_layer(state, l + 1, &window, top)?;
        }
        Ok(())
    }

    fn emit(&self, state: &mut EncoderState, top: Vec<Vec<f64>>) -> Result<Tensor2> {
        state.rows_emitted += top.len();
        if top.is_empty() {
            return Ok(Tensor2::zeros(0, self.config.vocab_size + 1));
        }
        let logits = self.head.logits(&Tensor2::from_rows(&top)?)?;
        Ok(log_softmax_rows(&logits))
    }
}
