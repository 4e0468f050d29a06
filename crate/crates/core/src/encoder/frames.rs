//! Frame stacking/skipping at the input and time reduction between layers,
//! in batch form and as incremental buffers for streaming.

use std::collections::VecDeque;

use crate::numerics::Tensor2;

/// Concatenates every kept frame with its `left` predecessors (oldest first),
/// keeping frames `0, skip, 2*skip, ...`. Positions before the first frame
/// repeat frame 0.
pub fn stack_frames(seq: &Tensor2, left: usize, skip: usize) -> Tensor2 {
    assert!(skip >= 1, "frame skip must be >= 1");
    let (t_len, d) = seq.shape();
    let out_len = t_len.div_ceil(skip);
    let mut out = Tensor2::zeros(out_len, d * (left + 1));
    for (o, t) in (0..t_len).step_by(skip).enumerate() {
        let row = out.row_mut(o);
        for j in 0..=left {
            let src = (t + j).saturating_sub(left);
            row[j * d..(j + 1) * d].copy_from_slice(seq.row(src));
        }
    }
    out
}

/// Concatenates non-overlapping windows of `lambda` frames; the last partial
/// window repeats its final frame.
pub fn time_reduce(seq: &Tensor2, lambda: usize) -> Tensor2 {
    assert!(lambda >= 1, "reduction factor must be >= 1");
    let (t_len, d) = seq.shape();
    let out_len = t_len.div_ceil(lambda);
    let mut out = Tensor2::zeros(out_len, d * lambda);
    for o in 0..out_len {
        let row = out.row_mut(o);
        for j in 0..lambda {
            let src = (o * lambda + j).min(t_len - 1);
            row[j * d..(j + 1) * d].copy_from_slice(seq.row(src));
        }
    }
    out
}

/// Incremental [`stack_frames`].
#[derive(Clone, Debug)]
pub struct FrameStacker {
    left: usize,
    skip: usize,
    history: VecDeque<Vec<f64>>,
    seen: usize,
}

impl FrameStacker {
    pub fn new(left: usize, skip: usize) -> Self {
        assert!(skip >= 1, "frame skip must be >= 1");
        Self {
            left,
            skip,
            history: VecDeque::with_capacity(left + 1),
            seen: 0,
        }
    }

    pub fn push(&mut self, frame: &[f64]) -> Option<Vec<f64>> {
        if self.history.is_empty() {
            for _ in 0..self.left {
                self.history.push_back(frame.to_vec());
            }
        } else if self.history.len() > self.left {
            self.history.pop_front();
        }
        self.history.push_back(frame.to_vec());
        let t = self.seen;
        self.seen += 1;
        if !t.is_multiple_of(self.skip) {
            return None;
        }
        Some(self.history.iter().flatten().copied().collect())
    }
}

/// Incremental [`time_reduce`].
#[derive(Clone, Debug)]
pub struct TimeReducer {
    lambda: usize,
    window: Vec<Vec<f64>>,
}

impl TimeReducer {
    pub fn new(lambda: usize) -> Self {
        assert!(lambda >= 1, "reduction factor must be >= 1");
        Self {
            lambda,
            window: Vec::with_capacity(lambda),
        }
    }

    pub fn push(&mut self, frame: &[f64]) -> Option<Vec<f64>> {
        self.window.push(frame.to_vec());
        if self.window.len() < self.lambda {
            return None;
        }
        let out = self.window.concat();
        self.window.clear();
        Some(out)
    }

    /// Emits the pending partial window, padded with its last frame.
    pub fn flush(&mut self) -> Option<Vec<f64>> {
        let last = self.window.last()?.clone();
        while self.window.len() < self.lambda {
            self.window.push(last.clone());
        }
        let out = self.window.concat();
        self.window.clear();
        Some(out)
    }
}
