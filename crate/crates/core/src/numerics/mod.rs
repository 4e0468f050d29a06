//! Dense `f64` matrices, log-space reductions and a small define-by-run
//! reverse-mode differentiation tape.

mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{grad_check, grad_check_store, GradCheckReport};
pub use graph::{Gradients, Graph, NodeId, ParamId};

pub(crate) use graph::lstm_cell_forward;
pub use params::ParamStore;
pub use tensor::Tensor2;

pub(crate) use tensor::matmul_acc;

use crate::error::{Result, SluError};

/// `x · W + b` with `b` broadcast over rows.
pub fn affine(x: &Tensor2, w: &Tensor2, b: &[f64]) -> Result<Tensor2> {
    if x.cols() != w.rows() {
        return Err(SluError::Dimension {
            op: "affine",
            left: x.shape(),
            right: w.shape(),
        });
    }
    if b.len() != w.cols() {
        return Err(SluError::Dimension {
            op: "affine bias",
            left: w.shape(),
            right: (1, b.len()),
        });
    }
    let mut out = Tensor2::zeros(x.rows(), w.cols());
    matmul_acc(x, w, &mut out);
    add_row_bias(&mut out, b);
    Ok(out)
}

pub(crate) fn add_row_bias(out: &mut Tensor2, b: &[f64]) {
    let cols = out.cols();
    for row in out.data_mut().chunks_exact_mut(cols.max(1)) {
        for (o, &bj) in row.iter_mut().zip(b) {
            *o += bj;
        }
    }
}

/// `ln Σ exp(xs)`, shifted by the maximum. `-inf` entries are absent terms;
/// an empty or all `-inf` input gives `-inf`.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Two-term `logsumexp`, the hot path of the CTC recursions.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let lse = logsumexp(row);
    row.iter().map(|&v| v - lse).collect()
}

pub(crate) fn log_softmax_in_place(row: &mut [f64]) {
    let lse = logsumexp(row);
    for v in row {
        *v -= lse;
    }
}

pub fn log_softmax_rows(x: &Tensor2) -> Tensor2 {
    let mut out = x.clone();
    let cols = out.cols();
    for row in out.data_mut().chunks_exact_mut(cols.max(1)) {
        log_softmax_in_place(row);
    }
    out
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
