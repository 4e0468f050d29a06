//! CTC loss by log-space forward–backward, and an exhaustive path-enumeration
//! reference used to check it.

use crate::error::{Result, SluError};
use crate::lattice::Lattice;
use crate::numerics::{log_add, log_softmax_rows, Tensor2};

/// Loss and its gradient. `grad` is with respect to the lattice
/// log-probabilities for [`ctc_loss`] and with respect to the pre-softmax
/// logits for [`ctc_loss_from_logits`].
#[derive(Clone, Debug)]
pub struct CtcResult {
    pub loss: f64,
    pub grad: Tensor2,
}

/// `[∅, l1, ∅, l2, …, ∅]`.
pub fn expand_with_blanks(labels: &[usize], blank: usize) -> Result<Vec<usize>> {
    let mut ext = Vec::with_capacity(2 * labels.len() + 1);
    ext.push(blank);
    for &l in labels {
        if l == blank {
            return Err(SluError::Data(format!("label sequence contains the blank symbol {blank}")));
        }
        ext.push(l);
        ext.push(blank);
    }
    Ok(ext)
}

/// Fewest frames that can carry `labels`: one per label plus a separating
/// blank between each adjacent repeat.
pub fn min_frames(labels: &[usize]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

fn check_labels(lattice: &Lattice, labels: &[usize]) -> Result<()> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= lattice.blank()) {
        return Err(SluError::Data(format!(
            "label {bad} out of range for a lattice of width {}",
            lattice.width()
        )));
    }
    let required = min_frames(labels);
    if lattice.steps() < required {
        return Err(SluError::Infeasible {
            frames: lattice.steps(),
            labels: labels.len(),
            required,
        });
    }
    Ok(())
}

/// Whether the path may jump from `ext[s-2]` straight to `ext[s]`.
#[inline]
fn can_skip(ext: &[usize], s: usize, blank: usize) -> bool {
    s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]
}

/// Log-space forward and backward variables over the extended label
/// sequence. Both include the emission at their own step, so
/// `alpha[t,s] + beta[t,s] - lp[t, ext[s]]` is the log-mass of paths through
/// `(t, s)`.
pub fn ctc_alpha_beta(lattice: &Lattice, ext: &[usize]) -> Result<(Tensor2, Tensor2)> {
    let blank = lattice.blank();
    if ext.len().is_multiple_of(2) || ext.iter().step_by(2).any(|&e| e != blank) {
        return Err(SluError::Data("extended labels must alternate blank/label".into()));
    }
    let labels: Vec<usize> = ext.iter().skip(1).step_by(2).copied().collect();
    check_labels(lattice, &labels)?;
    let (t_len, s_len) = (lattice.steps(), ext.len());
    let mut alpha = Tensor2::filled(t_len, s_len, f64::NEG_INFINITY);
    let mut beta = Tensor2::filled(t_len, s_len, f64::NEG_INFINITY);
    if t_len == 0 {
        return Ok((alpha, beta));
    }
    let lp = |t: usize, s: usize| lattice.row(t)[ext[s]];

    alpha.set(0, 0, lp(0, 0));
    if s_len > 1 {
        alpha.set(0, 1, lp(0, 1));
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut acc = alpha.get(t - 1, s);
            if s >= 1 {
                acc = log_add(acc, alpha.get(t - 1, s - 1));
            }
            if can_skip(ext, s, blank) {
                acc = log_add(acc, alpha.get(t - 1, s - 2));
            }
            if acc > f64::NEG_INFINITY {
                alpha.set(t, s, acc + lp(t, s));
            }
        }
    }

    let last = t_len - 1;
    beta.set(last, s_len - 1, lp(last, s_len - 1));
    if s_len > 1 {
        beta.set(last, s_len - 2, lp(last, s_len - 2));
    }
    for t in (0..last).rev() {
        for s in 0..s_len {
            let mut acc = beta.get(t + 1, s);
            if s + 1 < s_len {
                acc = log_add(acc, beta.get(t + 1, s + 1));
            }
            if s + 2 < s_len && can_skip(ext, s + 2, blank) {
                acc = log_add(acc, beta.get(t + 1, s + 2));
            }
            if acc > f64::NEG_INFINITY {
                beta.set(t, s, acc + lp(t, s));
            }
        }
    }
    Ok((alpha, beta))
}

/// `-ln P(labels | lattice)` summed over every alignment, with the gradient
/// with respect to the lattice log-probabilities (minus the per-step label
/// occupancy).
pub fn ctc_loss(lattice: &Lattice, labels: &[usize]) -> Result<CtcResult> {
    check_labels(lattice, labels)?;
    let blank = lattice.blank();
    let ext = expand_with_blanks(labels, blank)?;
    let (t_len, width) = (lattice.steps(), lattice.width());
    if t_len == 0 {
        return Ok(CtcResult {
            loss: 0.0,
            grad: Tensor2::zeros(0, width),
        });
    }
    let (alpha, beta) = ctc_alpha_beta(lattice, &ext)?;
    let s_len = ext.len();
    let mut log_p = alpha.get(t_len - 1, s_len - 1);
    if s_len > 1 {
        log_p = log_add(log_p, alpha.get(t_len - 1, s_len - 2));
    }
    if log_p == f64::NEG_INFINITY {
        return Err(SluError::NonFinite(
            "label sequence has zero probability under the lattice".into(),
        ));
    }

    let mut grad = Tensor2::zeros(t_len, width);
    let mut per_symbol = vec![f64::NEG_INFINITY; width];
    for t in 0..t_len {
        per_symbol.fill(f64::NEG_INFINITY);
        let row = lattice.row(t);
        for (s, &k) in ext.iter().enumerate() {
            let (a, b) = (alpha.get(t, s), beta.get(t, s));
            if a == f64::NEG_INFINITY || b == f64::NEG_INFINITY {
                continue;
            }
            per_symbol[k] = log_add(per_symbol[k], a + b - row[k]);
        }
        for (k, &m) in per_symbol.iter().enumerate() {
            if m > f64::NEG_INFINITY {
                grad.set(t, k, -(m - log_p).exp());
            }
        }
    }
    Ok(CtcResult { loss: -log_p, grad })
}

/// CTC on pre-softmax logits with the log-softmax fused in; the gradient is
/// `softmax - occupancy`.
pub fn ctc_loss_from_logits(logits: &Tensor2, labels: &[usize]) -> Result<CtcResult> {
    let logp = log_softmax_rows(logits);
    let lattice = Lattice::new_unchecked(logp);
    let mut res = ctc_loss(&lattice, labels)?;
    for t in 0..lattice.steps() {
        let row = lattice.row(t);
        for (g, &lp) in res.grad.row_mut(t).iter_mut().zip(row) {
            *g += lp.exp();
        }
    }
    Ok(res)
}

/// Largest number of paths the exhaustive reference will enumerate.
pub const BRUTEFORCE_PATH_LIMIT: u64 = 10_000_000;

/// Enumerates every frame-level path, keeps those that collapse to `labels`
/// and returns `-ln` of their total probability.
pub fn ctc_loss_bruteforce(lattice: &Lattice, labels: &[usize]) -> Result<f64> {
    let (t_len, width) = (lattice.steps(), lattice.width());
    let paths = (width as u64).checked_pow(t_len as u32).unwrap_or(u64::MAX);
    if paths > BRUTEFORCE_PATH_LIMIT {
        return Err(SluError::Contract(format!(
            "brute force would enumerate {paths} paths (limit {BRUTEFORCE_PATH_LIMIT})"
        )));
    }
    let blank = lattice.blank();
    let mut path = vec![0usize; t_len];
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for mut code in 0..paths {
        for p in path.iter_mut() {
            *p = (code % width as u64) as usize;
            code /= width as u64;
        }
        if crate::decoder::collapse(&path, blank) != labels {
            continue;
        }
        let log_prob: f64 = path.iter().enumerate().map(|(t, &k)| lattice.row(t)[k]).sum();
        let v = log_prob.exp();
        let s = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - s) + v } else { (v - s) + sum };
        sum = s;
    }
    Ok(-(sum + comp).ln())
}
