use crate::error::{Result, SluError};
use crate::numerics::{logsumexp, Tensor2};

/// `T x D` matrix of input frames, one row per hop.
pub type FeatureSequence = Tensor2;

/// Per-step log-probabilities over `V` labels plus blank. The blank is always
/// the last column.
#[derive(Clone, Debug, PartialEq)]
pub struct Lattice {
    logp: Tensor2,
}

impl Lattice {
    /// Wraps log-probabilities; every row must be a log-distribution.
    pub fn new(logp: Tensor2) -> Result<Self> {
        if logp.cols() < 1 {
            return Err(SluError::Data("lattice needs at least the blank column".into()));
        }
        for (t, row) in logp.row_iter().enumerate() {
            let z = logsumexp(row);
            if !(z.abs() < 1e-8) {
                return Err(SluError::Data(format!(
                    "lattice row {t} is not normalised (logsumexp = {z})"
                )));
            }
        }
        Ok(Self { logp })
    }

    pub(crate) fn new_unchecked(logp: Tensor2) -> Self {
        Self { logp }
    }

    pub fn from_probs(rows: &[Vec<f64>]) -> Result<Self> {
        let t = Tensor2::from_rows(rows)?;
        Self::new(t.map(f64::ln))
    }

    pub fn steps(&self) -> usize {
        self.logp.rows()
    }

    /// Number of columns, `V + 1`.
    pub fn width(&self) -> usize {
        self.logp.cols()
    }

    pub fn blank(&self) -> usize {
        self.logp.cols() - 1
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.logp.row(t)
    }

    pub fn log_probs(&self) -> &Tensor2 {
        &self.logp
    }

    pub fn into_inner(self) -> Tensor2 {
        self.logp
    }

    /// First `steps` rows.
    pub fn prefix(&self, steps: usize) -> Lattice {
        Lattice {
            logp: self.logp.slice_rows(0, steps.min(self.steps())),
        }
    }
}
