//! Synthetic corpora: a character task for pre-training, single-intent
//! utterances and same-speaker concatenations of two and three intents.

mod corpora;
mod generate;
mod io;

use serde::{Deserialize, Serialize};

pub use corpora::{build_corpora, Corpora, CorpusSizes, SplitSet, SplitSizes, CORPUS_NAMES, SPLIT_NAMES};
pub use generate::{mix_seed, GeneratorConfig, Speaker, World};
pub use io::{decode_records, encode_records, load_split, manifest_path, records_path, save_split, DatasetManifest, DATA_MAGIC, DATA_VERSION};

use crate::error::{Result, SluError};
use crate::numerics::Tensor2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntentSpec {
    pub id: usize,
    /// Sub-unit ids realizing the intent.
    pub template: Vec<usize>,
    /// Inclusive frame range each sub-unit is rendered for.
    pub unit_frames: (usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub features: Tensor2,
    pub intent_labels: Vec<usize>,
    pub char_labels: Vec<usize>,
    /// End of speech for each intent, in milliseconds.
    pub boundaries_ms: Vec<f64>,
    pub speaker: u32,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.features.rows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.boundaries_ms.len() != self.intent_labels.len() {
            return Err(SluError::Data(format!(
                "{} boundaries for {} intents",
                self.boundaries_ms.len(),
                self.intent_labels.len()
            )));
        }
        if !self.boundaries_ms.windows(2).all(|w| w[0] < w[1]) {
            return Err(SluError::Data("boundaries must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// Per-dimension global mean and standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct CmvnStats {
    pub mean: Tensor2,
    pub std: Tensor2,
}

pub const CMVN_STD_FLOOR: f64 = 1e-8;

impl CmvnStats {
    /// Population statistics over every frame of `utts`.
    pub fn compute(utts: &[Utterance]) -> Result<Self> {
        let dim = utts
            .first()
            .map(|u| u.features.cols())
            .ok_or_else(|| SluError::Data("CMVN needs at least one utterance".into()))?;
        let mut sum = vec![0.0; dim];
        let mut n = 0usize;
        for u in utts {
            if u.features.cols() != dim {
                return Err(SluError::Dimension {
                    op: "cmvn",
                    left: (1, dim),
                    right: u.features.shape(),
                });
            }
            for row in u.features.row_iter() {
                sum.iter_mut().zip(row).for_each(|(s, v)| *s += v);
            }
            n += u.features.rows();
        }
        if n == 0 {
            return Err(SluError::Data("CMVN needs at least one frame".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let mut sq = vec![0.0; dim];
        for u in utts {
            for row in u.features.row_iter() {
                for k in 0..dim {
                    let d = row[k] - mean[k];
                    sq[k] += d * d;
                }
            }
        }
        let std: Vec<f64> = sq.iter().map(|s| (s / n as f64).sqrt()).collect();
        Ok(Self {
            mean: Tensor2::row_vector(&mean),
            std: Tensor2::row_vector(&std),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.cols()
    }

    pub fn apply(&self, features: &Tensor2) -> Result<Tensor2> {
        if features.cols() != self.dim() {
            return Err(SluError::Dimension {
                op: "cmvn",
                left: features.shape(),
                right: self.mean.shape(),
            });
        }
        let mean = self.mean.row(0);
        let std = self.std.row(0);
        let mut out = features.clone();
        for t in 0..out.rows() {
            for (k, v) in out.row_mut(t).iter_mut().enumerate() {
                *v = (*v - mean[k]) / std[k].max(CMVN_STD_FLOOR);
            }
        }
        Ok(out)
    }
}

pub fn cmvn(features: &Tensor2, stats: &CmvnStats) -> Result<Tensor2> {
    stats.apply(features)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utt(rows: Vec<Vec<f64>>) -> Utterance {
        Utterance {
            features: Tensor2::from_rows(&rows).unwrap(),
            intent_labels: vec![],
            char_labels: vec![],
            boundaries_ms: vec![],
            speaker: 0,
        }
    }

    #[test]
    fn constant_dimension_normalizes_to_zero() {
        let u = utt(vec![vec![3.0, 1.0], vec![3.0, 2.0], vec![3.0, 6.0]]);
        let stats = CmvnStats::compute(std::slice::from_ref(&u)).unwrap();
        let out = cmvn(&u.features, &stats).unwrap();
        for t in 0..3 {
            assert_eq!(out.get(t, 0), 0.0);
        }
    }

    #[test]
    fn normalized_training_split_is_standard() {
        let world = World::new(GeneratorConfig::default(), 1).unwrap();
        let corpora = build_corpora(&world, 1, &CorpusSizes::tiny()).unwrap();
        let train = &corpora.s1.train;
        let stats = CmvnStats::compute(train).unwrap();
        let normed: Vec<Tensor2> = train.iter().map(|u| cmvn(&u.features, &stats).unwrap()).collect();
        let d = stats.dim();
        let n: usize = normed.iter().map(Tensor2::rows).sum();
        for k in 0..d {
            let mean = normed.iter().flat_map(|f| f.row_iter().map(move |r| r[k])).sum::<f64>() / n as f64;
            let var = normed
                .iter()
                .flat_map(|f| f.row_iter().map(move |r| (r[k] - mean).powi(2)))
                .sum::<f64>()
                / n as f64;
            assert!(mean.abs() < 1e-10, "dim {k} mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "dim {k} var {var}");
        }
    }

    #[test]
    fn test_split_uses_train_statistics() {
        let world = World::new(GeneratorConfig::default(), 2).unwrap();
        let corpora = build_corpora(&world, 2, &CorpusSizes::tiny()).unwrap();
        let train = CmvnStats::compute(&corpora.s1.train).unwrap();
        let own = CmvnStats::compute(&corpora.s1.test).unwrap();
        assert_ne!(train, own);
        let u = &corpora.s1.test[0];
        let x = cmvn(&u.features, &train).unwrap();
        let (t, k) = (0, 0);
        assert_eq!(x.get(t, k), (u.features.get(t, k) - train.mean.get(0, k)) / train.std.get(0, k));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let stats = CmvnStats::compute(&[utt(vec![vec![1.0, 2.0]])]).unwrap();
        assert!(cmvn(&Tensor2::zeros(2, 3), &stats).is_err());
    }

    #[test]
    fn boundary_invariants_checked() {
        let mut u = utt(vec![vec![0.0]]);
        u.intent_labels = vec![1, 2];
        u.boundaries_ms = vec![20.0, 20.0];
        assert!(u.validate().is_err());
        u.boundaries_ms = vec![20.0];
        assert!(u.validate().is_err());
        u.boundaries_ms = vec![20.0, 30.0];
        assert!(u.validate().is_ok());
    }
}
