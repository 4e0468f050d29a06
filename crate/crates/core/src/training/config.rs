use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::OptimizerConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Result, SluError};

/// Which pre-training stages precede CTC training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    CtcOnly,
    AsrCtc,
    Full,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::CtcOnly, Mode::AsrCtc, Mode::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::CtcOnly => "ctc_only",
            Mode::AsrCtc => "asr_ctc",
            Mode::Full => "full",
        }
    }

    pub fn uses_asr(self) -> bool {
        self != Mode::CtcOnly
    }

    pub fn uses_ce(self) -> bool {
        self == Mode::Full
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = SluError;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| SluError::Config(format!("unknown mode {s:?} (expected ctc_only, asr_ctc or full)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    Asr,
    Ce,
    Ctc,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Asr => "asr",
            Phase::Ce => "ce",
            Phase::Ctc => "ctc",
        }
    }

    pub(crate) fn tag(self) -> u64 {
        self as u64 + 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub asr_epochs: usize,
    pub ce_epochs: usize,
    pub ctc_epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before a phase stops early.
    pub patience: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            asr_epochs: 30,
            ce_epochs: 10,
            ctc_epochs: 60,
            batch_size: 16,
            patience: 10,
        }
    }
}

/// Every hyperparameter of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub mode: Mode,
    pub encoder: EncoderConfig,
    pub optimizer: OptimizerConfig,
    /// Learning rate of character pre-training; `None` reuses the CTC rate.
    /// At the CTC rate the character model is still far from converged after
    /// the default epoch budget.
    pub asr_learning_rate: Option<f64>,
    /// Learning rate of cross-entropy pre-training; `None` reuses the CTC rate.
    pub ce_learning_rate: Option<f64>,
    pub dropout: f64,
    pub schedule: Schedule,
    /// Size of the character alphabet predicted during ASR pre-training.
    pub num_chars: usize,
    /// Largest tolerated fraction of CTC-infeasible training samples.
    pub max_skip_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: Mode::Full,
            encoder: EncoderConfig::default(),
            optimizer: OptimizerConfig::default(),
            asr_learning_rate: Some(1e-3),
            ce_learning_rate: None,
            dropout: 0.1,
            schedule: Schedule::default(),
            num_chars: 16,
            max_skip_fraction: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.optimizer.validate()?;
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(SluError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.schedule.batch_size == 0 {
            return Err(SluError::Config("batch_size must be >= 1".into()));
        }
        if self.num_chars == 0 {
            return Err(SluError::Config("num_chars must be >= 1".into()));
        }
        for lr in [self.asr_learning_rate, self.ce_learning_rate].into_iter().flatten() {
            if !(lr > 0.0) {
                return Err(SluError::Config(format!("learning rate {lr} must be positive")));
            }
        }
        Ok(())
    }

    pub fn phase_optimizer(&self, phase: Phase) -> OptimizerConfig {
        let lr = match phase {
            Phase::Asr => self.asr_learning_rate,
            Phase::Ce => self.ce_learning_rate,
            Phase::Ctc => None,
        };
        OptimizerConfig {
            learning_rate: lr.unwrap_or(self.optimizer.learning_rate),
            ..self.optimizer.clone()
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| SluError::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| SluError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SluError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            SluError::Config(msg) => SluError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let mut cfg = TrainConfig {
            mode: Mode::AsrCtc,
            asr_learning_rate: Some(3e-3),
            ..TrainConfig::default()
        };
        cfg.encoder.reductions = vec![2, 3];
        let text = cfg.to_toml().unwrap();
        assert_eq!(TrainConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_config_uses_defaults_and_unknown_keys_fail() {
        let cfg = TrainConfig::from_toml("seed = 9\nmode = \"ctc_only\"\n").unwrap();
        assert_eq!((cfg.seed, cfg.mode), (9, Mode::CtcOnly));
        assert_eq!(cfg.schedule, Schedule::default());
        assert!(TrainConfig::from_toml("sed = 9").is_err());
        assert!(TrainConfig::from_toml("dropout = 1.5").is_err());
    }

    #[test]
    fn modes_parse() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
        }
        assert!("both".parse::<Mode>().is_err());
    }
}
