//! Synthetic speech-like feature sequences.
//!
//! Every sub-unit ("character") owns a prototype vector. A speaker scales and
//! shifts prototypes per dimension; each rendered frame adds Gaussian noise.
//! Intents are phrases built from an action word followed by an object word,
//! so different intents share words the way spoken commands do.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{IntentSpec, Utterance};
use crate::error::{Result, SluError};
use crate::numerics::Tensor2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub feature_dim: usize,
    pub hop_ms: f64,
    /// Size of the sub-unit alphabet.
    pub num_chars: usize,
    pub num_actions: usize,
    pub num_objects: usize,
    /// Inclusive frame range per rendered sub-unit.
    pub unit_frames: (usize, usize),
    /// Inclusive frame range of leading and of trailing silence.
    pub silence_frames: (usize, usize),
    /// Inclusive frame range of the silence inserted between concatenated utterances.
    pub gap_frames: (usize, usize),
    pub noise_std: f64,
    pub speaker_offset_std: f64,
    pub speaker_scale_std: f64,
    pub silence_std: f64,
    /// Mean-square energy separating speech frames (above) from silence (below).
    pub energy_threshold: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            feature_dim: 8,
            hop_ms: 10.0,
            num_chars: 16,
            num_actions: 3,
            num_objects: 4,
            unit_frames: (5, 15),
            silence_frames: (5, 20),
            gap_frames: (10, 30),
            noise_std: 0.6,
            speaker_offset_std: 0.3,
            speaker_scale_std: 0.15,
            silence_std: 0.01,
            energy_threshold: 0.05,
        }
    }
}

impl GeneratorConfig {
    pub fn num_intents(&self) -> usize {
        self.num_actions * self.num_objects
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SluError::Config(m.to_string()));
        if self.feature_dim == 0 || self.num_chars < 2 || self.num_actions == 0 || self.num_objects == 0 {
            return bad("generator sizes must be positive (at least two sub-units)");
        }
        for (lo, hi) in [self.unit_frames, self.silence_frames, self.gap_frames] {
            if lo > hi {
                return bad("frame ranges must satisfy min <= max");
            }
        }
        if self.unit_frames.0 == 0 {
            return bad("sub-units need at least one frame");
        }
        if !(self.energy_threshold > 0.0) || !(self.hop_ms > 0.0) {
            return bad("energy threshold and hop must be positive");
        }
        Ok(())
    }
}

/// A speaker's per-dimension colouring of the prototypes.
#[derive(Clone, Debug, PartialEq)]
pub struct Speaker {
    pub id: u32,
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

/// splitmix64 finaliser, used to derive independent seeds from tuples.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

fn mean_square(frame: &[f64]) -> f64 {
    frame.iter().map(|v| v * v).sum::<f64>() / frame.len() as f64
}

/// Sub-unit prototypes, the intent lexicon and the speaker model.
#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub config: GeneratorConfig,
    pub seed: u64,
    pub prototypes: Tensor2,
    pub intents: Vec<IntentSpec>,
}

impl World {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x5052_4f54]));
        let d = config.feature_dim;
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut prototypes = Tensor2::zeros(config.num_chars, d);
        for c in 0..config.num_chars {
            let row = prototypes.row_mut(c);
            for v in row.iter_mut() {
                *v = normal.sample(&mut rng);
            }
            let rms = mean_square(row).sqrt().max(1e-3);
            row.iter_mut().for_each(|v| *v /= rms);
        }
        let intents = Self::lexicon(&config, &mut rng)?;
        Ok(Self {
            config,
            seed,
            prototypes,
            intents,
        })
    }

    fn random_word(rng: &mut ChaCha8Rng, chars: usize, len: (usize, usize)) -> Vec<usize> {
        let n = rng.random_range(len.0..=len.1);
        (0..n).map(|_| rng.random_range(0..chars)).collect()
    }

    fn lexicon(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Result<Vec<IntentSpec>> {
        for _ in 0..1000 {
            let mut words: Vec<Vec<usize>> = Vec::new();
            let mut draw = |len, words: &mut Vec<Vec<usize>>| loop {
                let w = Self::random_word(rng, cfg.num_chars, len);
                if !words.contains(&w) {
                    words.push(w.clone());
                    break w;
                }
            };
            let actions: Vec<_> = (0..cfg.num_actions).map(|_| draw((2, 3), &mut words)).collect();
            let objects: Vec<_> = (0..cfg.num_objects).map(|_| draw((3, 5), &mut words)).collect();
            let mut intents = Vec::with_capacity(cfg.num_intents());
            for (a, act) in actions.iter().enumerate() {
                for (o, obj) in objects.iter().enumerate() {
                    intents.push(IntentSpec {
                        id: a * cfg.num_objects + o,
                        template: [act.as_slice(), obj.as_slice()].concat(),
                        unit_frames: cfg.unit_frames,
                    });
                }
            }
            let distinct = intents
                .iter()
                .enumerate()
                .all(|(i, x)| intents[..i].iter().all(|y| y.template != x.template));
            if distinct {
                return Ok(intents);
            }
        }
        Err(SluError::Config("could not draw a lexicon with distinct templates".into()))
    }

    pub fn speaker(&self, id: u32) -> Speaker {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[self.seed, 0x5350_4b52, id as u64]));
        let d = self.config.feature_dim;
        let off = Normal::new(0.0, self.config.speaker_offset_std.max(0.0)).expect("finite std");
        let scl = Normal::new(0.0, self.config.speaker_scale_std.max(0.0)).expect("finite std");
        Speaker {
            id,
            offset: (0..d).map(|_| off.sample(&mut rng)).collect(),
            scale: (0..d).map(|_| (1.0 + scl.sample(&mut rng)).clamp(0.5, 1.5)).collect(),
        }
    }

    fn silence(&self, rng: &mut ChaCha8Rng, frames: usize, out: &mut Vec<Vec<f64>>) {
        let noise = Normal::new(0.0, self.config.silence_std.max(0.0)).expect("finite std");
        let cap = self.config.energy_threshold * 0.5;
        for _ in 0..frames {
            let mut f: Vec<f64> = (0..self.config.feature_dim).map(|_| noise.sample(rng)).collect();
            while mean_square(&f) >= cap {
                f = (0..self.config.feature_dim).map(|_| noise.sample(rng)).collect();
            }
            out.push(f);
        }
    }

    fn speech(&self, rng: &mut ChaCha8Rng, units: &[usize], unit_frames: (usize, usize), sp: &Speaker, out: &mut Vec<Vec<f64>>) {
        let noise = Normal::new(0.0, self.config.noise_std.max(0.0)).expect("finite std");
        let floor = self.config.energy_threshold * 2.0;
        for &u in units {
            let n = rng.random_range(unit_frames.0..=unit_frames.1);
            let proto = self.prototypes.row(u);
            for _ in 0..n {
                let mut frame = vec![0.0; proto.len()];
                loop {
                    for (k, f) in frame.iter_mut().enumerate() {
                        *f = sp.scale[k] * proto[k] + sp.offset[k] + noise.sample(rng);
                    }
                    if mean_square(&frame) > floor {
                        break;
                    }
                }
                out.push(frame);
            }
        }
    }

    /// Renders `units` between leading and trailing silence. Returns the
    /// frames and the index of the last speech frame.
    fn render(&self, rng: &mut ChaCha8Rng, units: &[usize], unit_frames: (usize, usize), sp: &Speaker) -> Result<(Tensor2, usize)> {
        if units.is_empty() {
            return Err(SluError::Data("cannot render an utterance without sub-units".into()));
        }
        let (lo, hi) = self.config.silence_frames;
        let mut frames = Vec::new();
        let lead = rng.random_range(lo..=hi);
        self.silence(rng, lead, &mut frames);
        self.speech(rng, units, unit_frames, sp, &mut frames);
        let last_speech = frames.len() - 1;
        let trail = rng.random_range(lo..=hi);
        self.silence(rng, trail, &mut frames);
        Ok((Tensor2::from_rows(&frames)?, last_speech))
    }

    /// One utterance of `intent` by `speaker`.
    pub fn generate_utterance(&self, rng: &mut ChaCha8Rng, intent: &IntentSpec, speaker: &Speaker) -> Result<Utterance> {
        let (features, last) = self.render(rng, &intent.template, intent.unit_frames, speaker)?;
        Ok(Utterance {
            features,
            intent_labels: vec![intent.id],
            char_labels: intent.template.clone(),
            boundaries_ms: vec![(last + 1) as f64 * self.config.hop_ms],
            speaker: speaker.id,
        })
    }

    /// A random sub-unit string with no intent, for character-level pre-training.
    pub fn generate_char_utterance(&self, rng: &mut ChaCha8Rng, speaker: &Speaker, len: (usize, usize)) -> Result<Utterance> {
        let units = Self::random_word(rng, self.config.num_chars, len);
        let (features, _) = self.render(rng, &units, self.config.unit_frames, speaker)?;
        Ok(Utterance {
            features,
            intent_labels: Vec::new(),
            char_labels: units,
            boundaries_ms: Vec::new(),
            speaker: speaker.id,
        })
    }

    /// Joins same-speaker utterances with a random silence gap between each
    /// pair, shifting every later boundary accordingly.
    pub fn concat_utterances(&self, rng: &mut ChaCha8Rng, utts: &[Utterance], gap_frames: (usize, usize)) -> Result<Utterance> {
        let first = utts.first().ok_or_else(|| SluError::Data("nothing to concatenate".into()))?;
        if let Some(u) = utts.iter().find(|u| u.speaker != first.speaker) {
            return Err(SluError::Data(format!(
                "cannot concatenate speakers {} and {}",
                first.speaker, u.speaker
            )));
        }
        let mut out = first.clone();
        for u in &utts[1..] {
            let gap = rng.random_range(gap_frames.0..=gap_frames.1);
            let mut rows = Vec::new();
            self.silence(rng, gap, &mut rows);
            if !rows.is_empty() {
                out.features.append_rows(&Tensor2::from_rows(&rows)?)?;
            }
            let offset_ms = out.features.rows() as f64 * self.config.hop_ms;
            out.features.append_rows(&u.features)?;
            out.intent_labels.extend_from_slice(&u.intent_labels);
            out.char_labels.extend_from_slice(&u.char_labels);
            out.boundaries_ms.extend(u.boundaries_ms.iter().map(|b| b + offset_ms));
        }
        Ok(out)
    }

    /// Frames whose mean-square energy exceeds the generator's silence threshold.
    pub fn is_speech(&self, frame: &[f64]) -> bool {
        mean_square(frame) > self.config.energy_threshold
    }

    pub fn shuffled<T: Clone>(rng: &mut ChaCha8Rng, items: &[T]) -> Vec<T> {
        let mut v = items.to_vec();
        v.shuffle(rng);
        v
    }
}
