use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generate::{mix_seed, Speaker, World};
use super::Utterance;
use crate::error::{Result, SluError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn scaled(self, factor: f64) -> Self {
        let s = |n: usize| (n as f64 * factor).round() as usize;
        Self {
            train: s(self.train),
            val: s(self.val),
            test: s(self.test),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSizes {
    pub char: SplitSizes,
    pub s1: SplitSizes,
    pub m2: SplitSizes,
    pub m3: SplitSizes,
    /// Fraction of each of S1, M2 and M3 drawn into the mixed corpus.
    pub mm_fraction: f64,
    /// Speakers per split; pools never overlap across splits or with the character corpus.
    pub speakers: SplitSizes,
    /// Speakers per split of the character corpus.
    pub char_speakers: SplitSizes,
    /// Inclusive sub-unit count range of character-corpus strings.
    pub char_length: (usize, usize),
}

impl Default for CorpusSizes {
    fn default() -> Self {
        let s1 = SplitSizes {
            train: 2000,
            val: 200,
            test: 400,
        };
        Self {
            char: SplitSizes {
                train: 4000,
                val: 200,
                test: 100,
            },
            s1,
            m2: s1.scaled(1.5),
            m3: s1.scaled(1.5),
            mm_fraction: 0.4,
            speakers: SplitSizes {
                train: 40,
                val: 8,
                test: 8,
            },
            char_speakers: SplitSizes {
                train: 400,
                val: 20,
                test: 20,
            },
            char_length: (3, 8),
        }
    }
}

impl CorpusSizes {
    /// Small corpora for unit tests.
    pub fn tiny() -> Self {
        let s = |train, val, test| SplitSizes { train, val, test };
        Self {
            char: s(20, 5, 5),
            s1: s(30, 6, 6),
            m2: s(24, 6, 6),
            m3: s(24, 6, 6),
            mm_fraction: 0.4,
            speakers: s(5, 2, 2),
            char_speakers: s(10, 2, 2),
            char_length: (3, 8),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplitSet {
    pub train: Vec<Utterance>,
    pub val: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

impl SplitSet {
    pub fn get(&self, split: &str) -> Option<&Vec<Utterance>> {
        match split {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }

    fn get_mut(&mut self, idx: usize) -> &mut Vec<Utterance> {
        match idx {
            0 => &mut self.train,
            1 => &mut self.val,
            _ => &mut self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpora {
    pub char: SplitSet,
    pub s1: SplitSet,
    pub m2: SplitSet,
    pub m3: SplitSet,
    pub mm: SplitSet,
}

pub const CORPUS_NAMES: [&str; 5] = ["char", "s1", "m2", "m3", "mm"];

impl Corpora {
    pub fn get(&self, corpus: &str) -> Option<&SplitSet> {
        match corpus {
            "char" => Some(&self.char),
            "s1" => Some(&self.s1),
            "m2" => Some(&self.m2),
            "m3" => Some(&self.m3),
            "mm" => Some(&self.mm),
            _ => None,
        }
    }
}

/// Speaker id ranges: intent corpora use blocks of 10_000 per split, the
/// character corpus starts at 100_000.
fn speaker_pool(world: &World, split: usize, count: usize, char_corpus: bool) -> Vec<Speaker> {
    let base = if char_corpus { 100_000 } else { 0 } + 10_000 * split as u32;
    (0..count as u32).map(|i| world.speaker(base + i)).collect()
}

fn utterance_rng(seed: u64, corpus: usize, split: usize, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(&[seed, corpus as u64, split as u64, index as u64]))
}

/// Every ordered `n`-tuple of intents, shuffled, so cycling through the list
/// covers all combinations evenly.
fn stratified_tuples(rng: &mut ChaCha8Rng, intents: usize, n: usize) -> Vec<Vec<usize>> {
    let total = intents.pow(n as u32);
    let tuples: Vec<Vec<usize>> = (0..total)
        .map(|mut c| {
            let mut t = vec![0; n];
            for slot in t.iter_mut().rev() {
                *slot = c % intents;
                c /= intents;
            }
            t
        })
        .collect();
    World::shuffled(rng, &tuples)
}

fn intent_split(world: &World, seed: u64, corpus: usize, split: usize, count: usize, n: usize, pool: &[Speaker]) -> Result<Vec<Utterance>> {
    let mut perm_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, corpus as u64, split as u64, u64::MAX]));
    let tuples = stratified_tuples(&mut perm_rng, world.intents.len(), n);
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = utterance_rng(seed, corpus, split, i);
            let speaker = &pool[rng.random_range(0..pool.len())];
            let parts = tuples[i % tuples.len()]
                .iter()
                .map(|&id| world.generate_utterance(&mut rng, &world.intents[id], speaker))
                .collect::<Result<Vec<_>>>()?;
            world.concat_utterances(&mut rng, &parts, world.config.gap_frames)
        })
        .collect()
}

fn char_split(world: &World, seed: u64, split: usize, count: usize, pool: &[Speaker], len: (usize, usize)) -> Result<Vec<Utterance>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = utterance_rng(seed, 0, split, i);
            let speaker = &pool[rng.random_range(0..pool.len())];
            world.generate_char_utterance(&mut rng, speaker, len)
        })
        .collect()
}

fn mixture(seed: u64, split: usize, fraction: f64, sources: [&Vec<Utterance>; 3]) -> Vec<Utterance> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 4, split as u64, u64::MAX]));
    let mut out = Vec::new();
    for src in sources {
        let k = ((src.len() as f64 * fraction).round() as usize).min(src.len());
        let mut picks = index::sample(&mut rng, src.len(), k).into_vec();
        picks.sort_unstable();
        out.extend(picks.into_iter().map(|i| src[i].clone()));
    }
    World::shuffled(&mut rng, &out)
}

/// Builds every corpus from `seed`. Each utterance draws from its own derived
/// seed, so output does not depend on thread scheduling.
pub fn build_corpora(world: &World, seed: u64, sizes: &CorpusSizes) -> Result<Corpora> {
    let spk = [sizes.speakers.train, sizes.speakers.val, sizes.speakers.test];
    let char_spk = [sizes.char_speakers.train, sizes.char_speakers.val, sizes.char_speakers.test];
    if spk.contains(&0) || char_spk.contains(&0) {
        return Err(SluError::Config("every split needs at least one speaker".into()));
    }
    if !(0.0..=1.0).contains(&sizes.mm_fraction) {
        return Err(SluError::Config(format!("mixture fraction {} outside [0, 1]", sizes.mm_fraction)));
    }
    let counts = |s: SplitSizes| [s.train, s.val, s.test];
    let mut c = Corpora {
        char: SplitSet::default(),
        s1: SplitSet::default(),
        m2: SplitSet::default(),
        m3: SplitSet::default(),
        mm: SplitSet::default(),
    };
    for split in 0..3 {
        let pool = speaker_pool(world, split, spk[split], false);
        let char_pool = speaker_pool(world, split, char_spk[split], true);
        *c.char.get_mut(split) = char_split(world, seed, split, counts(sizes.char)[split], &char_pool, sizes.char_length)?;
        *c.s1.get_mut(split) = intent_split(world, seed, 1, split, counts(sizes.s1)[split], 1, &pool)?;
        *c.m2.get_mut(split) = intent_split(world, seed, 2, split, counts(sizes.m2)[split], 2, &pool)?;
        *c.m3.get_mut(split) = intent_split(world, seed, 3, split, counts(sizes.m3)[split], 3, &pool)?;
        let sources = [&c.s1.get_mut(split).clone(), &c.m2.get_mut(split).clone(), &c.m3.get_mut(split).clone()];
        *c.mm.get_mut(split) = mixture(seed, split, sizes.mm_fraction, sources);
    }
    Ok(c)
}
