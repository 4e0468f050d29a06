//! Split files: `<corpus>_<split>.json` (manifest) and `<corpus>_<split>.bin`
//! (records). Records are little-endian: magic, u32 version, u64 count, then
//! per utterance u32 T, D, U, C, speaker, U label ids, C char ids,
//! U f64 boundaries and T*D f64 features.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Utterance;
use crate::error::{Result, SluError};
use crate::numerics::Tensor2;

pub const DATA_MAGIC: [u8; 8] = *b"SLUDATA\0";
pub const DATA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub corpus: String,
    pub split: String,
    pub utterances: usize,
    /// Occurrences of each intent id across all label sequences.
    pub intent_distribution: Vec<usize>,
    pub seed: u64,
    pub feature_dim: usize,
    pub hop_ms: f64,
    pub format_version: u32,
}

impl DatasetManifest {
    pub fn describe(corpus: &str, split: &str, utts: &[Utterance], num_intents: usize, seed: u64, hop_ms: f64) -> Self {
        let mut dist = vec![0; num_intents];
        for u in utts {
            for &l in &u.intent_labels {
                if l >= dist.len() {
                    dist.resize(l + 1, 0);
                }
                dist[l] += 1;
            }
        }
        Self {
            corpus: corpus.to_string(),
            split: split.to_string(),
            utterances: utts.len(),
            intent_distribution: dist,
            seed,
            feature_dim: utts.first().map_or(0, |u| u.features.cols()),
            hop_ms,
            format_version: DATA_VERSION,
        }
    }
}

pub fn manifest_path(dir: &Path, corpus: &str, split: &str) -> PathBuf {
    dir.join(format!("{corpus}_{split}.json"))
}

pub fn records_path(dir: &Path, corpus: &str, split: &str) -> PathBuf {
    dir.join(format!("{corpus}_{split}.bin"))
}

fn u32_of(n: usize, what: &str) -> Result<[u8; 4]> {
    u32::try_from(n)
        .map(u32::to_le_bytes)
        .map_err(|_| SluError::Data(format!("{what} {n} exceeds the record format")))
}

pub fn encode_records(utts: &[Utterance]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&DATA_MAGIC);
    out.extend_from_slice(&DATA_VERSION.to_le_bytes());
    out.extend_from_slice(&(utts.len() as u64).to_le_bytes());
    for u in utts {
        u.validate()?;
        out.extend_from_slice(&u32_of(u.features.rows(), "frame count")?);
        out.extend_from_slice(&u32_of(u.features.cols(), "feature dim")?);
        out.extend_from_slice(&u32_of(u.intent_labels.len(), "label count")?);
        out.extend_from_slice(&u32_of(u.char_labels.len(), "char count")?);
        out.extend_from_slice(&u.speaker.to_le_bytes());
        for &l in u.intent_labels.iter().chain(&u.char_labels) {
            out.extend_from_slice(&u32_of(l, "label id")?);
        }
        for b in u.boundaries_ms.iter().chain(u.features.data()) {
            out.extend_from_slice(&b.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| SluError::format(self.origin, format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| SluError::format(self.origin, "record size overflow"))?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn ids(&mut self, n: usize) -> Result<Vec<usize>> {
        (0..n).map(|_| self.u32().map(|v| v as usize)).collect()
    }
}

pub fn decode_records(bytes: &[u8], origin: &Path) -> Result<Vec<Utterance>> {
    let mut r = Reader { bytes, pos: 0, origin };
    if r.take(8)? != DATA_MAGIC {
        return Err(SluError::format(origin, "not a dataset record file"));
    }
    let version = r.u32()?;
    if version != DATA_VERSION {
        return Err(SluError::Version {
            expected: DATA_VERSION.to_string(),
            found: version.to_string(),
        });
    }
    let count = r.u64()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let (t, d, u, c) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let speaker = r.u32()?;
        let intent_labels = r.ids(u)?;
        let char_labels = r.ids(c)?;
        let boundaries_ms = r.f64s(u)?;
        let n = t.checked_mul(d).ok_or_else(|| SluError::format(origin, "record size overflow"))?;
        let features = Tensor2::from_vec(t, d, r.f64s(n)?)?;
        let utt = Utterance {
            features,
            intent_labels,
            char_labels,
            boundaries_ms,
            speaker,
        };
        utt.validate().map_err(|e| SluError::format(origin, e.to_string()))?;
        out.push(utt);
    }
    if r.pos != bytes.len() {
        return Err(SluError::format(origin, "trailing bytes after last record"));
    }
    Ok(out)
}

pub fn save_split(dir: &Path, manifest: &DatasetManifest, utts: &[Utterance]) -> Result<()> {
    if manifest.utterances != utts.len() {
        return Err(SluError::Contract(format!(
            "manifest lists {} utterances, got {}",
            manifest.utterances,
            utts.len()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| SluError::io(dir, e))?;
    let mpath = manifest_path(dir, &manifest.corpus, &manifest.split);
    let json = serde_json::to_string_pretty(manifest).map_err(|e| SluError::format(&mpath, e.to_string()))?;
    fs::write(&mpath, json).map_err(|e| SluError::io(&mpath, e))?;
    let rpath = records_path(dir, &manifest.corpus, &manifest.split);
    fs::write(&rpath, encode_records(utts)?).map_err(|e| SluError::io(&rpath, e))
}

pub fn load_split(dir: &Path, corpus: &str, split: &str) -> Result<(DatasetManifest, Vec<Utterance>)> {
    let mpath = manifest_path(dir, corpus, split);
    let text = fs::read_to_string(&mpath).map_err(|e| SluError::io(&mpath, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| SluError::format(&mpath, e.to_string()))?;
    if manifest.format_version != DATA_VERSION {
        return Err(SluError::Version {
            expected: DATA_VERSION.to_string(),
            found: manifest.format_version.to_string(),
        });
    }
    let rpath = records_path(dir, corpus, split);
    let bytes = fs::read(&rpath).map_err(|e| SluError::io(&rpath, e))?;
    let utts = decode_records(&bytes, &rpath)?;
    if utts.len() != manifest.utterances {
        return Err(SluError::format(
            &rpath,
            format!("{} records but manifest lists {}", utts.len(), manifest.utterances),
        ));
    }
    if let Some(u) = utts.iter().find(|u| u.features.cols() != manifest.feature_dim) {
        return Err(SluError::format(
            &rpath,
            format!("feature dim {} but manifest lists {}", u.features.cols(), manifest.feature_dim),
        ));
    }
    Ok((manifest, utts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_corpora, CorpusSizes, GeneratorConfig, World};

    fn sample() -> Vec<Utterance> {
        let world = World::new(GeneratorConfig::default(), 4).unwrap();
        let c = build_corpora(&world, 4, &CorpusSizes::tiny()).unwrap();
        c.mm.train.into_iter().chain(c.char.val).collect()
    }

    #[test]
    fn records_round_trip_bit_exact() {
        let utts = sample();
        let bytes = encode_records(&utts).unwrap();
        let back = decode_records(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.len(), utts.len());
        for (a, b) in utts.iter().zip(&back) {
            assert_eq!(a, b);
            let bits = |u: &Utterance| u.features.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn split_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let utts = sample();
        let m = DatasetManifest::describe("mm", "train", &utts, 12, 4, 10.0);
        save_split(dir.path(), &m, &utts).unwrap();
        let (m2, back) = load_split(dir.path(), "mm", "train").unwrap();
        assert_eq!(m, m2);
        assert_eq!(utts, back);
        assert_eq!(m.intent_distribution.iter().sum::<usize>(), utts.iter().map(|u| u.intent_labels.len()).sum::<usize>());
    }

    #[test]
    fn corrupt_files_rejected() {
        let utts = sample();
        let bytes = encode_records(&utts).unwrap();
        let p = Path::new("mem");
        assert!(decode_records(&bytes[..bytes.len() - 3], p).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_records(&bad, p).is_err());
        let mut ver = bytes.clone();
        ver[8] = 9;
        assert!(matches!(decode_records(&ver, p), Err(SluError::Version { .. })));
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_records(&extra, p).is_err());
    }
}
