//! Exact-sequence accuracy, early-spotting statistics and their CSV forms.

use std::fmt::Write as _;

use crate::data::{CmvnStats, Utterance};
use crate::decoder::{decode_offline, spotting_positions, FrameGeometry, SpottingEvent};
use crate::encoder::EncoderModel;
use crate::error::{Result, SluError};

/// Fraction of predictions equal to their reference, order and length included.
pub fn sequence_accuracy(predictions: &[Vec<usize>], references: &[Vec<usize>]) -> Result<f64> {
    if predictions.len() != references.len() {
        return Err(SluError::Contract(format!(
            "{} predictions for {} references",
            predictions.len(),
            references.len()
        )));
    }
    if predictions.is_empty() {
        return Ok(0.0);
    }
    let correct = predictions.iter().zip(references).filter(|(p, r)| p == r).count();
    Ok(correct as f64 / predictions.len() as f64)
}

/// `matrix[reference][predicted]` over utterances whose predicted and
/// reference sequences have equal length. Labels at or above `vocab` are ignored.
pub fn confusion_matrix(predictions: &[Vec<usize>], references: &[Vec<usize>], vocab: usize) -> Result<Vec<Vec<usize>>> {
    if predictions.len() != references.len() {
        return Err(SluError::Contract(format!(
            "{} predictions for {} references",
            predictions.len(),
            references.len()
        )));
    }
    let mut m = vec![vec![0; vocab]; vocab];
    for (p, r) in predictions.iter().zip(references) {
        if p.len() != r.len() {
            continue;
        }
        for (&pi, &ri) in p.iter().zip(r) {
            if pi < vocab && ri < vocab {
                m[ri][pi] += 1;
            }
        }
    }
    Ok(m)
}

pub fn confusion_csv(matrix: &[Vec<usize>]) -> String {
    let mut out = String::from("reference");
    for j in 0..matrix.len() {
        let _ = write!(out, ",pred_{j}");
    }
    out.push('\n');
    for (i, row) in matrix.iter().enumerate() {
        let _ = write!(out, "{i}");
        for c in row {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpottingReport {
    pub count: usize,
    pub bucket_ms: f64,
    /// `(bucket start in ms, events in [start, start + bucket_ms))`, ascending.
    pub histogram: Vec<(f64, usize)>,
    pub fraction_early: f64,
    pub fraction_exact: f64,
    pub fraction_late: f64,
    pub mean_ms: f64,
    pub median_ms: f64,
}

pub const DEFAULT_BUCKET_MS: f64 = 100.0;

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

pub fn early_spotting_report(events: &[SpottingEvent], bucket_ms: f64) -> Result<SpottingReport> {
    if events.is_empty() {
        return Err(SluError::Data("no spotting events to report".into()));
    }
    if !(bucket_ms > 0.0) {
        return Err(SluError::Config(format!("bucket width {bucket_ms} must be positive")));
    }
    let mut rel: Vec<f64> = events.iter().map(SpottingEvent::relative_ms).collect();
    rel.sort_by(f64::total_cmp);
    let n = rel.len() as f64;
    let early = rel.iter().filter(|&&r| r < 0.0).count();
    let exact = rel.iter().filter(|&&r| r == 0.0).count();
    let mut histogram: Vec<(f64, usize)> = Vec::new();
    for &r in &rel {
        let start = (r / bucket_ms).floor() * bucket_ms;
        match histogram.last_mut() {
            Some((s, c)) if *s == start => *c += 1,
            _ => histogram.push((start, 1)),
        }
    }
    Ok(SpottingReport {
        count: rel.len(),
        bucket_ms,
        histogram,
        fraction_early: early as f64 / n,
        fraction_exact: exact as f64 / n,
        fraction_late: (rel.len() - early - exact) as f64 / n,
        mean_ms: rel.iter().sum::<f64>() / n,
        median_ms: median(&rel),
    })
}

impl SpottingReport {
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (k, v) in [
            ("events", self.count as f64),
            ("fraction_early", self.fraction_early),
            ("fraction_exact", self.fraction_exact),
            ("fraction_late", self.fraction_late),
            ("mean_relative_ms", self.mean_ms),
            ("median_relative_ms", self.median_ms),
        ] {
            let _ = writeln!(out, "{k},{v}");
        }
        out
    }

    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bucket_ms,count\n");
        for (start, count) in &self.histogram {
            let _ = writeln!(out, "{start},{count}");
        }
        out
    }
}

/// Average ranks (1-based), ties sharing the mean of their positions.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; `NaN` when either side is constant or fewer
/// than two pairs exist.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    if x.len() != y.len() || x.len() < 2 {
        return f64::NAN;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    sxy / (sxx * syy).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LengthPosition {
    /// `(utterance length in sub-units, relative position in ms)`.
    pub pairs: Vec<(usize, f64)>,
    pub rank_correlation: f64,
}

impl LengthPosition {
    pub fn csv(&self) -> String {
        let mut out = String::from("length_chars,relative_ms\n");
        for (l, r) in &self.pairs {
            let _ = writeln!(out, "{l},{r}");
        }
        out
    }
}

/// Pairs each event with the length of the utterance it came from.
pub fn length_vs_position(events: &[SpottingEvent], lengths: &[usize]) -> Result<LengthPosition> {
    if events.len() != lengths.len() {
        return Err(SluError::Contract(format!("{} events for {} lengths", events.len(), lengths.len())));
    }
    let pairs: Vec<(usize, f64)> = lengths.iter().zip(events).map(|(&l, e)| (l, e.relative_ms())).collect();
    let xs: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    Ok(LengthPosition {
        rank_correlation: spearman(&xs, &ys),
        pairs,
    })
}

/// Offline decoding of a test split.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub predictions: Vec<Vec<usize>>,
    pub references: Vec<Vec<usize>>,
    pub accuracy: f64,
    /// Spotting events of correctly decoded utterances, in utterance order.
    pub events: Vec<SpottingEvent>,
    /// Sub-unit length of the utterance behind each event.
    pub event_lengths: Vec<usize>,
}

pub fn evaluate(model: &EncoderModel, cmvn: &CmvnStats, utts: &[Utterance]) -> Result<Evaluation> {
    let geometry = FrameGeometry::from_config(&model.config);
    let mut predictions = Vec::with_capacity(utts.len());
    let mut events = Vec::new();
    let mut event_lengths = Vec::new();
    for u in utts {
        let lattice = model.forward(&cmvn.apply(&u.features)?)?;
        let decoded = decode_offline(&lattice);
        if decoded.labels == u.intent_labels {
            let s = spotting_positions(&decoded.emissions(), &u.boundaries_ms, &geometry, Some(u.frames()));
            event_lengths.extend(std::iter::repeat_n(u.char_labels.len(), s.events.len()));
            events.extend(s.events);
        }
        predictions.push(decoded.labels);
    }
    let references: Vec<Vec<usize>> = utts.iter().map(|u| u.intent_labels.clone()).collect();
    Ok(Evaluation {
        accuracy: sequence_accuracy(&predictions, &references)?,
        predictions,
        references,
        events,
        event_lengths,
    })
}
