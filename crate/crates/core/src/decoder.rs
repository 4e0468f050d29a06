//! Greedy (best-path) CTC decoding, one lattice row at a time.
//!
//! A label fires on the first step whose argmax is that label and differs
//! from the previous step's argmax. Blank steps reset the "previous" symbol,
//! so the same label can fire again after at least one blank.

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderConfig;
use crate::lattice::Lattice;

/// Removes consecutive duplicates, then blanks.
pub fn collapse(frame_labels: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &s in frame_labels {
        if Some(s) != prev && s != blank {
            out.push(s);
        }
        prev = Some(s);
    }
    out
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Emission {
    pub label: usize,
    /// Lattice step at which the label fired.
    pub frame: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecoderState {
    blank: usize,
    prev: Option<usize>,
    emitted: Vec<Emission>,
    next_frame: usize,
}

impl DecoderState {
    pub fn new(blank: usize) -> Self {
        Self {
            blank,
            prev: None,
            emitted: Vec::new(),
            next_frame: 0,
        }
    }

    /// Consumes one lattice row.
    pub fn step(&mut self, row: &[f64]) -> Option<Emission> {
        let a = argmax(row);
        let frame = self.next_frame;
        self.next_frame += 1;
        let fire = a != self.blank && Some(a) != self.prev;
        self.prev = Some(a);
        if !fire {
            return None;
        }
        let e = Emission { label: a, frame };
        self.emitted.push(e);
        Some(e)
    }

    /// Consumes several rows (a streamed chunk of lattice).
    pub fn step_rows<'a>(&mut self, rows: impl IntoIterator<Item = &'a [f64]>) -> Vec<Emission> {
        rows.into_iter().filter_map(|r| self.step(r)).collect()
    }

    pub fn emissions(&self) -> &[Emission] {
        &self.emitted
    }

    pub fn labels(&self) -> Vec<usize> {
        self.emitted.iter().map(|e| e.label).collect()
    }

    /// Index of the next row to be consumed.
    pub fn frame(&self) -> usize {
        self.next_frame
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decoded {
    pub labels: Vec<usize>,
    pub frames: Vec<usize>,
}

impl Decoded {
    pub fn emissions(&self) -> Vec<Emission> {
        self.labels
            .iter()
            .zip(&self.frames)
            .map(|(&label, &frame)| Emission { label, frame })
            .collect()
    }
}

pub fn decode_offline(lattice: &Lattice) -> Decoded {
    let mut st = DecoderState::new(lattice.blank());
    for t in 0..lattice.steps() {
        st.step(lattice.row(t));
    }
    let (labels, frames) = st.emissions().iter().map(|e| (e.label, e.frame)).unzip();
    Decoded { labels, frames }
}

/// Maps lattice steps back to input time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameGeometry {
    pub hop_ms: f64,
    pub frame_skip: usize,
    pub reductions: Vec<usize>,
}

impl FrameGeometry {
    pub fn from_config(cfg: &EncoderConfig) -> Self {
        Self {
            hop_ms: cfg.hop_ms,
            frame_skip: cfg.frame_skip,
            reductions: cfg.reductions.clone(),
        }
    }

    pub fn frames_per_step(&self) -> usize {
        self.frame_skip * self.reductions.iter().product::<usize>()
    }

    /// Time at which lattice step `step` becomes available to a streaming
    /// decoder, in milliseconds: the end of the last input frame it reads.
    /// Step `k` reads up to frame `(k+1)·n - skip` with `n` frames per step.
    /// The final, padded step is produced when the input ends, so the time is
    /// capped at `total_frames` when it is known.
    pub fn emit_ms(&self, step: usize, total_frames: Option<usize>) -> f64 {
        let end = (step + 1) * self.frames_per_step() + 1 - self.frame_skip;
        let end = total_frames.map_or(end, |n| end.min(n));
        end as f64 * self.hop_ms
    }
}

/// One emission paired with the end of the speech it refers to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpottingEvent {
    pub label: usize,
    pub emit_frame: usize,
    pub emit_ms: f64,
    pub boundary_ms: f64,
}

impl SpottingEvent {
    /// Negative values mean the label fired before its speech ended.
    pub fn relative_ms(&self) -> f64 {
        self.emit_ms - self.boundary_ms
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Spotting {
    pub events: Vec<SpottingEvent>,
    pub unmatched_emissions: Vec<Emission>,
    pub unmatched_boundaries: Vec<f64>,
}

/// Pairs the i-th emission with the i-th boundary; surplus on either side is
/// reported as unmatched.
pub fn spotting_positions(
    emissions: &[Emission],
    boundaries_ms: &[f64],
    geometry: &FrameGeometry,
    total_frames: Option<usize>,
) -> Spotting {
    let n = emissions.len().min(boundaries_ms.len());
    let events = emissions[..n]
        .iter()
        .zip(&boundaries_ms[..n])
        .map(|(e, &b)| SpottingEvent {
            label: e.label,
            emit_frame: e.frame,
            emit_ms: geometry.emit_ms(e.frame, total_frames),
            boundary_ms: b,
        })
        .collect();
    Spotting {
        events,
        unmatched_emissions: emissions[n..].to_vec(),
        unmatched_boundaries: boundaries_ms[n..].to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{log_softmax_rows, Tensor2};
    use proptest::prelude::*;

    const A: usize = 0;
    const B: usize = 1;
    const BL: usize = 2;

    fn one_hot_lattice(symbols: &[usize], width: usize) -> Lattice {
        let rows: Vec<Vec<f64>> = symbols
            .iter()
            .map(|&s| (0..width).map(|k| if k == s { 0.9 } else { 0.1 / (width - 1) as f64 }).collect())
            .collect();
        Lattice::from_probs(&rows).unwrap()
    }

    #[test]
    fn collapse_cases() {
        assert_eq!(collapse(&[A, A, BL, A], BL), vec![A, A]);
        assert_eq!(collapse(&[BL, BL], BL), Vec::<usize>::new());
        assert_eq!(collapse(&[BL, A, BL, B, B, BL], BL), vec![A, B]);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn greedy_fires_on_new_symbols() {
        let lat = one_hot_lattice(&[BL, A, A, BL, A], 3);
        let d = decode_offline(&lat);
        assert_eq!(d.labels, vec![A, A]);
        assert_eq!(d.frames, vec![1, 4]);

        let lat = one_hot_lattice(&[BL, BL, BL], 3);
        assert!(decode_offline(&lat).labels.is_empty());
    }

    #[test]
    fn emit_time_is_end_of_last_frame_read() {
        let g = FrameGeometry::from_config(&EncoderConfig::default());
        assert_eq!(g.emit_ms(0, None), 460.0);
        assert_eq!(g.emit_ms(1, Some(200)), 940.0);
        assert_eq!(g.emit_ms(4, Some(200)), 2000.0);
    }

    #[test]
    fn spotting_relative_positions() {
        let g = FrameGeometry::from_config(&EncoderConfig::default());
        let s = spotting_positions(&[Emission { label: A, frame: 0 }], &[460.0], &g, None);
        assert_eq!(s.events[0].relative_ms(), 0.0);

        let s = spotting_positions(
            &[Emission { label: A, frame: 0 }, Emission { label: B, frame: 2 }],
            &[700.0],
            &g,
            None,
        );
        assert_eq!(s.events.len(), 1);
        assert_eq!(s.events[0].relative_ms(), -240.0);
        assert_eq!(s.unmatched_emissions, vec![Emission { label: B, frame: 2 }]);
    }

    fn lattice_strategy() -> impl Strategy<Value = Lattice> {
        (1usize..5, 0usize..40).prop_flat_map(|(v, t)| {
            proptest::collection::vec(-3.0f64..3.0, t * (v + 1)).prop_map(move |data| {
                // Coarse values make argmax ties common, which exercises tie-breaking.
                let data = data.into_iter().map(|x| x.round()).collect();
                let logits = Tensor2::from_vec(t, v + 1, data).unwrap();
                Lattice::new(log_softmax_rows(&logits)).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn offline_equals_collapse_of_argmax(lat in lattice_strategy()) {
            let path: Vec<usize> = (0..lat.steps()).map(|t| argmax(lat.row(t))).collect();
            prop_assert_eq!(decode_offline(&lat).labels, collapse(&path, lat.blank()));
        }

        #[test]
        fn chunked_stepping_equals_offline(lat in lattice_strategy(), cuts in proptest::collection::vec(1usize..6, 1..10)) {
            let mut st = DecoderState::new(lat.blank());
            let mut t = 0;
            let mut streamed = Vec::new();
            for c in cuts.iter().cycle() {
                if t >= lat.steps() { break; }
                let end = (t + c).min(lat.steps());
                streamed.extend(st.step_rows((t..end).map(|i| lat.row(i))));
                t = end;
            }
            let off = decode_offline(&lat);
            prop_assert_eq!(streamed, off.emissions());
        }

        #[test]
        fn prefix_gives_prefix(lat in lattice_strategy(), frac in 0.0f64..1.0) {
            let k = (lat.steps() as f64 * frac) as usize;
            let full = decode_offline(&lat).emissions();
            let part = decode_offline(&lat.prefix(k)).emissions();
            prop_assert!(part.len() <= full.len());
            prop_assert_eq!(&full[..part.len()], part.as_slice());
        }
    }
}
