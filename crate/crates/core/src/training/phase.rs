use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::optim::{clip_grad_norm, AdamW};
use super::Phase;
use crate::data::mix_seed;
use crate::error::{Result, SluError};
use crate::numerics::{Gradients, Graph, NodeId, ParamStore, Tensor2};

/// One training sequence: model input (normalized features or a cached
/// frozen-layer output) and its target labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub input: Tensor2,
    pub labels: Vec<usize>,
    /// Frame count of the source utterance.
    pub frames: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub phase: Phase,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub skipped: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub const HEADER: &'static str = "epoch,phase,train_loss,val_accuracy,skipped";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.rows {
            // `{:?}` prints the shortest representation that round-trips.
            let _ = writeln!(
                out,
                "{},{},{:?},{:?},{}",
                r.epoch,
                r.phase.as_str(),
                r.train_loss,
                r.val_accuracy,
                r.skipped
            );
        }
        out
    }

    pub fn phase_rows(&self, phase: Phase) -> impl Iterator<Item = &LogRow> {
        self.rows.iter().filter(move |r| r.phase == phase)
    }
}

/// Validation summary; higher accuracy wins, ties go to lower loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Validation {
    pub accuracy: f64,
    pub loss: f64,
}

impl Validation {
    fn better_than(&self, other: &Validation) -> bool {
        self.accuracy > other.accuracy || (self.accuracy == other.accuracy && self.loss < other.loss)
    }
}

pub(crate) struct PhaseRun<'a> {
    pub phase: Phase,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
    pub parallel: bool,
    /// Samples dropped before training (CTC-infeasible), reported on every row.
    pub skipped_samples: usize,
    pub log: &'a mut TrainLog,
}

/// Per-example loss builder: `(model, example, dropout seed, graph)` to a
/// scalar loss node.
pub(crate) type LossFn<'f, S> = dyn Fn(&S, &Example, u64, &mut Graph) -> Result<NodeId> + Sync + 'f;

fn example_gradients<S: ParamStore>(store: &S, ex: &Example, seed: u64, loss: &LossFn<'_, S>) -> Result<(f64, Gradients)> {
    let mut g = Graph::new();
    let node = loss(store, ex, seed, &mut g)?;
    let value = g.value(node).item();
    Ok((value, g.backward(node)?))
}

/// Mini-batch training with per-epoch validation. Returns the best
/// parameters seen (by validation) and leaves them in `store`.
pub(crate) fn run_phase<S>(
    store: &mut S,
    opt: &mut AdamW,
    train: &[Example],
    run: PhaseRun<'_>,
    loss: &LossFn<'_, S>,
    validate: &(dyn Fn(&S) -> Result<Validation> + '_),
) -> Result<Validation>
where
    S: ParamStore + Clone + Sync,
{
    if train.is_empty() {
        return Err(SluError::Data(format!("{} phase has no training samples", run.phase.as_str())));
    }
    let mut best_params = store.clone();
    let mut best = validate(store)?;
    let mut since_best = 0;
    let mut consecutive_bad = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=run.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[run.seed, run.phase.tag(), epoch as u64]));
        order.shuffle(&mut rng);
        let skipped_before = opt.skipped();
        let (mut loss_sum, mut loss_count, mut bad_batches) = (0.0, 0usize, 0usize);
        for batch in order.chunks(run.batch_size) {
            let seed_of = |i: usize| mix_seed(&[run.seed, run.phase.tag(), epoch as u64, i as u64]);
            let one = |&i: &usize| example_gradients(store, &train[i], seed_of(i), loss);
            let results: Vec<(f64, Gradients)> = if run.parallel {
                batch.par_iter().map(one).collect::<Result<_>>()?
            } else {
                batch.iter().map(one).collect::<Result<_>>()?
            };
            let batch_loss: f64 = results.iter().map(|r| r.0).sum::<f64>() / results.len() as f64;
            if !batch_loss.is_finite() {
                bad_batches += 1;
                consecutive_bad += 1;
                log::warn!("{} epoch {epoch}: non-finite batch loss, batch skipped", run.phase.as_str());
                if consecutive_bad >= 2 {
                    return Err(SluError::Divergence(format!(
                        "{} phase: non-finite loss on two consecutive batches in epoch {epoch}",
                        run.phase.as_str()
                    )));
                }
                continue;
            }
            consecutive_bad = 0;
            let mut grads = Gradients::default();
            for (_, g) in &results {
                grads.merge(g);
            }
            grads.scale(1.0 / results.len() as f64);
            clip_grad_norm(&mut grads, opt.config.clip_norm);
            opt.step(store, &grads)?;
            loss_sum += batch_loss * results.len() as f64;
            loss_count += results.len();
        }
        let val = validate(store)?;
        let train_loss = if loss_count > 0 { loss_sum / loss_count as f64 } else { f64::NAN };
        run.log.rows.push(LogRow {
            epoch,
            phase: run.phase,
            train_loss,
            val_accuracy: val.accuracy,
            skipped: run.skipped_samples + bad_batches + (opt.skipped() - skipped_before),
        });
        log::info!(
            "{} epoch {epoch}: train loss {train_loss:.4}, val accuracy {:.4}, val loss {:.4}",
            run.phase.as_str(),
            val.accuracy,
            val.loss
        );
        if val.better_than(&best) {
            best = val;
            best_params = store.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if run.patience > 0 && since_best >= run.patience {
                log::info!("{} phase stopped early after epoch {epoch}", run.phase.as_str());
                break;
            }
        }
    }
    *store = best_params;
    Ok(best)
}
