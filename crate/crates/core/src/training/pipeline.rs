use super::asr::AsrModel;
use super::optim::AdamW;
use super::phase::{run_phase, Example, LossFn, PhaseRun, TrainLog, Validation};
use super::{Phase, TrainConfig};
use crate::ctc::{ctc_loss_from_logits, min_frames};
use crate::data::{mix_seed, CmvnStats, Corpora, Utterance};
use crate::decoder::decode_offline;
use crate::encoder::{stack_frames, Dropout, EncoderModel, LstmpLayer};
use crate::error::{Result, SluError};
use crate::lattice::Lattice;
use crate::numerics::{log_softmax, log_softmax_rows, Graph, NodeId, Tensor2};

/// Everything a training run reads. Features are raw; normalization happens
/// inside each phase with `cmvn`.
#[derive(Clone, Debug)]
pub struct PipelineData {
    pub char_train: Vec<Utterance>,
    pub char_val: Vec<Utterance>,
    /// Single-intent data for the cross-entropy phase.
    pub ce_train: Vec<Utterance>,
    pub ce_val: Vec<Utterance>,
    pub train: Vec<Utterance>,
    pub val: Vec<Utterance>,
    pub cmvn: CmvnStats,
}

impl PipelineData {
    /// CTC data from `corpus`; normalization statistics always come from the
    /// single-intent training split so every run shares one feature space.
    pub fn from_corpora(corpora: &Corpora, corpus: &str) -> Result<Self> {
        let set = corpora
            .get(corpus)
            .filter(|_| corpus != "char")
            .ok_or_else(|| SluError::Config(format!("unknown training corpus {corpus:?}")))?;
        Ok(Self {
            char_train: corpora.char.train.clone(),
            char_val: corpora.char.val.clone(),
            ce_train: corpora.s1.train.clone(),
            ce_val: corpora.s1.val.clone(),
            train: set.train.clone(),
            val: set.val.clone(),
            cmvn: CmvnStats::compute(&corpora.s1.train)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct PipelineResult {
    pub model: EncoderModel,
    pub cmvn: CmvnStats,
    pub log: TrainLog,
    /// Validation sequence accuracy of the returned model.
    pub val_accuracy: f64,
}

fn run_settings<'a>(cfg: &TrainConfig, phase: Phase, epochs: usize, parallel: bool, skipped: usize, log: &'a mut TrainLog) -> PhaseRun<'a> {
    PhaseRun {
        phase,
        epochs,
        batch_size: cfg.schedule.batch_size,
        patience: cfg.schedule.patience,
        seed: cfg.seed,
        parallel,
        skipped_samples: skipped,
        log,
    }
}

/// Drops samples whose lattice would be shorter than CTC needs. Errors when
/// more than `max_fraction` of them go.
fn feasible(examples: Vec<Example>, steps: impl Fn(&Example) -> usize, max_fraction: f64, what: &str) -> Result<(Vec<Example>, usize)> {
    let total = examples.len();
    let kept: Vec<Example> = examples.into_iter().filter(|e| min_frames(&e.labels) <= steps(e)).collect();
    let skipped = total - kept.len();
    if skipped > 0 {
        log::warn!("{what}: {skipped} of {total} samples are too short for their labels and were skipped");
    }
    if total > 0 && skipped as f64 > max_fraction * total as f64 {
        return Err(SluError::Data(format!(
            "{what}: {skipped} of {total} samples are too short for their labels; check the reduction factors"
        )));
    }
    Ok((kept, skipped))
}

fn ctc_node(g: &mut Graph, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
    let res = ctc_loss_from_logits(g.value(logits), labels)?;
    g.loss_with_grad(logits, res.loss, res.grad)
}

/// Greedy sequence accuracy and mean CTC loss of `logits_of` over `examples`.
/// Infeasible samples count as errors and are left out of the loss.
fn validate_ctc(examples: &[Example], logits_of: impl Fn(&Example) -> Result<Tensor2>) -> Result<Validation> {
    if examples.is_empty() {
        return Ok(Validation { accuracy: 0.0, loss: f64::INFINITY });
    }
    let (mut correct, mut loss, mut counted) = (0usize, 0.0, 0usize);
    for ex in examples {
        let logits = logits_of(ex)?;
        if decode_offline(&Lattice::new_unchecked(log_softmax_rows(&logits))).labels == ex.labels {
            correct += 1;
        }
        if let Ok(r) = ctc_loss_from_logits(&logits, &ex.labels) {
            loss += r.loss;
            counted += 1;
        }
    }
    Ok(Validation {
        accuracy: correct as f64 / examples.len() as f64,
        loss: if counted > 0 { loss / counted as f64 } else { f64::INFINITY },
    })
}

/// Trains a temporary character recognizer with CTC and returns its first
/// layer for freezing into the intent model.
pub fn pretrain_asr(cfg: &TrainConfig, train: &[Utterance], val: &[Utterance], cmvn: &CmvnStats, parallel: bool, log: &mut TrainLog) -> Result<LstmpLayer> {
    cfg.validate()?;
    let enc = &cfg.encoder;
    let prepare = |utts: &[Utterance]| -> Result<Vec<Example>> {
        utts.iter()
            .map(|u| {
                if let Some(&c) = u.char_labels.iter().find(|&&c| c >= cfg.num_chars) {
                    return Err(SluError::Data(format!("character id {c} outside alphabet of {}", cfg.num_chars)));
                }
                Ok(Example {
                    input: stack_frames(&cmvn.apply(&u.features)?, enc.stack_left, enc.frame_skip),
                    labels: u.char_labels.clone(),
                    frames: u.frames(),
                })
            })
            .collect()
    };
    let (train, skipped) = feasible(prepare(train)?, |e| e.input.rows(), cfg.max_skip_fraction, "asr pre-training")?;
    let val = prepare(val)?;
    let mut model = AsrModel::new(enc, cfg.num_chars, mix_seed(&[cfg.seed, Phase::Asr.tag()]));
    let mut opt = AdamW::new(cfg.phase_optimizer(Phase::Asr))?;
    let p = cfg.dropout;
    let loss: &LossFn<'_, AsrModel> = &|m, ex, seed, g| {
        let x = g.constant(ex.input.clone());
        let out = m.layer_graph(g, x)?;
        let out = Dropout::new(p, seed).apply(g, out)?;
        let logits = m.head_graph(g, out)?;
        ctc_node(g, logits, &ex.labels)
    };
    let validate = |m: &AsrModel| validate_ctc(&val, |ex| m.logits(&ex.input));
    let run = run_settings(cfg, Phase::Asr, cfg.schedule.asr_epochs, parallel, skipped, log);
    run_phase(&mut model, &mut opt, &train, run, loss, &validate)?;
    Ok(model.layer)
}

/// Index of the first layer that is trained; earlier (frozen) layers are
/// evaluated once and cached as the examples' input.
fn first_trained_layer(model: &EncoderModel) -> usize {
    model.frozen.iter().take_while(|&&f| f).count().min(model.layers.len() - 1)
}

fn encoder_examples(model: &EncoderModel, utts: &[Utterance], cmvn: &CmvnStats, first: usize) -> Result<Vec<Example>> {
    utts.iter()
        .map(|u| {
            let feats = cmvn.apply(&u.features)?;
            let input = if first == 0 { feats } else { model.layer_outputs(&feats, first)? };
            Ok(Example {
                input,
                labels: u.intent_labels.clone(),
                frames: u.frames(),
            })
        })
        .collect()
}

fn check_labels(utts: &[Utterance], vocab: usize) -> Result<()> {
    match utts.iter().flat_map(|u| &u.intent_labels).find(|&&l| l >= vocab) {
        Some(l) => Err(SluError::Data(format!("intent id {l} outside vocabulary of {vocab}"))),
        None => Ok(()),
    }
}

/// Cross-entropy on the last output step over the non-blank outputs. The
/// frozen layers stay untouched. Returns the best validation accuracy.
pub fn pretrain_ce(model: &mut EncoderModel, cfg: &TrainConfig, train: &[Utterance], val: &[Utterance], cmvn: &CmvnStats, parallel: bool, log: &mut TrainLog) -> Result<f64> {
    cfg.validate()?;
    if let Some(u) = train.iter().chain(val).find(|u| u.intent_labels.len() != 1) {
        return Err(SluError::Data(format!(
            "cross-entropy pre-training needs single-intent utterances, found {} intents",
            u.intent_labels.len()
        )));
    }
    let v = model.config.vocab_size;
    check_labels(train, v)?;
    let first = first_trained_layer(model);
    let train = encoder_examples(model, train, cmvn, first)?;
    let val = encoder_examples(model, val, cmvn, first)?;
    let p = cfg.dropout;
    let loss: &LossFn<'_, EncoderModel> = &|m, ex, seed, g| {
        let mut dropout = Dropout::new(p, seed);
        let logits = m.forward_graph_from(g, &ex.input, first, Some(&mut dropout))?;
        let steps = g.value(logits).rows();
        if steps == 0 {
            return Err(SluError::Data("utterance too short for a single output step".into()));
        }
        let last = g.row(logits, steps - 1)?;
        let labels = g.slice_cols(last, 0, v)?;
        let lp = g.log_softmax_rows(labels);
        let mut target = Tensor2::zeros(1, v);
        target.set(0, ex.labels[0], -1.0);
        let target = g.constant(target);
        let picked = g.mul(lp, target)?;
        Ok(g.sum(picked))
    };
    let validate = |m: &EncoderModel| -> Result<Validation> {
        let (mut correct, mut nll) = (0usize, 0.0);
        for ex in &val {
            let logits = m.logits_from(&ex.input, first)?;
            let Some(last) = logits.rows().checked_sub(1) else { continue };
            let lp = log_softmax(&logits.row(last)[..v]);
            let best = crate::decoder::argmax(&lp);
            correct += usize::from(best == ex.labels[0]);
            nll -= lp[ex.labels[0]];
        }
        let n = val.len().max(1) as f64;
        Ok(Validation {
            accuracy: correct as f64 / n,
            loss: nll / n,
        })
    };
    let mut opt = AdamW::new(cfg.phase_optimizer(Phase::Ce))?;
    let run = run_settings(cfg, Phase::Ce, cfg.schedule.ce_epochs, parallel, 0, log);
    Ok(run_phase(model, &mut opt, &train, run, loss, &validate)?.accuracy)
}

/// CTC training on intent sequences, keeping the parameters with the best
/// validation sequence accuracy. Returns that accuracy.
pub fn train_ctc(model: &mut EncoderModel, cfg: &TrainConfig, train: &[Utterance], val: &[Utterance], cmvn: &CmvnStats, parallel: bool, log: &mut TrainLog) -> Result<f64> {
    cfg.validate()?;
    check_labels(train, model.config.vocab_size)?;
    let first = first_trained_layer(model);
    let enc = model.config.clone();
    let examples = encoder_examples(model, train, cmvn, first)?;
    let (kept, skipped) = feasible(examples, |e| enc.output_steps(e.frames), cfg.max_skip_fraction, "ctc training")?;
    let val = encoder_examples(model, val, cmvn, first)?;
    let p = cfg.dropout;
    let loss: &LossFn<'_, EncoderModel> = &|m, ex, seed, g| {
        let mut dropout = Dropout::new(p, seed);
        let logits = m.forward_graph_from(g, &ex.input, first, Some(&mut dropout))?;
        ctc_node(g, logits, &ex.labels)
    };
    let validate = |m: &EncoderModel| validate_ctc(&val, |ex| m.logits_from(&ex.input, first));
    let mut opt = AdamW::new(cfg.phase_optimizer(Phase::Ctc))?;
    let run = run_settings(cfg, Phase::Ctc, cfg.schedule.ctc_epochs, parallel, skipped, log);
    Ok(run_phase(model, &mut opt, &kept, run, loss, &validate)?.accuracy)
}

/// All phases selected by `cfg.mode`, in order.
pub fn run_pipeline(cfg: &TrainConfig, data: &PipelineData, parallel: bool) -> Result<PipelineResult> {
    cfg.validate()?;
    let mut log = TrainLog::default();
    let mut model = EncoderModel::new(cfg.encoder.clone(), mix_seed(&[cfg.seed, 0x4d4f_4445]))?;
    if cfg.mode.uses_asr() {
        let layer = pretrain_asr(cfg, &data.char_train, &data.char_val, &data.cmvn, parallel, &mut log)?;
        model.install_frozen_layer(0, layer)?;
    }
    if cfg.mode.uses_ce() {
        pretrain_ce(&mut model, cfg, &data.ce_train, &data.ce_val, &data.cmvn, parallel, &mut log)?;
    }
    let val_accuracy = train_ctc(&mut model, cfg, &data.train, &data.val, &data.cmvn, parallel, &mut log)?;
    Ok(PipelineResult {
        model,
        cmvn: data.cmvn.clone(),
        log,
        val_accuracy,
    })
}
