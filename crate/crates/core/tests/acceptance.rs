//! Acceptance suite. Each test checks one criterion and writes a single
//! `criterion <n> <name>: PASS|FAIL <details>` line to stderr (unbuffered, so
//! it shows up even when the harness captures output) before asserting.
//!
//! Trained models are shared between criteria through `OnceLock`s; the
//! runtime charged to a criterion is the sum of the training and evaluation
//! time it depends on, measured when that work first ran.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slu_core::ctc::{ctc_loss, ctc_loss_bruteforce, ctc_loss_from_logits, min_frames};
use slu_core::data::{
    build_corpora, decode_records, encode_records, load_split, save_split, Corpora, CorpusSizes, DatasetManifest, GeneratorConfig,
    World, CORPUS_NAMES, SPLIT_NAMES,
};
use slu_core::decoder::{decode_offline, DecoderState};
use slu_core::encoder::{CmvnStats, EncoderConfig, EncoderModel, EncoderState};
use slu_core::eval::{early_spotting_report, evaluate, length_vs_position, Evaluation, DEFAULT_BUCKET_MS};
use slu_core::lattice::Lattice;
use slu_core::numerics::{grad_check, grad_check_store, log_softmax_rows, Tensor2};
use slu_core::training::{run_pipeline, Mode, PipelineData, Schedule, TrainConfig};

const DATA_SEED: u64 = 1;
const TRAIN_SEED: u64 = 1;

fn report(n: u32, name: &str, pass: bool, details: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n} {name}: {verdict} {details}");
}

fn random_lattice(rng: &mut ChaCha8Rng, steps: usize, width: usize) -> Lattice {
    let data = (0..steps * width).map(|_| rng.random_range(-3.0..3.0)).collect();
    Lattice::new(log_softmax_rows(&Tensor2::from_vec(steps, width, data).unwrap())).unwrap()
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor2 {
    Tensor2::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn random_labels(rng: &mut ChaCha8Rng, max_len: usize, vocab: usize) -> Vec<usize> {
    (0..rng.random_range(0..=max_len)).map(|_| rng.random_range(0..vocab)).collect()
}

/// Splits `0..total` into random chunk lengths in `1..=max_chunk`.
fn random_chunks(rng: &mut ChaCha8Rng, total: usize, max_chunk: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < total {
        let end = (start + rng.random_range(1..=max_chunk)).min(total);
        out.push((start, end));
        start = end;
    }
    out
}

// Shared corpora and trained models.

fn corpora() -> &'static Corpora {
    static CORPORA: OnceLock<Corpora> = OnceLock::new();
    CORPORA.get_or_init(|| {
        let world = World::new(GeneratorConfig::default(), DATA_SEED).unwrap();
        build_corpora(&world, DATA_SEED, &CorpusSizes::default()).unwrap()
    })
}

struct Trained {
    model: EncoderModel,
    cmvn: CmvnStats,
    train_secs: f64,
}

fn train(mode: Mode, corpus: &str) -> Trained {
    let cfg = TrainConfig {
        seed: TRAIN_SEED,
        mode,
        ..TrainConfig::default()
    };
    let data = PipelineData::from_corpora(corpora(), corpus).unwrap();
    let start = Instant::now();
    let res = run_pipeline(&cfg, &data, true).unwrap();
    Trained {
        model: res.model,
        cmvn: res.cmvn,
        train_secs: start.elapsed().as_secs_f64(),
    }
}

fn s1_models() -> &'static [Trained; 3] {
    static S1: OnceLock<[Trained; 3]> = OnceLock::new();
    S1.get_or_init(|| [Mode::CtcOnly, Mode::AsrCtc, Mode::Full].map(|m| train(m, "s1")))
}

fn m2_model() -> &'static Trained {
    static M2: OnceLock<Trained> = OnceLock::new();
    M2.get_or_init(|| train(Mode::Full, "m2"))
}

fn evaluate_on(t: &Trained, corpus: &str) -> (Evaluation, f64) {
    let start = Instant::now();
    let ev = evaluate(&t.model, &t.cmvn, &corpora().get(corpus).unwrap().test).unwrap();
    (ev, start.elapsed().as_secs_f64())
}

#[test]
fn criterion_1_ctc_matches_exhaustive_enumeration() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut cases, mut worst) = (0, 0.0f64);
    while cases < 500 {
        let t = rng.random_range(1..=8);
        let v = rng.random_range(1..=4);
        let labels = random_labels(&mut rng, 3, v);
        if min_frames(&labels) > t {
            continue;
        }
        let lattice = random_lattice(&mut rng, t, v + 1);
        let fast = ctc_loss(&lattice, &labels).unwrap().loss;
        let brute = ctc_loss_bruteforce(&lattice, &labels).unwrap();
        worst = worst.max((fast - brute).abs());
        cases += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst < 1e-9 && secs < 30.0;
    report(1, "ctc oracle", pass, &format!("cases={cases} max_abs_diff={worst:.3e} runtime_s={secs:.2}"));
    assert!(worst < 1e-9, "max |ctc - bruteforce| = {worst}");
    assert!(secs < 30.0, "runtime {secs} s");
}

#[test]
fn criterion_2_gradients_match_central_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);

    let (mut ctc_configs, mut ctc_worst) = (0, 0.0f64);
    while ctc_configs < 20 {
        let t = rng.random_range(1..=8);
        let v = rng.random_range(1..=4);
        let labels = random_labels(&mut rng, 3, v);
        if min_frames(&labels) > t {
            continue;
        }
        let logits = random_tensor(&mut rng, t, v + 1);
        let r = grad_check(
            |g, p| {
                let res = ctc_loss_from_logits(g.value(p[0]), &labels)?;
                g.loss_with_grad(p[0], res.loss, res.grad)
            },
            &[logits],
            1e-5,
        )
        .unwrap();
        ctc_worst = ctc_worst.max(r.max_rel_error);
        ctc_configs += 1;
    }

    let (mut enc_configs, mut enc_worst) = (0, 0.0f64);
    while enc_configs < 20 {
        let cfg = EncoderConfig {
            feature_dim: rng.random_range(1..=3),
            stack_left: rng.random_range(0..=3),
            frame_skip: rng.random_range(1..=3),
            hidden_dim: rng.random_range(1..=4),
            proj_dim: rng.random_range(1..=3),
            reductions: vec![rng.random_range(1..=3), rng.random_range(1..=3)],
            head_dim: rng.random_range(1..=4),
            vocab_size: rng.random_range(1..=3),
            hop_ms: 10.0,
        };
        let frames = rng.random_range(4..=24);
        let steps = cfg.output_steps(frames);
        let labels = random_labels(&mut rng, 3, cfg.vocab_size);
        if min_frames(&labels) > steps {
            continue;
        }
        let feats = random_tensor(&mut rng, frames, cfg.feature_dim);
        let mut model = EncoderModel::new(cfg, rng.random()).unwrap();
        assert_eq!(model.layers.len(), 3);
        let r = grad_check_store(
            &mut model,
            |m, g| {
                let logits = m.forward_graph(g, &feats, None)?;
                let res = ctc_loss_from_logits(g.value(logits), &labels)?;
                g.loss_with_grad(logits, res.loss, res.grad)
            },
            1e-6,
        )
        .unwrap();
        enc_worst = enc_worst.max(r.max_rel_error);
        enc_configs += 1;
    }

    let secs = start.elapsed().as_secs_f64();
    let pass = ctc_worst < 1e-4 && enc_worst < 1e-4 && secs < 120.0;
    report(
        2,
        "gradient checks",
        pass,
        &format!(
            "ctc_configs={ctc_configs} ctc_max_rel={ctc_worst:.3e} encoder_configs={enc_configs} encoder_max_rel={enc_worst:.3e} runtime_s={secs:.2}"
        ),
    );
    assert!(ctc_worst < 1e-4, "ctc relative error {ctc_worst}");
    assert!(enc_worst < 1e-4, "encoder relative error {enc_worst}");
    assert!(secs < 120.0, "runtime {secs} s");
}

#[test]
fn criterion_3_streaming_equals_batch() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);

    let mut decode_mismatches = 0;
    for _ in 0..100 {
        let steps = rng.random_range(0..=40);
        let v = rng.random_range(1..=6);
        let lattice = random_lattice(&mut rng, steps, v + 1);
        let offline = decode_offline(&lattice).emissions();
        let mut st = DecoderState::new(lattice.blank());
        let mut streamed = Vec::new();
        for (a, b) in random_chunks(&mut rng, steps, 7) {
            streamed.extend(st.step_rows((a..b).map(|t| lattice.row(t))));
        }
        decode_mismatches += usize::from(streamed != offline);
    }

    let full = &s1_models()[2];
    let utts = &corpora().m2.test[..20];
    let mut worst = 0.0f64;
    let mut shape_mismatches = 0;
    for u in utts {
        let feats = full.cmvn.apply(&u.features).unwrap();
        let batch = full.model.forward(&feats).unwrap();
        let mut state = EncoderState::new(&full.model);
        let mut rows = Tensor2::zeros(0, batch.width());
        for (a, b) in random_chunks(&mut rng, feats.rows(), 64) {
            rows.append_rows(&full.model.stream_push(&mut state, &feats.slice_rows(a, b)).unwrap()).unwrap();
        }
        rows.append_rows(&full.model.stream_close(&mut state).unwrap()).unwrap();
        if rows.shape() == batch.log_probs().shape() {
            worst = worst.max(rows.max_abs_diff(batch.log_probs()));
        } else {
            shape_mismatches += 1;
        }
    }

    let pass = decode_mismatches == 0 && shape_mismatches == 0 && worst < 1e-12;
    report(
        3,
        "streaming equivalence",
        pass,
        &format!("lattices=100 decode_mismatches={decode_mismatches} utterances=20 shape_mismatches={shape_mismatches} max_abs_diff={worst:.3e}"),
    );
    assert_eq!(decode_mismatches, 0);
    assert_eq!(shape_mismatches, 0);
    assert!(worst < 1e-12, "stream vs batch {worst}");
}

#[test]
fn criterion_4_ablation_ordering() {
    let models = s1_models();
    let mut secs: f64 = models.iter().map(|t| t.train_secs).sum();
    let acc: Vec<f64> = models
        .iter()
        .map(|t| {
            let (ev, s) = evaluate_on(t, "s1");
            secs += s;
            ev.accuracy
        })
        .collect();
    let ordered = acc[0] < acc[1] && acc[1] < acc[2];
    let pass = ordered && acc[2] >= 0.95 && secs <= 900.0;
    report(
        4,
        "ablation ordering",
        pass,
        &format!("ctc_only={:.4} asr_ctc={:.4} full={:.4} runtime_s={secs:.1}", acc[0], acc[1], acc[2]),
    );
    assert!(ordered, "accuracies not ordered: {acc:?}");
    assert!(acc[2] >= 0.95, "full accuracy {}", acc[2]);
    assert!(secs <= 900.0, "runtime {secs} s");
}

#[test]
fn criterion_5_multi_intent_generalization() {
    let s1 = &s1_models()[2];
    let m2 = m2_model();
    let mut secs = s1.train_secs + m2.train_secs;
    let mut acc = |t: &Trained, corpus: &str| {
        let (ev, s) = evaluate_on(t, corpus);
        secs += s;
        ev.accuracy
    };
    let s1_on_s1 = acc(s1, "s1");
    let s1_on_m2 = acc(s1, "m2");
    let m2_on_m2 = acc(m2, "m2");
    let m2_on_m3 = acc(m2, "m3");
    let m2_on_s1 = acc(m2, "s1");
    let gap = (m2_on_s1 - s1_on_s1).abs();
    let checks = [s1_on_m2 < 0.70, m2_on_m2 >= 0.90, m2_on_m3 >= 0.90, gap <= 0.03, secs <= 1800.0];
    report(
        5,
        "multi-intent generalization",
        checks.iter().all(|&c| c),
        &format!(
            "s1_model: s1={s1_on_s1:.4} m2={s1_on_m2:.4} | m2_model: m2={m2_on_m2:.4} m3={m2_on_m3:.4} s1={m2_on_s1:.4} gap={gap:.4} runtime_s={secs:.1}"
        ),
    );
    assert!(s1_on_m2 < 0.70, "S1-trained model on M2: {s1_on_m2}");
    assert!(m2_on_m2 >= 0.90, "M2-trained model on M2: {m2_on_m2}");
    assert!(m2_on_m3 >= 0.90, "M2-trained model on M3: {m2_on_m3}");
    assert!(gap <= 0.03, "S1 accuracy gap {gap}");
    assert!(secs <= 1800.0, "runtime {secs} s");
}

#[test]
fn criterion_6_early_spotting() {
    let (ev, _) = evaluate_on(m2_model(), "m2");
    let spotting = early_spotting_report(&ev.events, DEFAULT_BUCKET_MS).unwrap();
    let lp = length_vs_position(&ev.events, &ev.event_lengths).unwrap();
    let pass = spotting.fraction_early >= 0.20 && lp.rank_correlation < 0.0;
    report(
        6,
        "early spotting",
        pass,
        &format!(
            "events={} fraction_early={:.4} median_ms={:.1} rank_correlation={:.4}",
            spotting.count, spotting.fraction_early, spotting.median_ms, lp.rank_correlation
        ),
    );
    assert!(spotting.fraction_early >= 0.20, "early fraction {}", spotting.fraction_early);
    assert!(lp.rank_correlation < 0.0, "rank correlation {}", lp.rank_correlation);
}

fn slu(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_slu")).args(args).output().unwrap();
    assert!(out.status.success(), "slu {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn criterion_7_deterministic_training() {
    let dir = tempfile::tempdir().unwrap();
    let path = |p: &str| dir.path().join(p).to_str().unwrap().to_string();
    let cfg = TrainConfig {
        encoder: EncoderConfig {
            hidden_dim: 8,
            proj_dim: 4,
            head_dim: 8,
            ..EncoderConfig::default()
        },
        schedule: Schedule {
            asr_epochs: 2,
            ce_epochs: 2,
            ctc_epochs: 3,
            batch_size: 4,
            patience: 10,
        },
        ..TrainConfig::default()
    };
    std::fs::write(path("train.toml"), cfg.to_toml().unwrap()).unwrap();
    slu(&["gen", "--seed", "7", "--sizes", "tiny", "--out", &path("data")]);
    for run in ["a", "b"] {
        slu(&[
            "train", "--config", &path("train.toml"), "--data", &path("data"), "--train-split", "M2", "--seed", "7",
            "--deterministic", "--out", &path(run),
        ]);
    }
    let same = |file: &str| {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        !a.is_empty() && a == b
    };
    let (ckpt, log) = (same("model.ckpt"), same("train_log.csv"));
    report(7, "determinism", ckpt && log, &format!("checkpoint_identical={ckpt} log_identical={log}"));
    assert!(ckpt && log);
}

fn round_trip(dir: &Path, corpus: &str, split: &str, utts: &[slu_core::data::Utterance]) -> bool {
    let first = encode_records(utts).unwrap();
    let in_memory = encode_records(&decode_records(&first, dir).unwrap()).unwrap();
    let manifest = DatasetManifest::describe(corpus, split, utts, 12, DATA_SEED, 10.0);
    save_split(dir, &manifest, utts).unwrap();
    let (loaded_manifest, loaded) = load_split(dir, corpus, split).unwrap();
    let from_disk = encode_records(&loaded).unwrap();
    first == in_memory && first == from_disk && loaded_manifest == manifest && loaded.len() == utts.len()
}

#[test]
fn criterion_8_dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let corpora = corpora();
    let mut failed = Vec::new();
    for corpus in CORPUS_NAMES {
        for split in SPLIT_NAMES {
            let utts = corpora.get(corpus).unwrap().get(split).unwrap();
            if !round_trip(dir.path(), corpus, split, utts) {
                failed.push(format!("{corpus}_{split}"));
            }
        }
    }
    let splits = CORPUS_NAMES.len() * SPLIT_NAMES.len();
    report(8, "dataset round trip", failed.is_empty(), &format!("splits={splits} failed={failed:?}"));
    assert!(failed.is_empty(), "{failed:?}");
}
