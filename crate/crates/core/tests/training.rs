use slu_core::data::{build_corpora, CmvnStats, CorpusSizes, GeneratorConfig, Utterance, World};
use slu_core::decoder::argmax;
use slu_core::encoder::{EncoderConfig, EncoderModel};
use slu_core::numerics::{log_softmax, Tensor2};
use slu_core::training::{pretrain_asr, pretrain_ce, run_pipeline, train_ctc, Mode, PipelineData, Schedule, TrainConfig, TrainLog};
use slu_core::SluError;

fn small_config(mode: Mode) -> TrainConfig {
    TrainConfig {
        seed: 11,
        mode,
        encoder: EncoderConfig {
            hidden_dim: 8,
            proj_dim: 4,
            head_dim: 8,
            ..EncoderConfig::default()
        },
        schedule: Schedule {
            asr_epochs: 2,
            ce_epochs: 2,
            ctc_epochs: 2,
            batch_size: 4,
            patience: 10,
        },
        ..TrainConfig::default()
    }
}

fn tiny_data() -> PipelineData {
    let world = World::new(GeneratorConfig::default(), 5).unwrap();
    let corpora = build_corpora(&world, 5, &CorpusSizes::tiny()).unwrap();
    PipelineData::from_corpora(&corpora, "s1").unwrap()
}

#[test]
fn frozen_layer_is_bit_identical_after_ce_and_ctc() {
    let cfg = small_config(Mode::Full);
    let data = tiny_data();
    let mut log = TrainLog::default();
    let layer = pretrain_asr(&cfg, &data.char_train, &data.char_val, &data.cmvn, false, &mut log).unwrap();
    let mut model = EncoderModel::new(cfg.encoder.clone(), 3).unwrap();
    model.install_frozen_layer(0, layer.clone()).unwrap();
    let upper_before = model.layers[1].clone();

    pretrain_ce(&mut model, &cfg, &data.ce_train, &data.ce_val, &data.cmvn, false, &mut log).unwrap();
    assert_eq!(model.layers[0], layer);
    train_ctc(&mut model, &cfg, &data.train, &data.val, &data.cmvn, false, &mut log).unwrap();
    assert_eq!(model.layers[0], layer);
    assert_ne!(model.layers[1], upper_before, "trainable layers must move");
}

#[test]
fn pipeline_is_deterministic_and_parallelism_does_not_change_results() {
    let cfg = small_config(Mode::Full);
    let data = tiny_data();
    let a = run_pipeline(&cfg, &data, false).unwrap();
    let b = run_pipeline(&cfg, &data, false).unwrap();
    let c = run_pipeline(&cfg, &data, true).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.log.to_csv(), b.log.to_csv());
    assert_eq!(a.model, c.model);
    assert_eq!(a.log.to_csv(), c.log.to_csv());
}

#[test]
fn modes_run_the_expected_phases() {
    let data = tiny_data();
    for (mode, phases) in [(Mode::CtcOnly, "ctc"), (Mode::AsrCtc, "asr ctc"), (Mode::Full, "asr ce ctc")] {
        let res = run_pipeline(&small_config(mode), &data, false).unwrap();
        let mut seen: Vec<&str> = res.log.rows.iter().map(|r| r.phase.as_str()).collect();
        seen.dedup();
        assert_eq!(seen.join(" "), phases);
        assert_eq!(res.model.frozen[0], mode.uses_asr());
    }
}

#[test]
fn ce_rejects_multi_intent_data() {
    let cfg = small_config(Mode::Full);
    let world = World::new(GeneratorConfig::default(), 5).unwrap();
    let corpora = build_corpora(&world, 5, &CorpusSizes::tiny()).unwrap();
    let cmvn = CmvnStats::compute(&corpora.s1.train).unwrap();
    let mut model = EncoderModel::new(cfg.encoder.clone(), 1).unwrap();
    let err = pretrain_ce(&mut model, &cfg, &corpora.m2.train, &corpora.m2.val, &cmvn, false, &mut TrainLog::default()).unwrap_err();
    assert!(matches!(err, SluError::Data(_)), "{err}");
}

/// Three classes, each a constant feature vector plus small noise.
fn separable_fixture() -> Vec<Utterance> {
    let centers = [[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]];
    (0..30)
        .map(|i| {
            let class = i % 3;
            let mut features = Tensor2::zeros(24, 2);
            for t in 0..24 {
                for (d, &c) in centers[class].iter().enumerate() {
                    let jitter = 0.01 * (((i * 31 + t * 7 + d * 3) % 11) as f64 - 5.0);
                    features.set(t, d, c + jitter);
                }
            }
            Utterance {
                features,
                intent_labels: vec![class],
                char_labels: vec![],
                boundaries_ms: vec![200.0],
                speaker: 0,
            }
        })
        .collect()
}

#[test]
fn ce_loss_approaches_zero_on_separable_fixture() {
    let utts = separable_fixture();
    let cmvn = CmvnStats::compute(&utts).unwrap();
    let mut cfg = TrainConfig {
        seed: 4,
        encoder: EncoderConfig {
            feature_dim: 2,
            stack_left: 1,
            frame_skip: 2,
            hidden_dim: 6,
            proj_dim: 4,
            reductions: vec![2],
            head_dim: 8,
            vocab_size: 3,
            hop_ms: 10.0,
        },
        ce_learning_rate: Some(1e-2),
        dropout: 0.0,
        schedule: Schedule {
            ce_epochs: 300,
            batch_size: 5,
            patience: 300,
            ..Schedule::default()
        },
        ..TrainConfig::default()
    };
    cfg.optimizer.weight_decay = 0.0;
    let mut model = EncoderModel::new(cfg.encoder.clone(), 9).unwrap();
    let acc = pretrain_ce(&mut model, &cfg, &utts, &utts, &cmvn, false, &mut TrainLog::default()).unwrap();
    assert_eq!(acc, 1.0);

    let v = cfg.encoder.vocab_size;
    let mut nll = 0.0;
    for u in &utts {
        let logits = model.logits(&cmvn.apply(&u.features).unwrap()).unwrap();
        let lp = log_softmax(&logits.row(logits.rows() - 1)[..v]);
        assert_eq!(argmax(&lp), u.intent_labels[0]);
        nll -= lp[u.intent_labels[0]];
    }
    let mean = nll / utts.len() as f64;
    assert!(mean < 1e-2, "mean CE loss {mean}");
}
