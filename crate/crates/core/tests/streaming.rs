use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slu_core::decoder::FrameGeometry;
use slu_core::encoder::{EncoderConfig, EncoderModel, EncoderState};
use slu_core::numerics::Tensor2;

/// Emission times must match when the streaming encoder actually produces
/// each lattice row when fed one frame at a time.
#[test]
fn emit_time_matches_streaming_row_availability() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for cfg in [
        EncoderConfig::default(),
        EncoderConfig {
            frame_skip: 2,
            reductions: vec![3],
            ..EncoderConfig::default()
        },
        EncoderConfig {
            frame_skip: 1,
            reductions: vec![2, 1, 3],
            ..EncoderConfig::default()
        },
    ] {
        let model = EncoderModel::new(cfg.clone(), 1).unwrap();
        let geometry = FrameGeometry::from_config(&cfg);
        for _ in 0..5 {
            let frames = rng.random_range(1..200);
            let mut state = EncoderState::new(&model);
            let mut available_ms = Vec::new();
            for f in 0..frames {
                let frame = Tensor2::from_vec(1, cfg.feature_dim, (0..cfg.feature_dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
                let rows = model.stream_push(&mut state, &frame).unwrap();
                available_ms.extend(std::iter::repeat_n((f + 1) as f64 * cfg.hop_ms, rows.rows()));
            }
            let rows = model.stream_close(&mut state).unwrap();
            available_ms.extend(std::iter::repeat_n(frames as f64 * cfg.hop_ms, rows.rows()));
            assert_eq!(available_ms.len(), cfg.output_steps(frames));
            for (k, &ms) in available_ms.iter().enumerate() {
                assert_eq!(geometry.emit_ms(k, Some(frames)), ms, "step {k} of {frames} frames, {cfg:?}");
            }
        }
    }
}
