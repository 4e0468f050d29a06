use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{EncoderConfig, LstmpLayer, OutputHead};
use crate::error::Result;
use crate::numerics::{Graph, NodeId, ParamId, ParamStore, Tensor2};

/// Temporary character recognizer: the encoder's first layer plus an output
/// head over `num_chars + 1` symbols (blank last). Only the layer survives
/// pre-training.
#[derive(Clone, Debug, PartialEq)]
pub struct AsrModel {
    pub layer: LstmpLayer,
    pub head: OutputHead,
}

impl AsrModel {
    pub fn new(encoder: &EncoderConfig, num_chars: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            layer: LstmpLayer::random(encoder.layer_input_dim(0), encoder.hidden_dim, encoder.proj_dim, &mut rng),
            head: OutputHead::random(encoder.proj_dim, encoder.head_dim, num_chars + 1, &mut rng),
        }
    }

    pub fn num_outputs(&self) -> usize {
        self.head.b_out.cols()
    }

    /// Logits for already stacked input frames.
    pub fn logits(&self, stacked: &Tensor2) -> Result<Tensor2> {
        self.head.logits(&self.layer.run(stacked)?)
    }

    pub(crate) fn layer_graph(&self, g: &mut Graph, stacked: NodeId) -> Result<NodeId> {
        self.layer.run_graph(g, stacked, Some(std::array::from_fn(ParamId)))
    }

    pub(crate) fn head_graph(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        self.head.logits_graph(g, x, Some(std::array::from_fn(|k| ParamId(4 + k))))
    }
}

impl ParamStore for AsrModel {
    fn param_count(&self) -> usize {
        8
    }

    fn param(&self, id: ParamId) -> &Tensor2 {
        match id.0 {
            0..=3 => self.layer.tensors()[id.0],
            _ => self.head.tensors()[id.0 - 4],
        }
    }

    fn param_mut(&mut self, id: ParamId) -> &mut Tensor2 {
        let [a, b, c, d] = if id.0 < 4 {
            self.layer.tensors_mut()
        } else {
            self.head.tensors_mut()
        };
        [a, b, c, d].into_iter().nth(id.0 % 4).expect("slot < 4")
    }

    fn param_name(&self, id: ParamId) -> String {
        [
            "layer0.w_input",
            "layer0.w_recurrent",
            "layer0.bias",
            "layer0.projection",
            "asr.w_hidden",
            "asr.b_hidden",
            "asr.w_out",
            "asr.b_out",
        ][id.0]
            .into()
    }

    fn is_trainable(&self, _: ParamId) -> bool {
        true
    }

    fn is_bias(&self, id: ParamId) -> bool {
        matches!(id.0, 2 | 5 | 7)
    }
}
