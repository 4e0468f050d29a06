use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::EncoderConfig;
use super::frames::{stack_frames, time_reduce};
use super::lstmp::LstmpLayer;
use crate::error::{Result, SluError};
use crate::lattice::Lattice;
use crate::numerics::{affine, log_softmax_rows, Graph, NodeId, ParamId, ParamStore, Tensor2};

/// Two fully connected layers (tanh, then linear) mapping the last LSTMP
/// output to `V + 1` logits.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputHead {
    pub w_hidden: Tensor2,
    pub b_hidden: Tensor2,
    pub w_out: Tensor2,
    pub b_out: Tensor2,
}

impl OutputHead {
    pub fn zeros(input_dim: usize, hidden_dim: usize, outputs: usize) -> Self {
        Self {
            w_hidden: Tensor2::zeros(input_dim, hidden_dim),
            b_hidden: Tensor2::zeros(1, hidden_dim),
            w_out: Tensor2::zeros(hidden_dim, outputs),
            b_out: Tensor2::zeros(1, outputs),
        }
    }

    pub fn random(input_dim: usize, hidden_dim: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let mut head = Self::zeros(input_dim, hidden_dim, outputs);
        let r1 = 1.0 / (input_dim as f64).sqrt();
        let r2 = 1.0 / (hidden_dim as f64).sqrt();
        head.w_hidden.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-r1..=r1));
        head.w_out.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-r2..=r2));
        head
    }

    pub fn tensors(&self) -> [&Tensor2; 4] {
        [&self.w_hidden, &self.b_hidden, &self.w_out, &self.b_out]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor2; 4] {
        [
            &mut self.w_hidden,
            &mut self.b_hidden,
            &mut self.w_out,
            &mut self.b_out,
        ]
    }

    pub fn logits(&self, x: &Tensor2) -> Result<Tensor2> {
        let hidden = affine(x, &self.w_hidden, self.b_hidden.data())?.map(f64::tanh);
        affine(&hidden, &self.w_out, self.b_out.data())
    }

    pub fn logits_graph(&self, g: &mut Graph, x: NodeId, ids: Option<[ParamId; 4]>) -> Result<NodeId> {
        let [w1, b1, w2, b2] = g.params_or_constants(ids, self.tensors());
        let z = g.affine(x, w1, b1)?;
        let z = g.tanh(z);
        g.affine(z, w2, b2)
    }
}

/// Inverted dropout with a private seeded stream.
#[derive(Clone, Debug)]
pub struct Dropout {
    p: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(p: f64, seed: u64) -> Self {
        Self {
            p,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub(crate) fn apply(&mut self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        if self.p <= 0.0 {
            return Ok(x);
        }
        let (r, c) = g.value(x).shape();
        let keep = 1.0 - self.p;
        let mask: Vec<f64> = (0..r * c)
            .map(|_| if self.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let m = g.constant(Tensor2::from_vec(r, c, mask)?);
        g.mul(x, m)
    }
}

/// LSTMP stack plus output head. Parameters are addressed as
/// `ParamId(4 * layer + k)` for the four tensors of each layer, followed by
/// the four head tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel {
    pub config: EncoderConfig,
    pub layers: Vec<LstmpLayer>,
    pub head: OutputHead,
    pub frozen: Vec<bool>,
}

const LAYER_TENSOR_NAMES: [&str; 4] = ["w_input", "w_recurrent", "bias", "projection"];
const HEAD_TENSOR_NAMES: [&str; 4] = ["w_hidden", "b_hidden", "w_out", "b_out"];

impl EncoderModel {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = (0..config.num_layers())
            .map(|l| LstmpLayer::random(config.layer_input_dim(l), config.hidden_dim, config.proj_dim, &mut rng))
            .collect();
        let head = OutputHead::random(config.proj_dim, config.head_dim, config.vocab_size + 1, &mut rng);
        let frozen = vec![false; config.num_layers()];
        Ok(Self {
            config,
            layers,
            head,
            frozen,
        })
    }

    pub fn zeros(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let layers = (0..config.num_layers())
            .map(|l| LstmpLayer::zeros(config.layer_input_dim(l), config.hidden_dim, config.proj_dim))
            .collect();
        let head = OutputHead::zeros(config.proj_dim, config.head_dim, config.vocab_size + 1);
        let frozen = vec![false; config.num_layers()];
        Ok(Self {
            config,
            layers,
            head,
            frozen,
        })
    }

    pub fn layer_param_ids(&self, layer: usize) -> [ParamId; 4] {
        std::array::from_fn(|k| ParamId(4 * layer + k))
    }

    pub fn head_param_ids(&self) -> [ParamId; 4] {
        let base = 4 * self.layers.len();
        std::array::from_fn(|k| ParamId(base + k))
    }

    fn check_features(&self, feats: &Tensor2) -> Result<()> {
        if feats.cols() != self.config.feature_dim && feats.rows() > 0 {
            return Err(SluError::Dimension {
                op: "encoder input",
                left: feats.shape(),
                right: (0, self.config.feature_dim),
            });
        }
        Ok(())
    }

    /// Inputs to layer `layer` (after stacking or time reduction).
    fn layer_input(&self, layer: usize, prev: &Tensor2) -> Tensor2 {
        if layer == 0 {
            stack_frames(prev, self.config.stack_left, self.config.frame_skip)
        } else {
            time_reduce(prev, self.config.reductions[layer - 1])
        }
    }

    /// Outputs of the first `upto` LSTMP layers, at that layer's frame rate.
    pub fn layer_outputs(&self, feats: &Tensor2, upto: usize) -> Result<Tensor2> {
        self.check_features(feats)?;
        self.layer_outputs_from(feats, 0, upto)
    }

    /// Outputs of layers `first..upto` given `prev`, the output of layer
    /// `first - 1` (raw features when `first == 0`).
    pub fn layer_outputs_from(&self, prev: &Tensor2, first: usize, upto: usize) -> Result<Tensor2> {
        let mut x = prev.clone();
        for l in first..upto.min(self.layers.len()) {
            let input = self.layer_input(l, &x);
            x = if input.rows() == 0 {
                Tensor2::zeros(0, self.config.proj_dim)
            } else {
                self.layers[l].run(&input)?
            };
        }
        Ok(x)
    }

    /// Pre-softmax output for a whole utterance, without a tape.
    pub fn logits(&self, feats: &Tensor2) -> Result<Tensor2> {
        self.check_features(feats)?;
        self.logits_from(feats, 0)
    }

    /// [`EncoderModel::logits`] starting at layer `first`; see
    /// [`EncoderModel::layer_outputs_from`].
    pub fn logits_from(&self, prev: &Tensor2, first: usize) -> Result<Tensor2> {
        let top = self.layer_outputs_from(prev, first, self.layers.len())?;
        if top.rows() == 0 {
            return Ok(Tensor2::zeros(0, self.config.vocab_size + 1));
        }
        self.head.logits(&top)
    }

    /// Full-utterance lattice: stacking, layer 1, then reduction and LSTMP
    /// for each upper layer, the output head and a per-step log-softmax.
    pub fn forward(&self, feats: &Tensor2) -> Result<Lattice> {
        Ok(Lattice::new_unchecked(log_softmax_rows(&self.logits(feats)?)))
    }

    /// Records the forward pass on `g` and returns the `T' x (V+1)` logits node.
    pub fn forward_graph(&self, g: &mut Graph, feats: &Tensor2, dropout: Option<&mut Dropout>) -> Result<NodeId> {
        self.check_features(feats)?;
        self.forward_graph_from(g, feats, 0, dropout)
    }

    /// Like [`EncoderModel::forward_graph`] but starting at layer `first`,
    /// with `prev` the output of layer `first - 1` (or raw features when
    /// `first == 0`). Used to reuse precomputed outputs of frozen layers.
    pub fn forward_graph_from(
        &self,
        g: &mut Graph,
        prev: &Tensor2,
        first: usize,
        mut dropout: Option<&mut Dropout>,
    ) -> Result<NodeId> {
        let mut x: Option<NodeId> = None;
        if first > 0 {
            let node = g.constant(prev.clone());
            x = Some(match dropout.as_deref_mut() {
                Some(d) => d.apply(g, node)?,
                None => node,
            });
        }
        for l in first..self.layers.len() {
            let input_node = match x {
                None => {
                    let stacked = self.layer_input(0, prev);
                    g.constant(stacked)
                }
                Some(node) => reduce_graph(g, node, self.config.reductions[l - 1])?,
            };
            if g.value(input_node).rows() == 0 {
                return Ok(g.constant(Tensor2::zeros(0, self.config.vocab_size + 1)));
            }
            let ids = (!self.frozen[l]).then(|| self.layer_param_ids(l));
            let out = self.layers[l].run_graph(g, input_node, ids)?;
            x = Some(match dropout.as_deref_mut() {
                Some(d) => d.apply(g, out)?,
                None => out,
            });
        }
        let top = x.expect("encoder has at least one layer");
        let ids = Some(self.head_param_ids());
        self.head.logits_graph(g, top, ids)
    }

    /// Copies `layer` from another model and marks it frozen.
    pub fn install_frozen_layer(&mut self, index: usize, layer: LstmpLayer) -> Result<()> {
        let want = &self.layers[index];
        if layer.w_input.shape() != want.w_input.shape() || layer.projection.shape() != want.projection.shape() {
            return Err(SluError::Dimension {
                op: "install_frozen_layer",
                left: want.w_input.shape(),
                right: layer.w_input.shape(),
            });
        }
        self.layers[index] = layer;
        self.frozen[index] = true;
        Ok(())
    }
}

/// Time reduction recorded on the tape.
fn reduce_graph(g: &mut Graph, x: NodeId, lambda: usize) -> Result<NodeId> {
    let t_len = g.value(x).rows();
    if t_len == 0 {
        return Ok(g.constant(Tensor2::zeros(0, g.value(x).cols() * lambda)));
    }
    let rows: Vec<NodeId> = (0..t_len).map(|t| g.row(x, t)).collect::<Result<_>>()?;
    let mut windows = Vec::with_capacity(t_len.div_ceil(lambda));
    for o in 0..t_len.div_ceil(lambda) {
        let parts: Vec<NodeId> = (0..lambda).map(|j| rows[(o * lambda + j).min(t_len - 1)]).collect();
        windows.push(g.concat_cols(&parts)?);
    }
    g.concat_rows(&windows)
}

impl ParamStore for EncoderModel {
    fn param_count(&self) -> usize {
        4 * self.layers.len() + 4
    }

    fn param(&self, id: ParamId) -> &Tensor2 {
        let (l, k) = (id.0 / 4, id.0 % 4);
        if l < self.layers.len() {
            self.layers[l].tensors()[k]
        } else {
            self.head.tensors()[k]
        }
    }

    fn param_mut(&mut self, id: ParamId) -> &mut Tensor2 {
        let (l, k) = (id.0 / 4, id.0 % 4);
        if l < self.layers.len() {
            let [a, b, c, d] = self.layers[l].tensors_mut();
            [a, b, c, d].into_iter().nth(k).expect("slot < 4")
        } else {
            let [a, b, c, d] = self.head.tensors_mut();
            [a, b, c, d].into_iter().nth(k).expect("slot < 4")
        }
    }

    fn param_name(&self, id: ParamId) -> String {
        let (l, k) = (id.0 / 4, id.0 % 4);
        if l < self.layers.len() {
            format!("layer{l}.{}", LAYER_TENSOR_NAMES[k])
        } else {
            format!("head.{}", HEAD_TENSOR_NAMES[k])
        }
    }

    fn is_trainable(&self, id: ParamId) -> bool {
        let l = id.0 / 4;
        l >= self.layers.len() || !self.frozen[l]
    }

    fn is_bias(&self, id: ParamId) -> bool {
        let (l, k) = (id.0 / 4, id.0 % 4);
        if l < self.layers.len() {
            k == 2
        } else {
            k == 1 || k == 3
        }
    }
}
