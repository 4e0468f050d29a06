use serde::{Deserialize, Serialize};

use crate::error::{Result, SluError};
use crate::numerics::{Gradients, ParamStore, Tensor2};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    /// Decoupled decay, applied as `θ -= lr * weight_decay * θ`.
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip; non-positive disables clipping.
    pub clip_norm: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 0.2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 5.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(SluError::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Scales `grads` so their global L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if max_norm > 0.0 && norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Adam with bias correction and decoupled weight decay. Frozen parameters
/// are never touched; biases are not decayed.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: OptimizerConfig,
    first: Vec<Option<Tensor2>>,
    second: Vec<Option<Tensor2>>,
    steps: u64,
    skipped: usize,
}

impl AdamW {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
            skipped: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Batches dropped because their gradient was not finite.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    /// Applies one update. Returns `false` (and leaves parameters alone) when
    /// the gradient contains non-finite values.
    pub fn step<S: ParamStore + ?Sized>(&mut self, store: &mut S, grads: &Gradients) -> Result<bool> {
        if !grads.all_finite() {
            self.skipped += 1;
            log::warn!("non-finite gradient, update {} skipped", self.steps + 1);
            return Ok(false);
        }
        let n = store.param_count();
        self.first.resize(n, None);
        self.second.resize(n, None);
        self.steps += 1;
        let c = &self.config;
        let t = self.steps as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for id in store.param_ids() {
            if !store.is_trainable(id) {
                continue;
            }
            let decay = if store.is_bias(id) { 0.0 } else { c.learning_rate * c.weight_decay };
            let param = store.param_mut(id);
            let shape = param.shape();
            let m = self.first[id.0].get_or_insert_with(|| Tensor2::zeros(shape.0, shape.1));
            let v = self.second[id.0].get_or_insert_with(|| Tensor2::zeros(shape.0, shape.1));
            if m.shape() != shape {
                return Err(SluError::Dimension {
                    op: "adamw moments",
                    left: m.shape(),
                    right: shape,
                });
            }
            let g = grads.get(id);
            if let Some(g) = g {
                if g.shape() != shape {
                    return Err(SluError::Dimension {
                        op: "adamw gradient",
                        left: shape,
                        right: g.shape(),
                    });
                }
            }
            let gd = g.map(Tensor2::data);
            for (k, p) in param.data_mut().iter_mut().enumerate() {
                let gk = gd.map_or(0.0, |d| d[k]);
                let mk = &mut m.data_mut()[k];
                *mk = c.beta1 * *mk + (1.0 - c.beta1) * gk;
                let vk = &mut v.data_mut()[k];
                *vk = c.beta2 * *vk + (1.0 - c.beta2) * gk * gk;
                let mhat = m.data()[k] / bc1;
                let vhat = v.data()[k] / bc2;
                *p -= decay * *p + c.learning_rate * mhat / (vhat.sqrt() + c.epsilon);
            }
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Graph, ParamId};

    struct Vec1 {
        theta: Tensor2,
        bias: bool,
        trainable: bool,
    }

    impl ParamStore for Vec1 {
        fn param_count(&self) -> usize {
            1
        }
        fn param(&self, _: ParamId) -> &Tensor2 {
            &self.theta
        }
        fn param_mut(&mut self, _: ParamId) -> &mut Tensor2 {
            &mut self.theta
        }
        fn param_name(&self, _: ParamId) -> String {
            "theta".into()
        }
        fn is_trainable(&self, _: ParamId) -> bool {
            self.trainable
        }
        fn is_bias(&self, _: ParamId) -> bool {
            self.bias
        }
    }

    fn quadratic_grad(store: &Vec1) -> Gradients {
        let mut g = Graph::new();
        let p = g.param(ParamId(0), &store.theta);
        let sq = g.mul(p, p).unwrap();
        let s = g.sum(sq);
        let half = g.scale(s, 0.5);
        g.backward(half).unwrap()
    }

    fn store(values: &[f64]) -> Vec1 {
        Vec1 {
            theta: Tensor2::row_vector(values),
            bias: false,
            trainable: true,
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut s = store(&[1.5, -2.0]);
        let mut opt = AdamW::new(OptimizerConfig {
            weight_decay: 0.0,
            ..Default::default()
        })
        .unwrap();
        let mut grads = Gradients::default();
        grads.accumulate(ParamId(0), &Tensor2::zeros(1, 2));
        opt.step(&mut s, &grads).unwrap();
        assert_eq!(s.theta.data(), &[1.5, -2.0]);
    }

    #[test]
    fn one_step_descends() {
        let mut s = store(&[1.0]);
        let mut opt = AdamW::new(OptimizerConfig::default()).unwrap();
        let g = quadratic_grad(&s);
        assert!(opt.step(&mut s, &g).unwrap());
        assert!(s.theta.item().abs() < 1.0);
    }

    #[test]
    fn converges_on_two_dimensional_quadratic() {
        let mut s = store(&[1.0, -0.7]);
        let mut opt = AdamW::new(OptimizerConfig {
            learning_rate: 0.05,
            weight_decay: 0.0,
            ..Default::default()
        })
        .unwrap();
        for _ in 0..200 {
            let g = quadratic_grad(&s);
            opt.step(&mut s, &g).unwrap();
        }
        let norm = s.theta.sum_squares().sqrt();
        assert!(norm < 1e-2, "|theta| = {norm}");
    }

    #[test]
    fn frozen_parameters_and_bias_decay() {
        let mut frozen = store(&[1.0]);
        frozen.trainable = false;
        let mut opt = AdamW::new(OptimizerConfig::default()).unwrap();
        let g = quadratic_grad(&frozen);
        opt.step(&mut frozen, &g).unwrap();
        assert_eq!(frozen.theta.item(), 1.0);

        // Zero gradient isolates the decay term.
        let mut zero = Gradients::default();
        zero.accumulate(ParamId(0), &Tensor2::zeros(1, 1));
        let mut w = store(&[1.0]);
        AdamW::new(OptimizerConfig::default()).unwrap().step(&mut w, &zero).unwrap();
        assert_eq!(w.theta.item(), 1.0 - 1e-4 * 0.2);
        let mut b = store(&[1.0]);
        b.bias = true;
        AdamW::new(OptimizerConfig::default()).unwrap().step(&mut b, &zero).unwrap();
        assert_eq!(b.theta.item(), 1.0);
    }

    #[test]
    fn non_finite_gradient_skips_update() {
        let mut s = store(&[1.0]);
        let mut opt = AdamW::new(OptimizerConfig::default()).unwrap();
        let mut grads = Gradients::default();
        grads.accumulate(ParamId(0), &Tensor2::scalar(f64::NAN));
        assert!(!opt.step(&mut s, &grads).unwrap());
        assert_eq!(s.theta.item(), 1.0);
        assert_eq!((opt.skipped(), opt.steps()), (1, 0));
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut grads = Gradients::default();
        grads.accumulate(ParamId(0), &Tensor2::row_vector(&[30.0, 40.0]));
        assert_eq!(clip_grad_norm(&mut grads, 5.0), 50.0);
        assert!((grads.global_norm() - 5.0).abs() < 1e-12);
        let mut small = Gradients::default();
        small.accumulate(ParamId(0), &Tensor2::row_vector(&[0.3, 0.4]));
        clip_grad_norm(&mut small, 5.0);
        assert_eq!(small.get(ParamId(0)).unwrap().data(), &[0.3, 0.4]);
    }

    #[test]
    fn identical_inputs_give_identical_steps() {
        let run = || {
            let mut s = store(&[0.3, -0.1]);
            let mut opt = AdamW::new(OptimizerConfig::default()).unwrap();
            let g = quadratic_grad(&s);
            opt.step(&mut s, &g).unwrap();
            s.theta
        };
        assert_eq!(run(), run());
    }
}
