use super::{ParamId, Tensor2};

/// A flat, indexable view over a model's tensors, used by the optimizer and
/// by checkpointing.
pub trait ParamStore {
    fn param_count(&self) -> usize;
    fn param(&self, id: ParamId) -> &Tensor2;
    fn param_mut(&mut self, id: ParamId) -> &mut Tensor2;
    fn param_name(&self, id: ParamId) -> String;
    /// False for parameters that must never change (frozen layers).
    fn is_trainable(&self, id: ParamId) -> bool;
    fn is_bias(&self, id: ParamId) -> bool;

    fn param_ids(&self) -> Vec<ParamId> {
        (0..self.param_count()).map(ParamId).collect()
    }
}
