//! Multi-head graph attention network with explicit reverse-mode gradients.

mod checkpoint;
mod layer;
mod model;
mod objective;

pub use checkpoint::{TensorData, CHECKPOINT_VERSION};
pub use layer::{GatLayer, LayerCache, LEAKY_SLOPE};
pub use model::{ForwardCache, GatForwardOutput, GatModel, ModelConfig, ModelParams};
pub use objective::{
    batch_objective, fuse_heads, weighted_bce_with_logits, Example, FusedHead, LossBreakdown, LossConfig,
    RetrievalSignal, SubjectTargets, PROB_CLAMP,
};
