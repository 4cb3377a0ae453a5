//! Two-head counterfactual regression network with hand-written
//! backpropagation and transport-based latent regularizers.

pub mod network;
pub mod params;
pub mod regularizer;

pub use network::{encode, factual_loss, factual_loss_grad, forward, predict_both, FactualBatch, Mode};
pub use params::{Activation, CfrGradients, CfrParams, Checkpoint, Head, Linear, ModelShape, CHECKPOINT_VERSION};
pub use regularizer::{
    grad_total, objective_and_gradient, regularizer, LatentGeometry, PreparedPlans, RegPlans, RegularizerBreakdown,
    RegularizerContext, RegularizerRecipe,
};
