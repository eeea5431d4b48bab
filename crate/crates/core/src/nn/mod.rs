//! Minimal layered feedforward engine: forward/backward passes, Adam,
//! dropout and reparameterised Gaussian weight layers.

mod adam;
mod dropout;
mod layer;
mod network;
mod variational;

pub use adam::AdamState;
pub use dropout::apply_dropout;
pub use layer::{init_std, Activation, DenseLayer, GaussianVariationalLayer, Layer, LayerKind};
pub use network::{ForwardCache, Gradients, Network};
pub use variational::{reparameterize, sigmoid, softplus, softplus_inverse, SIGMA_FLOOR};

use serde::{Deserialize, Serialize};

/// How stochastic components behave during a forward pass.
///
/// * `Train`: dropout masks are drawn per row, variational weights are
///   sampled once per pass.
/// * `Eval`: dropout is off and variational layers use their means.
/// * `Sample`: posterior sampling at prediction time. One dropout mask per
///   layer and one weight draw per pass, shared by every row, so the pass
///   represents a single parameter sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
    Sample,
}
