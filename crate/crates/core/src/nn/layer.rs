use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::matrix::RealMatrix;
use crate::rng::RngStream;

use super::variational::{sigmoid, softplus};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    ReLU,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::ReLU => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::ReLU => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Dense,
    Gaussian,
}

/// Weight std for Gaussian initialisation: `sqrt(2 / (fan_in + fan_out))`.
pub fn init_std(fan_in: usize, fan_out: usize) -> f64 {
    (2.0 / (fan_in + fan_out) as f64).sqrt()
}

fn gaussian_matrix(rows: usize, cols: usize, std: f64, rng: &mut RngStream) -> RealMatrix {
    let mut m = RealMatrix::zeros(rows, cols);
    for v in m.values_mut() {
        *v = std * rng.normal();
    }
    m
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `out x in`.
    pub weights: RealMatrix,
    /// `1 x out`.
    pub bias: RealMatrix,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: RealMatrix, bias: RealMatrix, activation: Activation) -> Result<Self> {
        if bias.rows() != 1 || bias.cols() != weights.rows() {
            return shape_err(format!(
                "bias {:?} does not match weights {:?}",
                bias.shape(),
                weights.shape()
            ));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn init(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut RngStream) -> Self {
        Self {
            weights: gaussian_matrix(out_dim, in_dim, init_std(in_dim, out_dim), rng),
            bias: RealMatrix::zeros(1, out_dim),
            activation,
        }
    }
}

/// Dense layer whose weights follow a diagonal Gaussian `N(mu, softplus(rho)²)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianVariationalLayer {
    pub mu_weights: RealMatrix,
    pub rho_weights: RealMatrix,
    pub mu_bias: RealMatrix,
    pub rho_bias: RealMatrix,
    pub activation: Activation,
}

impl GaussianVariationalLayer {
    pub fn init(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rho_init: f64,
        rng: &mut RngStream,
    ) -> Self {
        Self {
            mu_weights: gaussian_matrix(out_dim, in_dim, init_std(in_dim, out_dim), rng),
            rho_weights: RealMatrix::filled(out_dim, in_dim, rho_init),
            mu_bias: RealMatrix::zeros(1, out_dim),
            rho_bias: RealMatrix::filled(1, out_dim, rho_init),
            activation,
        }
    }

    pub fn sigma_weights(&self) -> RealMatrix {
        self.rho_weights.map(softplus)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Dense(DenseLayer),
    Gaussian(GaussianVariationalLayer),
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        match self {
            Layer::Dense(l) => l.weights.cols(),
            Layer::Gaussian(l) => l.mu_weights.cols(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Layer::Dense(l) => l.weights.rows(),
            Layer::Gaussian(l) => l.mu_weights.rows(),
        }
    }

    pub fn activation(&self) -> Activation {
        match self {
            Layer::Dense(l) => l.activation,
            Layer::Gaussian(l) => l.activation,
        }
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Dense(_) => LayerKind::Dense,
            Layer::Gaussian(_) => LayerKind::Gaussian,
        }
    }

    pub fn parameters(&self) -> Vec<&RealMatrix> {
        match self {
            Layer::Dense(l) => vec![&l.weights, &l.bias],
            Layer::Gaussian(l) => vec![&l.mu_weights, &l.rho_weights, &l.mu_bias, &l.rho_bias],
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut RealMatrix> {
        match self {
            Layer::Dense(l) => vec![&mut l.weights, &mut l.bias],
            Layer::Gaussian(l) => vec![
                &mut l.mu_weights,
                &mut l.rho_weights,
                &mut l.mu_bias,
                &mut l.rho_bias,
            ],
        }
    }
}
