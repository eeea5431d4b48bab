use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::nn::{Activation, LayerKind, Network};
use crate::rng::RngStream;

/// Mirror-symmetric encoder/decoder layout.
///
/// The encoder maps `input_dim -> hidden[0] -> … -> latent_dim`, the decoder
/// mirrors it back. Hidden layers use ReLU, the latent layer is linear and the
/// reconstruction goes through a sigmoid (inputs live in `[0, 1]`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AutoencoderArchitecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    #[serde(default)]
    pub skip_connections: bool,
}

impl AutoencoderArchitecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>, latent_dim: usize) -> Self {
        Self {
            input_dim,
            hidden,
            latent_dim,
            skip_connections: false,
        }
    }

    pub fn with_skip_connections(mut self, on: bool) -> Self {
        self.skip_connections = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.latent_dim == 0 || self.hidden.iter().any(|&w| w == 0) {
            return param_err(format!("all widths must be >= 1: {self:?}"));
        }
        Ok(())
    }

    /// `[D, h1, …, hk, L, hk, …, h1, D]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(&self.hidden);
        w.push(self.latent_dim);
        w.extend(self.hidden.iter().rev());
        w.push(self.input_dim);
        w
    }

    fn activations(&self) -> Vec<Activation> {
        let k = self.hidden.len();
        let n = 2 * k + 2;
        (0..n)
            .map(|l| {
                if l == n - 1 {
                    Activation::Sigmoid
                } else if l == k {
                    Activation::Identity
                } else {
                    Activation::ReLU
                }
            })
            .collect()
    }

    /// Decoder layer `l` at mirror depth `j >= 1` receives encoder activation
    /// `2k + 2 - l` alongside its regular input.
    fn skips(&self) -> Vec<Option<usize>> {
        let k = self.hidden.len();
        let n = 2 * k + 2;
        (0..n)
            .map(|l| {
                if self.skip_connections && l > k + 1 {
                    Some(n - l)
                } else {
                    None
                }
            })
            .collect()
    }

    /// Full autoencoder as one network. Dropout (if any) follows every layer
    /// except the reconstruction layer.
    pub fn build_network(
        &self,
        kind: LayerKind,
        dropout: f64,
        rho_init: f64,
        rng: &mut RngStream,
    ) -> Result<Network> {
        self.validate()?;
        let acts = self.activations();
        let n = acts.len();
        let dropout_after = (0..n).map(|l| l + 1 < n).collect();
        Network::build(
            &self.widths(),
            &acts,
            kind,
            self.skips(),
            dropout,
            dropout_after,
            rho_init,
            rng,
        )
    }

    /// VAE halves: encoder `D -> … -> 2L` (means and log-variances) and
    /// decoder `L -> … -> D`.
    pub fn build_vae_networks(&self, rng: &mut RngStream) -> Result<(Network, Network)> {
        self.validate()?;
        let k = self.hidden.len();
        let mut enc_widths = vec![self.input_dim];
        enc_widths.extend(&self.hidden);
        enc_widths.push(2 * self.latent_dim);
        let mut enc_acts = vec![Activation::ReLU; k];
        enc_acts.push(Activation::Identity);

        let mut dec_widths = vec![self.latent_dim];
        dec_widths.extend(self.hidden.iter().rev());
        dec_widths.push(self.input_dim);
        let mut dec_acts = vec![Activation::ReLU; k];
        dec_acts.push(Activation::Sigmoid);

        let encoder = Network::build(
            &enc_widths,
            &enc_acts,
            LayerKind::Dense,
            vec![None; k + 1],
            0.0,
            vec![false; k + 1],
            0.0,
            rng,
        )?;
        let decoder = Network::build(
            &dec_widths,
            &dec_acts,
            LayerKind::Dense,
            vec![None; k + 1],
            0.0,
            vec![false; k + 1],
            0.0,
            rng,
        )?;
        Ok((encoder, decoder))
    }
}
