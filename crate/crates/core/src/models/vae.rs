use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::matrix::RealMatrix;
use crate::nn::{Gradients, Mode, Network};
use crate::rng::RngStream;

use super::regularizers::vae_kl;

/// Encoder producing `(μ_z, log σ_z²)` and a decoder from the latent sample.
/// Only the latent code is stochastic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vae {
    pub encoder: Network,
    pub decoder: Network,
    pub latent_dim: usize,
}

pub(crate) struct VaeStep {
    pub loss: f64,
    pub encoder_grads: Gradients,
    pub decoder_grads: Gradients,
}

impl Vae {
    fn sample_latent(&self, enc_out: &RealMatrix, rng: &mut RngStream) -> (RealMatrix, RealMatrix, RealMatrix, RealMatrix) {
        let (mu, log_var) = enc_out.hsplit(self.latent_dim);
        let mut eps = RealMatrix::zeros(mu.rows(), mu.cols());
        for v in eps.values_mut() {
            *v = rng.normal();
        }
        let mut z = mu.clone();
        for ((zv, &lv), &e) in z.values_mut().iter_mut().zip(log_var.values()).zip(eps.values()) {
            *zv += (0.5 * lv).exp() * e;
        }
        (mu, log_var, eps, z)
    }

    /// One stochastic reconstruction of every row of `x`.
    pub fn sample_reconstruction(&self, x: &RealMatrix, rng: &mut RngStream) -> Result<RealMatrix> {
        let enc = self.encoder.forward(x, Mode::Eval, rng)?;
        let (_, _, _, z) = self.sample_latent(enc.output(), rng);
        Ok(self.decoder.forward(&z, Mode::Eval, rng)?.output().clone())
    }

    /// Mean over the batch of `NLL + KL`, with gradients for both halves.
    pub(crate) fn loss_and_gradients(&self, x: &RealMatrix, rng: &mut RngStream) -> Result<VaeStep> {
        let n = x.rows() as f64;
        let d = x.cols() as f64;
        let enc = self.encoder.forward(x, Mode::Train, rng)?;
        let (mu, log_var, eps, z) = self.sample_latent(enc.output(), rng);
        let dec = self.decoder.forward(&z, Mode::Train, rng)?;

        let x_hat = dec.output();
        let mut recon = 0.0;
        let mut g_out = x_hat.clone();
        for (g, &xv) in g_out.values_mut().iter_mut().zip(x.values()) {
            let r = *g - xv;
            recon += 0.5 * r * r / d;
            *g = r / (d * n);
        }
        let (kl, kl_mu, kl_lv) = vae_kl(&mu, &log_var)?;
        let loss = (recon + kl.iter().sum::<f64>()) / n;

        let (decoder_grads, g_z) = self.decoder.backward(&dec, &g_out)?;
        // z = μ + exp(½ log σ²)·ε
        let mut g_mu = g_z.clone();
        let mut g_lv = g_z;
        for (((gm, gl), (&kmu, &klv)), (&lv, &e)) in g_mu
            .values_mut()
            .iter_mut()
            .zip(g_lv.values_mut().iter_mut())
            .zip(kl_mu.values().iter().zip(kl_lv.values()))
            .zip(log_var.values().iter().zip(eps.values()))
        {
            *gl = *gl * 0.5 * (0.5 * lv).exp() * e + klv / n;
            *gm += kmu / n;
        }
        let g_enc_out = g_mu.hconcat(&g_lv)?;
        let (encoder_grads, _) = self.encoder.backward(&enc, &g_enc_out)?;
        Ok(VaeStep {
            loss,
            encoder_grads,
            decoder_grads,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::AutoencoderArchitecture;

    fn half(vae: &mut Vae, encoder: bool) -> &mut Network {
        if encoder {
            &mut vae.encoder
        } else {
            &mut vae.decoder
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let arch = AutoencoderArchitecture::new(3, vec![4], 2);
        let (encoder, decoder) = arch.build_vae_networks(&mut RngStream::new(5)).unwrap();
        let mut vae = Vae {
            encoder,
            decoder,
            latent_dim: 2,
        };
        let x = RealMatrix::from_rows(&[vec![0.1, 0.5, 0.9], vec![0.7, 0.2, 0.4]]).unwrap();
        let step = vae.loss_and_gradients(&x, &mut RngStream::new(12)).unwrap();
        let loss_at = |vae: &Vae| vae.loss_and_gradients(&x, &mut RngStream::new(12)).unwrap().loss;
        let h = 1e-6;
        for encoder in [true, false] {
            let grads = if encoder { &step.encoder_grads } else { &step.decoder_grads };
            for (t, g) in grads.0.iter().enumerate() {
                for i in 0..g.len() {
                    let orig = half(&mut vae, encoder).parameters()[t].values()[i];
                    half(&mut vae, encoder).parameters_mut()[t].values_mut()[i] = orig + h;
                    let plus = loss_at(&vae);
                    half(&mut vae, encoder).parameters_mut()[t].values_mut()[i] = orig - h;
                    let minus = loss_at(&vae);
                    half(&mut vae, encoder).parameters_mut()[t].values_mut()[i] = orig;
                    let numeric = (plus - minus) / (2.0 * h);
                    let analytic = g.values()[i];
                    assert!(
                        (numeric - analytic).abs() < 1e-6 + 1e-4 * analytic.abs(),
                        "encoder={encoder} tensor {t} index {i}: {analytic} vs {numeric}"
                    );
                }
            }
        }
    }
}
