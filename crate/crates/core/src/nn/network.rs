use serde::{Deserialize, Serialize};

use crate::error::{shape_err, BaeError, Result};
use crate::matrix::RealMatrix;
use crate::rng::RngStream;

use super::dropout::{draw_mask, validate_p};
use super::layer::{Activation, DenseLayer, GaussianVariationalLayer, Layer, LayerKind};
use super::variational::{reparameterize, sigmoid};
use super::Mode;

/// Per-parameter gradients, in [`Network::parameters`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<RealMatrix>);

impl Gradients {
    pub fn zeros_like(params: &[&RealMatrix]) -> Self {
        Gradients(
            params
                .iter()
                .map(|p| RealMatrix::zeros(p.rows(), p.cols()))
                .collect(),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(RealMatrix::is_finite)
    }
}

struct SampledWeights {
    weights: RealMatrix,
    eps_weights: RealMatrix,
    eps_bias: RealMatrix,
}

/// Everything `backward` needs from a forward pass.
pub struct ForwardCache {
    version: u64,
    /// `activations[0]` is the input, `activations[l + 1]` the output of layer `l`.
    pub activations: Vec<RealMatrix>,
    layer_inputs: Vec<RealMatrix>,
    /// Post-activation values before dropout.
    activated: Vec<RealMatrix>,
    masks: Vec<Option<RealMatrix>>,
    sampled: Vec<Option<SampledWeights>>,
}

impl ForwardCache {
    pub fn output(&self) -> &RealMatrix {
        self.activations.last().expect("cache holds at least the input")
    }

    /// Noise `(ε_weights, ε_bias)` drawn for variational layer `layer`, if it sampled.
    pub fn weight_noise(&self, layer: usize) -> Option<(&RealMatrix, &RealMatrix)> {
        self.sampled
            .get(layer)?
            .as_ref()
            .map(|s| (&s.eps_weights, &s.eps_bias))
    }
}

/// A stack of dense or variational layers with optional dropout after
/// selected layers and optional skip concatenations.
///
/// A skip on layer `l` pointing at activation `s` feeds `[a_l | a_s]` into
/// layer `l`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<Layer>,
    skips: Vec<Option<usize>>,
    dropout: f64,
    dropout_after: Vec<bool>,
    #[serde(skip)]
    version: u64,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
            && self.skips == other.skips
            && self.dropout == other.dropout
            && self.dropout_after == other.dropout_after
    }
}

impl Network {
    pub fn new(
        layers: Vec<Layer>,
        skips: Vec<Option<usize>>,
        dropout: f64,
        dropout_after: Vec<bool>,
    ) -> Result<Self> {
        validate_p(dropout)?;
        if layers.is_empty() {
            return shape_err("network needs at least one layer");
        }
        if skips.len() != layers.len() || dropout_after.len() != layers.len() {
            return shape_err("skips and dropout flags must have one entry per layer");
        }
        let mut widths = vec![layers[0].in_dim()];
        for (l, layer) in layers.iter().enumerate() {
            if l > 0 {
                widths.push(layers[l - 1].out_dim());
            }
            let expected = match skips[l] {
                Some(s) if s <= l => widths[l] + widths[s],
                Some(s) => return shape_err(format!("layer {l} skips from later activation {s}")),
                None => widths[l],
            };
            if layer.in_dim() != expected {
                return shape_err(format!(
                    "layer {l} expects {} inputs, previous activations give {expected}",
                    layer.in_dim()
                ));
            }
        }
        Ok(Self {
            layers,
            skips,
            dropout,
            dropout_after,
            version: 0,
        })
    }

    /// Builds a freshly initialised stack through `widths[0] -> … -> widths[n]`.
    pub fn build(
        widths: &[usize],
        activations: &[Activation],
        kind: LayerKind,
        skips: Vec<Option<usize>>,
        dropout: f64,
        dropout_after: Vec<bool>,
        rho_init: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if widths.len() < 2 || activations.len() != widths.len() - 1 {
            return shape_err("need n+1 widths and n activations");
        }
        if widths.iter().any(|&w| w == 0) {
            return shape_err("layer widths must be at least 1");
        }
        let n = activations.len();
        if skips.len() != n {
            return shape_err("skips must have one entry per layer");
        }
        let mut layers = Vec::with_capacity(n);
        for l in 0..n {
            let in_dim = widths[l] + skips[l].map_or(0, |s| widths[s]);
            let out_dim = widths[l + 1];
            layers.push(match kind {
                LayerKind::Dense => Layer::Dense(DenseLayer::init(in_dim, out_dim, activations[l], rng)),
                LayerKind::Gaussian => Layer::Gaussian(GaussianVariationalLayer::init(
                    in_dim,
                    out_dim,
                    activations[l],
                    rho_init,
                    rng,
                )),
            });
        }
        Network::new(layers, skips, dropout, dropout_after)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn parameters(&self) -> Vec<&RealMatrix> {
        self.layers.iter().flat_map(Layer::parameters).collect()
    }

    /// Mutable parameter access. Invalidates outstanding forward caches.
    pub fn parameters_mut(&mut self) -> Vec<&mut RealMatrix> {
        self.version = self.version.wrapping_add(1);
        self.layers.iter_mut().flat_map(Layer::parameters_mut).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    pub fn forward(&self, input: &RealMatrix, mode: Mode, rng: &mut RngStream) -> Result<ForwardCache> {
        if input.cols() != self.in_dim() {
            return shape_err(format!(
                "input has {} columns, network expects {}",
                input.cols(),
                self.in_dim()
            ));
        }
        let n = self.layers.len();
        let mut cache = ForwardCache {
            version: self.version,
            activations: Vec::with_capacity(n + 1),
            layer_inputs: Vec::with_capacity(n),
            activated: Vec::with_capacity(n),
            masks: Vec::with_capacity(n),
            sampled: Vec::with_capacity(n),
        };
        cache.activations.push(input.clone());

        for (l, layer) in self.layers.iter().enumerate() {
            let x = match self.skips[l] {
                Some(s) => cache.activations[l].hconcat(&cache.activations[s])?,
                None => cache.activations[l].clone(),
            };

            let (mut z, sampled) = match layer {
                Layer::Dense(d) => (affine(&x, &d.weights, &d.bias)?, None),
                Layer::Gaussian(g) => {
                    if mode == Mode::Eval {
                        (affine(&x, &g.mu_weights, &g.mu_bias)?, None)
                    } else {
                        let (w, eps_w) = reparameterize(&g.mu_weights, &g.rho_weights, rng)?;
                        let (b, eps_b) = reparameterize(&g.mu_bias, &g.rho_bias, rng)?;
                        let z = affine(&x, &w, &b)?;
                        (
                            z,
                            Some(SampledWeights {
                                weights: w,
                                eps_weights: eps_w,
                                eps_bias: eps_b,
                            }),
                        )
                    }
                }
            };
            let act = layer.activation();
            for v in z.values_mut() {
                *v = act.apply(*v);
            }

            let mask = if self.dropout_after[l] && self.dropout > 0.0 {
                match mode {
                    Mode::Train => Some(draw_mask(z.rows(), z.cols(), self.dropout, rng)),
                    Mode::Sample => Some(draw_mask(1, z.cols(), self.dropout, rng)),
                    Mode::Eval => None,
                }
            } else {
                None
            };
            let out = match &mask {
                Some(m) => masked(&z, m),
                None => z.clone(),
            };

            cache.layer_inputs.push(x);
            cache.activated.push(z);
            cache.masks.push(mask);
            cache.sampled.push(sampled);
            cache.activations.push(out);
        }
        Ok(cache)
    }

    /// Reverse-mode pass. `grad_output` is ∂loss/∂(network output).
    ///
    /// Returns parameter gradients and ∂loss/∂input.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_output: &RealMatrix,
    ) -> Result<(Gradients, RealMatrix)> {
        let n = self.layers.len();
        if cache.version != self.version {
            return Err(BaeError::Consistency(
                "parameters changed since the forward pass".into(),
            ));
        }
        if cache.layer_inputs.len() != n || cache.activations.len() != n + 1 {
            return Err(BaeError::Consistency(format!(
                "cache has {} layers, network has {n}",
                cache.layer_inputs.len()
            )));
        }
        if cache.output().shape() != grad_output.shape() {
            return shape_err(format!(
                "output gradient {:?} vs output {:?}",
                grad_output.shape(),
                cache.output().shape()
            ));
        }

        let mut pending: Vec<Option<RealMatrix>> = vec![None; n + 1];
        let mut per_layer: Vec<Vec<RealMatrix>> = vec![Vec::new(); n];
        let mut g = grad_output.clone();

        for l in (0..n).rev() {
            let layer = &self.layers[l];
            if let Some(extra) = pending[l + 1].take() {
                g.add_assign(&extra)?;
            }
            if let Some(mask) = &cache.masks[l] {
                g = masked(&g, mask);
            }
            let act = layer.activation();
            let activated = &cache.activated[l];
            if activated.shape() != g.shape() {
                return Err(BaeError::Consistency(format!("layer {l} activation shape")));
            }
            for (gv, &y) in g.values_mut().iter_mut().zip(activated.values()) {
                *gv *= act.derivative_from_output(y);
            }

            let x = &cache.layer_inputs[l];
            let grad_w = g.transposed_matmul(x)?;
            let grad_b = g.column_sums();
            let gx = match layer {
                Layer::Dense(d) => {
                    let gx = g.matmul(&d.weights)?;
                    per_layer[l] = vec![grad_w, grad_b];
                    gx
                }
                Layer::Gaussian(gl) => match &cache.sampled[l] {
                    Some(s) => {
                        let gx = g.matmul(&s.weights)?;
                        let grad_rho_w = rho_gradient(&grad_w, &s.eps_weights, &gl.rho_weights);
                        let grad_rho_b = rho_gradient(&grad_b, &s.eps_bias, &gl.rho_bias);
                        per_layer[l] = vec![grad_w, grad_rho_w, grad_b, grad_rho_b];
                        gx
                    }
                    None => {
                        let gx = g.matmul(&gl.mu_weights)?;
                        let zw = RealMatrix::zeros(gl.rho_weights.rows(), gl.rho_weights.cols());
                        let zb = RealMatrix::zeros(1, gl.rho_bias.cols());
                        per_layer[l] = vec![grad_w, zw, grad_b, zb];
                        gx
                    }
                },
            };

            g = match self.skips[l] {
                Some(s) => {
                    let main_cols = cache.activations[l].cols();
                    let (main, skip) = gx.hsplit(main_cols);
                    match &mut pending[s] {
                        Some(p) => p.add_assign(&skip)?,
                        slot => *slot = Some(skip),
                    }
                    main
                }
                None => gx,
            };
        }
        if let Some(extra) = pending[0].take() {
            g.add_assign(&extra)?;
        }
        Ok((Gradients(per_layer.into_iter().flatten().collect()), g))
    }
}

fn affine(x: &RealMatrix, w: &RealMatrix, b: &RealMatrix) -> Result<RealMatrix> {
    let mut z = x.matmul_transposed(w)?;
    let bias = b.values();
    for r in 0..z.rows() {
        for (v, bb) in z.row_mut(r).iter_mut().zip(bias) {
            *v += bb;
        }
    }
    Ok(z)
}

/// Elementwise product; a single-row mask is broadcast over all rows.
fn masked(a: &RealMatrix, mask: &RealMatrix) -> RealMatrix {
    let mut out = a.clone();
    if mask.rows() == 1 && a.rows() != 1 {
        let m = mask.values();
        for r in 0..out.rows() {
            for (v, mv) in out.row_mut(r).iter_mut().zip(m) {
                *v *= mv;
            }
        }
    } else {
        for (v, mv) in out.values_mut().iter_mut().zip(mask.values()) {
            *v *= mv;
        }
    }
    out
}

/// ∂L/∂ρ = ∂L/∂θ · ε · sigmoid(ρ), since θ = μ + softplus(ρ)·ε.
fn rho_gradient(grad_theta: &RealMatrix, eps: &RealMatrix, rho: &RealMatrix) -> RealMatrix {
    let mut out = grad_theta.clone();
    for ((o, e), r) in out.values_mut().iter_mut().zip(eps.values()).zip(rho.values()) {
        *o *= e * sigmoid(*r);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(w: Vec<Vec<f64>>, b: Vec<f64>, act: Activation) -> Layer {
        Layer::Dense(
            DenseLayer::new(RealMatrix::from_rows(&w).unwrap(), RealMatrix::row_vector(b), act)
                .unwrap(),
        )
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = Network::new(
            vec![dense(vec![vec![1., 0.], vec![0., 1.]], vec![0., 0.], Activation::Identity)],
            vec![None],
            0.0,
            vec![false],
        )
        .unwrap();
        let x = RealMatrix::from_vec(1, 2, vec![1., 2.]).unwrap();
        let cache = net.forward(&x, Mode::Eval, &mut RngStream::new(0)).unwrap();
        assert_eq!(cache.output().values(), &[1., 2.]);
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let net = Network::new(
            vec![dense(vec![vec![0.]], vec![0.], Activation::Sigmoid)],
            vec![None],
            0.0,
            vec![false],
        )
        .unwrap();
        let x = RealMatrix::from_vec(1, 1, vec![3.]).unwrap();
        let out = net.forward(&x, Mode::Eval, &mut RngStream::new(0)).unwrap();
        assert_eq!(out.output().get(0, 0), 0.5);
    }

    #[test]
    fn relu_then_sum() {
        let net = Network::new(
            vec![
                dense(vec![vec![1., 0.], vec![0., 1.]], vec![0., 0.], Activation::ReLU),
                dense(vec![vec![1., 1.]], vec![0.], Activation::Identity),
            ],
            vec![None, None],
            0.0,
            vec![false, false],
        )
        .unwrap();
        let x = RealMatrix::from_vec(1, 2, vec![-1., 2.]).unwrap();
        let cache = net.forward(&x, Mode::Eval, &mut RngStream::new(0)).unwrap();
        assert_eq!(cache.output().get(0, 0), 2.0);
        assert_eq!(cache.activations.len(), 3);
    }

    #[test]
    fn input_width_mismatch() {
        let net = Network::new(
            vec![dense(vec![vec![1., 0.]], vec![0.], Activation::Identity)],
            vec![None],
            0.0,
            vec![false],
        )
        .unwrap();
        let x = RealMatrix::zeros(1, 3);
        assert!(matches!(
            net.forward(&x, Mode::Eval, &mut RngStream::new(0)),
            Err(BaeError::Shape(_))
        ));
    }

    #[test]
    fn single_weight_gradient() {
        // loss = ½(w·1 − 0)², dL/dw = w
        let net = Network::new(
            vec![dense(vec![vec![3.]], vec![0.], Activation::Identity)],
            vec![None],
            0.0,
            vec![false],
        )
        .unwrap();
        let x = RealMatrix::from_vec(1, 1, vec![1.]).unwrap();
        let cache = net.forward(&x, Mode::Eval, &mut RngStream::new(0)).unwrap();
        let g_out = cache.output().clone();
        let (grads, _) = net.backward(&cache, &g_out).unwrap();
        assert_eq!(grads.0[0].get(0, 0), 3.0);
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let net = Network::new(
            vec![dense(vec![vec![1., 0.], vec![0., 1.]], vec![0., 0.], Activation::Identity)],
            vec![None],
            0.0,
            vec![false],
        )
        .unwrap();
        let x = RealMatrix::from_vec(1, 2, vec![0.3, 0.7]).unwrap();
        let cache = net.forward(&x, Mode::Eval, &mut RngStream::new(0)).unwrap();
        let mut residual = cache.output().clone();
        for (r, xv) in residual.values_mut().iter_mut().zip(x.values()) {
            *r -= xv;
        }
        let (grads, _) = net.backward(&cache, &residual).unwrap();
        assert!(grads.0.iter().all(|g| g.values().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut net = Network::build(
            &[2, 3, 2],
            &[Activation::ReLU, Activation::Identity],
            LayerKind::Dense,
            vec![None, None],
            0.0,
            vec![false, false],
            -5.0,
            &mut RngStream::new(1),
        )
        .unwrap();
        let x = RealMatrix::zeros(1, 2);
        let cache = net.forward(&x, Mode::Eval, &mut RngStream::new(0)).unwrap();
        net.parameters_mut()[0].set(0, 0, 9.0);
        let g = RealMatrix::zeros(1, 2);
        assert!(matches!(net.backward(&cache, &g), Err(BaeError::Consistency(_))));
    }

    #[test]
    fn sample_mode_shares_mask_across_rows() {
        let net = Network::build(
            &[3, 50, 3],
            &[Activation::ReLU, Activation::Identity],
            LayerKind::Dense,
            vec![None, None],
            0.5,
            vec![true, false],
            -5.0,
            &mut RngStream::new(2),
        )
        .unwrap();
        let x = RealMatrix::from_rows(&[vec![0.1, 0.2, 0.3], vec![0.1, 0.2, 0.3]]).unwrap();
        let cache = net.forward(&x, Mode::Sample, &mut RngStream::new(4)).unwrap();
        assert_eq!(cache.output().row(0), cache.output().row(1));
        let eval = net.forward(&x, Mode::Eval, &mut RngStream::new(4)).unwrap();
        assert_ne!(cache.output().row(0), eval.output().row(0));
    }
}
