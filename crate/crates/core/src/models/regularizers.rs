//! Prior / variational regularisers added to the NLL. Each returns the term's
//! value and its gradient in [`Network::parameters`] order; callers scale both by λ.

use crate::error::{shape_err, BaeError, Result};
use crate::matrix::RealMatrix;
use crate::nn::{sigmoid, softplus, ForwardCache, Gradients, Layer, Network};

use super::BbbPriorConfig;

/// `‖θ‖²`.
pub(crate) fn l2(net: &Network) -> (f64, Gradients) {
    let params = net.parameters();
    let value = params.iter().map(|p| p.sum_squares()).sum();
    let grads = params.iter().map(|p| p.map(|v| 2.0 * v)).collect();
    (value, Gradients(grads))
}

/// `‖θ − θ_anc‖²`.
pub(crate) fn anchored(net: &Network, anchors: &[RealMatrix]) -> Result<(f64, Gradients)> {
    let params = net.parameters();
    if params.len() != anchors.len() {
        return shape_err(format!(
            "{} parameter tensors but {} anchors",
            params.len(),
            anchors.len()
        ));
    }
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(params.len());
    for (p, a) in params.iter().zip(anchors) {
        if p.shape() != a.shape() {
            return shape_err(format!("anchor {:?} vs parameter {:?}", a.shape(), p.shape()));
        }
        value += p.squared_distance(a);
        let mut g = (*p).clone();
        for (gv, av) in g.values_mut().iter_mut().zip(a.values()) {
            *gv = 2.0 * (*gv - av);
        }
        grads.push(g);
    }
    Ok((value, Gradients(grads)))
}

/// Per-weight mixture-prior / variational term for one sampled weight:
///
/// `π(θ²/2τ₁² − log τ₁) + (1−π)(θ²/2τ₂² − log τ₂) + (θ−μ)²/2σ² − log σ`
pub fn bbb_prior_term(theta: f64, mu: f64, sigma: f64, prior: &BbbPriorConfig) -> f64 {
    let BbbPriorConfig { pi, tau1, tau2 } = *prior;
    pi * (theta * theta / (2.0 * tau1 * tau1) - tau1.ln())
        + (1.0 - pi) * (theta * theta / (2.0 * tau2 * tau2) - tau2.ln())
        + (theta - mu) * (theta - mu) / (2.0 * sigma * sigma)
        - sigma.ln()
}

/// Sum of [`bbb_prior_term`] over every sampled weight of the pass in `cache`,
/// with its gradient w.r.t. `(μ, ρ)` through θ = μ + softplus(ρ)·ε.
pub(crate) fn bbb(net: &Network, cache: &ForwardCache, prior: &BbbPriorConfig) -> Result<(f64, Gradients)> {
    // d/dθ of the two quadratic prior terms is `a·θ`.
    let a = prior.pi / (prior.tau1 * prior.tau1) + (1.0 - prior.pi) / (prior.tau2 * prior.tau2);
    let mut value = 0.0;
    let mut grads = Vec::new();
    for (l, layer) in net.layers().iter().enumerate() {
        let Layer::Gaussian(g) = layer else {
            return Err(BaeError::State("Bayes-by-backprop needs variational layers".into()));
        };
        let (eps_w, eps_b) = cache.weight_noise(l).ok_or_else(|| {
            BaeError::Consistency(format!("layer {l} was not sampled in this pass"))
        })?;
        for (mu, rho, eps) in [
            (&g.mu_weights, &g.rho_weights, eps_w),
            (&g.mu_bias, &g.rho_bias, eps_b),
        ] {
            let mut g_mu = mu.clone();
            let mut g_rho = rho.clone();
            for (((gm, gr), (&m, &r)), &e) in g_mu
                .values_mut()
                .iter_mut()
                .zip(g_rho.values_mut().iter_mut())
                .zip(mu.values().iter().zip(rho.values()))
                .zip(eps.values())
            {
                let sigma = softplus(r);
                let theta = m + sigma * e;
                value += bbb_prior_term(theta, m, sigma, prior);
                let s = sigmoid(r);
                // (θ−μ)²/2σ² = ε²/2 is constant in (μ, ρ); only −log σ adds to ∂ρ.
                *gm = a * theta;
                *gr = a * theta * e * s - s / sigma;
            }
            grads.push(g_mu);
            grads.push(g_rho);
        }
    }
    // parameters() order per layer is [μ_w, ρ_w, μ_b, ρ_b]; we pushed the same.
    Ok((value, Gradients(grads)))
}

/// Closed-form `KL(N(μ, diag σ²) ‖ N(0, I))` for each row, with `log σ²` given.
///
/// Returns per-row values and gradients w.r.t. `μ` and `log σ²`.
pub fn vae_kl(mu: &RealMatrix, log_var: &RealMatrix) -> Result<(Vec<f64>, RealMatrix, RealMatrix)> {
    if mu.shape() != log_var.shape() {
        return shape_err(format!("mu {:?} vs log_var {:?}", mu.shape(), log_var.shape()));
    }
    let mut values = Vec::with_capacity(mu.rows());
    // ∂KL/∂μ = μ
    let g_mu = mu.clone();
    let mut g_lv = log_var.clone();
    for r in 0..mu.rows() {
        let mut kl = 0.0;
        for (c, (&m, &lv)) in mu.row(r).iter().zip(log_var.row(r)).enumerate() {
            let var = lv.exp();
            kl += 0.5 * (m * m + var - 1.0 - lv);
            g_lv.set(r, c, 0.5 * (var - 1.0));
        }
        values.push(kl);
    }
    Ok((values, g_mu, g_lv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{softplus_inverse, Activation, LayerKind, Mode};
    use crate::rng::RngStream;

    #[test]
    fn bbb_term_at_mean_with_unit_sigma() {
        let v = bbb_prior_term(0.0, 0.0, 1.0, &BbbPriorConfig::default());
        let expected = 0.5 * 0.0 + 0.5 * (-(0.1f64).ln());
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 1.1513).abs() < 1e-4);
    }

    #[test]
    fn vae_kl_examples() {
        let zero = RealMatrix::zeros(1, 1);
        let (kl, _, _) = vae_kl(&zero, &zero).unwrap();
        assert_eq!(kl, vec![0.0]);
        let one = RealMatrix::filled(1, 1, 1.0);
        let (kl, g_mu, g_lv) = vae_kl(&one, &zero).unwrap();
        assert_eq!(kl, vec![0.5]);
        assert_eq!(g_mu.get(0, 0), 1.0);
        assert_eq!(g_lv.get(0, 0), 0.0);
    }

    #[test]
    fn anchored_is_zero_at_anchor() {
        let net = Network::build(
            &[2, 3, 2],
            &[Activation::ReLU, Activation::Sigmoid],
            LayerKind::Dense,
            vec![None, None],
            0.0,
            vec![false, false],
            0.0,
            &mut RngStream::new(3),
        )
        .unwrap();
        let anchors: Vec<RealMatrix> = net.parameters().into_iter().cloned().collect();
        let (v, g) = anchored(&net, &anchors).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.0.iter().all(|m| m.values().iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn bbb_gradient_matches_finite_differences() {
        let prior = BbbPriorConfig::default();
        let mut net = Network::build(
            &[2, 2],
            &[Activation::Identity],
            LayerKind::Gaussian,
            vec![None],
            0.0,
            vec![false],
            softplus_inverse(0.3),
            &mut RngStream::new(8),
        )
        .unwrap();
        let x = RealMatrix::zeros(1, 2);
        let value_at = |net: &Network| {
            let cache = net.forward(&x, Mode::Train, &mut RngStream::new(21)).unwrap();
            bbb(net, &cache, &prior).unwrap().0
        };
        let cache = net.forward(&x, Mode::Train, &mut RngStream::new(21)).unwrap();
        let (_, grads) = bbb(&net, &cache, &prior).unwrap();
        drop(cache);
        let h = 1e-6;
        for t in 0..net.parameters().len() {
            for i in 0..net.parameters()[t].len() {
                let orig = net.parameters()[t].values()[i];
                net.parameters_mut()[t].values_mut()[i] = orig + h;
                let plus = value_at(&net);
                net.parameters_mut()[t].values_mut()[i] = orig - h;
                let minus = value_at(&net);
                net.parameters_mut()[t].values_mut()[i] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                let analytic = grads.0[t].values()[i];
                assert!(
                    (numeric - analytic).abs() < 1e-5 * analytic.abs().max(1.0),
                    "tensor {t} index {i}: {analytic} vs {numeric}"
                );
            }
        }
    }
}
