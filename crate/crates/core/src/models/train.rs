use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, BaeError, Result};
use crate::matrix::RealMatrix;
use crate::nn::{softplus_inverse, AdamState, ForwardCache, Gradients, LayerKind, Mode, Network};
use crate::rng::{mix_seed, RngStream};

use super::regularizers;
use super::vae::Vae;
use super::{
    AnchorSet, AutoencoderArchitecture, BbbPriorConfig, McdConfig, Member, Method,
    PosteriorEnsemble,
};

/// Stream index reserved for the prediction seed.
const PREDICTION_STREAM: u64 = 0x5EED_0F_9E4D;

/// Method-specific knobs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelOptions {
    pub mcd: McdConfig,
    pub bbb_prior: BbbPriorConfig,
    /// Initial σ of every variational weight.
    pub bbb_sigma_init: f64,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            mcd: McdConfig::default(),
            bbb_prior: BbbPriorConfig::default(),
            bbb_sigma_init: 0.01,
        }
    }
}

/// Mean-NLL loss of a batch and its gradient w.r.t. the reconstruction.
fn nll_loss(x: &RealMatrix, x_hat: &RealMatrix) -> (f64, RealMatrix) {
    let n = x.rows() as f64;
    let d = x.cols() as f64;
    let mut loss = 0.0;
    let mut grad = x_hat.clone();
    for (g, &xv) in grad.values_mut().iter_mut().zip(x.values()) {
        let r = *g - xv;
        loss += 0.5 * r * r;
        *g = r / (d * n);
    }
    (loss / (d * n), grad)
}

fn add_scaled(grads: &mut Gradients, extra: &Gradients, k: f64) {
    for (g, e) in grads.0.iter_mut().zip(&extra.0) {
        for (a, b) in g.values_mut().iter_mut().zip(e.values()) {
            *a += k * b;
        }
    }
}

/// Shuffled mini-batch epochs; returns the mean loss of every epoch.
fn run_epochs(
    data: &RealMatrix,
    cfg: &super::TrainingConfig,
    rng: &mut RngStream,
    mut step: impl FnMut(&RealMatrix, &mut RngStream) -> Result<f64>,
) -> Result<Vec<f64>> {
    let n = data.rows();
    if n == 0 {
        return Err(BaeError::Data("cannot train on an empty dataset".into()));
    }
    let batch = cfg.batch_size.unwrap_or(n).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let xb = data.select_rows(chunk);
            let loss = step(&xb, rng)?;
            if !loss.is_finite() {
                return Err(BaeError::Diverged { epoch, loss });
            }
            total += loss * chunk.len() as f64;
        }
        history.push(total / n as f64);
    }
    Ok(history)
}

/// Trains `net` on `NLL + λ·R(θ)`.
fn fit_network<R>(
    net: &mut Network,
    data: &RealMatrix,
    cfg: &super::TrainingConfig,
    rng: &mut RngStream,
    regularizer: R,
) -> Result<Vec<f64>>
where
    R: Fn(&Network, &ForwardCache) -> Result<(f64, Gradients)>,
{
    let mut adam = AdamState::new(cfg.learning_rate);
    let lambda = cfg.weight_decay;
    run_epochs(data, cfg, rng, |xb, rng| {
        let cache = net.forward(xb, Mode::Train, rng)?;
        let (mut loss, g_out) = nll_loss(xb, cache.output());
        let (mut grads, _) = net.backward(&cache, &g_out)?;
        if lambda > 0.0 {
            let (r, rg) = regularizer(net, &cache)?;
            loss += lambda * r;
            add_scaled(&mut grads, &rg, lambda);
        }
        drop(cache);
        if !grads.is_finite() {
            return Ok(f64::NAN);
        }
        adam.step(net.parameters_mut(), &grads)?;
        Ok(loss)
    })
}

fn check_inputs(data: &RealMatrix, arch: &AutoencoderArchitecture, cfg: &super::TrainingConfig) -> Result<()> {
    cfg.validate()?;
    arch.validate()?;
    if data.cols() != arch.input_dim {
        return param_err(format!(
            "data has {} features, architecture expects {}",
            data.cols(),
            arch.input_dim
        ));
    }
    if !data.is_finite() {
        return Err(BaeError::Data("training data contains non-finite values".into()));
    }
    Ok(())
}

fn single_member(
    method: Method,
    arch: &AutoencoderArchitecture,
    cfg: &super::TrainingConfig,
    net: Network,
    history: Vec<f64>,
) -> PosteriorEnsemble {
    PosteriorEnsemble {
        method,
        architecture: arch.clone(),
        samples: cfg.samples_for(method),
        train_seed: cfg.seed,
        prediction_seed: mix_seed(cfg.seed, PREDICTION_STREAM),
        members: vec![Member::Net(net)],
        loss_history: vec![history],
    }
}

/// Deterministic AE, MAP estimate under `NLL + λ‖θ‖²`.
pub fn train_deterministic(
    data: &RealMatrix,
    arch: &AutoencoderArchitecture,
    cfg: &super::TrainingConfig,
) -> Result<PosteriorEnsemble> {
    check_inputs(data, arch, cfg)?;
    let mut rng = RngStream::new(mix_seed(cfg.seed, 0));
    let mut net = arch.build_network(LayerKind::Dense, 0.0, 0.0, &mut rng)?;
    let history = fit_network(&mut net, data, cfg, &mut rng, |n, _| Ok(regularizers::l2(n)))?;
    Ok(single_member(Method::Deterministic, arch, cfg, net, history))
}

/// Anchored ensemble: member `m` minimises `NLL + λ‖θ_m − θ_m^anc‖²` from its own
/// initialisation. Members train in parallel, each with its own stream.
pub fn train_anchored_ensemble(
    data: &RealMatrix,
    arch: &AutoencoderArchitecture,
    cfg: &super::TrainingConfig,
    anchors: &AnchorSet,
) -> Result<PosteriorEnsemble> {
    check_inputs(data, arch, cfg)?;
    let m = anchors.members();
    if m == 0 {
        return param_err("anchored ensemble needs at least one member");
    }
    if let Some(s) = cfg.samples {
        if s != m {
            return param_err(format!("config asks for M = {s} but {m} anchor sets were drawn"));
        }
    }
    let trained: Vec<(Network, Vec<f64>)> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(mix_seed(cfg.seed, i as u64));
            let mut net = arch.build_network(LayerKind::Dense, 0.0, 0.0, &mut rng)?;
            let anchor = anchors.member(i);
            let history = fit_network(&mut net, data, cfg, &mut rng, |n, _| {
                regularizers::anchored(n, anchor)
            })?;
            Ok((net, history))
        })
        .collect::<Result<_>>()?;
    let (members, loss_history): (Vec<_>, Vec<_>) = trained
        .into_iter()
        .map(|(net, h)| (Member::Net(net), h))
        .unzip();
    Ok(PosteriorEnsemble {
        method: Method::AnchoredEnsemble,
        architecture: arch.clone(),
        samples: m,
        train_seed: cfg.seed,
        prediction_seed: mix_seed(cfg.seed, PREDICTION_STREAM),
        members,
        loss_history,
    })
}

/// MC dropout: one network trained with dropout active, `NLL + λ‖θ‖²`.
pub fn train_mcd(
    data: &RealMatrix,
    arch: &AutoencoderArchitecture,
    cfg: &super::TrainingConfig,
    mcd: &McdConfig,
) -> Result<PosteriorEnsemble> {
    check_inputs(data, arch, cfg)?;
    mcd.validate()?;
    let mut rng = RngStream::new(mix_seed(cfg.seed, 0));
    let mut net = arch.build_network(LayerKind::Dense, mcd.p_dropout, 0.0, &mut rng)?;
    let history = fit_network(&mut net, data, cfg, &mut rng, |n, _| Ok(regularizers::l2(n)))?;
    Ok(single_member(Method::Mcd, arch, cfg, net, history))
}

/// Bayes by backprop: diagonal-Gaussian weights, one reparameterised sample per
/// step, `NLL + λ·(mixture prior + variational term)`.
pub fn train_bbb(
    data: &RealMatrix,
    arch: &AutoencoderArchitecture,
    cfg: &super::TrainingConfig,
    prior: &BbbPriorConfig,
    sigma_init: f64,
) -> Result<PosteriorEnsemble> {
    check_inputs(data, arch, cfg)?;
    prior.validate()?;
    if !(sigma_init > 0.0) {
        return param_err(format!("initial sigma {sigma_init} must be > 0"));
    }
    let mut rng = RngStream::new(mix_seed(cfg.seed, 0));
    let mut net = arch.build_network(LayerKind::Gaussian, 0.0, softplus_inverse(sigma_init), &mut rng)?;
    let history = fit_network(&mut net, data, cfg, &mut rng, |n, cache| {
        regularizers::bbb(n, cache, prior)
    })?;
    Ok(single_member(Method::Bbb, arch, cfg, net, history))
}

/// VAE trained on `NLL + KL(q(z|x) ‖ N(0, I)) + λ‖θ‖²`.
pub fn train_vae(
    data: &RealMatrix,
    arch: &AutoencoderArchitecture,
    cfg: &super::TrainingConfig,
) -> Result<PosteriorEnsemble> {
    check_inputs(data, arch, cfg)?;
    if arch.skip_connections {
        log::warn!("skip connections are not wired into the VAE; training without them");
    }
    let mut rng = RngStream::new(mix_seed(cfg.seed, 0));
    let (encoder, decoder) = arch.build_vae_networks(&mut rng)?;
    let mut vae = Vae {
        encoder,
        decoder,
        latent_dim: arch.latent_dim,
    };
    let mut enc_adam = AdamState::new(cfg.learning_rate);
    let mut dec_adam = AdamState::new(cfg.learning_rate);
    let lambda = cfg.weight_decay;
    let history = run_epochs(data, cfg, &mut rng, |xb, rng| {
        let step = vae.loss_and_gradients(xb, rng)?;
        let mut loss = step.loss;
        let mut enc_grads = step.encoder_grads;
        let mut dec_grads = step.decoder_grads;
        if lambda > 0.0 {
            let (re, ge) = regularizers::l2(&vae.encoder);
            let (rd, gd) = regularizers::l2(&vae.decoder);
            loss += lambda * (re + rd);
            add_scaled(&mut enc_grads, &ge, lambda);
            add_scaled(&mut dec_grads, &gd, lambda);
        }
        if !enc_grads.is_finite() || !dec_grads.is_finite() {
            return Ok(f64::NAN);
        }
        enc_adam.step(vae.encoder.parameters_mut(), &enc_grads)?;
        dec_adam.step(vae.decoder.parameters_mut(), &dec_grads)?;
        Ok(loss)
    })?;
    Ok(PosteriorEnsemble {
        method: Method::Vae,
        architecture: arch.clone(),
        samples: cfg.samples_for(Method::Vae),
        train_seed: cfg.seed,
        prediction_seed: mix_seed(cfg.seed, PREDICTION_STREAM),
        members: vec![Member::Vae(vae)],
        loss_history: vec![history],
    })
}

/// Dispatches to the trainer for `method`.
pub fn train(
    method: Method,
    data: &RealMatrix,
    arch: &AutoencoderArchitecture,
    cfg: &super::TrainingConfig,
    options: &ModelOptions,
) -> Result<PosteriorEnsemble> {
    match method {
        Method::Deterministic => train_deterministic(data, arch, cfg),
        Method::AnchoredEnsemble => {
            let anchors = AnchorSet::draw(arch, cfg.samples_for(method), mix_seed(cfg.seed, 0xA4C4))?;
            train_anchored_ensemble(data, arch, cfg, &anchors)
        }
        Method::Mcd => train_mcd(data, arch, cfg, &options.mcd),
        Method::Bbb => train_bbb(data, arch, cfg, &options.bbb_prior, options.bbb_sigma_init),
        Method::Vae => train_vae(data, arch, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::TrainingConfig;

    fn toy_data() -> RealMatrix {
        let mut rng = RngStream::new(3);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| {
                let t = rng.uniform();
                vec![t, 1.0 - t, 0.5 + 0.1 * rng.normal()]
            })
            .collect();
        RealMatrix::from_rows(&rows).unwrap()
    }

    fn quick_cfg(seed: u64) -> TrainingConfig {
        TrainingConfig {
            epochs: 5,
            batch_size: Some(8),
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn nll_loss_matches_pointwise_mean() {
        let x = RealMatrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let x_hat = RealMatrix::from_rows(&[vec![1.0, 3.0], vec![1.0, 1.0]]).unwrap();
        let (loss, _) = nll_loss(&x, &x_hat);
        assert_eq!(loss, (2.5 + 0.0) / 2.0);
    }

    #[test]
    fn deterministic_training_is_reproducible() {
        let arch = AutoencoderArchitecture::new(3, vec![4], 1);
        let a = train_deterministic(&toy_data(), &arch, &quick_cfg(7)).unwrap();
        let b = train_deterministic(&toy_data(), &arch, &quick_cfg(7)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.loss_history[0].len(), 5);
    }

    #[test]
    fn anchored_with_zero_lambda_matches_plain_loss() {
        let arch = AutoencoderArchitecture::new(3, vec![4], 1);
        let net = arch
            .build_network(LayerKind::Dense, 0.0, 0.0, &mut RngStream::new(1))
            .unwrap();
        let anchors = AnchorSet::draw(&arch, 1, 2).unwrap();
        let data = toy_data();
        let mut cfg = quick_cfg(1);
        cfg.weight_decay = 0.0;
        cfg.epochs = 3;
        let mut a = net.clone();
        let mut b = net;
        let ha = fit_network(&mut a, &data, &cfg, &mut RngStream::new(4), |n, _| {
            regularizers::anchored(n, anchors.member(0))
        })
        .unwrap();
        let hb = fit_network(&mut b, &data, &cfg, &mut RngStream::new(4), |_, _| {
            unreachable!("λ = 0 never evaluates the regulariser")
        })
        .unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a, b);
    }

    #[test]
    fn anchor_count_must_match_m() {
        let arch = AutoencoderArchitecture::new(3, vec![4], 1);
        let anchors = AnchorSet::draw(&arch, 2, 0).unwrap();
        let mut cfg = quick_cfg(0);
        cfg.samples = Some(3);
        assert!(train_anchored_ensemble(&toy_data(), &arch, &cfg, &anchors).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let arch = AutoencoderArchitecture::new(3, vec![4], 1);
        let mut data = toy_data();
        data.set(0, 0, 1e300);
        // non-finite input is refused up front
        data.set(1, 0, f64::INFINITY);
        assert!(matches!(
            train_deterministic(&data, &arch, &quick_cfg(0)),
            Err(BaeError::Data(_))
        ));
        let mut cfg = quick_cfg(0);
        cfg.learning_rate = 1e300;
        cfg.weight_decay = 1e300;
        assert!(matches!(
            train_deterministic(&toy_data(), &arch, &cfg),
            Err(BaeError::Diverged { .. })
        ));
    }

    #[test]
    fn wrong_feature_count() {
        let arch = AutoencoderArchitecture::new(4, vec![4], 1);
        assert!(train_deterministic(&toy_data(), &arch, &quick_cfg(0)).is_err());
    }
}
