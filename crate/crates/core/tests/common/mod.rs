//! Random small networks and a finite-difference gradient oracle.

use bae_core::nn::{Activation, LayerKind, Mode, Network};
use bae_core::{RealMatrix, RngStream};

const H: f64 = 1e-5;

fn loss(net: &Network, x: &RealMatrix, target: &RealMatrix, mode: Mode, seed: u64) -> f64 {
    let cache = net.forward(x, mode, &mut RngStream::new(seed)).unwrap();
    cache
        .output()
        .values()
        .iter()
        .zip(target.values())
        .map(|(o, t)| 0.5 * (o - t) * (o - t))
        .sum()
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut RngStream) -> RealMatrix {
    let mut m = RealMatrix::zeros(rows, cols);
    for v in m.values_mut() {
        *v = rng.uniform();
    }
    m
}

/// Max relative error between analytic and finite-difference gradients.
pub fn max_relative_error(net: &mut Network, x: &RealMatrix, target: &RealMatrix, mode: Mode, seed: u64) -> f64 {
    let cache = net.forward(x, mode, &mut RngStream::new(seed)).unwrap();
    let mut g_out = cache.output().clone();
    for (g, t) in g_out.values_mut().iter_mut().zip(target.values()) {
        *g -= t;
    }
    let (grads, _) = net.backward(&cache, &g_out).unwrap();
    drop(cache);

    let mut worst: f64 = 0.0;
    let n_tensors = net.parameters().len();
    for t in 0..n_tensors {
        let n_vals = net.parameters()[t].len();
        for i in 0..n_vals {
            let orig = net.parameters()[t].values()[i];
            net.parameters_mut()[t].values_mut()[i] = orig + H;
            let plus = loss(net, x, target, mode, seed);
            net.parameters_mut()[t].values_mut()[i] = orig - H;
            let minus = loss(net, x, target, mode, seed);
            net.parameters_mut()[t].values_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * H);
            let analytic = grads.0[t].values()[i];
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
    }
    worst
}

pub fn random_net(case: u64) -> (Network, Mode) {
    let mut rng = RngStream::new(1000 + case);
    let d = 2 + rng.index(3);
    let h = 2 + rng.index(4);
    let latent = 1 + rng.index(2);
    let kind = if case % 3 == 2 { LayerKind::Gaussian } else { LayerKind::Dense };
    let skip = case % 4 == 1;
    let widths = [d, h, latent, h, d];
    let acts = [
        Activation::ReLU,
        Activation::Identity,
        Activation::ReLU,
        Activation::Sigmoid,
    ];
    let skips = if skip {
        vec![None, None, None, Some(1)]
    } else {
        vec![None; 4]
    };
    let dropout = if case % 2 == 0 { 0.2 } else { 0.0 };
    let net = Network::build(
        &widths,
        &acts,
        kind,
        skips,
        dropout,
        vec![true, true, true, false],
        -2.0,
        &mut rng,
    )
    .unwrap();
    // Zero biases put every pre-activation at a ReLU kink once a whole layer
    // is dropped; jitter them away from it.
    let mut net = net;
    for p in net.parameters_mut() {
        if p.rows() == 1 {
            for v in p.values_mut() {
                *v = 0.2 * (rng.uniform() - 0.5);
            }
        }
    }
    assert!(net.parameter_count() <= 100 || kind == LayerKind::Gaussian);
    (net, Mode::Train)
}


/// Max relative gradient error of random case `case` (0..20 in the suites).
pub fn case_error(case: u64) -> f64 {
    let (mut net, mode) = random_net(case);
    let mut rng = RngStream::new(case);
    let x = random_matrix(4, net.in_dim(), &mut rng);
    let target = random_matrix(4, net.out_dim(), &mut rng);
    max_relative_error(&mut net, &x, &target, mode, 77 + case)
}
