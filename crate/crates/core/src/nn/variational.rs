use crate::error::{shape_err, Result};
use crate::matrix::RealMatrix;
use crate::rng::RngStream;

/// Lower bound applied to `softplus(rho)` so σ never underflows to zero.
pub const SIGMA_FLOOR: f64 = 1e-12;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)`, floored at [`SIGMA_FLOOR`].
#[inline]
pub fn softplus(x: f64) -> f64 {
    let v = if x > 30.0 { x } else { x.exp().ln_1p() };
    v.max(SIGMA_FLOOR)
}

/// Inverse of softplus for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// θ = μ + softplus(ρ)·ε with ε ~ N(0, 1) elementwise.
///
/// Returns the sampled weights together with the noise that produced them
/// (the noise is needed to backpropagate into ρ).
pub fn reparameterize(
    mu: &RealMatrix,
    rho: &RealMatrix,
    rng: &mut RngStream,
) -> Result<(RealMatrix, RealMatrix)> {
    if mu.shape() != rho.shape() {
        return shape_err(format!(
            "mu {:?} and rho {:?} differ",
            mu.shape(),
            rho.shape()
        ));
    }
    let (r, c) = mu.shape();
    let mut theta = RealMatrix::zeros(r, c);
    let mut eps = RealMatrix::zeros(r, c);
    for ((t, e), (&m, &p)) in theta
        .values_mut()
        .iter_mut()
        .zip(eps.values_mut().iter_mut())
        .zip(mu.values().iter().zip(rho.values()))
    {
        let n = rng.normal();
        *e = n;
        *t = m + softplus(p) * n;
    }
    Ok((theta, eps))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collapses_to_mean_when_sigma_vanishes() {
        let mu = RealMatrix::from_vec(1, 3, vec![0.5, -1.0, 2.0]).unwrap();
        let rho = RealMatrix::filled(1, 3, -800.0);
        let (theta, _) = reparameterize(&mu, &rho, &mut RngStream::new(3)).unwrap();
        for (t, m) in theta.values().iter().zip(mu.values()) {
            assert!((t - m).abs() < 1e-10);
        }
    }

    #[test]
    fn standard_normal_moments() {
        let n = 100_000;
        let mu = RealMatrix::zeros(1, n);
        let rho = RealMatrix::filled(1, n, softplus_inverse(1.0));
        let (theta, _) = reparameterize(&mu, &rho, &mut RngStream::new(11)).unwrap();
        let mean = theta.values().iter().sum::<f64>() / n as f64;
        let var = theta.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn deterministic_given_seed() {
        let mu = RealMatrix::zeros(4, 4);
        let rho = RealMatrix::zeros(4, 4);
        let a = reparameterize(&mu, &rho, &mut RngStream::new(5)).unwrap();
        let b = reparameterize(&mu, &rho, &mut RngStream::new(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shape_mismatch() {
        let mu = RealMatrix::zeros(2, 2);
        let rho = RealMatrix::zeros(2, 3);
        assert!(reparameterize(&mu, &rho, &mut RngStream::new(0)).is_err());
    }

    #[test]
    fn softplus_roundtrip_and_floor() {
        for y in [1e-3, 0.1, 1.0, 5.0, 40.0] {
            assert!((softplus(softplus_inverse(y)) - y).abs() < 1e-9 * y.max(1.0));
        }
        assert!(softplus(-1e4) >= SIGMA_FLOOR);
    }
}
