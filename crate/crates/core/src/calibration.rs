//! Score distributions Q, CDF-based anomaly probabilities and the customised
//! scaling that zeroes probabilities at or below the mean training score.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{param_err, shape_err, BaeError, Result};
use crate::matrix::RealMatrix;

/// Lower bound on σ, range and exponential mean of a fitted distribution.
pub const SPREAD_FLOOR: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QKind {
    Gaussian,
    Exponential,
    Uniform,
    Ecdf,
}

impl QKind {
    pub const ALL: [QKind; 4] = [QKind::Gaussian, QKind::Exponential, QKind::Uniform, QKind::Ecdf];

    pub fn name(self) -> &'static str {
        match self {
            QKind::Gaussian => "gaussian",
            QKind::Exponential => "exponential",
            QKind::Uniform => "uniform",
            QKind::Ecdf => "ecdf",
        }
    }

    pub fn parse(s: &str) -> Option<QKind> {
        QKind::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(s))
    }
}

impl std::fmt::Display for QKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ScoreDistribution {
    Gaussian { mean: f64, std: f64 },
    /// Fitted on `score + shift`; `shift` is `-min` when the training minimum is negative.
    Exponential { mean: f64, shift: f64 },
    Uniform { lo: f64, hi: f64 },
    Ecdf { sorted: Vec<f64> },
}

/// A fitted distribution, and whether any spread had to be floored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QFit {
    pub distribution: ScoreDistribution,
    pub floored: bool,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn floor_spread(value: f64, floored: &mut bool) -> f64 {
    if value < SPREAD_FLOOR {
        *floored = true;
        SPREAD_FLOOR
    } else {
        value
    }
}

/// Maximum-likelihood fit of `kind` to one posterior sample's training scores.
pub fn fit_q(train_scores: &[f64], kind: QKind) -> Result<QFit> {
    if train_scores.len() < 2 {
        return param_err(format!(
            "need at least 2 training scores, got {}",
            train_scores.len()
        ));
    }
    if train_scores.iter().any(|s| !s.is_finite()) {
        return Err(BaeError::Data("training scores contain non-finite values".into()));
    }
    let mut floored = false;
    let distribution = match kind {
        QKind::Gaussian => {
            let mu = mean(train_scores);
            let var = train_scores.iter().map(|s| (s - mu) * (s - mu)).sum::<f64>()
                / train_scores.len() as f64;
            ScoreDistribution::Gaussian {
                mean: mu,
                std: floor_spread(var.sqrt(), &mut floored),
            }
        }
        QKind::Exponential => {
            let min = train_scores.iter().copied().fold(f64::INFINITY, f64::min);
            let shift = if min < 0.0 { -min } else { 0.0 };
            ScoreDistribution::Exponential {
                mean: floor_spread(mean(train_scores) + shift, &mut floored),
                shift,
            }
        }
        QKind::Uniform => {
            let lo = train_scores.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = train_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let range = floor_spread(hi - lo, &mut floored);
            ScoreDistribution::Uniform { lo, hi: lo + range }
        }
        QKind::Ecdf => {
            let mut sorted = train_scores.to_vec();
            sorted.sort_by(f64::total_cmp);
            ScoreDistribution::Ecdf { sorted }
        }
    };
    if floored {
        log::warn!("degenerate {kind} fit: spread floored at {SPREAD_FLOOR}");
    }
    Ok(QFit {
        distribution,
        floored,
    })
}

/// Fraction of training scores `<= score`.
pub fn ecdf_eval(sorted: &[f64], score: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    sorted.partition_point(|&v| v <= score) as f64 / sorted.len() as f64
}

impl ScoreDistribution {
    pub fn kind(&self) -> QKind {
        match self {
            ScoreDistribution::Gaussian { .. } => QKind::Gaussian,
            ScoreDistribution::Exponential { .. } => QKind::Exponential,
            ScoreDistribution::Uniform { .. } => QKind::Uniform,
            ScoreDistribution::Ecdf { .. } => QKind::Ecdf,
        }
    }

    pub fn cdf(&self, score: f64) -> f64 {
        let p = match self {
            ScoreDistribution::Gaussian { mean, std } => {
                0.5 * (1.0 + erf((score - mean) / (std * std::f64::consts::SQRT_2)))
            }
            ScoreDistribution::Exponential { mean, shift } => {
                let s = score + shift;
                if s < 0.0 {
                    0.0
                } else {
                    -(-s / mean).exp_m1()
                }
            }
            ScoreDistribution::Uniform { lo, hi } => (score - lo) / (hi - lo),
            ScoreDistribution::Ecdf { sorted } => ecdf_eval(sorted, score),
        };
        p.clamp(0.0, 1.0)
    }
}

pub fn cdf_eval(dist: &ScoreDistribution, score: f64) -> f64 {
    dist.cdf(score)
}

/// `max{0, (p − p_ref)/(1 − p_ref)}`, or 0 when `p_ref` is (numerically) 1.
pub fn customised_scale(p: f64, p_ref: f64) -> f64 {
    let denom = 1.0 - p_ref;
    if denom < 1e-12 {
        return 0.0;
    }
    ((p - p_ref) / denom).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub kind: QKind,
    pub scaled: bool,
}

/// One fitted Q per posterior sample plus its reference probability
/// `p_ref,m = CDF_m(mean training score of sample m)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub config: CalibrationConfig,
    pub distributions: Vec<ScoreDistribution>,
    pub p_ref: Vec<f64>,
    /// True if any per-sample fit was degenerate.
    pub floored: bool,
}

impl Calibration {
    /// Fits on an `M x N_train` score matrix, one distribution per row.
    pub fn fit(train_scores: &RealMatrix, config: CalibrationConfig) -> Result<Self> {
        let mut distributions = Vec::with_capacity(train_scores.rows());
        let mut p_ref = Vec::with_capacity(train_scores.rows());
        let mut floored = false;
        for m in 0..train_scores.rows() {
            let row = train_scores.row(m);
            let fit = fit_q(row, config.kind)?;
            floored |= fit.floored;
            p_ref.push(fit.distribution.cdf(mean(row)));
            distributions.push(fit.distribution);
        }
        Ok(Self {
            config,
            distributions,
            p_ref,
            floored,
        })
    }

    pub fn samples(&self) -> usize {
        self.distributions.len()
    }
}

/// `M x N` matrix of (optionally scaled) `CDF_m(score_{m,i})`.
pub fn anomaly_probability_matrix(scores: &RealMatrix, calibration: &Calibration) -> Result<RealMatrix> {
    if scores.rows() != calibration.samples() {
        return shape_err(format!(
            "{} score rows but {} fitted distributions",
            scores.rows(),
            calibration.samples()
        ));
    }
    if !scores.is_finite() {
        return Err(BaeError::Data("scores contain non-finite values".into()));
    }
    let mut out = RealMatrix::zeros(scores.rows(), scores.cols());
    for m in 0..scores.rows() {
        let dist = &calibration.distributions[m];
        let p_ref = calibration.p_ref[m];
        for (o, &s) in out.row_mut(m).iter_mut().zip(scores.row(m)) {
            let p = dist.cdf(s);
            *o = if calibration.config.scaled {
                customised_scale(p, p_ref)
            } else {
                p
            };
        }
    }
    Ok(out)
}

/// Column means of an `M x N` probability matrix.
pub fn mean_anomaly_probability(probabilities: &RealMatrix) -> Vec<f64> {
    let m = probabilities.rows() as f64;
    probabilities
        .column_sums()
        .into_values()
        .into_iter()
        .map(|s| (s / m).clamp(0.0, 1.0))
        .collect()
}

/// 1 (anomaly) iff `p̄ >= threshold`.
pub fn hard_predict(p_bar: &[f64], threshold: f64) -> Vec<u8> {
    p_bar.iter().map(|&p| u8::from(p >= threshold)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() < tol
    }

    #[test]
    fn fit_examples() {
        let g = fit_q(&[0.0, 2.0], QKind::Gaussian).unwrap().distribution;
        assert_eq!(g, ScoreDistribution::Gaussian { mean: 1.0, std: 1.0 });
        let e = fit_q(&[1.0, 3.0], QKind::Exponential).unwrap().distribution;
        assert_eq!(e, ScoreDistribution::Exponential { mean: 2.0, shift: 0.0 });
        let u = fit_q(&[3.0, 7.0, 5.0], QKind::Uniform).unwrap().distribution;
        assert_eq!(u, ScoreDistribution::Uniform { lo: 3.0, hi: 7.0 });
        assert!(fit_q(&[1.0], QKind::Gaussian).is_err());
    }

    #[test]
    fn cdf_examples() {
        let g = ScoreDistribution::Gaussian { mean: 3.0, std: 2.0 };
        assert!(close(g.cdf(3.0), 0.5, 1e-15));
        let e = ScoreDistribution::Exponential { mean: 2.0, shift: 0.0 };
        assert!(close(e.cdf(2.0), 1.0 - (-1.0f64).exp(), 1e-15));
        assert!(close(e.cdf(2.0), 0.6321, 1e-4));
        assert_eq!(e.cdf(-1.0), 0.0);
        let u = ScoreDistribution::Uniform { lo: 0.0, hi: 10.0 };
        assert_eq!(u.cdf(2.5), 0.25);
        assert_eq!(u.cdf(-3.0), 0.0);
        assert_eq!(u.cdf(30.0), 1.0);
    }

    #[test]
    fn ecdf_examples() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(ecdf_eval(&s, 2.5), 0.5);
        assert_eq!(ecdf_eval(&s, 0.0), 0.0);
        assert_eq!(ecdf_eval(&s, 4.0), 1.0);
    }

    #[test]
    fn customised_scale_examples() {
        assert_eq!(customised_scale(0.3, 0.5), 0.0);
        assert!(close(customised_scale(0.9, 0.5), 0.8, 1e-15));
        assert_eq!(customised_scale(0.5, 0.5), 0.0);
        assert_eq!(customised_scale(1.0, 1.0), 0.0);
    }

    #[test]
    fn negative_scores_shift_exponential() {
        let fit = fit_q(&[-1.0, 1.0, 3.0], QKind::Exponential).unwrap();
        let ScoreDistribution::Exponential { mean, shift } = fit.distribution else {
            panic!("wrong kind");
        };
        assert_eq!(shift, 1.0);
        assert_eq!(mean, 2.0);
        assert_eq!(fit.distribution.cdf(-1.0), 0.0);
        assert!(fit.distribution.cdf(-0.5) > 0.0);
    }

    #[test]
    fn degenerate_fits_are_floored_and_flagged() {
        for kind in [QKind::Gaussian, QKind::Uniform, QKind::Exponential] {
            let fit = fit_q(&[0.0, 0.0, 0.0], kind).unwrap();
            assert!(fit.floored, "{kind}");
        }
        assert!(!fit_q(&[0.0, 0.0], QKind::Ecdf).unwrap().floored);
    }

    #[test]
    fn uniform_probabilities_match_minmax() {
        let train = RealMatrix::from_rows(&[vec![1.0, 5.0, 3.0]]).unwrap();
        let cal = Calibration::fit(
            &train,
            CalibrationConfig {
                kind: QKind::Uniform,
                scaled: false,
            },
        )
        .unwrap();
        let test = RealMatrix::from_rows(&[vec![2.0, 4.5]]).unwrap();
        let p = anomaly_probability_matrix(&test, &cal).unwrap();
        assert_eq!(p.values(), &[0.25, 0.875]);
    }

    #[test]
    fn p_ref_uses_cdf_of_mean_score() {
        let train = RealMatrix::from_rows(&[vec![0.0, 0.0, 3.0]]).unwrap();
        let cal = Calibration::fit(
            &train,
            CalibrationConfig {
                kind: QKind::Ecdf,
                scaled: true,
            },
        )
        .unwrap();
        // mean is 1, two of three training scores are <= 1
        assert!(close(cal.p_ref[0], 2.0 / 3.0, 1e-15));
    }

    #[test]
    fn ecdf_below_all_training_is_zero() {
        let train = RealMatrix::from_rows(&[vec![1.0, 2.0], vec![1.5, 2.5]]).unwrap();
        let cal = Calibration::fit(
            &train,
            CalibrationConfig {
                kind: QKind::Ecdf,
                scaled: false,
            },
        )
        .unwrap();
        let test = RealMatrix::from_rows(&[vec![0.1, 0.5], vec![0.2, 0.3]]).unwrap();
        let p = anomaly_probability_matrix(&test, &cal).unwrap();
        assert!(p.values().iter().all(|&v| v == 0.0));
        assert!(anomaly_probability_matrix(&RealMatrix::zeros(1, 2), &cal).is_err());
    }

    #[test]
    fn mean_and_threshold() {
        let p = RealMatrix::from_rows(&[vec![0.4, 0.2], vec![0.6, 0.2]]).unwrap();
        let p_bar = mean_anomaly_probability(&p);
        assert!(close(p_bar[0], 0.5, 1e-15));
        assert_eq!(p_bar[1], 0.2);
        assert_eq!(hard_predict(&[0.5, 0.49, 1.0], 0.5), vec![1, 0, 1]);
    }

    fn any_kind() -> impl Strategy<Value = QKind> {
        prop::sample::select(QKind::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn cdf_is_monotone_and_bounded(
            train in prop::collection::vec(-5.0f64..5.0, 2..30),
            a in -10.0f64..10.0,
            b in -10.0f64..10.0,
            kind in any_kind(),
        ) {
            let d = fit_q(&train, kind).unwrap().distribution;
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (pl, ph) = (d.cdf(lo), d.cdf(hi));
            prop_assert!((0.0..=1.0).contains(&pl) && (0.0..=1.0).contains(&ph));
            prop_assert!(pl <= ph);
        }

        #[test]
        fn scaling_never_increases_probability(p in 0.0f64..=1.0, p_ref in 0.0f64..=1.0) {
            let z = customised_scale(p, p_ref);
            prop_assert!(z <= p + 1e-15);
            if p <= p_ref {
                prop_assert_eq!(z, 0.0);
            }
        }

        #[test]
        fn scaling_is_strictly_increasing_above_reference(
            p_ref in 0.0f64..0.99,
            a in 0.0f64..1.0,
            b in 0.0f64..1.0,
        ) {
            let lo = p_ref + (1.0 - p_ref) * a.min(b);
            let hi = p_ref + (1.0 - p_ref) * a.max(b);
            prop_assume!(hi - lo > 1e-9 && lo > p_ref);
            prop_assert!(customised_scale(lo, p_ref) < customised_scale(hi, p_ref));
        }
    }
}
