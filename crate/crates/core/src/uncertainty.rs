//! Anomaly uncertainty from the `M x N` probability matrix: the law-of-total-variance
//! split into epistemic and aleatoric parts, plus the exceed and NLL-variance rivals.

use serde::{Deserialize, Serialize};

use crate::error::{param_err, shape_err, Result};
use crate::matrix::RealMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyKind {
    Total,
    Epistemic,
    Aleatoric,
    Exceed,
    VarNll,
}

impl UncertaintyKind {
    pub const ALL: [UncertaintyKind; 5] = [
        UncertaintyKind::Total,
        UncertaintyKind::Epistemic,
        UncertaintyKind::Aleatoric,
        UncertaintyKind::Exceed,
        UncertaintyKind::VarNll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UncertaintyKind::Total => "total",
            UncertaintyKind::Epistemic => "epistemic",
            UncertaintyKind::Aleatoric => "aleatoric",
            UncertaintyKind::Exceed => "exceed",
            UncertaintyKind::VarNll => "var_nll",
        }
    }

    pub fn parse(s: &str) -> Option<UncertaintyKind> {
        UncertaintyKind::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(s))
    }
}

impl std::fmt::Display for UncertaintyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn check_column(column: &[f64]) -> Result<()> {
    if column.is_empty() {
        return param_err("uncertainty of an empty sample column (M = 0)");
    }
    Ok(())
}

fn mean(column: &[f64]) -> f64 {
    column.iter().sum::<f64>() / column.len() as f64
}

fn population_variance(column: &[f64]) -> f64 {
    let mu = mean(column);
    column.iter().map(|p| (p - mu) * (p - mu)).sum::<f64>() / column.len() as f64
}

/// `Var_m[p_m]` with 1/M normalisation.
pub fn epistemic(column: &[f64]) -> Result<f64> {
    check_column(column)?;
    Ok(population_variance(column))
}

/// `E_m[p_m (1 − p_m)]`.
pub fn aleatoric(column: &[f64]) -> Result<f64> {
    check_column(column)?;
    Ok(mean(&column.iter().map(|p| p * (1.0 - p)).collect::<Vec<_>>()))
}

/// `(epistemic + aleatoric, 4 · (epistemic + aleatoric))`.
pub fn total(column: &[f64]) -> Result<(f64, f64)> {
    let raw = epistemic(column)? + aleatoric(column)?;
    Ok((raw, 4.0 * raw))
}

/// `p̄^N` when the mean test NLL is below the training maximum, else `1 − p̄^N`.
pub fn exceed(p_bar: f64, n_train: usize, mean_nll: f64, max_train_nll: f64) -> Result<f64> {
    if n_train == 0 {
        return param_err("exceed needs n_train >= 1");
    }
    let mut power = p_bar.clamp(0.0, 1.0).powf(n_train as f64);
    if power < f64::MIN_POSITIVE {
        power = 0.0;
    }
    Ok(if mean_nll < max_train_nll {
        power
    } else {
        1.0 - power
    })
}

/// Population variance of the M NLL scores of one point.
pub fn var_nll(column: &[f64]) -> Result<f64> {
    check_column(column)?;
    Ok(population_variance(column))
}

/// Per-test-point uncertainties.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub epistemic: Vec<f64>,
    pub aleatoric: Vec<f64>,
    pub total_raw: Vec<f64>,
    pub total_scaled: Vec<f64>,
    pub exceed: Vec<f64>,
    pub var_nll: Vec<f64>,
}

impl UncertaintyReport {
    /// `probabilities` and `test_scores` are `M x N_test`; `train_scores` is
    /// `M x N_train` and supplies N and the maximum posterior-mean training NLL.
    pub fn compute(
        probabilities: &RealMatrix,
        test_scores: &RealMatrix,
        train_scores: &RealMatrix,
    ) -> Result<Self> {
        if probabilities.shape() != test_scores.shape() {
            return shape_err(format!(
                "probabilities {:?} vs scores {:?}",
                probabilities.shape(),
                test_scores.shape()
            ));
        }
        if train_scores.rows() != test_scores.rows() {
            return shape_err(format!(
                "{} training rows vs {} test rows",
                train_scores.rows(),
                test_scores.rows()
            ));
        }
        let m = train_scores.rows() as f64;
        let max_train_nll = train_scores
            .column_sums()
            .values()
            .iter()
            .map(|s| s / m)
            .fold(f64::NEG_INFINITY, f64::max);
        let n_train = train_scores.cols();

        let n = probabilities.cols();
        let mut report = Self {
            epistemic: Vec::with_capacity(n),
            aleatoric: Vec::with_capacity(n),
            total_raw: Vec::with_capacity(n),
            total_scaled: Vec::with_capacity(n),
            exceed: Vec::with_capacity(n),
            var_nll: Vec::with_capacity(n),
        };
        for i in 0..n {
            let p = probabilities.column(i);
            let s = test_scores.column(i);
            let e = epistemic(&p)?;
            let a = aleatoric(&p)?;
            report.epistemic.push(e);
            report.aleatoric.push(a);
            report.total_raw.push(e + a);
            report.total_scaled.push(4.0 * (e + a));
            report.exceed.push(exceed(mean(&p), n_train, mean(&s), max_train_nll)?);
            report.var_nll.push(var_nll(&s)?);
        }
        Ok(report)
    }

    pub fn len(&self) -> usize {
        self.epistemic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epistemic.is_empty()
    }

    /// Values used to rank points for rejection; `Total` uses the ×4 scaled total.
    pub fn get(&self, kind: UncertaintyKind) -> &[f64] {
        match kind {
            UncertaintyKind::Total => &self.total_scaled,
            UncertaintyKind::Epistemic => &self.epistemic,
            UncertaintyKind::Aleatoric => &self.aleatoric,
            UncertaintyKind::Exceed => &self.exceed,
            UncertaintyKind::VarNll => &self.var_nll,
        }
    }
}
