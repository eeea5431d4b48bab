//! Classification with rejection: confusion counts, GSS, AUROC and
//! accuracy-rejection curves summarised as W / Base / Gain.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{param_err, shape_err, BaeError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

fn check_binary(name: &str, values: &[u8]) -> Result<()> {
    if let Some(v) = values.iter().find(|&&v| v > 1) {
        return param_err(format!("{name} must be 0/1, found {v}"));
    }
    Ok(())
}

/// Positive class is 1 (anomaly).
pub fn confusion(labels: &[u8], predictions: &[u8]) -> Result<ConfusionCounts> {
    if labels.len() != predictions.len() {
        return shape_err(format!(
            "{} labels vs {} predictions",
            labels.len(),
            predictions.len()
        ));
    }
    check_binary("labels", labels)?;
    check_binary("predictions", predictions)?;
    let mut c = ConfusionCounts::default();
    for (&y, &p) in labels.iter().zip(predictions) {
        match (y, p) {
            (1, 1) => c.tp += 1,
            (0, 0) => c.tn += 1,
            (0, 1) => c.fp += 1,
            _ => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// `sqrt(sensitivity · specificity)`; `None` when either class is absent.
pub fn gss(c: &ConfusionCounts) -> Option<f64> {
    let pos = c.tp + c.fn_;
    let neg = c.tn + c.fp;
    if pos == 0 || neg == 0 {
        return None;
    }
    let sensitivity = c.tp as f64 / pos as f64;
    let specificity = c.tn as f64 / neg as f64;
    Some((sensitivity * specificity).sqrt())
}

/// Mann–Whitney AUROC with midranks for ties; `None` when a class is absent.
pub fn auroc(labels: &[u8], scores: &[f64]) -> Result<Option<f64>> {
    if labels.len() != scores.len() {
        return shape_err(format!("{} labels vs {} scores", labels.len(), scores.len()));
    }
    check_binary("labels", labels)?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(BaeError::Data("AUROC scores contain NaN".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; the tie group i..=j shares the midrank
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                rank_sum += midrank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(Some(u / (n_pos as f64 * n_neg as f64)))
}

/// Rejection rates 0, 5, …, 95 (percent).
pub fn default_grid() -> Vec<f64> {
    (0..20).map(|i| 5.0 * i as f64).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArcPoint {
    /// Percent of test points rejected, in `[0, 100)`.
    pub rejection_rate: f64,
    pub retained: usize,
    pub gss: Option<f64>,
    pub auroc: Option<f64>,
}

/// Rejection-weighted summary of one metric along a curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedSummary {
    pub w: f64,
    pub base: f64,
    pub gain: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArcReport {
    pub points: Vec<ArcPoint>,
    pub gss: Option<WeightedSummary>,
    pub auroc: Option<WeightedSummary>,
}

/// `W = Σ (100 − r_i) m_i / Σ (100 − r_i)` over defined points, `Base` = value at
/// `r = 0`, `Gain = W − Base`. `None` if the `r = 0` value is missing or undefined.
pub fn weighted_summary(points: &[(f64, Option<f64>)]) -> Option<WeightedSummary> {
    let base = points.iter().find(|(r, _)| *r == 0.0).and_then(|(_, v)| *v)?;
    let den: f64 = points.iter().filter(|(_, v)| v.is_some()).map(|(r, _)| 100.0 - r).sum();
    // normalised weights keep a single-point curve exactly at its base value
    let w = points
        .iter()
        .filter_map(|&(r, v)| v.map(|v| (100.0 - r) / den * v))
        .sum();
    Some(WeightedSummary {
        w,
        base,
        gain: w - base,
    })
}

/// W / Base / Gain of the GSS column of an ARC.
pub fn w_gss(points: &[ArcPoint]) -> Option<WeightedSummary> {
    let pairs: Vec<_> = points.iter().map(|p| (p.rejection_rate, p.gss)).collect();
    weighted_summary(&pairs)
}

/// Order in which points are kept: ascending uncertainty, ties by original index.
pub fn retention_order(uncertainty: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..uncertainty.len()).collect();
    order.sort_by(|&a, &b| uncertainty[a].total_cmp(&uncertainty[b]).then(a.cmp(&b)));
    order
}

/// Number of points rejected at rate `r` percent: `ceil(r N / 100)`.
pub fn rejected_count(rate: f64, n: usize) -> usize {
    ((rate * n as f64 / 100.0).ceil() as usize).min(n)
}

/// Accuracy-rejection curve: at each rate, drop the most uncertain points and
/// score the retained predictions. Points whose retained set is empty are skipped.
pub fn arc(
    uncertainty: &[f64],
    labels: &[u8],
    predictions: &[u8],
    scores: &[f64],
    grid: &[f64],
) -> Result<ArcReport> {
    let n = uncertainty.len();
    if labels.len() != n || predictions.len() != n || scores.len() != n {
        return shape_err(format!(
            "lengths differ: uncertainty {n}, labels {}, predictions {}, scores {}",
            labels.len(),
            predictions.len(),
            scores.len()
        ));
    }
    if uncertainty.iter().any(|u| u.is_nan()) {
        return Err(BaeError::Data("uncertainty contains NaN".into()));
    }
    if let Some(r) = grid.iter().find(|r| !(0.0..100.0).contains(*r)) {
        return param_err(format!("rejection rate {r} outside [0, 100)"));
    }
    let order = retention_order(uncertainty);
    let mut points = Vec::with_capacity(grid.len());
    for &r in grid {
        let retained = n - rejected_count(r, n);
        if retained == 0 {
            continue;
        }
        let keep = &order[..retained];
        let y: Vec<u8> = keep.iter().map(|&i| labels[i]).collect();
        let p: Vec<u8> = keep.iter().map(|&i| predictions[i]).collect();
        let s: Vec<f64> = keep.iter().map(|&i| scores[i]).collect();
        points.push(ArcPoint {
            rejection_rate: r,
            retained,
            gss: gss(&confusion(&y, &p)?),
            auroc: auroc(&y, &s)?,
        });
    }
    let auroc_pairs: Vec<_> = points.iter().map(|p| (p.rejection_rate, p.auroc)).collect();
    Ok(ArcReport {
        gss: w_gss(&points),
        auroc: weighted_summary(&auroc_pairs),
        points,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ArcReport {
    /// `r,retained,gss,auroc`; undefined values are empty cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("r,retained,gss,auroc\n");
        for p in &self.points {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                p.rejection_rate,
                p.retained,
                fmt_opt(p.gss),
                fmt_opt(p.auroc)
            );
        }
        out
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({ "gss": self.gss, "auroc": self.auroc })
    }
}
