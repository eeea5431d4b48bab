//! Labelled tables, CSV I/O, the inlier split, train-only min-max scaling,
//! decimation, Tukey-fence labelling and the 2-D synthetic benchmark.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{param_err, shape_err, BaeError, Result};
use crate::matrix::RealMatrix;
use crate::rng::RngStream;

pub const DEFAULT_LABEL_COLUMN: &str = "label";

/// Features plus 0/1 labels (1 = anomaly).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledTable {
    pub features: RealMatrix,
    pub labels: Vec<u8>,
    pub columns: Vec<String>,
}

impl LabeledTable {
    pub fn new(features: RealMatrix, labels: Vec<u8>, columns: Vec<String>) -> Result<Self> {
        if labels.len() != features.rows() {
            return shape_err(format!(
                "{} labels for {} rows",
                labels.len(),
                features.rows()
            ));
        }
        if !columns.is_empty() && columns.len() != features.cols() {
            return shape_err(format!(
                "{} column names for {} features",
                columns.len(),
                features.cols()
            ));
        }
        if labels.iter().any(|&l| l > 1) {
            return param_err("labels must be 0 or 1");
        }
        Ok(Self {
            features,
            labels,
            columns,
        })
    }

    pub fn rows(&self) -> usize {
        self.features.rows()
    }

    pub fn anomaly_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            columns: self.columns.clone(),
        }
    }
}

fn load_error(row: usize, column: &str, message: impl Into<String>) -> BaeError {
    BaeError::Load {
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

/// Reads a headed CSV; every column other than `label_column` is a feature.
/// `row` in errors is the 1-based line number in the file.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<LabeledTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| BaeError::Data(format!("label column {label_column:?} not found")))?;
    let columns: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line() as usize);
                return Err(load_error(line, "", e.to_string()));
            }
        };
        let line = record.position().map_or(0, |p| p.line() as usize);
        for (i, cell) in record.iter().enumerate() {
            let name = &headers[i];
            if i == label_idx {
                labels.push(match cell {
                    "0" => 0,
                    "1" => 1,
                    _ => return Err(load_error(line, name, format!("label {cell:?} is not 0/1"))),
                });
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| load_error(line, name, format!("{cell:?} is not a number")))?;
            if !v.is_finite() {
                return Err(load_error(line, name, format!("non-finite value {cell:?}")));
            }
            values.push(v);
        }
    }
    let features = RealMatrix::from_vec(labels.len(), columns.len(), values)?;
    LabeledTable::new(features, labels, columns)
}

/// Writes a headed CSV with the label as the last column.
pub fn save_csv(table: &LabeledTable, path: impl AsRef<Path>, label_column: &str) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = if table.columns.is_empty() {
        (0..table.features.cols()).map(|i| format!("x{}", i + 1)).collect()
    } else {
        table.columns.clone()
    };
    header.push(label_column.to_string());
    writer.write_record(&header)?;
    for r in 0..table.rows() {
        let mut row: Vec<String> = table.features.row(r).iter().map(f64::to_string).collect();
        row.push(table.labels[r].to_string());
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            seed: 0,
        }
    }
}

/// Inliers are shuffled and split by `train_fraction`; all anomalies join the
/// test set. Both parts keep the original row order.
pub fn split(table: &LabeledTable, cfg: &SplitConfig) -> Result<(LabeledTable, LabeledTable)> {
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return param_err(format!("train fraction {} outside (0, 1)", cfg.train_fraction));
    }
    let mut inliers: Vec<usize> = (0..table.rows()).filter(|&i| table.labels[i] == 0).collect();
    if inliers.is_empty() {
        return Err(BaeError::Data("dataset has no inliers to train on".into()));
    }
    RngStream::new(cfg.seed).shuffle(&mut inliers);
    let n_train = ((inliers.len() as f64 * cfg.train_fraction).round() as usize).clamp(1, inliers.len());
    let mut train: Vec<usize> = inliers[..n_train].to_vec();
    let mut test: Vec<usize> = inliers[n_train..].to_vec();
    test.extend((0..table.rows()).filter(|&i| table.labels[i] == 1));
    train.sort_unstable();
    test.sort_unstable();
    Ok((table.select(&train), table.select(&test)))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    #[default]
    PerFeature,
    /// One min/max over every feature value.
    Global,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// Fits on the training split only.
pub fn fit_minmax(train: &RealMatrix, mode: ScaleMode) -> Result<ScalerParams> {
    if train.rows() == 0 {
        return Err(BaeError::Data("cannot fit a scaler on zero rows".into()));
    }
    let d = train.cols();
    let mut min = vec![f64::INFINITY; d];
    let mut max = vec![f64::NEG_INFINITY; d];
    for r in 0..train.rows() {
        for (c, &v) in train.row(r).iter().enumerate() {
            min[c] = min[c].min(v);
            max[c] = max[c].max(v);
        }
    }
    if mode == ScaleMode::Global {
        let lo = min.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = max.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        min = vec![lo; d];
        max = vec![hi; d];
    }
    Ok(ScalerParams { min, max })
}

impl ScalerParams {
    /// `(x − min)/(max − min)`, unclipped; zero-range features map to 0.
    pub fn transform(&self, x: &RealMatrix) -> Result<RealMatrix> {
        if x.cols() != self.min.len() {
            return shape_err(format!(
                "scaler fitted on {} features, got {}",
                self.min.len(),
                x.cols()
            ));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                let range = self.max[c] - self.min[c];
                *v = if range > 0.0 { (*v - self.min[c]) / range } else { 0.0 };
            }
        }
        Ok(out)
    }
}

/// Keeps every `k`-th element starting at index 0.
pub fn downsample<T: Clone>(sequence: &[T], k: usize) -> Result<Vec<T>> {
    if k == 0 {
        return param_err("downsampling factor must be >= 1");
    }
    Ok(sequence.iter().step_by(k).cloned().collect())
}

/// Quantile with linear interpolation between order statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Flags values whose absolute deviation from `nominal` lies outside
/// `[Q1 − 1.5 IQR, Q3 + 1.5 IQR]` of all deviations.
pub fn tukey_flags(values: &[f64], nominal: f64) -> Result<Vec<u8>> {
    if values.len() < 4 {
        return param_err(format!("Tukey fences need >= 4 values, got {}", values.len()));
    }
    let deviations: Vec<f64> = values.iter().map(|v| (v - nominal).abs()).collect();
    if deviations.iter().any(|d| !d.is_finite()) {
        return Err(BaeError::Data("non-finite value in Tukey input".into()));
    }
    let mut sorted = deviations.clone();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile(&sorted, 0.25);
    let q3 = quantile(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    Ok(deviations.iter().map(|&d| u8::from(d > hi || d < lo)).collect())
}

pub const SYNTHETIC_CENTERS: [(f64, f64); 2] = [(-1.0, 0.0), (1.0, 0.0)];
pub const SYNTHETIC_STD: f64 = 0.3;

/// Two Gaussian blobs (alternating rows) and uniform anomalies over the inlier
/// bounding box expanded 1.5x about its centre. Inliers come first.
pub fn make_synthetic_2d(seed: u64, n_inliers: usize, n_anomalies: usize) -> Result<LabeledTable> {
    if n_inliers == 0 {
        return param_err("synthetic data needs at least one inlier");
    }
    let mut rng = RngStream::new(seed);
    let mut rows = Vec::with_capacity(n_inliers + n_anomalies);
    for i in 0..n_inliers {
        let (cx, cy) = SYNTHETIC_CENTERS[i % 2];
        rows.push(vec![
            cx + SYNTHETIC_STD * rng.normal(),
            cy + SYNTHETIC_STD * rng.normal(),
        ]);
    }
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for row in &rows {
        for c in 0..2 {
            lo[c] = lo[c].min(row[c]);
            hi[c] = hi[c].max(row[c]);
        }
    }
    let mut box_lo = [0.0; 2];
    let mut box_hi = [0.0; 2];
    for c in 0..2 {
        let centre = 0.5 * (lo[c] + hi[c]);
        let half = 0.75 * (hi[c] - lo[c]);
        box_lo[c] = centre - half;
        box_hi[c] = centre + half;
    }
    for _ in 0..n_anomalies {
        rows.push(vec![
            rng.uniform_range(box_lo[0], box_hi[0]),
            rng.uniform_range(box_lo[1], box_hi[1]),
        ]);
    }
    let mut labels = vec![0u8; n_inliers];
    labels.resize(n_inliers + n_anomalies, 1);
    LabeledTable::new(
        RealMatrix::from_rows(&rows)?,
        labels,
        vec!["x1".into(), "x2".into()],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_small_file() {
        let f = write_tmp("a,b,label\n0.5,1,0\n2,3.25,1\n");
        let t = load_csv(f.path(), "label").unwrap();
        assert_eq!(t.rows(), 2);
        assert_eq!(t.anomaly_count(), 1);
        assert_eq!(t.columns, vec!["a", "b"]);
        assert_eq!(t.features.row(1), &[2.0, 3.25]);
    }

    #[test]
    fn load_reports_bad_cells() {
        let f = write_tmp("a,b,label\n0.5,1,0\n2,NaN,1\n");
        match load_csv(f.path(), "label") {
            Err(BaeError::Load { row, column, .. }) => {
                assert_eq!(row, 3);
                assert_eq!(column, "b");
            }
            other => panic!("expected load error, got {other:?}"),
        }
        let f = write_tmp("a,label\nx,0\n");
        assert!(matches!(load_csv(f.path(), "label"), Err(BaeError::Load { .. })));
        let f = write_tmp("a,label\n1,2\n");
        assert!(matches!(load_csv(f.path(), "label"), Err(BaeError::Load { .. })));
        let f = write_tmp("a,b\n1,2\n");
        assert!(load_csv(f.path(), "label").is_err());
        let f = write_tmp("a,b,label\n1,2,0\n1,0\n");
        assert!(load_csv(f.path(), "label").is_err());
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let t = make_synthetic_2d(4, 20, 5).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_csv(&t, f.path(), "label").unwrap();
        assert_eq!(load_csv(f.path(), "label").unwrap(), t);
    }

    #[test]
    fn split_counts() {
        let mut rows = vec![vec![0.0]; 120];
        for (i, r) in rows.iter_mut().enumerate() {
            r[0] = i as f64;
        }
        let labels: Vec<u8> = (0..120).map(|i| u8::from(i >= 100)).collect();
        let t = LabeledTable::new(RealMatrix::from_rows(&rows).unwrap(), labels, vec![]).unwrap();
        let (train, test) = split(&t, &SplitConfig::default()).unwrap();
        assert_eq!((train.rows(), test.rows()), (70, 50));
        assert_eq!(train.anomaly_count(), 0);
        assert_eq!(test.anomaly_count(), 20);
        let mut all: Vec<f64> = train.features.values().to_vec();
        all.extend(test.features.values());
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..120).map(|i| i as f64).collect::<Vec<_>>());
        let (train2, _) = split(&t, &SplitConfig::default()).unwrap();
        assert_eq!(train, train2);
    }

    #[test]
    fn split_without_anomalies_or_inliers() {
        let t = LabeledTable::new(RealMatrix::zeros(10, 1), vec![0; 10], vec![]).unwrap();
        let (_, test) = split(&t, &SplitConfig::default()).unwrap();
        assert_eq!((test.rows(), test.anomaly_count()), (3, 0));
        let t = LabeledTable::new(RealMatrix::zeros(3, 1), vec![1; 3], vec![]).unwrap();
        assert!(split(&t, &SplitConfig::default()).is_err());
    }

    #[test]
    fn minmax_examples() {
        let train = RealMatrix::from_rows(&[vec![2.0, 5.0], vec![4.0, 5.0], vec![6.0, 5.0]]).unwrap();
        let s = fit_minmax(&train, ScaleMode::PerFeature).unwrap();
        assert_eq!(s.transform(&train).unwrap().column(0), vec![0.0, 0.5, 1.0]);
        assert_eq!(s.transform(&train).unwrap().column(1), vec![0.0; 3]);
        let test = RealMatrix::from_rows(&[vec![8.0, 7.0]]).unwrap();
        assert_eq!(s.transform(&test).unwrap().get(0, 0), 1.5);
        let g = fit_minmax(&train, ScaleMode::Global).unwrap();
        assert_eq!(g.transform(&train).unwrap().row(0), &[0.0, 0.75]);
    }

    #[test]
    fn downsample_examples() {
        assert_eq!(downsample(&[0; 10], 10).unwrap().len(), 1);
        assert_eq!(downsample(&[1, 2, 3], 1).unwrap(), vec![1, 2, 3]);
        assert_eq!(downsample(&[0, 1, 2, 3, 4, 5], 2).unwrap(), vec![0, 2, 4]);
        assert!(downsample(&[1], 0).is_err());
    }

    #[test]
    fn tukey_examples() {
        assert_eq!(tukey_flags(&[1.0, 2.0, 3.0, 4.0, 100.0], 0.0).unwrap(), vec![0, 0, 0, 0, 1]);
        assert_eq!(tukey_flags(&[5.0; 6], 2.0).unwrap(), vec![0; 6]);
        let values = [10.0, 10.1, 9.9, 10.05, 9.95, 10.0, 13.0];
        assert_eq!(tukey_flags(&values, 10.0).unwrap(), vec![0, 0, 0, 0, 0, 0, 1]);
        assert!(tukey_flags(&[1.0, 2.0, 3.0], 0.0).is_err());
    }

    #[test]
    fn synthetic_shape_and_determinism() {
        let t = make_synthetic_2d(1, 50, 0).unwrap();
        assert!(t.labels.iter().all(|&l| l == 0));
        let a = make_synthetic_2d(9, 500, 100).unwrap();
        assert_eq!(a, make_synthetic_2d(9, 500, 100).unwrap());
        assert_eq!((a.rows(), a.anomaly_count()), (600, 100));
        assert_ne!(a, make_synthetic_2d(10, 500, 100).unwrap());
    }

    proptest! {
        #[test]
        fn train_scaling_lands_in_unit_interval(
            rows in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 3), 2..30)
        ) {
            let x = RealMatrix::from_rows(&rows).unwrap();
            let s = fit_minmax(&x, ScaleMode::PerFeature).unwrap();
            let y = s.transform(&x).unwrap();
            prop_assert!(y.values().iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn split_is_a_partition(labels in prop::collection::vec(0u8..=1, 1..60), seed in 0u64..1000) {
            prop_assume!(labels.contains(&0));
            let n = labels.len();
            let x = RealMatrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
            let t = LabeledTable::new(x, labels, vec![]).unwrap();
            let (train, test) = split(&t, &SplitConfig { train_fraction: 0.7, seed }).unwrap();
            let mut ids: Vec<f64> = train.features.values().to_vec();
            ids.extend(test.features.values());
            ids.sort_by(f64::total_cmp);
            prop_assert_eq!(ids, (0..n).map(|i| i as f64).collect::<Vec<_>>());
            prop_assert_eq!(train.anomaly_count(), 0);
        }
    }
}
