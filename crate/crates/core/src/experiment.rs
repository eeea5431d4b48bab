//! Config-driven sweeps: models × Q × scaling × uncertainty × seeds, with
//! per-run ARC files, seed aggregates and plot-ready curve files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{
    anomaly_probability_matrix, hard_predict, mean_anomaly_probability, Calibration,
    CalibrationConfig, QKind,
};
use crate::data::{
    fit_minmax, load_csv, make_synthetic_2d, split, LabeledTable, ScaleMode, SplitConfig,
    DEFAULT_LABEL_COLUMN,
};
use crate::error::{BaeError, Result};
use crate::evaluation::{arc, default_grid, ArcReport};
use crate::matrix::RealMatrix;
use crate::models::{train, AutoencoderArchitecture, Method, ModelOptions, PosteriorEnsemble, TrainingConfig};
use crate::rng::mix_seed;
use crate::uncertainty::{UncertaintyKind, UncertaintyReport};

const SPLIT_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;
const PREDICT_STREAM: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        #[serde(default = "default_label_column")]
        label_column: String,
    },
    /// Regenerated for every seed from that seed.
    Synthetic { n_inliers: usize, n_anomalies: usize },
}

fn default_label_column() -> String {
    DEFAULT_LABEL_COLUMN.to_string()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalingChoice {
    Plain,
    Scaled,
    #[default]
    Both,
}

impl ScalingChoice {
    pub fn variants(self) -> Vec<bool> {
        match self {
            ScalingChoice::Plain => vec![false],
            ScalingChoice::Scaled => vec![true],
            ScalingChoice::Both => vec![false, true],
        }
    }
}

pub fn scaling_name(scaled: bool) -> &'static str {
    if scaled {
        "scaled"
    } else {
        "plain"
    }
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

fn default_threshold() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub scale_mode: ScaleMode,
    pub architecture: AutoencoderArchitecture,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub model_options: ModelOptions,
    pub models: Vec<Method>,
    pub q: Vec<QKind>,
    #[serde(default)]
    pub scaling: ScalingChoice,
    #[serde(default = "all_uncertainties")]
    pub uncertainties: Vec<UncertaintyKind>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Rejection rates in percent; defaults to 0, 5, …, 95.
    #[serde(default = "default_grid")]
    pub grid: Vec<f64>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn all_uncertainties() -> Vec<UncertaintyKind> {
    UncertaintyKind::ALL.to_vec()
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let empty = |what: &str| Err(BaeError::Config(format!("{what} list is empty")));
        if self.models.is_empty() {
            return empty("model");
        }
        if self.q.is_empty() {
            return empty("Q");
        }
        if self.seeds.is_empty() {
            return empty("seed");
        }
        if self.uncertainties.is_empty() {
            return empty("uncertainty");
        }
        if self.grid.is_empty() {
            return empty("grid");
        }
        if self.grid.iter().any(|r| !(0.0..100.0).contains(r)) {
            return Err(BaeError::Config("grid rates must lie in [0, 100)".into()));
        }
        if let DatasetSource::Synthetic { n_inliers, .. } = self.dataset {
            if n_inliers < 2 {
                return Err(BaeError::Config("synthetic dataset needs >= 2 inliers".into()));
            }
        }
        self.architecture.validate()?;
        self.training.validate()?;
        Ok(())
    }

    /// Training config of one (seed, model) run.
    pub fn training_for(&self, seed: u64, method: Method) -> TrainingConfig {
        TrainingConfig {
            seed: mix_seed(mix_seed(seed, TRAIN_STREAM), method_index(method)),
            ..self.training.clone()
        }
    }

    /// Prediction seed of one (seed, model) run.
    pub fn prediction_seed(&self, seed: u64, method: Method) -> u64 {
        mix_seed(mix_seed(seed, PREDICT_STREAM), method_index(method))
    }
}

fn method_index(method: Method) -> u64 {
    Method::ALL.iter().position(|&m| m == method).unwrap_or(0) as u64
}

/// Scaled train inliers and test set of one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedData {
    pub train: RealMatrix,
    pub test: RealMatrix,
    pub test_labels: Vec<u8>,
}

pub fn prepare_data(config: &ExperimentConfig, seed: u64) -> Result<PreparedData> {
    let table: LabeledTable = match &config.dataset {
        DatasetSource::Csv { path, label_column } => load_csv(path, label_column)?,
        DatasetSource::Synthetic {
            n_inliers,
            n_anomalies,
        } => make_synthetic_2d(seed, *n_inliers, *n_anomalies)?,
    };
    let split_cfg = SplitConfig {
        seed: mix_seed(seed, SPLIT_STREAM),
        ..config.split
    };
    let (train, test) = split(&table, &split_cfg)?;
    let scaler = fit_minmax(&train.features, config.scale_mode)?;
    Ok(PreparedData {
        train: scaler.transform(&train.features)?,
        test: scaler.transform(&test.features)?,
        test_labels: test.labels,
    })
}

pub fn train_model(config: &ExperimentConfig, seed: u64, method: Method, data: &PreparedData) -> Result<PosteriorEnsemble> {
    let ensemble = train(
        method,
        &data.train,
        &config.architecture,
        &config.training_for(seed, method),
        &config.model_options,
    )?;
    Ok(ensemble.with_prediction_seed(config.prediction_seed(seed, method)))
}

/// Per-test-point outputs of one (seed, model, Q, scaling) variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointOutputs {
    pub labels: Vec<u8>,
    pub predictions: Vec<u8>,
    pub p_bar: Vec<f64>,
    pub mean_nll: Vec<f64>,
    pub uncertainty: UncertaintyReport,
}

impl PointOutputs {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "index,label,prediction,p_bar,mean_nll,epistemic,aleatoric,total_raw,total_scaled,exceed,var_nll\n",
        );
        let u = &self.uncertainty;
        for i in 0..self.labels.len() {
            let _ = writeln!(
                out,
                "{i},{},{},{},{},{},{},{},{},{},{}",
                self.labels[i],
                self.predictions[i],
                self.p_bar[i],
                self.mean_nll[i],
                u.epistemic[i],
                u.aleatoric[i],
                u.total_raw[i],
                u.total_scaled[i],
                u.exceed[i],
                u.var_nll[i]
            );
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub seed: u64,
    pub model: Method,
    pub q: QKind,
    pub scaled: bool,
    /// Some Q fit had to floor a degenerate spread.
    pub floored: bool,
    pub points: PointOutputs,
    pub arcs: Vec<(UncertaintyKind, ArcReport)>,
}

impl VariantResult {
    pub fn arc(&self, kind: UncertaintyKind) -> Option<&ArcReport> {
        self.arcs.iter().find(|(k, _)| *k == kind).map(|(_, r)| r)
    }

    fn stem(&self) -> String {
        format!(
            "{}_s{}_{}_{}",
            self.model,
            self.seed,
            self.q,
            scaling_name(self.scaled)
        )
    }
}

/// One ARC of the sweep, keyed by (seed, model, Q, scaling, uncertainty).
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord<'a> {
    pub seed: u64,
    pub model: Method,
    pub q: QKind,
    pub scaled: bool,
    pub uncertainty: UncertaintyKind,
    pub report: &'a ArcReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub seed: u64,
    pub model: Method,
    pub q: Option<QKind>,
    pub scaling: Option<String>,
    pub error: String,
}

/// Evaluates a trained posterior on the prepared test set for every Q × scaling
/// variant of the config.
pub fn evaluate_model(
    config: &ExperimentConfig,
    seed: u64,
    ensemble: &PosteriorEnsemble,
    data: &PreparedData,
    failures: &mut Vec<Failure>,
) -> Result<Vec<VariantResult>> {
    let train_scores = ensemble.predict(&data.train)?;
    let test_scores = ensemble.predict(&data.test)?;
    let m = test_scores.rows() as f64;
    let mean_nll: Vec<f64> = test_scores
        .column_sums()
        .values()
        .iter()
        .map(|s| s / m)
        .collect();
    let mut variants = Vec::new();
    for &q in &config.q {
        for scaled in config.scaling.variants() {
            let outcome = (|| -> Result<VariantResult> {
                let calibration = Calibration::fit(&train_scores, CalibrationConfig { kind: q, scaled })?;
                let probs = anomaly_probability_matrix(&test_scores, &calibration)?;
                let p_bar = mean_anomaly_probability(&probs);
                let predictions = hard_predict(&p_bar, config.threshold);
                let uncertainty = UncertaintyReport::compute(&probs, &test_scores, &train_scores)?;
                let mut arcs = Vec::with_capacity(config.uncertainties.len());
                for &kind in &config.uncertainties {
                    let report = arc(
                        uncertainty.get(kind),
                        &data.test_labels,
                        &predictions,
                        &p_bar,
                        &config.grid,
                    )?;
                    arcs.push((kind, report));
                }
                Ok(VariantResult {
                    seed,
                    model: ensemble.method,
                    q,
                    scaled,
                    floored: calibration.floored,
                    points: PointOutputs {
                        labels: data.test_labels.clone(),
                        predictions,
                        p_bar,
                        mean_nll: mean_nll.clone(),
                        uncertainty,
                    },
                    arcs,
                })
            })();
            match outcome {
                Ok(v) => variants.push(v),
                Err(e) => failures.push(Failure {
                    seed,
                    model: ensemble.method,
                    q: Some(q),
                    scaling: Some(scaling_name(scaled).into()),
                    error: e.to_string(),
                }),
            }
        }
    }
    Ok(variants)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub grid: Vec<f64>,
    pub uncertainties: Vec<UncertaintyKind>,
    pub variants: Vec<VariantResult>,
    pub failures: Vec<Failure>,
}

impl ExperimentResults {
    pub fn records(&self) -> Vec<RunRecord<'_>> {
        self.variants
            .iter()
            .flat_map(|v| {
                v.arcs.iter().map(move |(kind, report)| RunRecord {
                    seed: v.seed,
                    model: v.model,
                    q: v.q,
                    scaled: v.scaled,
                    uncertainty: *kind,
                    report,
                })
            })
            .collect()
    }
}

/// Sweep with a caller-supplied source of trained models (training, or loading
/// snapshots). Jobs are (seed, model) pairs run on up to `workers` threads;
/// results come back in config order regardless of scheduling.
pub fn run_with_models<F>(config: &ExperimentConfig, workers: usize, provide: F) -> Result<ExperimentResults>
where
    F: Fn(u64, Method, &PreparedData) -> Result<PosteriorEnsemble> + Sync,
{
    config.validate()?;
    let jobs: Vec<(u64, Method)> = config
        .seeds
        .iter()
        .flat_map(|&s| config.models.iter().map(move |&m| (s, m)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| BaeError::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<(Vec<VariantResult>, Vec<Failure>)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(seed, method)| {
                let mut failures = Vec::new();
                let result = prepare_data(config, seed).and_then(|data| {
                    log::info!("seed {seed}: {method}");
                    let ensemble = provide(seed, method, &data)?;
                    evaluate_model(config, seed, &ensemble, &data, &mut failures)
                });
                match result {
                    Ok(v) => (v, failures),
                    Err(e) => {
                        log::error!("seed {seed}, {method}: {e}");
                        failures.push(Failure {
                            seed,
                            model: method,
                            q: None,
                            scaling: None,
                            error: e.to_string(),
                        });
                        (Vec::new(), failures)
                    }
                }
            })
            .collect()
    });
    let mut results = ExperimentResults {
        grid: config.grid.clone(),
        uncertainties: config.uncertainties.clone(),
        ..Default::default()
    };
    for (v, f) in outcomes {
        results.variants.extend(v);
        results.failures.extend(f);
    }
    Ok(results)
}

/// Trains and evaluates every (seed, model) of the config.
pub fn run_experiment(config: &ExperimentConfig, workers: usize) -> Result<ExperimentResults> {
    run_with_models(config, workers, |seed, method, data| {
        train_model(config, seed, method, data)
    })
}

/// Best Q/scaling variant of one (seed, model, uncertainty) by W^GSS.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub seed: u64,
    pub model: Method,
    pub uncertainty: UncertaintyKind,
    pub q: QKind,
    pub scaling: String,
    pub w_gss: f64,
    pub base_gss: f64,
    pub gain_gss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub model: Method,
    pub uncertainty: UncertaintyKind,
    pub n_seeds: usize,
    pub mean_w_gss: f64,
    pub stderr_w_gss: f64,
    pub mean_base_gss: f64,
    pub mean_gain_gss: f64,
    pub stderr_gain_gss: f64,
    pub positive_gain_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub aggregates: Vec<Aggregate>,
    pub selections: Vec<Selection>,
    /// model → uncertainty → "q/scaling" → number of seeds it was selected.
    pub best_q_frequency: BTreeMap<String, BTreeMap<String, BTreeMap<String, usize>>>,
    pub failures: Vec<Failure>,
}

/// Mean and standard error (sample std / sqrt(n); 0 for n = 1).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn model_order(results: &ExperimentResults) -> Vec<Method> {
    let mut models: Vec<Method> = Vec::new();
    for v in &results.variants {
        if !models.contains(&v.model) {
            models.push(v.model);
        }
    }
    models
}

fn seed_order(results: &ExperimentResults) -> Vec<u64> {
    let mut seeds: Vec<u64> = Vec::new();
    for v in &results.variants {
        if !seeds.contains(&v.seed) {
            seeds.push(v.seed);
        }
    }
    seeds
}

/// The variant with maximal W^GSS among a run's Q/scaling variants, ties to the
/// first in config order; `None` if no variant has a defined W^GSS.
pub fn select_best<'a>(
    results: &'a ExperimentResults,
    seed: u64,
    model: Method,
    kind: UncertaintyKind,
) -> Option<(&'a VariantResult, &'a ArcReport)> {
    let mut best: Option<(&VariantResult, &ArcReport, f64)> = None;
    for v in results.variants.iter().filter(|v| v.seed == seed && v.model == model) {
        let Some(report) = v.arc(kind) else { continue };
        let Some(s) = report.gss else { continue };
        if best.is_none_or(|(_, _, w)| s.w > w) {
            best = Some((v, report, s.w));
        }
    }
    best.map(|(v, r, _)| (v, r))
}

pub fn report_summary(results: &ExperimentResults) -> Summary {
    let mut selections = Vec::new();
    let mut aggregates = Vec::new();
    let mut best_q_frequency: BTreeMap<String, BTreeMap<String, BTreeMap<String, usize>>> = BTreeMap::new();
    for model in model_order(results) {
        for &kind in &results.uncertainties {
            let mut ws = Vec::new();
            let mut bases = Vec::new();
            let mut gains = Vec::new();
            for seed in seed_order(results) {
                let Some((v, report)) = select_best(results, seed, model, kind) else { continue };
                let s = report.gss.expect("selection has a defined W");
                ws.push(s.w);
                bases.push(s.base);
                gains.push(s.gain);
                *best_q_frequency
                    .entry(model.to_string())
                    .or_default()
                    .entry(kind.to_string())
                    .or_default()
                    .entry(format!("{}/{}", v.q, scaling_name(v.scaled)))
                    .or_default() += 1;
                selections.push(Selection {
                    seed,
                    model,
                    uncertainty: kind,
                    q: v.q,
                    scaling: scaling_name(v.scaled).into(),
                    w_gss: s.w,
                    base_gss: s.base,
                    gain_gss: s.gain,
                });
            }
            if ws.is_empty() {
                continue;
            }
            let (mean_w, se_w) = mean_stderr(&ws);
            let (mean_gain, se_gain) = mean_stderr(&gains);
            aggregates.push(Aggregate {
                model,
                uncertainty: kind,
                n_seeds: ws.len(),
                mean_w_gss: mean_w,
                stderr_w_gss: se_w,
                mean_base_gss: mean_stderr(&bases).0,
                mean_gain_gss: mean_gain,
                stderr_gain_gss: se_gain,
                positive_gain_fraction: gains.iter().filter(|&&g| g > 0.0).count() as f64 / gains.len() as f64,
            });
        }
    }
    Summary {
        aggregates,
        selections,
        best_q_frequency,
        failures: results.failures.clone(),
    }
}

impl Summary {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "model,uncertainty,n_seeds,mean_w_gss,stderr_w_gss,mean_base_gss,mean_gain_gss,stderr_gain_gss,positive_gain_fraction\n",
        );
        for a in &self.aggregates {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                a.model,
                a.uncertainty,
                a.n_seeds,
                a.mean_w_gss,
                a.stderr_w_gss,
                a.mean_base_gss,
                a.mean_gain_gss,
                a.stderr_gain_gss,
                a.positive_gain_fraction
            );
        }
        out
    }
}

/// One plot-ready curve per (model, uncertainty).
#[derive(Clone, Debug, PartialEq)]
pub struct CurveFile {
    pub model: Method,
    pub uncertainty: UncertaintyKind,
    /// `(r, mean GSS, stderr)` per grid rate; `None` where no seed is defined.
    pub rows: Vec<(f64, Option<(f64, f64)>)>,
}

impl CurveFile {
    pub fn file_name(&self) -> String {
        format!("{}_{}.csv", self.model, self.uncertainty)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("r,mean_gss,stderr_gss\n");
        for (r, v) in &self.rows {
            match v {
                Some((m, s)) => {
                    let _ = writeln!(out, "{r},{m},{s}");
                }
                None => {
                    let _ = writeln!(out, "{r},,");
                }
            }
        }
        out
    }
}

/// Mean and standard error of GSS across seeds at every grid rate, using each
/// seed's selected Q/scaling variant.
pub fn emit_curve_data(results: &ExperimentResults) -> Vec<CurveFile> {
    let mut curves = Vec::new();
    for model in model_order(results) {
        for &kind in &results.uncertainties {
            let selected: Vec<&ArcReport> = seed_order(results)
                .into_iter()
                .filter_map(|seed| select_best(results, seed, model, kind).map(|(_, r)| r))
                .collect();
            let rows = results
                .grid
                .iter()
                .map(|&r| {
                    let values: Vec<f64> = selected
                        .iter()
                        .filter_map(|rep| {
                            rep.points
                                .iter()
                                .find(|p| p.rejection_rate == r)
                                .and_then(|p| p.gss)
                        })
                        .collect();
                    (r, (!values.is_empty()).then(|| mean_stderr(&values)))
                })
                .collect();
            curves.push(CurveFile {
                model,
                uncertainty: kind,
                rows,
            });
        }
    }
    curves
}

fn failures_csv(failures: &[Failure]) -> String {
    let mut out = String::from("seed,model,q,scaling,error\n");
    for f in failures {
        let error = f.error.replace('"', "'");
        let _ = writeln!(
            out,
            "{},{},{},{},\"{}\"",
            f.seed,
            f.model,
            f.q.map(|q| q.to_string()).unwrap_or_default(),
            f.scaling.clone().unwrap_or_default(),
            error
        );
    }
    out
}

/// Writes `runs/*.csv`, `summary.csv`, `summary.json`, `curves/*.csv` and
/// `failures.csv` under `dir`.
pub fn write_outputs(results: &ExperimentResults, dir: impl AsRef<Path>) -> Result<Summary> {
    let dir = dir.as_ref();
    let runs = dir.join("runs");
    let curves_dir = dir.join("curves");
    fs::create_dir_all(&runs)?;
    fs::create_dir_all(&curves_dir)?;
    for v in &results.variants {
        fs::write(runs.join(format!("{}_points.csv", v.stem())), v.points.to_csv())?;
        for (kind, report) in &v.arcs {
            fs::write(runs.join(format!("{}_{kind}.csv", v.stem())), report.to_csv())?;
        }
    }
    let summary = report_summary(results);
    fs::write(dir.join("summary.csv"), summary.to_csv())?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    for curve in emit_curve_data(results) {
        fs::write(curves_dir.join(curve.file_name()), curve.to_csv())?;
    }
    fs::write(dir.join("failures.csv"), failures_csv(&results.failures))?;
    Ok(summary)
}
