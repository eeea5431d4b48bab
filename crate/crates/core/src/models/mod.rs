//! Autoencoder families and their posterior NLL predictions.
//!
//! Every method produces a [`PosteriorEnsemble`]; [`PosteriorEnsemble::predict`]
//! turns it into an `M x N` matrix of NLL scores, one row per posterior sample.

mod arch;
mod regularizers;
mod snapshot;
mod train;
mod vae;

pub use arch::AutoencoderArchitecture;
pub use regularizers::{bbb_prior_term, vae_kl};
pub use snapshot::{decode_snapshot, encode_snapshot, load_snapshot, save_snapshot, SNAPSHOT_MAGIC};
pub use train::{
    train, train_anchored_ensemble, train_bbb, train_deterministic, train_mcd, train_vae,
    ModelOptions,
};
pub use vae::Vae;

use serde::{Deserialize, Serialize};

use crate::error::{param_err, shape_err, BaeError, Result};
use crate::matrix::RealMatrix;
use crate::nn::{init_std, Layer, LayerKind, Mode, Network};
use crate::rng::{mix_seed, RngStream};

/// Per-point NLL under a unit-variance Gaussian: `(1/D) Σ ½ (x_i − x̂_i)²`.
pub fn nll(x: &[f64], x_hat: &[f64]) -> Result<f64> {
    if x.len() != x_hat.len() {
        return shape_err(format!("x has {} features, x_hat {}", x.len(), x_hat.len()));
    }
    if x.is_empty() {
        return param_err("NLL of a zero-dimensional point");
    }
    let d = x.len() as f64;
    Ok(x.iter()
        .zip(x_hat)
        .map(|(a, b)| 0.5 * (a - b) * (a - b))
        .sum::<f64>()
        / d)
}

/// Row-wise NLL between two equally shaped matrices.
pub fn nll_rows(x: &RealMatrix, x_hat: &RealMatrix) -> Result<Vec<f64>> {
    if x.shape() != x_hat.shape() {
        return shape_err(format!("{:?} vs {:?}", x.shape(), x_hat.shape()));
    }
    (0..x.rows()).map(|r| nll(x.row(r), x_hat.row(r))).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "AE")]
    Deterministic,
    #[serde(rename = "BAE-Ensemble")]
    AnchoredEnsemble,
    #[serde(rename = "BAE-MCD")]
    Mcd,
    #[serde(rename = "BAE-BBB")]
    Bbb,
    #[serde(rename = "VAE")]
    Vae,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Deterministic,
        Method::Vae,
        Method::AnchoredEnsemble,
        Method::Mcd,
        Method::Bbb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Deterministic => "AE",
            Method::AnchoredEnsemble => "BAE-Ensemble",
            Method::Mcd => "BAE-MCD",
            Method::Bbb => "BAE-BBB",
            Method::Vae => "VAE",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name().eq_ignore_ascii_case(s))
    }

    /// 10 members for the ensemble, 100 forward samples for stochastic models.
    pub fn default_samples(self) -> usize {
        match self {
            Method::Deterministic => 1,
            Method::AnchoredEnsemble => 10,
            Method::Mcd | Method::Bbb | Method::Vae => 100,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// λ, scaling the prior / regulariser term.
    pub weight_decay: f64,
    /// Posterior sample count M; `None` uses [`Method::default_samples`].
    pub samples: Option<usize>,
    /// Mini-batch size; `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 1e-3,
            weight_decay: 1e-10,
            samples: None,
            batch_size: Some(16),
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return param_err("epochs must be >= 1");
        }
        if !(self.weight_decay >= 0.0) {
            return param_err(format!("weight decay {} must be >= 0", self.weight_decay));
        }
        if !(self.learning_rate > 0.0) {
            return param_err(format!("learning rate {} must be > 0", self.learning_rate));
        }
        if self.samples == Some(0) {
            return param_err("M must be >= 1");
        }
        if self.batch_size == Some(0) {
            return param_err("batch size must be >= 1");
        }
        Ok(())
    }

    pub fn samples_for(&self, method: Method) -> usize {
        match method {
            Method::Deterministic => 1,
            _ => self.samples.unwrap_or_else(|| method.default_samples()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BbbPriorConfig {
    pub pi: f64,
    pub tau1: f64,
    pub tau2: f64,
}

impl Default for BbbPriorConfig {
    fn default() -> Self {
        Self {
            pi: 0.5,
            tau1: 1.0,
            tau2: 0.1,
        }
    }
}

impl BbbPriorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.pi) || !(self.tau1 > 0.0) || !(self.tau2 > 0.0) {
            return param_err(format!("invalid mixture prior {self:?}"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McdConfig {
    pub p_dropout: f64,
}

impl Default for McdConfig {
    fn default() -> Self {
        Self { p_dropout: 0.01 }
    }
}

impl McdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_dropout > 0.0 && self.p_dropout < 1.0) {
            return param_err(format!("p_dropout {} outside (0, 1)", self.p_dropout));
        }
        Ok(())
    }
}

/// Fixed anchor parameters, one set per ensemble member.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    anchors: Vec<Vec<RealMatrix>>,
}

impl AnchorSet {
    /// Draws `members` anchor sets from the weight-initialisation distribution
    /// (zero mean, std `sqrt(2 / (fan_in + fan_out))` of each layer).
    pub fn draw(arch: &AutoencoderArchitecture, members: usize, seed: u64) -> Result<Self> {
        let template = arch.build_network(LayerKind::Dense, 0.0, 0.0, &mut RngStream::new(seed))?;
        let root = RngStream::new(seed);
        let mut anchors = Vec::with_capacity(members);
        for m in 0..members {
            let mut rng = root.derive(m as u64);
            let mut set = Vec::new();
            for layer in template.layers() {
                let std = init_std(layer.in_dim(), layer.out_dim());
                for p in layer.parameters() {
                    let mut anchor = RealMatrix::zeros(p.rows(), p.cols());
                    for v in anchor.values_mut() {
                        *v = std * rng.normal();
                    }
                    set.push(anchor);
                }
            }
            anchors.push(set);
        }
        Ok(Self { anchors })
    }

    pub fn members(&self) -> usize {
        self.anchors.len()
    }

    pub fn member(&self, m: usize) -> &[RealMatrix] {
        &self.anchors[m]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Member {
    Net(Network),
    Vae(Vae),
}

/// Trained approximate posterior: M parameter snapshots, or one stochastic
/// model sampled M times at prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorEnsemble {
    pub method: Method,
    pub architecture: AutoencoderArchitecture,
    pub samples: usize,
    pub train_seed: u64,
    pub prediction_seed: u64,
    pub members: Vec<Member>,
    /// Mean training loss per epoch, per trained member.
    pub loss_history: Vec<Vec<f64>>,
}

impl PosteriorEnsemble {
    pub fn with_prediction_seed(mut self, seed: u64) -> Self {
        self.prediction_seed = seed;
        self
    }

    fn check_ready(&self, x: &RealMatrix) -> Result<()> {
        if self.members.is_empty() || self.samples == 0 {
            return Err(BaeError::State("ensemble holds no trained members".into()));
        }
        if self.method == Method::Deterministic && (self.members.len() != 1 || self.samples != 1) {
            return Err(BaeError::State("deterministic AE must have exactly one member".into()));
        }
        if self.method == Method::AnchoredEnsemble && self.members.len() != self.samples {
            return Err(BaeError::State(format!(
                "ensemble has {} members but M = {}",
                self.members.len(),
                self.samples
            )));
        }
        if x.cols() != self.architecture.input_dim {
            return shape_err(format!(
                "data has {} features, model expects {}",
                x.cols(),
                self.architecture.input_dim
            ));
        }
        Ok(())
    }

    /// Reconstruction of `x` under posterior sample `m`.
    pub fn reconstruct(&self, x: &RealMatrix, m: usize) -> Result<RealMatrix> {
        self.check_ready(x)?;
        if m >= self.samples {
            return param_err(format!("sample {m} out of range (M = {})", self.samples));
        }
        let mut rng = RngStream::new(mix_seed(self.prediction_seed, m as u64));
        match (self.method, &self.members[..]) {
            (Method::Deterministic | Method::AnchoredEnsemble, members) => match &members[m] {
                Member::Net(net) => Ok(net.forward(x, Mode::Eval, &mut rng)?.output().clone()),
                Member::Vae(_) => Err(BaeError::State("unexpected VAE member".into())),
            },
            (Method::Mcd | Method::Bbb, [Member::Net(net)]) => {
                Ok(net.forward(x, Mode::Sample, &mut rng)?.output().clone())
            }
            (Method::Vae, [Member::Vae(vae)]) => vae.sample_reconstruction(x, &mut rng),
            _ => Err(BaeError::State(format!(
                "{} ensemble has an unexpected member layout",
                self.method
            ))),
        }
    }

    /// NLL scores, `M x N`: row `m` holds every point's NLL under sample `m`.
    pub fn predict(&self, x: &RealMatrix) -> Result<RealMatrix> {
        self.check_ready(x)?;
        let mut values = Vec::with_capacity(self.samples * x.rows());
        for m in 0..self.samples {
            let x_hat = self.reconstruct(x, m)?;
            values.extend(nll_rows(x, &x_hat)?);
        }
        RealMatrix::from_vec(self.samples, x.rows(), values)
    }

    pub fn parameter_count(&self) -> usize {
        self.members
            .iter()
            .map(|m| match m {
                Member::Net(n) => n.parameter_count(),
                Member::Vae(v) => v.encoder.parameter_count() + v.decoder.parameter_count(),
            })
            .sum()
    }

    /// Does any member use variational layers?
    pub fn is_variational(&self) -> bool {
        self.members.iter().any(|m| match m {
            Member::Net(n) => n.layers().iter().any(|l| matches!(l, Layer::Gaussian(_))),
            Member::Vae(_) => false,
        })
    }
}

/// `posterior_predict`: NLL scores of every point under every posterior sample.
pub fn posterior_predict(ensemble: &PosteriorEnsemble, x: &RealMatrix) -> Result<RealMatrix> {
    ensemble.predict(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nll_examples() {
        assert_eq!(nll(&[0.2, 0.4], &[0.2, 0.4]).unwrap(), 0.0);
        assert_eq!(nll(&[1.0, 1.0, 1.0], &[0.0, 0.0, 0.0]).unwrap(), 0.5);
        assert_eq!(nll(&[1.0, 3.0], &[0.0, 0.0]).unwrap(), 2.5);
        assert!(matches!(nll(&[], &[]), Err(BaeError::Parameter(_))));
        assert!(nll(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn method_names_roundtrip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()), Some(m));
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.name()));
        }
        assert_eq!(Method::parse("nope"), None);
    }

    #[test]
    fn default_configs_match_published_settings() {
        let t = TrainingConfig::default();
        assert_eq!((t.epochs, t.learning_rate, t.weight_decay), (100, 1e-3, 1e-10));
        assert_eq!(McdConfig::default().p_dropout, 0.01);
        let p = BbbPriorConfig::default();
        assert_eq!((p.pi, p.tau1, p.tau2), (0.5, 1.0, 0.1));
        assert_eq!(Method::AnchoredEnsemble.default_samples(), 10);
        assert_eq!(Method::Bbb.default_samples(), 100);
        assert_eq!(t.samples_for(Method::Deterministic), 1);
    }

    #[test]
    fn config_validation() {
        let bad = TrainingConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainingConfig {
            weight_decay: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(McdConfig { p_dropout: 0.0 }.validate().is_err());
        assert!(BbbPriorConfig {
            tau2: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn anchors_are_fixed_per_seed_and_distinct_per_member() {
        let arch = AutoencoderArchitecture::new(3, vec![4], 1);
        let a = AnchorSet::draw(&arch, 3, 9).unwrap();
        let b = AnchorSet::draw(&arch, 3, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.members(), 3);
        assert_ne!(a.member(0), a.member(1));
    }
}
