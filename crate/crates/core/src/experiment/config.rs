use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::credit::{EstimatorConfig, EstimatorKind, LraConfig};
use crate::error::{Error, Result};
use crate::nn::{Activation, DiscreteOp, LayerSpec, Loss, DEFAULT_BLOCK_SIZE};
use crate::optim::{InitScheme, OptimizerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Bp,
    LraDiff,
    LraFdbk,
    Fa,
    Dfa,
    StePassthrough,
    SteSigmoid,
    SlopeAnneal,
    Reinforce,
    ReinforceVarAdj,
}

impl Algorithm {
    pub fn is_lra(self) -> bool {
        matches!(self, Algorithm::LraDiff | Algorithm::LraFdbk)
    }

    pub fn estimator(self) -> Option<EstimatorKind> {
        Some(match self {
            Algorithm::StePassthrough => EstimatorKind::StePassthrough,
            Algorithm::SteSigmoid => EstimatorKind::SteSigmoid,
            Algorithm::SlopeAnneal => EstimatorKind::SlopeAnneal,
            Algorithm::Reinforce => EstimatorKind::Reinforce,
            Algorithm::ReinforceVarAdj => EstimatorKind::ReinforceVarAdj,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscreteKind {
    #[default]
    None,
    Signum,
    Bernoulli,
    Lwta,
    Slwta,
}

/// One layer of the configured architecture; the last entry is the output layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    pub width: usize,
    pub activation: Activation,
    #[serde(default)]
    pub discrete: DiscreteKind,
    /// Block size for `lwta` / `slwta`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_size: Option<usize>,
    /// Defaults to cross-entropy for a softmax output, L2 for any other
    /// output and the log-penalty for hidden layers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<Loss>,
}

impl LayerConfig {
    pub fn new(width: usize, activation: Activation) -> Self {
        Self {
            width,
            activation,
            discrete: DiscreteKind::None,
            block_size: None,
            loss: None,
        }
    }

    pub fn discrete(mut self, kind: DiscreteKind) -> Self {
        self.discrete = kind;
        self
    }

    fn spec(&self, top: bool) -> LayerSpec {
        let block_size = self.block_size.unwrap_or(DEFAULT_BLOCK_SIZE);
        let discrete = match self.discrete {
            DiscreteKind::None => DiscreteOp::None,
            DiscreteKind::Signum => DiscreteOp::Signum,
            DiscreteKind::Bernoulli => DiscreteOp::Bernoulli,
            DiscreteKind::Lwta => DiscreteOp::Lwta { block_size },
            DiscreteKind::Slwta => DiscreteOp::Slwta { block_size },
        };
        let loss = self.loss.unwrap_or(match (top, self.activation) {
            (true, Activation::Softmax) => Loss::CrossEntropy,
            (true, _) => Loss::L2,
            (false, _) => Loss::LogPenalty,
        });
        LayerSpec {
            width: self.width,
            activation: self.activation,
            discrete,
            loss,
        }
    }
}

/// Where the IDX files live and how they are split and truncated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Directory with the four standard `train-*` / `t10k-*` files (plain or `.gz`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_labels: Option<PathBuf>,
    #[serde(default = "default_validation")]
    pub validation_count: usize,
    /// Seed of the validation draw; the run seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_seed: Option<u64>,
    /// Keep only the first this-many training samples (after the split).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_limit: Option<usize>,
    /// Measure training error on only the first this-many training samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_eval_limit: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_limit: Option<usize>,
}

fn default_validation() -> usize {
    10_000
}

impl DataConfig {
    pub fn from_dir(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            validation_count: default_validation(),
            split_seed: None,
            train_limit: None,
            train_eval_limit: None,
            test_limit: None,
        }
    }

    fn explicit(&self) -> [&Option<PathBuf>; 4] {
        [
            &self.train_images,
            &self.train_labels,
            &self.test_images,
            &self.test_labels,
        ]
    }

    fn problems(&self, bad: &mut Vec<String>) {
        let given = self.explicit().iter().filter(|p| p.is_some()).count();
        match (self.dir.is_some(), given) {
            (true, 0) | (false, 4) => {}
            (true, _) => bad.push("data: give either dir or the four file paths, not both".into()),
            (false, _) => bad.push(
                "data: dir or all of train_images, train_labels, test_images, test_labels required"
                    .into(),
            ),
        }
        for (name, v) in [
            ("train_limit", self.train_limit),
            ("train_eval_limit", self.train_eval_limit),
            ("test_limit", self.test_limit),
        ] {
            if v == Some(0) {
                bad.push(format!("data.{name} must be positive"));
            }
        }
    }

    /// Makes relative paths relative to `base` (the config file's directory).
    pub fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.dir);
        fix(&mut self.train_images);
        fix(&mut self.train_labels);
        fix(&mut self.test_images);
        fix(&mut self.test_labels);
    }
}

/// Estimator settings; the kind follows from the algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorParams {
    pub slope_start: f64,
    pub slope_step: f64,
    pub baseline_decay: f64,
}

impl Default for EstimatorParams {
    fn default() -> Self {
        let d = EstimatorConfig::new(EstimatorKind::SlopeAnneal);
        Self {
            slope_start: d.slope_start,
            slope_step: d.slope_step,
            baseline_decay: d.baseline_decay,
        }
    }
}

impl EstimatorParams {
    pub fn with_kind(&self, kind: EstimatorKind) -> EstimatorConfig {
        EstimatorConfig {
            kind,
            slope_start: self.slope_start,
            slope_step: self.slope_step,
            baseline_decay: self.baseline_decay,
        }
    }
}

/// A complete training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub layers: Vec<LayerConfig>,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub lra: LraConfig,
    #[serde(default = "default_init")]
    pub init: InitScheme,
    /// Standard deviation of the LRA error weights `E`.
    #[serde(default = "default_feedback_std")]
    pub feedback_std: f64,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Forward samples averaged per prediction on stochastic networks.
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    #[serde(default)]
    pub estimator: EstimatorParams,
    /// Measure the angle to backprop every this-many minibatches.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle_every: Option<usize>,
    /// Stop after the first epoch whose test error (%) is at or below this.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_test_error: Option<f64>,
    /// Write wall-clock seconds into the metrics; zero otherwise so reruns are byte-identical.
    #[serde(default)]
    pub record_time: bool,
}

fn default_init() -> InitScheme {
    InitScheme::FanInUniform
}

fn default_feedback_std() -> f64 {
    1.0
}

fn default_optimizer() -> OptimizerConfig {
    OptimizerConfig::sgd(0.01)
}

fn default_batch() -> usize {
    50
}

fn default_seed() -> u64 {
    1
}

fn default_eval_samples() -> usize {
    100
}

impl ExperimentConfig {
    /// A config with every optional field at its default.
    pub fn new(
        data: DataConfig,
        layers: Vec<LayerConfig>,
        algorithm: Algorithm,
        epochs: usize,
    ) -> Self {
        Self {
            data,
            layers,
            algorithm,
            lra: LraConfig::default(),
            init: default_init(),
            feedback_std: default_feedback_std(),
            optimizer: default_optimizer(),
            epochs,
            batch_size: default_batch(),
            seed: default_seed(),
            eval_samples: default_eval_samples(),
            estimator: EstimatorParams::default(),
            angle_every: None,
            target_test_error: None,
            record_time: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative data paths are taken relative to its directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(base) = path.parent() {
            cfg.data.resolve_relative(base);
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let n = self.layers.len();
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| l.spec(i + 1 == n))
            .collect()
    }

    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        self.data.problems(&mut bad);
        let n = self.layers.len();
        if n == 0 {
            bad.push("layers must not be empty".into());
        }
        let specs = self.layer_specs();
        for (i, (l, s)) in self.layers.iter().zip(&specs).enumerate() {
            let top = i + 1 == n;
            let name = format!("layers[{i}]");
            if l.width == 0 {
                bad.push(format!("{name}.width must be positive"));
            }
            if top && l.discrete != DiscreteKind::None {
                bad.push(format!("{name}.discrete must be none on the output layer"));
            }
            if l.activation == Activation::Softmax {
                if !top {
                    bad.push(format!(
                        "{name}.activation softmax is only allowed on the output layer"
                    ));
                } else if s.loss != Loss::CrossEntropy {
                    bad.push(format!(
                        "{name}.loss must be cross_entropy with a softmax output"
                    ));
                }
            }
            if let Some(b) = s.discrete.block_size() {
                if b == 0 || l.width % b != 0 {
                    bad.push(format!(
                        "{name}.block_size {b} must divide width {}",
                        l.width
                    ));
                }
            } else if l.block_size.is_some() {
                bad.push(format!("{name}.block_size only applies to lwta and slwta"));
            }
        }
        let hidden = &specs[..n.saturating_sub(1)];
        let discrete = hidden.iter().any(|s| !s.discrete.is_none());
        match self.algorithm {
            Algorithm::Bp | Algorithm::LraDiff if discrete => bad.push(format!(
                "algorithm {:?} needs a network without discrete operators",
                self.algorithm
            )),
            _ => {}
        }
        if let Some(kind) = self.algorithm.estimator() {
            for (i, s) in hidden.iter().enumerate() {
                let ok = match s.discrete {
                    DiscreteOp::Bernoulli => true,
                    DiscreteOp::None => !kind.is_score_function(),
                    _ => false,
                };
                if !ok {
                    bad.push(format!(
                        "layers[{i}].discrete must be bernoulli for algorithm {:?}",
                        self.algorithm
                    ));
                }
            }
            if let Err(Error::Config(msg)) = self.estimator.with_kind(kind).validate() {
                bad.push(format!("estimator: {msg}"));
            }
        }
        if self.algorithm.is_lra() {
            if let Err(Error::Config(msg)) = self.lra.validate() {
                bad.push(format!("lra: {msg}"));
            }
            if self.lra.k > 1 && discrete {
                bad.push("lra.k must be 1 when the network has discrete operators".into());
            }
        }
        if let Err(Error::Config(msg)) = self.init.validate() {
            bad.push(format!("init: {msg}"));
        }
        if !(self.feedback_std >= 0.0 && self.feedback_std.is_finite()) {
            bad.push(format!(
                "feedback_std must be non-negative, got {}",
                self.feedback_std
            ));
        }
        if let Err(Error::Config(msg)) = self.optimizer.validate() {
            bad.push(format!("optimizer: {msg}"));
        }
        if self.batch_size == 0 {
            bad.push("batch_size must be at least 1".into());
        }
        if self.eval_samples == 0 {
            bad.push("eval_samples must be at least 1".into());
        }
        if let Some(every) = self.angle_every {
            if every == 0 {
                bad.push("angle_every must be positive".into());
            }
            if !self.algorithm.is_lra() {
                bad.push("angle_every needs an lra algorithm".into());
            }
            if discrete {
                bad.push("angle_every needs a network without discrete operators".into());
            }
        }
        if let Some(t) = self.target_test_error {
            if !(0.0..=100.0).contains(&t) {
                bad.push(format!("target_test_error must lie in [0, 100], got {t}"));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }
}
