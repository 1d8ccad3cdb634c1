//! Experiment specification: the sweep grid and everything needed to
//! reproduce each run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::data::{desk_spec, dsprites_like_spec, dsprites_like_with, FactorSpec};
use crate::el::ElConfig;
use crate::error::{Error, IoContext, Result};
use crate::extract::RepMode;
use crate::metrics::{AttributeEncoding, MetricConfig, DEFAULT_BINS, DEFAULT_PAIR_BUDGET};
use crate::model::ModelConfig;
use crate::readout::ReadoutKind;
use crate::seed::sha256_hex;
use crate::train::TrainConfig;
use crate::vae::{VaeConfig, VaeVariant};

/// Commented desk-scale configuration (the `run` default).
pub const DESK_TOML: &str = include_str!("desk.toml");
/// Full-scale configuration; far beyond a desk budget.
pub const PAPER_TOML: &str = include_str!("paper.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridPreset {
    Desk,
    Dsprites,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub grid: GridPreset,
    #[serde(default)]
    pub scale: Option<usize>,
    #[serde(default)]
    pub rotation: Option<usize>,
    #[serde(default)]
    pub position: Option<usize>,
    pub resolution: usize,
    /// Existing store directory; rendered on the fly when absent.
    #[serde(default)]
    pub store: Option<PathBuf>,
}

impl DataSection {
    pub fn factor_spec(&self) -> Result<FactorSpec> {
        let spec = match self.grid {
            GridPreset::Desk => desk_spec(),
            GridPreset::Dsprites => dsprites_like_spec(),
            GridPreset::Custom => match (self.scale, self.rotation, self.position) {
                (Some(s), Some(r), Some(p)) => dsprites_like_with(s, r, p),
                _ => return Err(Error::Config("custom grid needs scale, rotation and position".into())),
            },
        };
        spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    /// Train fractions; more than one makes the ratio a sweep axis.
    pub ratios: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub steps: u64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_log_every")]
    pub loss_log_every: u64,
    #[serde(default)]
    pub checkpoint_every: u64,
}

fn default_batch() -> usize {
    64
}
fn default_lr() -> f64 {
    1e-4
}
fn default_log_every() -> u64 {
    100
}

impl TrainSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            loss_log_every: self.loss_log_every,
            checkpoint_every: self.checkpoint_every,
            ..TrainConfig::new(self.steps, seed)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Variable-length stochastic messages.
    None,
    /// Fixed length: EOS ignored.
    Fix,
    /// Fixed length with greedy (deterministic) tokens.
    FixDet,
}

impl Ablation {
    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::Fix => "fix",
            Ablation::FixDet => "fix_det",
        }
    }
}

fn default_latent() -> usize {
    10
}
fn default_width() -> usize {
    2
}
fn default_ablations() -> Vec<Ablation> {
    vec![Ablation::None]
}
fn default_embedding() -> usize {
    256
}
fn default_hidden() -> usize {
    512
}
fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelGrid {
    BetaVae {
        betas: Vec<f64>,
        #[serde(default = "default_latent")]
        latent_dim: usize,
        #[serde(default = "default_width")]
        width_multiplier: usize,
    },
    BetaTcvae {
        betas: Vec<f64>,
        #[serde(default = "default_latent")]
        latent_dim: usize,
        #[serde(default = "default_width")]
        width_multiplier: usize,
    },
    El {
        n_msg: Vec<usize>,
        n_vocab: Vec<usize>,
        #[serde(default = "default_ablations")]
        ablations: Vec<Ablation>,
        #[serde(default = "default_embedding")]
        embedding_dim: usize,
        #[serde(default = "default_hidden")]
        hidden_dim: usize,
        #[serde(default = "default_width")]
        width_multiplier: usize,
        #[serde(default = "one")]
        temperature: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SubsetTag {
    #[serde(rename = "S-train")]
    STrain,
    #[serde(rename = "US-train")]
    UsTrain,
    #[serde(rename = "Test")]
    Test,
}

impl SubsetTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SubsetTag::STrain => "S-train",
            SubsetTag::UsTrain => "US-train",
            SubsetTag::Test => "Test",
        }
    }
}

fn default_subsets() -> Vec<SubsetTag> {
    vec![SubsetTag::Test]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutSection {
    pub n_label: Vec<usize>,
    pub kinds: Vec<ReadoutKind>,
    pub modes: Vec<RepMode>,
    #[serde(default = "default_subsets")]
    pub subsets: Vec<SubsetTag>,
}

fn yes() -> bool {
    true
}
fn default_metric_samples() -> usize {
    2000
}
fn default_bins() -> usize {
    DEFAULT_BINS
}
fn default_pairs() -> usize {
    DEFAULT_PAIR_BUDGET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    #[serde(default = "yes")]
    pub enabled: bool,
    /// Cap on train-split samples fed to the metrics.
    #[serde(default = "default_metric_samples")]
    pub max_samples: usize,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_pairs")]
    pub pair_budget: usize,
    #[serde(default)]
    pub attribute_encoding: AttributeEncoding,
    #[serde(default = "yes")]
    pub mig: bool,
    #[serde(default = "yes")]
    pub sap: bool,
    #[serde(default = "yes")]
    pub dci: bool,
    #[serde(default = "yes")]
    pub irs: bool,
    #[serde(default = "yes")]
    pub topsim: bool,
}

impl Default for MetricsSection {
    fn default() -> Self {
        toml::from_str("").expect("all metric fields have defaults")
    }
}

impl MetricsSection {
    pub fn metric_config(&self, seed: u64) -> MetricConfig {
        MetricConfig {
            bins: self.bins,
            pair_budget: self.pair_budget,
            attribute_encoding: self.attribute_encoding,
            seed,
            mig: self.mig,
            sap: self.sap,
            dci: self.dci,
            irs: self.irs,
            topsim: self.topsim,
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    /// Relative paths resolve against the output root.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub data: DataSection,
    pub split: SplitSection,
    pub train: TrainSection,
    pub models: Vec<ModelGrid>,
    pub readout: ReadoutSection,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

/// One fully specified model configuration of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub coords: BTreeMap<String, Value>,
    pub model: ModelConfig,
    pub ratio: f64,
}

impl GridPoint {
    /// Stable identifier built from the sorted coordinates.
    pub fn key(&self) -> String {
        self.coords.iter().map(|(k, v)| format!("{k}={}", value_text(v))).collect::<Vec<_>>().join(",")
    }

    /// Filesystem-safe version of `key`.
    pub fn slug(&self) -> String {
        self.key().chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect()
    }
}

pub fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path).at(path)?)
    }

    pub fn desk() -> Self {
        Self::from_toml(DESK_TOML).expect("bundled desk config parses")
    }

    pub fn paper() -> Self {
        Self::from_toml(PAPER_TOML).expect("bundled paper config parses")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.models.is_empty() {
            return bad("nothing to run: the model grid is empty".into());
        }
        if self.seeds.is_empty() {
            return bad("no seeds".into());
        }
        if self.split.ratios.is_empty() || self.split.ratios.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
            return bad("split ratios must be non-empty and inside (0, 1)".into());
        }
        if !matches!(self.data.resolution, 32 | 64) {
            return bad(format!("resolution must be 32 or 64, got {}", self.data.resolution));
        }
        if self.readout.modes.is_empty() || self.readout.kinds.is_empty() || self.readout.subsets.is_empty() {
            return bad("readout modes, kinds and subsets must be non-empty".into());
        }
        if self.readout.n_label.iter().any(|&n| n < 10) {
            return bad("every N_label must be at least 10".into());
        }
        let m = &self.metrics;
        if m.enabled && m.mig && m.max_samples < 10 * m.bins {
            return bad(format!("metrics.max_samples must be at least 10 × bins = {}", 10 * m.bins));
        }
        self.data.factor_spec()?;
        self.train.train_config(0).validate().map_err(|e| Error::Config(e.to_string()))?;
        for p in self.grid_points()? {
            p.model.validate().map_err(|e| Error::Config(format!("{}: {e}", p.key())))?;
        }
        Ok(())
    }

    /// Hash of everything that determines results (not the output location).
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("spec serializes");
        if let Value::Object(m) = &mut v {
            m.remove("output_dir");
        }
        sha256_hex(v.to_string().as_bytes())[..16].to_string()
    }

    pub fn grid_points(&self) -> Result<Vec<GridPoint>> {
        let n = self.data.factor_spec()?.grid_size();
        let res = self.data.resolution;
        let mut out = Vec::new();
        for &ratio in &self.split.ratios {
            for m in &self.models {
                let mut push = |mut coords: BTreeMap<String, Value>, model: ModelConfig| {
                    if self.split.ratios.len() > 1 {
                        coords.insert("ratio".into(), json!(ratio));
                    }
                    out.push(GridPoint { coords, model, ratio });
                };
                match m {
                    ModelGrid::BetaVae { betas, latent_dim, width_multiplier } | ModelGrid::BetaTcvae { betas, latent_dim, width_multiplier } => {
                        let variant = if matches!(m, ModelGrid::BetaVae { .. }) { VaeVariant::BetaVae } else { VaeVariant::BetaTcvae };
                        for &beta in betas {
                            let base = match variant {
                                VaeVariant::BetaVae => VaeConfig::beta_vae(beta),
                                VaeVariant::BetaTcvae => VaeConfig::beta_tcvae(beta, ((n as f64) * ratio).round() as usize),
                            };
                            let cfg = VaeConfig { latent_dim: *latent_dim, width_multiplier: *width_multiplier, resolution: res, ..base };
                            let family = if variant == VaeVariant::BetaVae { "beta_vae" } else { "beta_tcvae" };
                            push(BTreeMap::from([("family".into(), json!(family)), ("beta".into(), json!(beta))]), ModelConfig::Vae(cfg));
                        }
                    }
                    ModelGrid::El { n_msg, n_vocab, ablations, embedding_dim, hidden_dim, width_multiplier, temperature } => {
                        for &len in n_msg {
                            for &v in n_vocab {
                                for &ab in ablations {
                                    let cfg = ElConfig {
                                        embedding_dim: *embedding_dim,
                                        hidden_dim: *hidden_dim,
                                        width_multiplier: *width_multiplier,
                                        temperature: *temperature,
                                        resolution: res,
                                        variable_length: ab == Ablation::None,
                                        stochastic: ab != Ablation::FixDet,
                                        ..ElConfig::new(v, len)
                                    };
                                    let coords = BTreeMap::from([
                                        ("family".into(), json!("el")),
                                        ("n_msg".into(), json!(len)),
                                        ("n_vocab".into(), json!(v)),
                                        ("ablation".into(), json!(ab.as_str())),
                                        ("bits".into(), json!(cfg.bandwidth_bits())),
                                    ]);
                                    push(coords, ModelConfig::El(cfg));
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_configs_parse() {
        let desk = ExperimentSpec::desk();
        assert_eq!(desk.data.factor_spec().unwrap().grid_size(), 3840);
        assert_eq!(desk.seeds, vec![0, 1, 2]);
        let points = desk.grid_points().unwrap();
        assert!(points.iter().any(|p| p.coords["family"] == "el"));
        let paper = ExperimentSpec::paper();
        assert_eq!(paper.train.steps, 500_000);
        assert_eq!(paper.data.factor_spec().unwrap().grid_size(), 184_320);
    }

    #[test]
    fn empty_grid_is_rejected() {
        let text = DESK_TOML.replace("[[models]]", "[[unused]]");
        let err = ExperimentSpec::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("nothing to run") || err.to_string().contains("unknown field"), "{err}");
        let mut spec = ExperimentSpec::desk();
        spec.models.clear();
        assert!(spec.validate().unwrap_err().to_string().contains("nothing to run"));
    }

    #[test]
    fn hash_ignores_output_dir_and_keys_are_unique() {
        let mut a = ExperimentSpec::desk();
        let h = a.hash();
        a.output_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), h);
        a.seeds.push(9);
        assert_ne!(a.hash(), h);
        let points = a.grid_points().unwrap();
        let keys: std::collections::BTreeSet<String> = points.iter().map(GridPoint::key).collect();
        assert_eq!(keys.len(), points.len());
    }
}
