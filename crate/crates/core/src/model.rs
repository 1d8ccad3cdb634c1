//! Family-agnostic wrapper over the VAE and EL autoencoders.

use serde::{Deserialize, Serialize};

use crate::el::{ElConfig, ElModel};
use crate::error::Result;
use crate::nn::{Module, Param, Real};
use crate::seed::rng_for;
use crate::vae::{VaeConfig, VaeModel, VaeVariant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelConfig {
    Vae(VaeConfig),
    El(ElConfig),
}

impl ModelConfig {
    pub fn resolution(&self) -> usize {
        match self {
            ModelConfig::Vae(c) => c.resolution,
            ModelConfig::El(c) => c.resolution,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Vae(c) => c.validate(),
            ModelConfig::El(c) => c.validate(),
        }
    }

    /// Short human-readable label, e.g. `beta_vae(β=4)` or `el(nV=256,nmsg=10)`.
    pub fn label(&self) -> String {
        match self {
            ModelConfig::Vae(c) => {
                let v = match c.variant {
                    VaeVariant::BetaVae => "beta_vae",
                    VaeVariant::BetaTcvae => "beta_tcvae",
                };
                format!("{v}(beta={})", c.beta)
            }
            ModelConfig::El(c) => {
                let mut s = format!("el(nV={},nmsg={})", c.vocab_size, c.max_len);
                if !c.variable_length {
                    s.push_str(if c.stochastic { "-fix" } else { "-fix-det" });
                }
                s
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum Model<F> {
    Vae(VaeModel<F>),
    El(ElModel<F>),
}

/// One logged row of loss terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: u64,
    pub terms: Vec<(String, f64)>,
}

impl LossRow {
    /// The optimized objective.
    pub fn total(&self) -> f64 {
        self.get("total").unwrap_or(f64::NAN)
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }
}

impl<F: Real> Model<F> {
    /// Freshly initialized model; parameters depend only on `(config, seed)`.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = rng_for(seed, "init");
        Ok(match config {
            ModelConfig::Vae(c) => Model::Vae(VaeModel::new(c.clone(), &mut rng)?),
            ModelConfig::El(c) => Model::El(ElModel::new(c.clone(), &mut rng)?),
        })
    }

    pub fn config(&self) -> ModelConfig {
        match self {
            Model::Vae(m) => ModelConfig::Vae(m.config.clone()),
            Model::El(m) => ModelConfig::El(m.config.clone()),
        }
    }

    pub fn loss_columns(&self) -> &'static [&'static str] {
        match self {
            Model::Vae(_) => &["total", "reconstruction_nll", "kl", "mutual_info", "total_correlation", "dimwise_kl"],
            Model::El(_) => &["total", "reconstruction_nll", "mean_length"],
        }
    }

    /// Forward + backward on one batch with a step-specific noise seed.
    pub fn forward_backward(&mut self, x: &[F], b: usize, step: u64, noise_seed: u64) -> Result<LossRow> {
        let terms = match self {
            Model::Vae(m) => {
                let noise = standard_normal(b * m.config.latent_dim, noise_seed);
                let t = m.forward_backward(x, b, &noise)?;
                vec![
                    ("total".to_string(), t.total),
                    ("reconstruction_nll".to_string(), t.reconstruction_nll),
                    ("kl".to_string(), t.kl),
                    ("mutual_info".to_string(), t.mutual_info),
                    ("total_correlation".to_string(), t.total_correlation),
                    ("dimwise_kl".to_string(), t.dimwise_kl),
                ]
            }
            Model::El(m) => {
                let t = m.forward_backward(x, b, noise_seed, None);
                vec![
                    ("total".to_string(), t.reconstruction_nll),
                    ("reconstruction_nll".to_string(), t.reconstruction_nll),
                    ("mean_length".to_string(), t.mean_length),
                ]
            }
        };
        Ok(LossRow { step, terms })
    }
}

pub fn standard_normal<F: Real>(n: usize, seed: u64) -> Vec<F> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rng_for(seed, "posterior-noise");
    (0..n).map(|_| F::lit(StandardNormal.sample(&mut rng))).collect()
}

impl<F: Real> Module<F> for Model<F> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<F>)) {
        match self {
            Model::Vae(m) => m.visit_params(f),
            Model::El(m) => m.visit_params(f),
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        match self {
            Model::Vae(m) => m.visit_params_mut(f),
            Model::El(m) => m.visit_params_mut(f),
        }
    }
}
