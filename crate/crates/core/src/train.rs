//! Unsupervised pre-training loop shared by all model families.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_checkpoint, CheckpointManifest};
use crate::data::store::fetch_batch_dyn;
use crate::data::ImageSource;
use crate::error::{Error, IoContext, Result};
use crate::model::{LossRow, Model, ModelConfig};
use crate::nn::{Adam, AdamConfig, Module};
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: Optimizer,
    #[serde(default)]
    pub seed: u64,
    /// 0 disables periodic checkpoints; the final one is always written.
    #[serde(default)]
    pub checkpoint_every: u64,
    #[serde(default = "default_log_every")]
    pub loss_log_every: u64,
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

impl TrainConfig {
    pub fn new(steps: u64, seed: u64) -> Self {
        Self {
            steps,
            batch_size: 64,
            learning_rate: 1e-4,
            optimizer: Optimizer::Adam,
            seed,
            checkpoint_every: 0,
            loss_log_every: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size < 2 || !(self.learning_rate > 0.0) || self.loss_log_every == 0 {
            return Err(Error::Config("training needs steps ≥ 1, batch_size ≥ 2, learning_rate > 0, loss_log_every ≥ 1".into()));
        }
        Ok(())
    }
}

/// Uniform with-replacement sampler over a fixed id list.
pub struct BatchSampler<'a> {
    ids: &'a [usize],
    rng: ChaCha8Rng,
}

impl<'a> BatchSampler<'a> {
    pub fn new(ids: &'a [usize], seed: u64) -> Self {
        Self { ids, rng: rng_for(seed, "batches") }
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        (0..size).map(|_| self.ids[self.rng.random_range(0..self.ids.len())]).collect()
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model<f32>,
    pub checkpoint: CheckpointManifest,
    pub checkpoint_dir: PathBuf,
    pub loss_log: PathBuf,
    pub history: Vec<LossRow>,
}

impl TrainOutcome {
    pub fn first(&self) -> &LossRow {
        self.history.first().expect("at least one step")
    }
    pub fn last(&self) -> &LossRow {
        self.history.last().expect("at least one step")
    }
}

/// Trains from scratch and writes `out_dir/{loss.csv, checkpoints/step-*, final}`.
pub fn train(
    model_config: &ModelConfig,
    train_ids: &[usize],
    store: &dyn ImageSource,
    config: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    config.validate()?;
    model_config.validate()?;
    if train_ids.is_empty() {
        return Err(Error::InvalidArgument("no training ids".into()));
    }
    let (h, w, _) = store.image_shape();
    if h != model_config.resolution() || w != model_config.resolution() {
        return Err(Error::Config(format!(
            "store images are {h}×{w}, model expects {}",
            model_config.resolution()
        )));
    }
    fs::create_dir_all(out_dir).at(out_dir)?;
    let mut model = Model::<f32>::new(model_config, config.seed)?;
    let mut opt = Adam::<f32>::new(AdamConfig { learning_rate: config.learning_rate, ..AdamConfig::default() });
    let mut sampler = BatchSampler::new(train_ids, config.seed);
    let noise_stream = rng_for(config.seed, "step-noise").random::<u64>();

    let loss_path = out_dir.join("loss.csv");
    let mut log = fs::File::create(&loss_path).at(&loss_path)?;
    let columns = model.loss_columns();
    writeln!(log, "step,{}", columns.join(",")).at(&loss_path)?;
    let mut history = Vec::new();
    let b = config.batch_size;

    for step in 0..config.steps {
        let ids = sampler.next_batch(b);
        let x = fetch_batch_dyn::<f32>(store, &ids)?;
        model.zero_grad();
        let row = model.forward_backward(&x, b, step, noise_stream.wrapping_add(step))?;
        if !row.terms.iter().all(|(_, v)| v.is_finite()) {
            let snap = out_dir.join(format!("nonfinite-step-{step}"));
            let snapshot = save_checkpoint(&snap, &model, step, config.seed).ok().map(|_| snap);
            log::error!("non-finite loss at step {step}: {:?}", row.terms);
            return Err(Error::NonFiniteLoss { step, snapshot });
        }
        opt.step(&mut model);
        if step % config.loss_log_every == 0 || step + 1 == config.steps {
            let vals: Vec<String> = columns.iter().map(|c| format!("{}", row.get(c).unwrap_or(0.0))).collect();
            writeln!(log, "{step},{}", vals.join(",")).at(&loss_path)?;
            log::debug!("step {step}: {:?}", row.terms);
            history.push(row);
        }
        if config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0 && step + 1 < config.steps {
            save_checkpoint(&out_dir.join("checkpoints").join(format!("step-{}", step + 1)), &model, step + 1, config.seed)?;
        }
    }
    let final_dir = out_dir.join("final");
    let checkpoint = save_checkpoint(&final_dir, &model, config.steps, config.seed)?;
    Ok(TrainOutcome { model, checkpoint, checkpoint_dir: final_dir, loss_log: loss_path, history })
}
