//! Representation extraction from frozen models.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_tensor, write_tensor, TensorEntry};
use crate::data::store::fetch_batch_dyn;
use crate::data::ImageSource;
use crate::el::Message;
use crate::error::{Error, IoContext, Result};
use crate::model::Model;

const EXTRACT_BATCH: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RepMode {
    Pre,
    Latent,
    Post,
}

impl RepMode {
    pub const ALL: [RepMode; 3] = [RepMode::Pre, RepMode::Latent, RepMode::Post];

    pub fn as_str(self) -> &'static str {
        match self {
            RepMode::Pre => "pre",
            RepMode::Latent => "latent",
            RepMode::Post => "post",
        }
    }
}

impl FromStr for RepMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pre" => Ok(RepMode::Pre),
            "latent" => Ok(RepMode::Latent),
            "post" => Ok(RepMode::Post),
            other => Err(Error::InvalidArgument(format!("unknown representation mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for RepMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Row-major `[n, dim]` features aligned with `ids`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentationBundle {
    pub mode: RepMode,
    pub model_ref: String,
    pub split_ref: Option<String>,
    pub ids: Vec<usize>,
    pub seed: u64,
    pub dim: usize,
    #[serde(skip)]
    pub features: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct BundleMeta {
    format: String,
    version: u32,
    #[serde(flatten)]
    bundle: RepresentationBundle,
    tensor: TensorEntry,
}

impl RepresentationBundle {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Features as f64 rows.
    pub fn rows_f64(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.row(i).iter().map(|&v| v as f64).collect()).collect()
    }

    /// Bundle restricted to `ids` (which must all be present).
    pub fn select(&self, ids: &[usize]) -> Result<Self> {
        let pos: std::collections::HashMap<usize, usize> = self.ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut features = Vec::with_capacity(ids.len() * self.dim);
        for id in ids {
            let &i = pos.get(id).ok_or_else(|| Error::Misaligned(format!("id {id} not in bundle")))?;
            features.extend_from_slice(self.row(i));
        }
        Ok(Self { ids: ids.to_vec(), features, ..self.clone() })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).at(dir)?;
        let tensor = write_tensor(dir, "features", &[self.len(), self.dim], &self.features)?;
        let meta = BundleMeta { format: "compgen-bundle".into(), version: 1, bundle: self.clone(), tensor };
        let path = dir.join("meta.json");
        fs::write(&path, serde_json::to_vec_pretty(&meta)?).at(&path)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("meta.json");
        let meta: BundleMeta = serde_json::from_slice(&fs::read(&path).at(&path)?)?;
        if meta.format != "compgen-bundle" {
            return Err(Error::InvalidArgument(format!("{} is not a bundle", dir.display())));
        }
        let features = read_tensor(dir, &meta.tensor)?;
        let mut bundle = meta.bundle;
        if meta.tensor.shape != [bundle.ids.len(), bundle.dim] {
            return Err(Error::Misaligned("bundle feature shape does not match id list".into()));
        }
        bundle.features = features;
        Ok(bundle)
    }
}

/// Extracts the requested modes in one pass over `ids`.
///
/// VAE: pre = conv features, latent = posterior mean, post = decoder-MLP
/// output at the mean. EL (greedy decoding): pre = conv features, latent =
/// flattened one-hot message with post-EOS rows zeroed, post = listener
/// state at the effective length.
pub fn extract_modes(
    model: &Model<f32>,
    store: &dyn ImageSource,
    ids: &[usize],
    modes: &[RepMode],
    seed: u64,
    model_ref: &str,
) -> Result<Vec<RepresentationBundle>> {
    let mut feats: Vec<Vec<f32>> = vec![Vec::new(); modes.len()];
    let mut dims = vec![0usize; modes.len()];
    for chunk in ids.chunks(EXTRACT_BATCH) {
        let b = chunk.len();
        let x = fetch_batch_dyn::<f32>(store, chunk)?;
        let (pre, latent, post) = match model {
            Model::Vae(m) => {
                let (pre, posterior) = m.encode(&x, b);
                let post = if modes.contains(&RepMode::Post) { m.decode(&posterior.mu, b).0 } else { Vec::new() };
                (pre, posterior.mu, post)
            }
            Model::El(m) => {
                let fwd = m.forward(&x, b, seed, true, None);
                let n_v = m.config.vocab_size;
                let latent: Vec<f32> = fwd.messages.iter().flat_map(|msg| msg.one_hots(n_v, true)).collect();
                (fwd.pre, latent, fwd.post)
            }
        };
        for (k, mode) in modes.iter().enumerate() {
            let src = match mode {
                RepMode::Pre => &pre,
                RepMode::Latent => &latent,
                RepMode::Post => &post,
            };
            dims[k] = src.len() / b;
            feats[k].extend_from_slice(src);
        }
    }
    if let Some(bad) = feats.iter().flatten().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite feature {bad} extracted")));
    }
    Ok(modes
        .iter()
        .zip(feats)
        .zip(dims)
        .map(|((&mode, features), dim)| RepresentationBundle {
            mode,
            model_ref: model_ref.to_string(),
            split_ref: None,
            ids: ids.to_vec(),
            seed,
            dim,
            features,
        })
        .collect())
}

pub fn extract(
    model: &Model<f32>,
    store: &dyn ImageSource,
    ids: &[usize],
    mode: RepMode,
    seed: u64,
    model_ref: &str,
) -> Result<RepresentationBundle> {
    Ok(extract_modes(model, store, ids, &[mode], seed, model_ref)?.remove(0))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub flat_id: usize,
    pub tokens: Vec<usize>,
    #[serde(rename = "T")]
    pub t: usize,
}

/// Messages for `ids`; `greedy` overrides stochastic sampling.
pub fn extract_messages(model: &Model<f32>, store: &dyn ImageSource, ids: &[usize], seed: u64, greedy: bool) -> Result<Vec<MessageRecord>> {
    let Model::El(m) = model else {
        return Err(Error::InvalidArgument("messages exist only for EL models".into()));
    };
    let mut out = Vec::with_capacity(ids.len());
    for (ci, chunk) in ids.chunks(EXTRACT_BATCH).enumerate() {
        let x = fetch_batch_dyn::<f32>(store, chunk)?;
        let fwd = m.forward(&x, chunk.len(), seed.wrapping_add(ci as u64), greedy, None);
        for (&id, Message { tokens, effective_length }) in chunk.iter().zip(fwd.messages) {
            out.push(MessageRecord { flat_id: id, tokens, t: effective_length });
        }
    }
    Ok(out)
}

pub fn write_message_dump(path: &Path, records: &[MessageRecord]) -> Result<()> {
    let mut f = fs::File::create(path).at(path)?;
    for r in records {
        writeln!(f, "{}", serde_json::to_string(r)?).at(path)?;
    }
    Ok(())
}

pub fn read_message_dump(path: &Path) -> Result<Vec<MessageRecord>> {
    let text = fs::read_to_string(path).at(path)?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}
