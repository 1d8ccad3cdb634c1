//! Checkpoint and tensor-container format: a `manifest.json` plus one raw
//! little-endian float32 blob per named tensor, each with a sha256.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::model::{Model, ModelConfig};
use crate::nn::Module;
use crate::seed::sha256_hex;

pub const CHECKPOINT_FORMAT: &str = "compgen-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub step: u64,
    pub seed: u64,
    pub tensors: Vec<TensorEntry>,
}

impl CheckpointManifest {
    /// Digest over all tensor checksums, in order.
    pub fn digest(&self) -> String {
        let joined: Vec<&str> = self.tensors.iter().map(|t| t.sha256.as_str()).collect();
        sha256_hex(joined.join(",").as_bytes())
    }
}

pub fn f32_to_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn bytes_to_f32(bytes: &[u8]) -> Result<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::InvalidCheckpoint(format!("blob of {} bytes is not float32", bytes.len())));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

/// Writes `values` as `dir/file`; returns its entry.
pub fn write_tensor(dir: &Path, name: &str, shape: &[usize], values: &[f32]) -> Result<TensorEntry> {
    let n: usize = shape.iter().product();
    if n != values.len() {
        return Err(Error::InvalidArgument(format!("tensor {name}: shape {shape:?} vs {} values", values.len())));
    }
    let file = format!("{name}.f32");
    let bytes = f32_to_bytes(values);
    let path = dir.join(&file);
    fs::write(&path, &bytes).at(&path)?;
    Ok(TensorEntry { name: name.to_string(), shape: shape.to_vec(), dtype: "float32".into(), file, sha256: sha256_hex(&bytes) })
}

/// Reads a tensor and verifies dtype, size and checksum.
pub fn read_tensor(dir: &Path, entry: &TensorEntry) -> Result<Vec<f32>> {
    if entry.dtype != "float32" {
        return Err(Error::InvalidCheckpoint(format!("tensor {} has dtype {}", entry.name, entry.dtype)));
    }
    let path = dir.join(&entry.file);
    let bytes = fs::read(&path).at(&path)?;
    let found = sha256_hex(&bytes);
    if found != entry.sha256 {
        return Err(Error::ChecksumMismatch { expected: entry.sha256.clone(), found });
    }
    let values = bytes_to_f32(&bytes)?;
    if values.len() != entry.shape.iter().product::<usize>() {
        return Err(Error::InvalidCheckpoint(format!("tensor {} size does not match shape", entry.name)));
    }
    Ok(values)
}

pub fn save_checkpoint(dir: &Path, model: &Model<f32>, step: u64, seed: u64) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir).at(dir)?;
    let mut tensors = Vec::new();
    let mut err = None;
    model.visit_params(&mut |p| {
        if err.is_none() {
            match write_tensor(dir, &p.name, &p.shape, &p.value) {
                Ok(e) => tensors.push(e),
                Err(e) => err = Some(e),
            }
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config: model.config(),
        step,
        seed,
        tensors,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).at(&path)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join("manifest.json");
    let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(&path).at(&path)?)?;
    if manifest.format != CHECKPOINT_FORMAT || manifest.version != CHECKPOINT_VERSION {
        return Err(Error::InvalidCheckpoint(format!("unsupported format {} v{}", manifest.format, manifest.version)));
    }
    Ok(manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<(Model<f32>, CheckpointManifest)> {
    let manifest = read_manifest(dir)?;
    let mut model = Model::<f32>::new(&manifest.config, manifest.seed)?;
    let mut expected = Vec::new();
    model.visit_params(&mut |p| expected.push((p.name.clone(), p.shape.clone())));
    if expected.len() != manifest.tensors.len() {
        return Err(Error::InvalidCheckpoint(format!(
            "manifest lists {} tensors, model has {}",
            manifest.tensors.len(),
            expected.len()
        )));
    }
    let mut values = Vec::with_capacity(expected.len());
    for ((name, shape), entry) in expected.iter().zip(&manifest.tensors) {
        if name != &entry.name || shape != &entry.shape {
            return Err(Error::InvalidCheckpoint(format!("tensor {} does not match model layout ({name} {shape:?})", entry.name)));
        }
        values.push(read_tensor(dir, entry)?);
    }
    let mut it = values.into_iter();
    model.visit_params_mut(&mut |p| p.value = it.next().expect("length checked"));
    Ok((model, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::el::ElConfig;
    use crate::vae::VaeConfig;

    fn small_vae() -> ModelConfig {
        ModelConfig::Vae(VaeConfig { latent_dim: 4, width_multiplier: 1, resolution: 32, ..VaeConfig::beta_vae(1.0) })
    }

    #[test]
    fn round_trip_reproduces_forward() {
        let dir = tempfile::tempdir().unwrap();
        let model = Model::<f32>::new(&small_vae(), 3).unwrap();
        let manifest = save_checkpoint(dir.path(), &model, 12, 3).unwrap();
        let (loaded, m2) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(manifest, m2);
        let x = vec![0.5f32; 2 * 1024];
        let (Model::Vae(a), Model::Vae(b)) = (&model, &loaded) else { panic!("family changed") };
        assert_eq!(a.encode(&x, 2).1, b.encode(&x, 2).1);

        let el = ModelConfig::El(ElConfig { embedding_dim: 8, hidden_dim: 8, width_multiplier: 1, resolution: 32, ..ElConfig::new(4, 3) });
        let model = Model::<f32>::new(&el, 1).unwrap();
        let d2 = tempfile::tempdir().unwrap();
        save_checkpoint(d2.path(), &model, 0, 1).unwrap();
        let (loaded, _) = load_checkpoint(d2.path()).unwrap();
        let (Model::El(a), Model::El(b)) = (&model, &loaded) else { panic!("family changed") };
        assert_eq!(a.forward(&x, 2, 0, true, None).logits, b.forward(&x, 2, 0, true, None).logits);
    }

    #[test]
    fn corrupted_tensor_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let model = Model::<f32>::new(&small_vae(), 3).unwrap();
        let manifest = save_checkpoint(dir.path(), &model, 0, 3).unwrap();
        let path = dir.path().join(&manifest.tensors[0].file);
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] ^= 1;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::ChecksumMismatch { .. })));
    }
}
