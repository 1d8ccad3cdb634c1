//! Factored dataset store (FDS): images plus per-image factor labels.
//!
//! On disk a store is a directory holding `meta.json`, `images.bin`
//! (`u8`, `[N, H, W, C]` row-major) and `factors.bin` (little-endian `i32`,
//! `[N, n_gen]` row-major). The checksum in `meta.json` is the SHA-256 of
//! `images.bin` followed by `factors.bin`.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::render::render;
use super::spec::{FactorSpec, FactorTuple};
use crate::error::{Error, IoContext, Result};
use crate::seed::hex_encode;

pub const FORMAT_NAME: &str = "fds";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStore {
    pub spec: FactorSpec,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub images: Vec<u8>,
    pub factor_labels: Vec<i32>,
    pub provenance: String,
    /// Row holding each flat id, `u32::MAX` when absent.
    id_to_row: Vec<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoreMeta {
    pub format: String,
    pub version: u32,
    pub spec: FactorSpec,
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub dtype: String,
    pub label_dtype: String,
    pub byte_order: String,
    pub checksum: String,
    pub provenance: String,
}

/// Read access to images by flat id, the only way training touches data.
pub trait ImageSource: Sync {
    fn spec(&self) -> &FactorSpec;
    fn image_shape(&self) -> (usize, usize, usize);
    fn fetch(&self, flat_id: usize) -> Result<&[u8]>;

    fn image_len(&self) -> usize {
        let (h, w, c) = self.image_shape();
        h * w * c
    }

    /// Writes the images for `ids` as `[B, H, W]` values in `[0, 1]`.
    fn fetch_batch<F: crate::nn::Real>(&self, ids: &[usize]) -> Result<Vec<F>>
    where
        Self: Sized,
    {
        fetch_batch_dyn(self, ids)
    }
}

pub fn fetch_batch_dyn<F: crate::nn::Real>(src: &(impl ImageSource + ?Sized), ids: &[usize]) -> Result<Vec<F>> {
    let n = src.image_len();
    let mut out = Vec::with_capacity(ids.len() * n);
    let scale = F::lit(1.0 / 255.0);
    for &id in ids {
        out.extend(src.fetch(id)?.iter().map(|&p| F::lit(p as f64) * scale));
    }
    Ok(out)
}

impl DatasetStore {
    /// Renders the complete grid in flat-id order.
    pub fn build(spec: &FactorSpec, resolution: usize) -> Result<Self> {
        spec.validate()?;
        let n = spec.grid_size();
        let mut images = Vec::with_capacity(n * resolution * resolution);
        let mut labels = Vec::with_capacity(n * spec.n_factors());
        for id in 0..n {
            let t = spec.tuple(id);
            images.extend(render(spec, &t, resolution)?);
            labels.extend(t.0.iter().map(|&i| i as i32));
        }
        Self::from_parts(
            spec.clone(),
            resolution,
            resolution,
            1,
            images,
            labels,
            format!("procedural dsprites-like renderer, resolution {resolution}"),
        )
    }

    pub fn from_parts(
        spec: FactorSpec,
        height: usize,
        width: usize,
        channels: usize,
        images: Vec<u8>,
        factor_labels: Vec<i32>,
        provenance: String,
    ) -> Result<Self> {
        spec.validate()?;
        let g = spec.n_factors();
        if factor_labels.len() % g != 0 {
            return Err(Error::ShapeMismatch(format!("{} labels not a multiple of {g}", factor_labels.len())));
        }
        let n = factor_labels.len() / g;
        if images.len() != n * height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "images hold {} bytes, expected {n}×{height}×{width}×{channels}",
                images.len()
            )));
        }
        let cards = spec.cardinalities();
        let mut id_to_row = vec![u32::MAX; spec.grid_size()];
        for (row, labels) in factor_labels.chunks_exact(g).enumerate() {
            let mut idx = Vec::with_capacity(g);
            for (k, (&l, &c)) in labels.iter().zip(&cards).enumerate() {
                if l < 0 || l as usize >= c {
                    return Err(Error::InvalidStore(format!("row {row}: factor {k} label {l} outside [0, {c})")));
                }
                idx.push(l as usize);
            }
            let id = spec.flat_id(&FactorTuple(idx))?;
            if id_to_row[id] != u32::MAX {
                return Err(Error::InvalidStore(format!("duplicate grid point {id} at row {row}")));
            }
            id_to_row[id] = row as u32;
        }
        Ok(Self { spec, height, width, channels, images, factor_labels, provenance, id_to_row })
    }

    pub fn len(&self) -> usize {
        self.factor_labels.len() / self.spec.n_factors()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_complete(&self) -> bool {
        self.len() == self.spec.grid_size()
    }

    pub fn row_of(&self, flat_id: usize) -> Option<usize> {
        self.id_to_row.get(flat_id).filter(|&&r| r != u32::MAX).map(|&r| r as usize)
    }

    pub fn image_at_row(&self, row: usize) -> &[u8] {
        let n = self.height * self.width * self.channels;
        &self.images[row * n..(row + 1) * n]
    }

    pub fn checksum(&self) -> String {
        checksum(&self.images, &labels_to_bytes(&self.factor_labels))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).at(dir)?;
        let label_bytes = labels_to_bytes(&self.factor_labels);
        let meta = StoreMeta {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            spec: self.spec.clone(),
            n: self.len(),
            height: self.height,
            width: self.width,
            channels: self.channels,
            dtype: "uint8".into(),
            label_dtype: "int32".into(),
            byte_order: "little-endian".into(),
            checksum: checksum(&self.images, &label_bytes),
            provenance: self.provenance.clone(),
        };
        fs::write(dir.join("images.bin"), &self.images).at(dir.join("images.bin"))?;
        fs::write(dir.join("factors.bin"), &label_bytes).at(dir.join("factors.bin"))?;
        let meta_path = dir.join("meta.json");
        fs::write(&meta_path, serde_json::to_vec_pretty(&meta)?).at(&meta_path)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        let meta: StoreMeta = serde_json::from_slice(&fs::read(&meta_path).at(&meta_path)?)?;
        if meta.format != FORMAT_NAME || meta.version != FORMAT_VERSION {
            return Err(Error::InvalidStore(format!("unsupported format {} v{}", meta.format, meta.version)));
        }
        if meta.dtype != "uint8" || meta.label_dtype != "int32" || meta.byte_order != "little-endian" {
            return Err(Error::InvalidStore("unsupported dtype or byte order".into()));
        }
        let images = fs::read(dir.join("images.bin")).at(dir.join("images.bin"))?;
        let label_bytes = fs::read(dir.join("factors.bin")).at(dir.join("factors.bin"))?;
        let found = checksum(&images, &label_bytes);
        if found != meta.checksum {
            return Err(Error::ChecksumMismatch { expected: meta.checksum, found });
        }
        let g = meta.spec.n_factors();
        if label_bytes.len() != meta.n * g * 4 {
            return Err(Error::ShapeMismatch(format!(
                "factors.bin holds {} bytes, header says {}×{g} int32",
                label_bytes.len(),
                meta.n
            )));
        }
        if images.len() != meta.n * meta.height * meta.width * meta.channels {
            return Err(Error::ShapeMismatch(format!(
                "images.bin holds {} bytes, header says {}×{}×{}×{}",
                images.len(),
                meta.n,
                meta.height,
                meta.width,
                meta.channels
            )));
        }
        let labels = label_bytes
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::from_parts(meta.spec, meta.height, meta.width, meta.channels, images, labels, meta.provenance)
    }
}

impl ImageSource for DatasetStore {
    fn spec(&self) -> &FactorSpec {
        &self.spec
    }

    fn image_shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    fn fetch(&self, flat_id: usize) -> Result<&[u8]> {
        let row = self
            .row_of(flat_id)
            .ok_or_else(|| Error::InvalidArgument(format!("flat id {flat_id} not present in store")))?;
        Ok(self.image_at_row(row))
    }
}

/// Wraps a store and records every id fetched through it.
pub struct InstrumentedStore<'a> {
    inner: &'a DatasetStore,
    fetched: Mutex<BTreeSet<usize>>,
    fetch_count: Mutex<u64>,
}

impl<'a> InstrumentedStore<'a> {
    pub fn new(inner: &'a DatasetStore) -> Self {
        Self { inner, fetched: Mutex::new(BTreeSet::new()), fetch_count: Mutex::new(0) }
    }

    pub fn fetched_ids(&self) -> BTreeSet<usize> {
        self.fetched.lock().expect("fetch log poisoned").clone()
    }

    pub fn fetch_count(&self) -> u64 {
        *self.fetch_count.lock().expect("fetch log poisoned")
    }
}

impl ImageSource for InstrumentedStore<'_> {
    fn spec(&self) -> &FactorSpec {
        &self.inner.spec
    }

    fn image_shape(&self) -> (usize, usize, usize) {
        self.inner.image_shape()
    }

    fn fetch(&self, flat_id: usize) -> Result<&[u8]> {
        self.fetched.lock().expect("fetch log poisoned").insert(flat_id);
        *self.fetch_count.lock().expect("fetch log poisoned") += 1;
        self.inner.fetch(flat_id)
    }
}

fn labels_to_bytes(labels: &[i32]) -> Vec<u8> {
    labels.iter().flat_map(|l| l.to_le_bytes()).collect()
}

fn checksum(images: &[u8], labels: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(images);
    h.update(labels);
    format!("sha256:{}", hex_encode(&h.finalize()))
}
