//! Topographic similarity between attribute vectors and messages.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::kernels::{levenshtein, spearman};
use crate::data::FactorSpec;
use crate::error::{Error, Result};
use crate::seed::rng_for;

pub const DEFAULT_PAIR_BUDGET: usize = 100_000;

/// How factor values become the vectors compared by cosine distance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeEncoding {
    /// Per-factor value normalized to `[0, 1]`.
    #[default]
    Normalized,
    /// Concatenated one-hot value indicators.
    OneHot,
}

pub fn encode_attributes(spec: &FactorSpec, ids: &[usize], encoding: AttributeEncoding) -> Vec<Vec<f64>> {
    ids.iter()
        .map(|&id| {
            let t = spec.tuple(id);
            match encoding {
                AttributeEncoding::Normalized => spec.attributes(&t),
                AttributeEncoding::OneHot => spec
                    .factors
                    .iter()
                    .zip(&t.0)
                    .flat_map(|(f, &i)| (0..f.cardinality).map(move |v| if v == i { 1.0 } else { 0.0 }))
                    .collect(),
            }
        })
        .collect()
}

/// `1 - cos`; two zero vectors are at distance 0, a zero and a non-zero
/// vector at distance 1.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    match (na > 0.0, nb > 0.0) {
        (true, true) => 1.0 - dot / (na * nb),
        (false, false) => 0.0,
        _ => 1.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopSimResult {
    /// `None` when either distance list is constant.
    pub rho: Option<f64>,
    pub undefined: bool,
    pub n_pairs: usize,
    pub exhaustive: bool,
}

/// Spearman correlation of cosine attribute distances against Levenshtein
/// message distances. `messages` should already be cut at their effective
/// length.
pub fn topsim(attributes: &[Vec<f64>], messages: &[Vec<usize>], pair_budget: usize, seed: u64) -> Result<TopSimResult> {
    let n = attributes.len();
    if n != messages.len() {
        return Err(Error::Misaligned(format!("{n} attribute rows vs {} messages", messages.len())));
    }
    if n < 10 {
        return Err(Error::InvalidArgument(format!("topsim needs at least 10 samples, got {n}")));
    }
    if pair_budget == 0 {
        return Err(Error::InvalidArgument("pair budget must be positive".into()));
    }
    let total = n * (n - 1) / 2;
    let exhaustive = total <= pair_budget;
    let pairs: Vec<(usize, usize)> = if exhaustive {
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
    } else {
        let mut idx = sample(&mut rng_for(seed, "topsim-pairs"), total, pair_budget).into_vec();
        idx.sort_unstable();
        pairs_from_sorted(&idx, n)
    };
    let da: Vec<f64> = pairs.iter().map(|&(i, j)| cosine_distance(&attributes[i], &attributes[j])).collect();
    let dm: Vec<f64> = pairs.iter().map(|&(i, j)| levenshtein(&messages[i], &messages[j]) as f64).collect();
    let n_pairs = pairs.len();
    match spearman(&da, &dm) {
        Ok(rho) => Ok(TopSimResult { rho: Some(rho), undefined: false, n_pairs, exhaustive }),
        Err(Error::EstimatorUndefined(_)) => {
            log::warn!("topsim undefined: constant distances");
            Ok(TopSimResult { rho: None, undefined: true, n_pairs, exhaustive })
        }
        Err(e) => Err(e),
    }
}

/// Decodes ascending pair indices in one pass over the rows.
fn pairs_from_sorted(idx: &[usize], n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(idx.len());
    let (mut row, mut row_start) = (0usize, 0usize);
    for &k in idx {
        while k >= row_start + (n - 1 - row) {
            row_start += n - 1 - row;
            row += 1;
        }
        out.push((row, row + 1 + k - row_start));
    }
    out
}
