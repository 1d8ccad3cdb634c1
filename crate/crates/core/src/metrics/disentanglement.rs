//! MIG, SAP, DCI and IRS over a latent matrix `[N, d]` and factor index
//! matrix `[N, n_gen]`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::kernels::{discrete_mi, entropy, equal_mass_bins, pearson, percentile};
use crate::data::FactorKind;
use crate::error::{Error, Result};
use crate::readout::{accuracy, fit_gbt_classifier, GbtParams};
use crate::seed::rng_for;

pub const DEFAULT_BINS: usize = 20;
pub const IRS_PERCENTILE: f64 = 99.0;

fn shape(latents: &[Vec<f64>], factors: &[Vec<usize>]) -> Result<(usize, usize, usize)> {
    let n = latents.len();
    if n == 0 || factors.len() != n {
        return Err(Error::Misaligned(format!("{n} latent rows vs {} factor rows", factors.len())));
    }
    let d = latents[0].len();
    let k = factors[0].len();
    if d == 0 || k == 0 || latents.iter().any(|r| r.len() != d) || factors.iter().any(|r| r.len() != k) {
        return Err(Error::Misaligned("ragged or empty latent/factor rows".into()));
    }
    Ok((n, d, k))
}

fn column<T: Copy>(rows: &[Vec<T>], j: usize) -> Vec<T> {
    rows.iter().map(|r| r[j]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigResult {
    pub score: f64,
    /// `mi[j][k]` in nats.
    pub mi: Vec<Vec<f64>>,
    pub factor_entropy: Vec<f64>,
    /// Factors with zero entropy, left out of the mean.
    pub excluded: Vec<usize>,
}

pub fn mig(latents: &[Vec<f64>], factors: &[Vec<usize>], bins: usize) -> Result<MigResult> {
    let (n, d, k) = shape(latents, factors)?;
    if bins == 0 || n < 10 * bins {
        return Err(Error::InvalidArgument(format!("MIG with {bins} bins needs at least {} samples, got {n}", 10 * bins)));
    }
    let binned: Vec<Vec<usize>> = (0..d).map(|j| equal_mass_bins(&column(latents, j), bins)).collect();
    let fcols: Vec<Vec<usize>> = (0..k).map(|f| column(factors, f)).collect();
    let mut mi = vec![vec![0.0; k]; d];
    for j in 0..d {
        for f in 0..k {
            mi[j][f] = discrete_mi(&binned[j], &fcols[f])?;
        }
    }
    let factor_entropy: Vec<f64> = fcols.iter().map(|c| entropy(c)).collect::<Result<_>>()?;
    let mut gaps = Vec::new();
    let mut excluded = Vec::new();
    for f in 0..k {
        if factor_entropy[f] <= 1e-12 {
            log::warn!("factor {f} has zero entropy; excluded from MIG");
            excluded.push(f);
            continue;
        }
        let mut col: Vec<f64> = (0..d).map(|j| mi[j][f]).collect();
        col.sort_by(|a, b| b.total_cmp(a));
        let second = col.get(1).copied().unwrap_or(0.0);
        gaps.push((col[0] - second) / factor_entropy[f]);
    }
    if gaps.is_empty() {
        return Err(Error::EstimatorUndefined("every factor has zero entropy".into()));
    }
    Ok(MigResult { score: gaps.iter().sum::<f64>() / gaps.len() as f64, mi, factor_entropy, excluded })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SapResult {
    pub score: f64,
    /// `scores[j][k]`.
    pub scores: Vec<Vec<f64>>,
}

/// Balanced accuracy of a 1-D nearest-class-mean classifier, rescaled so
/// chance is 0 and perfect is 1.
fn nearest_mean_score(z: &[f64], y: &[usize]) -> f64 {
    let k = y.iter().copied().max().map_or(0, |m| m + 1);
    let mut sum = vec![0.0; k];
    let mut cnt = vec![0usize; k];
    for (&v, &c) in z.iter().zip(y) {
        sum[c] += v;
        cnt[c] += 1;
    }
    let present: Vec<usize> = (0..k).filter(|&c| cnt[c] > 0).collect();
    if present.len() < 2 {
        return 0.0;
    }
    let means: Vec<f64> = (0..k).map(|c| if cnt[c] > 0 { sum[c] / cnt[c] as f64 } else { f64::NAN }).collect();
    let mut hit = vec![0usize; k];
    for (&v, &c) in z.iter().zip(y) {
        let mut best = present[0];
        for &p in &present[1..] {
            if (v - means[p]).abs() < (v - means[best]).abs() {
                best = p;
            }
        }
        if best == c {
            hit[c] += 1;
        }
    }
    let m = present.len() as f64;
    let bacc = present.iter().map(|&c| hit[c] as f64 / cnt[c] as f64).sum::<f64>() / m;
    ((bacc - 1.0 / m) / (1.0 - 1.0 / m)).max(0.0)
}

pub fn sap(latents: &[Vec<f64>], factors: &[Vec<usize>], kinds: &[FactorKind]) -> Result<SapResult> {
    let (_, d, k) = shape(latents, factors)?;
    if kinds.len() != k {
        return Err(Error::Misaligned(format!("{} factor kinds for {k} factors", kinds.len())));
    }
    let zcols: Vec<Vec<f64>> = (0..d).map(|j| column(latents, j)).collect();
    let mut scores = vec![vec![0.0; k]; d];
    let mut gaps = Vec::with_capacity(k);
    for f in 0..k {
        let y = column(factors, f);
        let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
        for j in 0..d {
            scores[j][f] = match kinds[f] {
                FactorKind::Ordinal => match pearson(&zcols[j], &yf) {
                    Ok(r) => r * r,
                    Err(Error::EstimatorUndefined(_)) => 0.0,
                    Err(e) => return Err(e),
                },
                FactorKind::Categorical => nearest_mean_score(&zcols[j], &y),
            };
        }
        let mut col: Vec<f64> = (0..d).map(|j| scores[j][f]).collect();
        col.sort_by(|a, b| b.total_cmp(a));
        gaps.push(col[0] - col.get(1).copied().unwrap_or(0.0));
    }
    Ok(SapResult { score: gaps.iter().sum::<f64>() / k as f64, scores })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DciResult {
    pub disentanglement: f64,
    pub completeness: f64,
    pub informativeness: f64,
    /// `importance[j][k]`.
    pub importance: Vec<Vec<f64>>,
    pub test_accuracy: Vec<f64>,
}

fn normalized_entropy(p: &[f64], base: usize) -> f64 {
    if base < 2 {
        return 0.0;
    }
    let total: f64 = p.iter().sum();
    let h: f64 = p.iter().filter(|&&v| v > 0.0).map(|&v| -(v / total) * (v / total).ln()).sum();
    h / (base as f64).ln()
}

/// DCI from per-factor GBT classifiers fit on a seeded half of the samples;
/// informativeness is their mean accuracy on the other half.
pub fn dci(latents: &[Vec<f64>], factors: &[Vec<usize>], seed: u64) -> Result<DciResult> {
    let (n, d, k) = shape(latents, factors)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, "dci-split"));
    let (tr, te) = order.split_at(n / 2);
    let xtr: Vec<Vec<f64>> = tr.iter().map(|&i| latents[i].clone()).collect();
    let xte: Vec<Vec<f64>> = te.iter().map(|&i| latents[i].clone()).collect();
    let params = GbtParams::default();
    let mut importance = vec![vec![0.0; k]; d];
    let mut test_accuracy = Vec::with_capacity(k);
    for f in 0..k {
        let ytr: Vec<usize> = tr.iter().map(|&i| factors[i][f]).collect();
        let yte: Vec<usize> = te.iter().map(|&i| factors[i][f]).collect();
        let model = fit_gbt_classifier(&xtr, &ytr, &params)?;
        for j in 0..d {
            importance[j][f] = model.feature_importances[j].max(0.0);
        }
        test_accuracy.push(accuracy(&yte, &model.predict(&xte)));
    }
    let total: f64 = importance.iter().flatten().sum();
    let (mut dis, mut comp) = (0.0, 0.0);
    if total > 0.0 {
        for row in &importance {
            let w = row.iter().sum::<f64>() / total;
            if w > 0.0 {
                dis += w * (1.0 - normalized_entropy(row, k));
            }
        }
        for f in 0..k {
            let col: Vec<f64> = importance.iter().map(|r| r[f]).collect();
            let w = col.iter().sum::<f64>() / total;
            if w > 0.0 {
                comp += w * (1.0 - normalized_entropy(&col, d));
            }
        }
    }
    let informativeness = test_accuracy.iter().sum::<f64>() / k as f64;
    Ok(DciResult { disentanglement: dis, completeness: comp, informativeness, importance, test_accuracy })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrsResult {
    pub score: f64,
    /// Per-dimension score, `None` for constant dimensions.
    pub per_dim: Vec<Option<f64>>,
    /// Factor each dimension depends on most.
    pub dependent_factor: Vec<Option<usize>>,
}

fn group_by(values: &[usize]) -> Vec<Vec<usize>> {
    let k = values.iter().copied().max().map_or(0, |m| m + 1);
    let mut g = vec![Vec::new(); k];
    for (i, &v) in values.iter().enumerate() {
        g[v].push(i);
    }
    g.retain(|v| !v.is_empty());
    g
}

/// Interventional robustness: for each latent dimension and the factor whose
/// values shift its conditional mean most, how far samples sharing that
/// factor value stray (99th percentile) from their conditional mean,
/// relative to the dimension's largest deviation overall. Dimensions are
/// weighted by variance.
pub fn irs(latents: &[Vec<f64>], factors: &[Vec<usize>]) -> Result<IrsResult> {
    let (n, d, k) = shape(latents, factors)?;
    let groups: Vec<Vec<Vec<usize>>> = (0..k).map(|f| group_by(&column(factors, f))).collect();
    let mut per_dim = vec![None; d];
    let mut dependent_factor = vec![None; d];
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..d {
        let z = column(latents, j);
        let mean = z.iter().sum::<f64>() / n as f64;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let max_dev = z.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
        if max_dev <= 0.0 || var <= 0.0 {
            continue;
        }
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for (f, g) in groups.iter().enumerate() {
            let means: Vec<f64> = g.iter().map(|idx| idx.iter().map(|&i| z[i]).sum::<f64>() / idx.len() as f64).collect();
            let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
            if best.as_ref().is_none_or(|b| hi - lo > b.0) {
                best = Some((hi - lo, f, means));
            }
        }
        let (_, f, means) = best.expect("at least one factor");
        let devs: Vec<f64> = groups[f]
            .iter()
            .zip(&means)
            .map(|(idx, m)| percentile(&idx.iter().map(|&i| (z[i] - m).abs()).collect::<Vec<_>>(), IRS_PERCENTILE))
            .collect();
        let mean_dev = devs.iter().sum::<f64>() / devs.len() as f64;
        let score = (1.0 - mean_dev / max_dev).clamp(0.0, 1.0);
        per_dim[j] = Some(score);
        dependent_factor[j] = Some(f);
        num += var * score;
        den += var;
    }
    if den <= 0.0 {
        return Err(Error::EstimatorUndefined("every latent dimension is constant".into()));
    }
    Ok(IrsResult { score: num / den, per_dim, dependent_factor })
}
