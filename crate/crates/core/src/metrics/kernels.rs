//! Statistical kernels shared by the metrics.

use crate::error::{Error, Result};

/// Average ranks (1-based) with ties sharing the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::InvalidArgument("correlation needs two equal-length non-empty inputs".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::EstimatorUndefined("correlation with a constant input".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation with average-rank ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::InvalidArgument("spearman needs two equal-length non-empty inputs".into()));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Edit distance with unit insert, delete and substitute costs.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn counts(u: &[usize]) -> Vec<usize> {
    let k = u.iter().copied().max().map_or(0, |m| m + 1);
    let mut c = vec![0; k];
    u.iter().for_each(|&v| c[v] += 1);
    c
}

/// Entropy in nats of a discrete sample.
pub fn entropy(u: &[usize]) -> Result<f64> {
    if u.is_empty() {
        return Err(Error::InvalidArgument("entropy of an empty sample".into()));
    }
    let n = u.len() as f64;
    Ok(counts(u).into_iter().filter(|&c| c > 0).map(|c| -(c as f64 / n) * (c as f64 / n).ln()).sum())
}

/// Plug-in mutual information in nats between two discrete samples.
pub fn discrete_mi(u: &[usize], v: &[usize]) -> Result<f64> {
    if u.is_empty() || u.len() != v.len() {
        return Err(Error::InvalidArgument("mutual information needs two equal-length non-empty inputs".into()));
    }
    let n = u.len() as f64;
    let (cu, cv) = (counts(u), counts(v));
    let kv = cv.len();
    let mut joint = vec![0usize; cu.len() * kv];
    for (&a, &b) in u.iter().zip(v) {
        joint[a * kv + b] += 1;
    }
    let mut mi = 0.0;
    for (ab, &c) in joint.iter().enumerate() {
        if c > 0 {
            let (a, b) = (ab / kv, ab % kv);
            mi += c as f64 / n * (c as f64 * n / (cu[a] as f64 * cv[b] as f64)).ln();
        }
    }
    Ok(mi.max(0.0))
}

/// Rank-based binning into `bins` equal-mass bins; equal values share a bin.
pub fn equal_mass_bins(x: &[f64], bins: usize) -> Vec<usize> {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0; n];
    let mut first = 0;
    for r in 0..n {
        if r > 0 && x[idx[r]] != x[idx[r - 1]] {
            first = r;
        }
        out[idx[r]] = (first * bins / n).min(bins - 1);
    }
    out
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(x: &[f64], q: f64) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    /// Exponential recursion, memoized.
    fn lev_oracle(a: &[u8], b: &[u8], memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if a.is_empty() {
            return b.len();
        }
        if b.is_empty() {
            return a.len();
        }
        if let Some(&v) = memo.get(&(a.len(), b.len())) {
            return v;
        }
        let sub = lev_oracle(&a[1..], &b[1..], memo) + usize::from(a[0] != b[0]);
        let v = sub.min(lev_oracle(&a[1..], b, memo) + 1).min(lev_oracle(a, &b[1..], memo) + 1);
        memo.insert((a.len(), b.len()), v);
        v
    }

    /// Joint-histogram summation over the full product of supports.
    fn mi_oracle(u: &[usize], v: &[usize]) -> f64 {
        let n = u.len() as f64;
        let ku = u.iter().max().unwrap() + 1;
        let kv = v.iter().max().unwrap() + 1;
        let mut joint = vec![vec![0.0; kv]; ku];
        for (&a, &b) in u.iter().zip(v) {
            joint[a][b] += 1.0 / n;
        }
        let pu: Vec<f64> = joint.iter().map(|r| r.iter().sum()).collect();
        let pv: Vec<f64> = (0..kv).map(|b| joint.iter().map(|r| r[b]).sum()).collect();
        let mut mi = 0.0;
        for a in 0..ku {
            for b in 0..kv {
                if joint[a][b] > 0.0 {
                    mi += joint[a][b] * (joint[a][b] / (pu[a] * pv[b])).ln();
                }
            }
        }
        mi
    }

    /// Rank by counting smaller and equal values, then the textbook Pearson.
    fn spearman_oracle(x: &[f64], y: &[f64]) -> f64 {
        let rank = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .map(|a| {
                    let less = v.iter().filter(|b| *b < a).count() as f64;
                    let eq = v.iter().filter(|b| *b == a).count() as f64;
                    less + (eq + 1.0) / 2.0
                })
                .collect()
        };
        let (rx, ry) = (rank(x), rank(y));
        let n = x.len() as f64;
        let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
        let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
        cov / (vx * vy).sqrt()
    }

    #[test]
    fn examples() {
        assert_eq!(levenshtein(b"abc", b"abd"), 1);
        assert_eq!(levenshtein(b"", b"abc"), 3);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 35.0]).unwrap(), 1.0);
        let u = [0, 1, 2, 3, 0, 1, 2, 3];
        assert!((discrete_mi(&u, &u).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!(spearman(&[], &[]).is_err());
        assert!(matches!(spearman(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::EstimatorUndefined(_))));
        assert!(discrete_mi(&[], &[]).is_err());
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert!((percentile(&[1.0, 2.0, 3.0, 4.0], 50.0) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn bins_are_equal_mass_and_scale_free() {
        let x: Vec<f64> = (0..100).map(|i| ((i * 37) % 100) as f64).collect();
        let b = equal_mass_bins(&x, 20);
        let mut c = [0; 20];
        b.iter().for_each(|&v| c[v] += 1);
        assert!(c.iter().all(|&v| v == 5));
        let scaled: Vec<f64> = x.iter().map(|v| v * 10.0 - 3.0).collect();
        assert_eq!(equal_mass_bins(&scaled, 20), b);
        assert_eq!(equal_mass_bins(&[1.0; 10], 5), vec![0; 10]);
    }

    proptest! {
        #[test]
        fn levenshtein_matches_recursion(a in proptest::collection::vec(0u8..3, 0..8), b in proptest::collection::vec(0u8..3, 0..8)) {
            prop_assert_eq!(levenshtein(&a, &b), lev_oracle(&a, &b, &mut HashMap::new()));
            prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
        }

        #[test]
        fn mi_matches_joint_histogram(pairs in proptest::collection::vec((0usize..4, 0usize..5), 1..200)) {
            let (u, v): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let mi = discrete_mi(&u, &v).unwrap();
            prop_assert!((mi - mi_oracle(&u, &v)).abs() < 1e-6);
            prop_assert!(mi <= entropy(&u).unwrap() + 1e-12);
        }

        #[test]
        fn spearman_matches_counting_oracle(x in proptest::collection::vec(prop_oneof![-5.0f64..5.0, Just(1.0)], 3..50)) {
            let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v * (i as f64).sin()).collect();
            if let (Ok(a), Ok(b)) = (spearman(&x, &y), spearman(&y, &x)) {
                prop_assert!((a - spearman_oracle(&x, &y)).abs() < 1e-9);
                prop_assert!((a - b).abs() < 1e-12);
                let z: Vec<f64> = x.iter().map(|v| v.exp()).collect();
                prop_assert!((spearman(&z, &y).unwrap() - a).abs() < 1e-9);
            }
        }
    }
}
