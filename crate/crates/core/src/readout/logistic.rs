//! Multinomial L2 logistic regression with cross-validated regularization.
//!
//! Objective per strength `C`: `C·Σ_i CE_i + ½‖W‖²` (intercepts
//! unpenalized), minimized by L-BFGS. `C` is chosen among 10 log-spaced
//! values in `[1e-4, 1e4]` by stratified 5-fold accuracy, then refit on all
//! data.

use serde::{Deserialize, Serialize};

use super::lbfgs::{minimize, LbfgsOptions};
use crate::error::{Error, Result};

pub const CV_FOLDS: usize = 5;

pub fn default_cs() -> Vec<f64> {
    (0..10).map(|i| 10f64.powf(-4.0 + 8.0 * i as f64 / 9.0)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    /// Original labels of the model's classes.
    pub classes: Vec<usize>,
    /// `[K, p]` row-major.
    pub weights: Vec<f64>,
    pub intercepts: Vec<f64>,
    pub c: f64,
    pub n_features: usize,
}

impl LogisticModel {
    pub fn decision(&self, row: &[f64]) -> Vec<f64> {
        let p = self.n_features;
        (0..self.classes.len())
            .map(|k| self.intercepts[k] + self.weights[k * p..(k + 1) * p].iter().zip(row).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }

    pub fn predict_row(&self, row: &[f64]) -> usize {
        let d = self.decision(row);
        let mut best = 0;
        for k in 1..d.len() {
            if d[k] > d[best] {
                best = k;
            }
        }
        self.classes[best]
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Vec<usize> {
        x.iter().map(|r| self.predict_row(r)).collect()
    }
}

/// Parameters laid out `[W (K×p), b (K)]`.
fn fit_fixed_c(x: &[Vec<f64>], y: &[usize], k: usize, c: f64, init: Vec<f64>) -> Vec<f64> {
    let n = x.len();
    let p = x[0].len();
    let inv_n = 1.0 / n as f64;
    let reg = 1.0 / (c * n as f64);
    let objective = |theta: &[f64], grad: &mut [f64]| -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let (w, b) = theta.split_at(k * p);
        let mut f = 0.0;
        let mut z = vec![0.0; k];
        for (row, &yi) in x.iter().zip(y) {
            for j in 0..k {
                z[j] = b[j] + w[j * p..(j + 1) * p].iter().zip(row).map(|(a, v)| a * v).sum::<f64>();
            }
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
            let lse = m + s.ln();
            f += lse - z[yi];
            for j in 0..k {
                let pj = (z[j] - lse).exp() - if j == yi { 1.0 } else { 0.0 };
                let r = pj * inv_n;
                for (g, v) in grad[j * p..(j + 1) * p].iter_mut().zip(row) {
                    *g += r * v;
                }
                grad[k * p + j] += r;
            }
        }
        f *= inv_n;
        for (g, wv) in grad[..k * p].iter_mut().zip(w) {
            *g += reg * wv;
            f += 0.5 * reg * wv * wv;
        }
        f
    };
    minimize(objective, init, LbfgsOptions::default()).x
}

fn stratified_folds(y: &[usize], k: usize, folds: usize) -> Vec<usize> {
    let mut seen = vec![0usize; k];
    y.iter()
        .map(|&c| {
            let f = seen[c] % folds;
            seen[c] += 1;
            f
        })
        .collect()
}

pub fn fit_logistic_cv(x: &[Vec<f64>], labels: &[usize], cs: &[f64]) -> Result<LogisticModel> {
    if x.len() != labels.len() || x.is_empty() {
        return Err(Error::Misaligned("feature rows and labels differ in length".into()));
    }
    let p = x[0].len();
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::DegenerateClassifier(format!("only {} class present", classes.len())));
    }
    let k = classes.len();
    let y: Vec<usize> = labels.iter().map(|l| classes.binary_search(l).expect("present")).collect();
    let n_params = k * p + k;

    let fold_of = stratified_folds(&y, k, CV_FOLDS);
    let mut scores = vec![0.0; cs.len()];
    let mut used_folds = 0;
    for fold in 0..CV_FOLDS {
        let (mut xtr, mut ytr, mut xte, mut yte) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for i in 0..x.len() {
            if fold_of[i] == fold {
                xte.push(x[i].clone());
                yte.push(y[i]);
            } else {
                xtr.push(x[i].clone());
                ytr.push(y[i]);
            }
        }
        if xte.is_empty() || xtr.is_empty() {
            continue;
        }
        used_folds += 1;
        let mut theta = vec![0.0; n_params];
        for (ci, &c) in cs.iter().enumerate() {
            theta = fit_fixed_c(&xtr, &ytr, k, c, theta);
            let model = LogisticModel { classes: (0..k).collect(), weights: theta[..k * p].to_vec(), intercepts: theta[k * p..].to_vec(), c, n_features: p };
            let correct = xte.iter().zip(&yte).filter(|(r, &t)| model.predict_row(r) == t).count();
            scores[ci] += correct as f64 / xte.len() as f64;
        }
    }
    let mut best = 0;
    if used_folds > 0 {
        for ci in 1..cs.len() {
            if scores[ci] > scores[best] {
                best = ci;
            }
        }
    }
    let c = cs[best];
    let theta = fit_fixed_c(x, &y, k, c, vec![0.0; n_params]);
    Ok(LogisticModel { classes, weights: theta[..k * p].to_vec(), intercepts: theta[k * p..].to_vec(), c, n_features: p })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn separable_two_class() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..60 {
            let c = i % 2;
            let off = if c == 0 { -1.0 } else { 1.0 };
            x.push(vec![off + rng.random_range(-0.5..0.5), rng.random_range(-1.0..1.0)]);
            y.push(c + 3);
        }
        let m = fit_logistic_cv(&x, &y, &default_cs()).unwrap();
        assert_eq!(m.classes, vec![3, 4]);
        assert_eq!(m.predict(&x), y);
    }

    #[test]
    fn single_class_is_degenerate() {
        let x = vec![vec![0.0], vec![1.0]];
        assert!(matches!(fit_logistic_cv(&x, &[1, 1], &default_cs()), Err(Error::DegenerateClassifier(_))));
    }

    #[test]
    fn solution_is_stationary() {
        let x = vec![vec![0.3, -1.0], vec![1.2, 0.4], vec![-0.7, 0.9], vec![0.1, 0.1]];
        let y = vec![0, 1, 2, 1];
        let (k, p) = (3, 2);
        let c = 0.5;
        let n = x.len() as f64;
        let f = |t: &[f64]| {
            let mut tot = 0.0;
            for (r, &yi) in x.iter().zip(&y) {
                let z: Vec<f64> = (0..k).map(|j| t[k * p + j] + t[j * p] * r[0] + t[j * p + 1] * r[1]).collect();
                let lse = z.iter().map(|v| v.exp()).sum::<f64>().ln();
                tot += lse - z[yi];
            }
            tot / n + t[..k * p].iter().map(|w| w * w).sum::<f64>() / (2.0 * c * n)
        };
        // The optimum must be stationary for an independently coded objective.
        let theta = fit_fixed_c(&x, &y, k, c, vec![0.0; k * p + k]);
        for i in 0..theta.len() {
            let h = 1e-6;
            let mut a = theta.clone();
            let mut b = theta.clone();
            a[i] += h;
            b[i] -= h;
            let g = (f(&a) - f(&b)) / (2.0 * h);
            assert!(g.abs() < 1e-3, "component {i}: {g}");
        }
    }

    #[test]
    fn cs_grid() {
        let cs = default_cs();
        assert_eq!(cs.len(), 10);
        assert!((cs[0] - 1e-4).abs() < 1e-16 && (cs[9] - 1e4).abs() < 1e-8);
    }
}
