//! Ridge regression with an unpenalized intercept and exact leave-one-out
//! alpha selection.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ALPHAS: [f64; 5] = [0.0, 0.01, 0.1, 1.0, 10.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub coef: Vec<f64>,
    pub intercept: f64,
    pub alpha: f64,
    /// Leave-one-out mean squared error per candidate alpha.
    pub loo_mse: Vec<(f64, f64)>,
}

impl RidgeModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(row).map(|(w, x)| w * x).sum::<f64>()
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Vec<f64> {
        x.iter().map(|r| self.predict_row(r)).collect()
    }
}

/// Spectral factorization of the centered design, shared by all targets
/// and alphas: `Xc = Σ_k √λ_k u_k v_kᵀ`.
struct Spectrum {
    means: Vec<f64>,
    lambda: Vec<f64>,
    /// `u_k` as columns, `n × r`.
    u: DMatrix<f64>,
    /// `v_k` as columns, `p × r`.
    v: DMatrix<f64>,
}

fn check_shapes(x: &[Vec<f64>], n_targets: usize) -> Result<(usize, usize)> {
    let n = x.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("ridge needs ≥ 2 samples, got {n}")));
    }
    let p = x[0].len();
    if x.iter().any(|r| r.len() != p) || n_targets != n {
        return Err(Error::Misaligned("ragged features or target length mismatch".into()));
    }
    Ok((n, p))
}

fn spectrum(x: &[Vec<f64>]) -> Spectrum {
    let n = x.len();
    let p = x[0].len();
    let means: Vec<f64> = (0..p).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let xc = DMatrix::from_fn(n, p, |i, j| x[i][j] - means[j]);
    let (lambda_all, u_all, v_all) = if p <= n {
        let eig = SymmetricEigen::new(xc.transpose() * &xc);
        let v = eig.eigenvectors;
        let u = &xc * &v;
        (eig.eigenvalues, Some(u), Some(v))
    } else {
        let eig = SymmetricEigen::new(&xc * xc.transpose());
        (eig.eigenvalues, Some(eig.eigenvectors), None)
    };
    let lmax = lambda_all.iter().fold(0.0f64, |m, &l| m.max(l));
    let keep: Vec<usize> = (0..lambda_all.len()).filter(|&k| lmax > 0.0 && lambda_all[k] > lmax * 1e-10).collect();
    let r = keep.len();
    let lambda: Vec<f64> = keep.iter().map(|&k| lambda_all[k]).collect();
    let u_src = u_all.expect("set above");
    let mut u = DMatrix::zeros(n, r);
    let mut v = DMatrix::zeros(p, r);
    for (c, &k) in keep.iter().enumerate() {
        let s = lambda_all[k].sqrt();
        if let Some(vs) = &v_all {
            // u_src columns are Xc v_k with norm √λ_k.
            u.set_column(c, &(u_src.column(k) / s));
            v.set_column(c, &vs.column(k));
        } else {
            let uk = u_src.column(k).into_owned();
            v.set_column(c, &(xc.transpose() * &uk / s));
            u.set_column(c, &uk);
        }
    }
    Spectrum { means, lambda, u, v }
}

fn fit_with(spec: &Spectrum, y: &[f64], alphas: &[f64]) -> RidgeModel {
    let n = y.len();
    let p = spec.means.len();
    let ybar = y.iter().sum::<f64>() / n as f64;
    let yc = nalgebra::DVector::from_iterator(n, y.iter().map(|v| v - ybar));
    if spec.lambda.is_empty() {
        return RidgeModel { coef: vec![0.0; p], intercept: ybar, alpha: alphas.first().copied().unwrap_or(0.0), loo_mse: vec![] };
    }
    let proj = spec.u.transpose() * &yc; // u_kᵀ yc
    let mut sorted: Vec<f64> = alphas.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut loo = Vec::with_capacity(sorted.len());
    let mut best = (f64::INFINITY, sorted[0]);
    for &alpha in &sorted {
        let shrink: Vec<f64> = spec.lambda.iter().map(|&l| l / (l + alpha)).collect();
        let mut err = 0.0;
        for i in 0..n {
            let mut fit = 0.0;
            let mut h = 1.0 / n as f64;
            for (k, &s) in shrink.iter().enumerate() {
                let uik = spec.u[(i, k)];
                fit += uik * proj[k] * s;
                h += uik * uik * s;
            }
            let denom = 1.0 - h;
            if denom < 1e-10 {
                err = f64::INFINITY;
                break;
            }
            let e = (yc[i] - fit) / denom;
            err += e * e;
        }
        err /= n as f64;
        loo.push((alpha, err));
        if err < best.0 * (1.0 - 1e-9) {
            best = (err, alpha);
        }
    }
    let alpha = best.1;
    let mut coef = vec![0.0; p];
    for (k, &l) in spec.lambda.iter().enumerate() {
        let c = proj[k] * l.sqrt() / (l + alpha);
        for (j, w) in coef.iter_mut().enumerate() {
            *w += c * spec.v[(j, k)];
        }
    }
    let intercept = ybar - coef.iter().zip(&spec.means).map(|(w, m)| w * m).sum::<f64>();
    RidgeModel { coef, intercept, alpha, loo_mse: loo }
}

/// Fits one ridge model per target column sharing a single factorization.
pub fn fit_ridge_cv_multi(x: &[Vec<f64>], ys: &[Vec<f64>], alphas: &[f64]) -> Result<Vec<RidgeModel>> {
    if alphas.is_empty() || alphas.iter().any(|a| !(*a >= 0.0)) {
        return Err(Error::InvalidArgument("alphas must be non-empty and ≥ 0".into()));
    }
    for y in ys {
        check_shapes(x, y.len())?;
    }
    if ys.is_empty() {
        return Ok(vec![]);
    }
    let spec = spectrum(x);
    Ok(ys.iter().map(|y| fit_with(&spec, y, alphas)).collect())
}

pub fn fit_ridge_cv(x: &[Vec<f64>], y: &[f64], alphas: &[f64]) -> Result<RidgeModel> {
    Ok(fit_ridge_cv_multi(x, &[y.to_vec()], alphas)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, p: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    /// Direct normal-equations solve of the augmented system with an
    /// unpenalized intercept.
    fn normal_equations(x: &[Vec<f64>], y: &[f64], alpha: f64) -> (Vec<f64>, f64) {
        let p = x[0].len();
        let a = DMatrix::from_fn(x.len(), p + 1, |i, j| if j == 0 { 1.0 } else { x[i][j - 1] });
        let mut g = a.transpose() * &a;
        for j in 1..=p {
            g[(j, j)] += alpha;
        }
        let rhs = a.transpose() * nalgebra::DVector::from_column_slice(y);
        let sol = g.lu().solve(&rhs).unwrap();
        (sol.iter().skip(1).copied().collect(), sol[0])
    }

    #[test]
    fn matches_normal_equations_at_alpha_one() {
        let x = random_matrix(5, 3, 1);
        let y: Vec<f64> = random_matrix(5, 1, 2).into_iter().map(|r| r[0]).collect();
        let m = fit_ridge_cv(&x, &y, &[1.0]).unwrap();
        let (w, b) = normal_equations(&x, &y, 1.0);
        for (a, e) in m.coef.iter().zip(&w) {
            assert!((a - e).abs() < 1e-8);
        }
        assert!((m.intercept - b).abs() < 1e-8);
        // Wide design goes through the n×n branch.
        let xw = random_matrix(4, 7, 3);
        let yw = vec![0.3, -1.0, 2.0, 0.5];
        let m = fit_ridge_cv(&xw, &yw, &[1.0]).unwrap();
        let (w, b) = normal_equations(&xw, &yw, 1.0);
        for (a, e) in m.coef.iter().zip(&w) {
            assert!((a - e).abs() < 1e-8);
        }
        assert!((m.intercept - b).abs() < 1e-8);
    }

    #[test]
    fn loo_matches_brute_force() {
        let x = random_matrix(12, 3, 4);
        let y: Vec<f64> = x.iter().map(|r| r[0] - 2.0 * r[2] + 0.3 * (r[1] * 7.0).sin()).collect();
        let m = fit_ridge_cv(&x, &y, &DEFAULT_ALPHAS).unwrap();
        for &(alpha, mse) in &m.loo_mse {
            let mut err = 0.0;
            for i in 0..x.len() {
                let xs: Vec<Vec<f64>> = x.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, r)| r.clone()).collect();
                let ys: Vec<f64> = y.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| *v).collect();
                let (w, b) = normal_equations(&xs, &ys, alpha);
                let pred = b + w.iter().zip(&x[i]).map(|(a, c)| a * c).sum::<f64>();
                err += (y[i] - pred).powi(2);
            }
            err /= x.len() as f64;
            assert!((err - mse).abs() < 1e-9 * (1.0 + err), "alpha {alpha}: {err} vs {mse}");
        }
    }

    #[test]
    fn noiseless_linear_selects_zero_alpha() {
        let x = random_matrix(30, 4, 5);
        let y: Vec<f64> = x.iter().map(|r| 1.0 + r[0] - 0.5 * r[3]).collect();
        let m = fit_ridge_cv(&x, &y, &DEFAULT_ALPHAS).unwrap();
        assert_eq!(m.alpha, 0.0);
        let pred = m.predict(&x);
        assert!(pred.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn constant_features_fall_back_to_intercept() {
        let x = vec![vec![2.0, 1.0]; 6];
        let y = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let m = fit_ridge_cv(&x, &y, &DEFAULT_ALPHAS).unwrap();
        assert_eq!(m.coef, vec![0.0, 0.0]);
        assert!((m.intercept - 3.5).abs() < 1e-12);
        assert!(fit_ridge_cv(&x[..1], &y[..1], &DEFAULT_ALPHAS).is_err());
    }
}
