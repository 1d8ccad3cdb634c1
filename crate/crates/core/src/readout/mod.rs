//! Few-label readout probes on frozen representations.

pub mod gbt;
pub mod lbfgs;
pub mod logistic;
pub mod ridge;

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{FactorKind, FactorSpec};
use crate::error::{Error, Result};
use crate::extract::RepresentationBundle;

pub use gbt::{fit_gbt_classifier, fit_gbt_regressor, GbtParams};
pub use logistic::{default_cs, fit_logistic_cv};
pub use ridge::{fit_ridge_cv, DEFAULT_ALPHAS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReadoutKind {
    Linear,
    Gbt,
}

impl ReadoutKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ReadoutKind::Linear => "linear",
            ReadoutKind::Gbt => "gbt",
        }
    }
}

impl FromStr for ReadoutKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ReadoutKind::Linear),
            "gbt" => Ok(ReadoutKind::Gbt),
            other => Err(Error::InvalidArgument(format!("unknown readout kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    Attributes,
    AttributesSquared,
}

impl FromStr for OracleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attributes" => Ok(OracleKind::Attributes),
            "attributes_squared" => Ok(OracleKind::AttributesSquared),
            other => Err(Error::InvalidArgument(format!("unknown oracle kind {other:?}"))),
        }
    }
}

/// Feature rows aligned with flat ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub ids: Vec<usize>,
    pub rows: Vec<Vec<f64>>,
}

impl Features {
    pub fn new(ids: Vec<usize>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::Misaligned(format!("{} ids but {} feature rows", ids.len(), rows.len())));
        }
        if let Some(first) = rows.first() {
            if rows.iter().any(|r| r.len() != first.len()) {
                return Err(Error::Misaligned("ragged feature rows".into()));
            }
        }
        Ok(Self { ids, rows })
    }

    pub fn select(&self, ids: &[usize]) -> Result<Self> {
        let pos: std::collections::HashMap<usize, usize> = self.ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let rows = ids
            .iter()
            .map(|id| pos.get(id).map(|&i| self.rows[i].clone()).ok_or_else(|| Error::Misaligned(format!("id {id} has no features"))))
            .collect::<Result<_>>()?;
        Ok(Self { ids: ids.to_vec(), rows })
    }
}

impl From<&RepresentationBundle> for Features {
    fn from(b: &RepresentationBundle) -> Self {
        Self { ids: b.ids.clone(), rows: b.rows_f64() }
    }
}

/// Ground-truth attribute features: normalized factor values, or their
/// elementwise squares.
pub fn oracle_features(spec: &FactorSpec, ids: &[usize], kind: OracleKind) -> Features {
    let rows = ids
        .iter()
        .map(|&id| {
            let a = spec.attributes(&spec.tuple(id));
            match kind {
                OracleKind::Attributes => a,
                OracleKind::AttributesSquared => a.into_iter().map(|v| v * v).collect(),
            }
        })
        .collect();
    Features { ids: ids.to_vec(), rows }
}

/// Factor value-index labels for `ids`, one row per id.
pub fn factor_labels(spec: &FactorSpec, ids: &[usize]) -> Vec<Vec<usize>> {
    ids.iter().map(|&id| spec.tuple(id).0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct R2Score {
    pub raw: f64,
    /// `max(0, raw)`, or 0 when undefined.
    pub clipped: f64,
    /// Set when the target is constant.
    pub undefined: bool,
}

pub fn r2_score(y_true: &[f64], y_pred: &[f64]) -> Result<R2Score> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Misaligned("r2 inputs differ in length".into()));
    }
    if y_true.len() < 2 {
        return Err(Error::InvalidArgument("r2 needs at least 2 points".into()));
    }
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let ss_tot: f64 = y_true.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = y_true.iter().zip(y_pred).map(|(y, p)| (y - p).powi(2)).sum();
    if ss_tot <= f64::EPSILON * y_true.iter().map(|y| y * y).sum::<f64>().max(f64::MIN_POSITIVE) {
        log::warn!("r2 undefined for a constant target; reporting 0");
        return Ok(R2Score { raw: f64::NAN, clipped: 0.0, undefined: true });
    }
    let raw = 1.0 - ss_res / ss_tot;
    Ok(R2Score { raw, clipped: raw.max(0.0), undefined: false })
}

pub fn accuracy(truth: &[usize], pred: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    truth.iter().zip(pred).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorScore {
    pub factor: String,
    pub kind: FactorKind,
    pub accuracy: f64,
    /// Clipped test R²; absent for factors without a regression task.
    pub r2: Option<f64>,
    pub r2_raw: Option<f64>,
    #[serde(default)]
    pub r2_undefined: bool,
    /// Selected logistic strength (linear readout).
    pub c: Option<f64>,
    /// Selected ridge alpha (linear readout).
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutMeta {
    pub mode: String,
    pub model: String,
    pub n_label: usize,
    pub kind: ReadoutKind,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutReport {
    pub meta: ReadoutMeta,
    pub factors: Vec<FactorScore>,
    pub macro_accuracy: f64,
    /// Mean clipped R² over the regressed factors.
    pub macro_r2: Option<f64>,
    /// Factors without a regression task (categorical).
    pub regression_excluded: Vec<String>,
    pub n_train: usize,
    pub n_test: usize,
}

impl ReadoutReport {
    pub fn factor(&self, name: &str) -> Option<&FactorScore> {
        self.factors.iter().find(|f| f.factor == name)
    }
}

enum Classifier {
    Logistic(logistic::LogisticModel),
    Gbt(gbt::GbtClassifier),
}

enum Regressor {
    Ridge(ridge::RidgeModel),
    Gbt(gbt::GbtRegressor),
}

/// Per-factor probes fit on one labeled set.
pub struct FittedProbes {
    kind: ReadoutKind,
    dim: usize,
    n_train: usize,
    classifiers: Vec<Classifier>,
    /// `None` for factors without a regression task.
    regressors: Vec<Option<Regressor>>,
}

/// Fits one classifier per factor on its value index, and one regressor
/// on the normalized value for every ordinal factor.
pub fn fit_probes(train: &Features, spec: &FactorSpec, kind: ReadoutKind) -> Result<FittedProbes> {
    let dim = train.rows.first().map_or(0, |r| r.len());
    let ytr = factor_labels(spec, &train.ids);
    let params = GbtParams::default();
    let ordinal: Vec<usize> = (0..spec.n_factors()).filter(|&k| spec.factors[k].kind == FactorKind::Ordinal).collect();
    let targets: Vec<Vec<f64>> = ordinal.iter().map(|&k| ytr.iter().map(|t| spec.factors[k].normalized(t[k])).collect()).collect();
    let mut fitted: Vec<Regressor> = match kind {
        ReadoutKind::Linear => ridge::fit_ridge_cv_multi(&train.rows, &targets, &DEFAULT_ALPHAS)?.into_iter().map(Regressor::Ridge).collect(),
        ReadoutKind::Gbt => {
            targets.iter().map(|y| fit_gbt_regressor(&train.rows, y, &params).map(Regressor::Gbt)).collect::<Result<_>>()?
        }
    };
    let mut regressors: Vec<Option<Regressor>> = (0..spec.n_factors()).map(|_| None).collect();
    for (&k, r) in ordinal.iter().zip(fitted.drain(..)) {
        regressors[k] = Some(r);
    }
    let classifiers = (0..spec.n_factors())
        .map(|k| {
            let labels: Vec<usize> = ytr.iter().map(|t| t[k]).collect();
            Ok(match kind {
                ReadoutKind::Linear => Classifier::Logistic(fit_logistic_cv(&train.rows, &labels, &default_cs())?),
                ReadoutKind::Gbt => Classifier::Gbt(fit_gbt_classifier(&train.rows, &labels, &params)?),
            })
        })
        .collect::<Result<_>>()?;
    Ok(FittedProbes { kind, dim, n_train: train.ids.len(), classifiers, regressors })
}

impl FittedProbes {
    pub fn kind(&self) -> ReadoutKind {
        self.kind
    }

    /// Scores the probes on `test`; R² is clipped at zero.
    pub fn score(&self, test: &Features, spec: &FactorSpec, meta: ReadoutMeta) -> Result<ReadoutReport> {
        if test.ids.is_empty() {
            return Err(Error::InvalidArgument("empty test set".into()));
        }
        if let Some(r) = test.rows.first() {
            if r.len() != self.dim {
                return Err(Error::Misaligned(format!("probes expect width {}, test features have {}", self.dim, r.len())));
            }
        }
        let yte = factor_labels(spec, &test.ids);
        let mut factors = Vec::with_capacity(spec.n_factors());
        let mut excluded = Vec::new();
        for (k, factor) in spec.factors.iter().enumerate() {
            let truth: Vec<usize> = yte.iter().map(|t| t[k]).collect();
            let (pred, c) = match &self.classifiers[k] {
                Classifier::Logistic(m) => (m.predict(&test.rows), Some(m.c)),
                Classifier::Gbt(m) => (m.predict(&test.rows), None),
            };
            let mut score = FactorScore {
                factor: factor.name.clone(),
                kind: factor.kind,
                accuracy: accuracy(&truth, &pred),
                r2: None,
                r2_raw: None,
                r2_undefined: false,
                c,
                alpha: None,
            };
            match &self.regressors[k] {
                Some(reg) => {
                    let y_test: Vec<f64> = truth.iter().map(|&i| factor.normalized(i)).collect();
                    let y_hat = match reg {
                        Regressor::Ridge(m) => {
                            score.alpha = Some(m.alpha);
                            m.predict(&test.rows)
                        }
                        Regressor::Gbt(m) => m.predict(&test.rows),
                    };
                    let r2 = r2_score(&y_test, &y_hat)?;
                    score.r2 = Some(r2.clipped);
                    score.r2_raw = (!r2.undefined).then_some(r2.raw);
                    score.r2_undefined = r2.undefined;
                }
                None => excluded.push(factor.name.clone()),
            }
            factors.push(score);
        }
        let macro_accuracy = factors.iter().map(|f| f.accuracy).sum::<f64>() / factors.len() as f64;
        let r2s: Vec<f64> = factors.iter().filter_map(|f| f.r2).collect();
        let macro_r2 = (!r2s.is_empty()).then(|| r2s.iter().sum::<f64>() / r2s.len() as f64);
        Ok(ReadoutReport {
            meta,
            factors,
            macro_accuracy,
            macro_r2,
            regression_excluded: excluded,
            n_train: self.n_train,
            n_test: test.ids.len(),
        })
    }
}

/// Fits probes on `train` and scores them on `test`.
pub fn evaluate(
    train: &Features,
    test: &Features,
    spec: &FactorSpec,
    kind: ReadoutKind,
    meta: ReadoutMeta,
) -> Result<ReadoutReport> {
    let dim = |f: &Features| f.rows.first().map(|r| r.len());
    if let (Some(a), Some(b)) = (dim(train), dim(test)) {
        if a != b {
            return Err(Error::Misaligned(format!("train features have width {a}, test {b}")));
        }
    }
    if test.ids.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    fit_probes(train, spec, kind)?.score(test, spec, meta)
}

/// Bundle-level entry point: checks that both bundles come from the same
/// model and mode before evaluating.
pub fn evaluate_bundles(
    train: &RepresentationBundle,
    test: &RepresentationBundle,
    spec: &FactorSpec,
    kind: ReadoutKind,
    seed: u64,
) -> Result<ReadoutReport> {
    if train.mode != test.mode || train.model_ref != test.model_ref {
        return Err(Error::Misaligned(format!(
            "bundles differ: {}/{} vs {}/{}",
            train.model_ref, train.mode, test.model_ref, test.mode
        )));
    }
    let meta = ReadoutMeta { mode: train.mode.to_string(), model: train.model_ref.clone(), n_label: train.len(), kind, seed };
    evaluate(&Features::from(train), &Features::from(test), spec, kind, meta)
}
