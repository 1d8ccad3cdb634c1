//! Disentanglement and compositionality metrics.

pub mod disentanglement;
pub mod kernels;
pub mod topsim;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{FactorKind, FactorSpec};
use crate::error::{Error, IoContext, Result};
use crate::extract::MessageRecord;
use crate::readout::{factor_labels, Features};

pub use disentanglement::{dci, irs, mig, sap, DciResult, IrsResult, MigResult, SapResult, DEFAULT_BINS};
pub use kernels::{discrete_mi, levenshtein, spearman};
pub use topsim::{encode_attributes, topsim, AttributeEncoding, TopSimResult, DEFAULT_PAIR_BUDGET};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub bins: usize,
    pub pair_budget: usize,
    pub attribute_encoding: AttributeEncoding,
    pub seed: u64,
    pub mig: bool,
    pub sap: bool,
    pub dci: bool,
    pub irs: bool,
    pub topsim: bool,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            pair_budget: DEFAULT_PAIR_BUDGET,
            attribute_encoding: AttributeEncoding::Normalized,
            seed: 0,
            mig: true,
            sap: true,
            dci: true,
            irs: true,
            topsim: true,
        }
    }
}

/// Matrices behind the scalar scores, rows = latent dimensions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricMatrices {
    pub mutual_information: Option<Vec<Vec<f64>>>,
    pub sap_scores: Option<Vec<Vec<f64>>>,
    pub dci_importance: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mig: Option<f64>,
    pub sap: Option<f64>,
    pub irs: Option<f64>,
    pub dci_disentanglement: Option<f64>,
    pub dci_completeness: Option<f64>,
    pub dci_informativeness: Option<f64>,
    pub topsim: Option<f64>,
    pub topsim_undefined: bool,
    pub topsim_pairs: Option<usize>,
    pub n_samples: usize,
    pub n_latent: usize,
    pub bins: usize,
    pub attribute_encoding: AttributeEncoding,
    pub seed: u64,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub matrices: MetricMatrices,
}

/// Converts undefined-estimator outcomes into warnings.
fn soft<T>(r: Result<T>, name: &str, warnings: &mut Vec<String>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(e @ (Error::EstimatorUndefined(_) | Error::DegenerateClassifier(_))) => {
            log::warn!("{name}: {e}");
            warnings.push(format!("{name}: {e}"));
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Computes the enabled metrics on `latents`; topsim additionally needs
/// the messages of the same ids.
pub fn compute_metrics(
    latents: &Features,
    spec: &FactorSpec,
    messages: Option<&[MessageRecord]>,
    cfg: &MetricConfig,
) -> Result<MetricReport> {
    let factors = factor_labels(spec, &latents.ids);
    let kinds: Vec<FactorKind> = spec.factors.iter().map(|f| f.kind).collect();
    let z = &latents.rows;
    let mut w = Vec::new();
    let mut matrices = MetricMatrices::default();
    let mut report = MetricReport {
        mig: None,
        sap: None,
        irs: None,
        dci_disentanglement: None,
        dci_completeness: None,
        dci_informativeness: None,
        topsim: None,
        topsim_undefined: false,
        topsim_pairs: None,
        n_samples: z.len(),
        n_latent: z.first().map_or(0, |r| r.len()),
        bins: cfg.bins,
        attribute_encoding: cfg.attribute_encoding,
        seed: cfg.seed,
        warnings: Vec::new(),
        matrices: MetricMatrices::default(),
    };
    if cfg.mig {
        if let Some(r) = soft(mig(z, &factors, cfg.bins), "mig", &mut w)? {
            report.mig = Some(r.score);
            matrices.mutual_information = Some(r.mi);
        }
    }
    if cfg.sap {
        if let Some(r) = soft(sap(z, &factors, &kinds), "sap", &mut w)? {
            report.sap = Some(r.score);
            matrices.sap_scores = Some(r.scores);
        }
    }
    if cfg.dci {
        if let Some(r) = soft(dci(z, &factors, cfg.seed), "dci", &mut w)? {
            report.dci_disentanglement = Some(r.disentanglement);
            report.dci_completeness = Some(r.completeness);
            report.dci_informativeness = Some(r.informativeness);
            matrices.dci_importance = Some(r.importance);
        }
    }
    if cfg.irs {
        report.irs = soft(irs(z, &factors), "irs", &mut w)?.map(|r| r.score);
    }
    if cfg.topsim {
        if let Some(records) = messages {
            let pos: std::collections::HashMap<usize, &MessageRecord> = records.iter().map(|r| (r.flat_id, r)).collect();
            let msgs: Vec<Vec<usize>> = latents
                .ids
                .iter()
                .map(|id| {
                    pos.get(id)
                        .map(|r| r.tokens[..r.t.min(r.tokens.len())].to_vec())
                        .ok_or_else(|| Error::Misaligned(format!("no message for id {id}")))
                })
                .collect::<Result<_>>()?;
            let attrs = encode_attributes(spec, &latents.ids, cfg.attribute_encoding);
            if let Some(r) = soft(topsim(&attrs, &msgs, cfg.pair_budget, cfg.seed), "topsim", &mut w)? {
                report.topsim = r.rho;
                report.topsim_undefined = r.undefined;
                report.topsim_pairs = Some(r.n_pairs);
                if r.undefined {
                    w.push("topsim: undefined for constant distances".into());
                }
            }
        }
    }
    report.warnings = w;
    report.matrices = matrices;
    Ok(report)
}

fn matrix_csv(m: &[Vec<f64>], spec: &FactorSpec) -> String {
    let mut s = String::from("latent");
    for f in &spec.factors {
        let _ = write!(s, ",{}", f.name);
    }
    s.push('\n');
    for (j, row) in m.iter().enumerate() {
        let _ = write!(s, "{j}");
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

/// Writes whichever matrices are present as `<name>.csv` under `dir`.
pub fn write_matrices_csv(m: &MetricMatrices, spec: &FactorSpec, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).at(dir)?;
    for (name, mat) in [("mutual_information", &m.mutual_information), ("sap_scores", &m.sap_scores), ("dci_importance", &m.dci_importance)] {
        if let Some(mat) = mat {
            let p = dir.join(format!("{name}.csv"));
            std::fs::write(&p, matrix_csv(mat, spec)).at(&p)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dsprites_like_with;

    #[test]
    fn report_on_oracle_latents() {
        let spec = dsprites_like_with(3, 3, 4);
        let ids: Vec<usize> = (0..spec.grid_size()).collect();
        let z = crate::readout::oracle_features(&spec, &ids, crate::readout::OracleKind::Attributes);
        let msgs: Vec<MessageRecord> =
            ids.iter().map(|&id| MessageRecord { flat_id: id, tokens: spec.tuple(id).0.iter().map(|v| v + 1).collect(), t: 5 }).collect();
        let cfg = MetricConfig { bins: 10, attribute_encoding: AttributeEncoding::OneHot, ..Default::default() };
        let r = compute_metrics(&z, &spec, Some(&msgs), &cfg).unwrap();
        assert!(r.mig.unwrap() > 0.8 && r.sap.unwrap() > 0.8 && r.irs.unwrap() > 0.95);
        assert!(r.dci_disentanglement.unwrap() > 0.9);
        assert!(r.topsim.unwrap() > 0.8);
        let back: MetricReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back.mig, r.mig);
        let dir = tempfile::tempdir().unwrap();
        write_matrices_csv(&r.matrices, &spec, dir.path()).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("mutual_information.csv")).unwrap();
        assert!(csv.starts_with("latent,shape,scale,rotation,x,y\n"));
        assert_eq!(csv.lines().count(), 6);
    }

    #[test]
    fn constant_messages_flag_topsim() {
        let spec = dsprites_like_with(2, 2, 3);
        let ids: Vec<usize> = (0..spec.grid_size()).collect();
        let z = crate::readout::oracle_features(&spec, &ids, crate::readout::OracleKind::Attributes);
        let msgs: Vec<MessageRecord> = ids.iter().map(|&id| MessageRecord { flat_id: id, tokens: vec![3, 0], t: 2 }).collect();
        let cfg = MetricConfig { bins: 5, dci: false, ..Default::default() };
        let r = compute_metrics(&z, &spec, Some(&msgs), &cfg).unwrap();
        assert!(r.topsim_undefined && r.topsim.is_none());
        assert!(r.dci_disentanglement.is_none());
    }
}
