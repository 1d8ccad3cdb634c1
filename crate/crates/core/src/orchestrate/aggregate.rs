//! Mean ± spread tables over result records.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use super::run::ResultRecord;
use super::spec::value_text;
use crate::error::{Error, IoContext, Result};

/// Numeric columns summarized per group.
pub const VALUE_COLUMNS: [&str; 10] = [
    "accuracy",
    "r2",
    "mig",
    "sap",
    "irs",
    "dci_disentanglement",
    "dci_completeness",
    "dci_informativeness",
    "topsim",
    "wall_clock_s",
];

/// Grouping keys that are record fields rather than grid coordinates.
pub const RECORD_KEYS: [&str; 7] = ["spec_hash", "model", "seed", "subset", "mode", "readout_kind", "n_label"];

pub fn key_value(r: &ResultRecord, key: &str) -> Option<String> {
    match key {
        "spec_hash" => Some(r.spec_hash.clone()),
        "model" => Some(r.model.clone()),
        "seed" => Some(r.seed.to_string()),
        "subset" => Some(r.subset.as_str().to_string()),
        "mode" => Some(r.mode.as_str().to_string()),
        "readout_kind" => Some(r.readout_kind.as_str().to_string()),
        "n_label" => Some(r.n_label.to_string()),
        other => r.coords.get(other).map(value_text),
    }
}

pub fn column_value(r: &ResultRecord, column: &str) -> Option<f64> {
    let m = r.metrics.as_ref();
    match column {
        "accuracy" => Some(r.readout.macro_accuracy),
        "r2" => r.readout.macro_r2,
        "mig" => m.and_then(|m| m.mig),
        "sap" => m.and_then(|m| m.sap),
        "irs" => m.and_then(|m| m.irs),
        "dci_disentanglement" => m.and_then(|m| m.dci_disentanglement),
        "dci_completeness" => m.and_then(|m| m.dci_completeness),
        "dci_informativeness" => m.and_then(|m| m.dci_informativeness),
        "topsim" => m.and_then(|m| m.topsim),
        "wall_clock_s" => Some(r.wall_clock_s),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 { 0.0 } else { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() };
        Some(Self { mean, std, n })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    /// One value per group key; empty when a record lacks the key.
    pub key: Vec<String>,
    pub n_records: usize,
    pub values: Vec<Option<Summary>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub group_keys: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
}

/// Compares numerically when both sides parse as numbers.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y),
        _ => a.cmp(b),
    }
}

fn cmp_keys(a: &[String], b: &[String]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| natural_cmp(x, y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

pub fn aggregate(records: &[ResultRecord], group_keys: &[&str]) -> Result<Table> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no result records to aggregate".into()));
    }
    for k in group_keys {
        if records.iter().all(|r| key_value(r, k).is_none()) {
            return Err(Error::InvalidArgument(format!("group key {k:?} is absent from every record")));
        }
    }
    let mut groups: BTreeMap<Vec<String>, Vec<&ResultRecord>> = BTreeMap::new();
    for r in records {
        let key = group_keys.iter().map(|k| key_value(r, k).unwrap_or_default()).collect();
        groups.entry(key).or_default().push(r);
    }
    let mut rows: Vec<TableRow> = groups
        .into_iter()
        .map(|(key, rs)| TableRow {
            key,
            n_records: rs.len(),
            values: VALUE_COLUMNS
                .iter()
                .map(|c| Summary::of(&rs.iter().filter_map(|r| column_value(r, c)).collect::<Vec<_>>()))
                .collect(),
        })
        .collect();
    rows.sort_by(|a, b| cmp_keys(&a.key, &b.key));
    Ok(Table {
        group_keys: group_keys.iter().map(|s| s.to_string()).collect(),
        columns: VALUE_COLUMNS.iter().map(|s| s.to_string()).collect(),
        rows,
    })
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn key_index(&self, name: &str) -> Option<usize> {
        self.group_keys.iter().position(|c| c == name)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = self.group_keys.clone();
        header.push("n".into());
        for c in &self.columns {
            header.push(format!("{c}_mean"));
            header.push(format!("{c}_std"));
        }
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = row.key.clone();
            rec.push(row.n_records.to_string());
            for v in &row.values {
                match v {
                    Some(s) => {
                        rec.push(s.mean.to_string());
                        rec.push(s.std.to_string());
                    }
                    None => rec.extend([String::new(), String::new()]),
                }
            }
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).at(path)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::extract::RepMode;
    use crate::metrics::{AttributeEncoding, MetricReport};
    use crate::orchestrate::spec::SubsetTag;
    use crate::readout::{ReadoutKind, ReadoutMeta, ReadoutReport};
    use serde_json::json;

    pub(crate) fn record(family: &str, beta: f64, seed: u64, mode: RepMode, acc: f64, mig: Option<f64>) -> ResultRecord {
        ResultRecord {
            spec_hash: "h".into(),
            run_key: format!("h/{family}/{beta}/{seed}"),
            coords: BTreeMap::from([("family".to_string(), json!(family)), ("beta".to_string(), json!(beta))]),
            model: family.into(),
            seed,
            subset: SubsetTag::Test,
            mode,
            readout_kind: ReadoutKind::Linear,
            n_label: 500,
            readout: ReadoutReport {
                meta: ReadoutMeta { mode: mode.as_str().into(), model: family.into(), n_label: 500, kind: ReadoutKind::Linear, seed },
                factors: Vec::new(),
                macro_accuracy: acc,
                macro_r2: Some(acc / 2.0),
                regression_excluded: Vec::new(),
                n_train: 500,
                n_test: 100,
            },
            metrics: Some(MetricReport {
                mig,
                sap: None,
                irs: None,
                dci_disentanglement: None,
                dci_completeness: None,
                dci_informativeness: None,
                topsim: None,
                topsim_undefined: false,
                topsim_pairs: None,
                n_samples: 100,
                n_latent: 4,
                bins: 20,
                attribute_encoding: AttributeEncoding::Normalized,
                seed,
                warnings: Vec::new(),
                matrices: Default::default(),
            }),
            wall_clock_s: 1.0,
            artifacts: BTreeMap::new(),
        }
    }

    #[test]
    fn single_record_has_zero_spread() {
        let t = aggregate(&[record("beta_vae", 0.0, 0, RepMode::Latent, 0.7, Some(0.2))], &["beta", "mode"]).unwrap();
        assert_eq!(t.rows.len(), 1);
        let acc = t.rows[0].values[t.column("accuracy").unwrap()].unwrap();
        assert_eq!((acc.mean, acc.std, acc.n), (0.7, 0.0, 1));
        assert!(t.rows[0].values[t.column("sap").unwrap()].is_none());
    }

    #[test]
    fn groups_over_seeds_and_sorts_numerically() {
        let recs: Vec<ResultRecord> = [10.0, 2.0, 0.0]
            .iter()
            .flat_map(|&b| (0..3).map(move |s| record("beta_vae", b, s, RepMode::Latent, 0.5 + s as f64 * 0.1, None)))
            .collect();
        let t = aggregate(&recs, &["beta"]).unwrap();
        let keys: Vec<&str> = t.rows.iter().map(|r| r.key[0].as_str()).collect();
        assert_eq!(keys, ["0.0", "2.0", "10.0"]);
        let acc = t.rows[0].values[0].unwrap();
        assert!((acc.mean - 0.6).abs() < 1e-12 && (acc.std - 0.1).abs() < 1e-12);
        let csv = t.to_csv().unwrap();
        assert!(csv.starts_with("beta,n,accuracy_mean,accuracy_std,r2_mean"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn absent_keys_are_errors() {
        let recs = vec![record("beta_vae", 0.0, 0, RepMode::Latent, 0.7, None)];
        assert!(aggregate(&recs, &["n_vocab"]).unwrap_err().to_string().contains("absent"));
        assert!(aggregate(&[], &["beta"]).is_err());
        // Present somewhere is enough; records without it share the empty key.
        let mut el = record("el", 0.0, 0, RepMode::Latent, 0.7, None);
        el.coords.remove("beta");
        let t = aggregate(&[recs[0].clone(), el], &["beta"]).unwrap();
        assert_eq!(t.rows[0].key, vec![String::new()]);
    }
}
