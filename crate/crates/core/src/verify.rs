//! Quick invariant suites behind `compgen verify`.

use rand::Rng;
use serde::Serialize;

use crate::data::{dsprites_like_with, make_compositional_split, DatasetStore, Factor, FactorSpec};
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, encode_attributes, topsim, AttributeEncoding, MetricConfig};
use crate::readout::{evaluate, oracle_features, OracleKind, ReadoutKind, ReadoutMeta};
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteOutcome {
    pub suite: &'static str,
    pub passed: bool,
    pub detail: String,
}

pub const SUITES: [&str; 5] = ["splits", "store", "readout", "metrics", "topsim"];

fn ordinal_grid(cards: &[usize]) -> FactorSpec {
    FactorSpec {
        factors: cards.iter().enumerate().map(|(i, &c)| Factor::ordinal(&format!("f{i}"), (0..c).map(|v| v as f64).collect())).collect(),
    }
}

fn splits(n: usize) -> Result<String> {
    let shapes: [&[usize]; 5] = [&[2, 3], &[3, 3, 3], &[2, 5, 4], &[4, 4, 2, 3], &[3, 4, 5, 8, 8]];
    let mut rng = rng_for(0, "verify-splits");
    let mut i = 0;
    while i < n {
        let spec = ordinal_grid(shapes[i % shapes.len()]);
        let ratio = rng.random_range(0.2..0.8);
        let seed = rng.random();
        // Ratios that leave too few train tuples to cover every value must be refused.
        let target = (ratio * spec.grid_size() as f64).round() as usize;
        let max_card = spec.cardinalities().into_iter().max().unwrap_or(0);
        if target < max_card || target >= spec.grid_size() {
            if make_compositional_split(&spec, ratio, seed).is_ok() {
                return Err(Error::InvalidArgument(format!("ratio {ratio} accepted without room for value coverage")));
            }
            continue;
        }
        let a = make_compositional_split(&spec, ratio, seed)?;
        a.check_invariants()?;
        if make_compositional_split(&spec, ratio, seed)? != a {
            return Err(Error::InvalidArgument(format!("split {i} is not deterministic")));
        }
        i += 1;
    }
    Ok(format!("{n} random splits over {} grid shapes", shapes.len()))
}

fn store() -> Result<String> {
    let spec = dsprites_like_with(2, 2, 3);
    let s = DatasetStore::build(&spec, 32)?;
    let dir = std::env::temp_dir().join(format!("compgen-verify-{}", std::process::id()));
    s.save(&dir)?;
    let back = DatasetStore::load(&dir);
    let corrupted = {
        let p = dir.join("images.bin");
        let mut bytes = std::fs::read(&p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
        bytes[0] ^= 1;
        std::fs::write(&p, bytes).map_err(|e| Error::Io { path: p.clone(), source: e })?;
        DatasetStore::load(&dir)
    };
    let _ = std::fs::remove_dir_all(&dir);
    if back? != s {
        return Err(Error::InvalidStore("round trip changed the store".into()));
    }
    if !matches!(corrupted, Err(Error::ChecksumMismatch { .. })) {
        return Err(Error::InvalidStore("corruption went undetected".into()));
    }
    Ok(format!("{} images round-trip, corruption detected", s.len()))
}

fn readout() -> Result<String> {
    let spec = dsprites_like_with(4, 5, 6);
    let split = make_compositional_split(&spec, 0.3, 0)?;
    let labeled = crate::data::sample_labeled_subset(&split, 300, 0)?;
    let train = oracle_features(&spec, &labeled.ids, OracleKind::Attributes);
    let test = oracle_features(&spec, &split.test_ids, OracleKind::Attributes);
    let meta = ReadoutMeta { mode: "oracle".into(), model: "attributes".into(), n_label: 300, kind: ReadoutKind::Linear, seed: 0 };
    let r = evaluate(&train, &test, &spec, ReadoutKind::Linear, meta)?;
    let r2 = r.macro_r2.unwrap_or(0.0);
    if r.macro_accuracy < 0.995 || r2 < 0.999 {
        return Err(Error::InvalidArgument(format!("oracle readout too weak: accuracy {:.4}, R² {r2:.4}", r.macro_accuracy)));
    }
    Ok(format!("oracle accuracy {:.4}, R² {r2:.4}", r.macro_accuracy))
}

fn metrics() -> Result<String> {
    let spec = ordinal_grid(&[4, 5, 6]);
    let ids: Vec<usize> = (0..spec.grid_size()).collect();
    let z = oracle_features(&spec, &ids, OracleKind::Attributes);
    let cfg = MetricConfig { bins: 10, topsim: false, ..Default::default() };
    let r = compute_metrics(&z, &spec, None, &cfg)?;
    let (mig, sap, d) = (r.mig.unwrap_or(0.0), r.sap.unwrap_or(0.0), r.dci_disentanglement.unwrap_or(0.0));
    if mig < 0.9 || sap < 0.9 || d < 0.9 {
        return Err(Error::InvalidArgument(format!("perfect latents scored MIG {mig:.3}, SAP {sap:.3}, DCI {d:.3}")));
    }
    Ok(format!("perfect latents: MIG {mig:.3}, SAP {sap:.3}, DCI {d:.3}"))
}

fn topsim_suite() -> Result<String> {
    let spec = ordinal_grid(&[3, 3, 3]);
    let ids: Vec<usize> = (0..27).collect();
    let msgs: Vec<Vec<usize>> = ids.iter().map(|&id| spec.tuple(id).0).collect();
    let r = topsim(&encode_attributes(&spec, &ids, AttributeEncoding::OneHot), &msgs, 100_000, 0)?;
    let rho = r.rho.unwrap_or(0.0);
    if rho < 0.8 {
        return Err(Error::InvalidArgument(format!("compositional language topsim {rho:.3}")));
    }
    Ok(format!("compositional language topsim {rho:.3}"))
}

/// Runs the named suites (all when `only` is empty).
pub fn run_suites(only: &[String]) -> Result<Vec<SuiteOutcome>> {
    if let Some(bad) = only.iter().find(|s| !SUITES.contains(&s.as_str())) {
        return Err(Error::Config(format!("unknown suite {bad:?}; known: {}", SUITES.join(", "))));
    }
    let mut out = Vec::new();
    for suite in SUITES {
        if !only.is_empty() && !only.iter().any(|s| s == suite) {
            continue;
        }
        let r = match suite {
            "splits" => splits(200),
            "store" => store(),
            "readout" => readout(),
            "metrics" => metrics(),
            _ => topsim_suite(),
        };
        out.push(match r {
            Ok(detail) => SuiteOutcome { suite, passed: true, detail },
            Err(e) => SuiteOutcome { suite, passed: false, detail: e.to_string() },
        });
    }
    Ok(out)
}
