//! Sweep runner: split → train → extract → metrics → readout for every grid
//! point and seed, appending one record per evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::spec::{ExperimentSpec, GridPoint, SubsetTag};
use crate::data::{make_compositional_split, sample_labeled_subset, DatasetStore, SplitAssignment};
use crate::error::{Error, IoContext, Result};
use crate::extract::{extract_messages, extract_modes, write_message_dump, MessageRecord, RepMode};
use crate::metrics::{compute_metrics, write_matrices_csv, MetricReport};
use crate::model::ModelConfig;
use crate::readout::{fit_probes, Features, ReadoutKind, ReadoutMeta, ReadoutReport};
use crate::seed::rng_for;
use crate::train::train;

pub const RESULTS_FILE: &str = "results.jsonl";
pub const FAILURES_FILE: &str = "failures.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub spec_hash: String,
    pub run_key: String,
    pub coords: BTreeMap<String, Value>,
    pub model: String,
    pub seed: u64,
    pub subset: SubsetTag,
    pub mode: RepMode,
    pub readout_kind: ReadoutKind,
    pub n_label: usize,
    pub readout: ReadoutReport,
    /// Metrics of the latent representation, shared by the run's records.
    pub metrics: Option<MetricReport>,
    /// Seconds from the start of the run to this record.
    pub wall_clock_s: f64,
    pub artifacts: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub spec_hash: String,
    pub run_key: String,
    pub coords: BTreeMap<String, Value>,
    pub seed: u64,
    pub stage: String,
    pub error: String,
}

/// Splits the grid across processes: this process runs points whose
/// index is `index` modulo `count` and writes its own result files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shard {
    pub index: usize,
    pub count: usize,
}

impl Shard {
    fn suffix(self) -> String {
        format!(".shard-{}-of-{}", self.index, self.count)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub runs_total: usize,
    pub runs_skipped: usize,
    pub runs_completed: usize,
    pub runs_failed: usize,
    pub models_trained: usize,
    pub records_written: usize,
}

pub fn resolve_output_dir(spec: &ExperimentSpec, root: &Path) -> PathBuf {
    root.join(spec.output_dir.clone().unwrap_or_else(|| PathBuf::from(&spec.name)))
}

fn run_key(hash: &str, point: &GridPoint, seed: u64) -> String {
    format!("{hash}/{}/seed={seed}", point.key())
}

/// Result files in `dir` (the main file and any shard files), sorted.
fn result_files(dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .at(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.starts_with(stem) && name.ends_with(".jsonl")
        })
        .collect();
    out.sort();
    Ok(out)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).at(path)?;
    let mut out = Vec::new();
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    for (i, line) in lines.iter().enumerate() {
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            // A torn final line from an interrupted append is dropped.
            Err(e) if i + 1 == lines.len() && !text.ends_with('\n') => {
                log::warn!("{}: ignoring incomplete last line ({e})", path.display());
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

/// All records under a run directory, merged across shard files.
pub fn read_records(dir: &Path) -> Result<Vec<ResultRecord>> {
    let mut out = Vec::new();
    for f in result_files(dir, "results")? {
        out.extend(read_jsonl::<ResultRecord>(&f)?);
    }
    Ok(out)
}

pub fn read_failures(dir: &Path) -> Result<Vec<FailureRecord>> {
    let mut out = Vec::new();
    for f in result_files(dir, "failures")? {
        out.extend(read_jsonl::<FailureRecord>(&f)?);
    }
    Ok(out)
}

/// One write call per batch so a run's records land together.
fn append_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = String::new();
    for it in items {
        buf.push_str(&serde_json::to_string(it)?);
        buf.push('\n');
    }
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path).at(path)?;
    f.write_all(buf.as_bytes()).at(path)
}

fn load_or_build_store(spec: &ExperimentSpec) -> Result<DatasetStore> {
    let fs_spec = spec.data.factor_spec()?;
    let store = match &spec.data.store {
        Some(dir) => DatasetStore::load(dir)?,
        None => {
            log::info!("rendering {} images at {}px", fs_spec.grid_size(), spec.data.resolution);
            DatasetStore::build(&fs_spec, spec.data.resolution)?
        }
    };
    if store.spec != fs_spec || store.height != spec.data.resolution {
        return Err(Error::Config("the configured store does not match the data section".into()));
    }
    if !store.is_complete() {
        return Err(Error::Config("compositional splits need a store covering the whole grid".into()));
    }
    Ok(store)
}

/// Runs every grid point × seed not already present in the result files.
pub fn run(spec: &ExperimentSpec, root: &Path, shard: Option<Shard>) -> Result<RunSummary> {
    spec.validate()?;
    if let Some(s) = shard {
        if s.count == 0 || s.index >= s.count {
            return Err(Error::Config(format!("invalid shard {}/{}", s.index, s.count)));
        }
    }
    let dir = resolve_output_dir(spec, root);
    fs::create_dir_all(&dir).at(&dir)?;
    let hash = spec.hash();
    let spec_path = dir.join("spec.json");
    fs::write(&spec_path, serde_json::to_vec_pretty(&serde_json::json!({ "spec_hash": hash, "spec": spec }))?).at(&spec_path)?;

    let suffix = shard.map(Shard::suffix).unwrap_or_default();
    let results_path = dir.join(format!("results{suffix}.jsonl"));
    let failures_path = dir.join(format!("failures{suffix}.jsonl"));
    let done: BTreeSet<String> = read_records(&dir)?.into_iter().map(|r| r.run_key).collect();

    let points = spec.grid_points()?;
    let mut summary = RunSummary { output_dir: dir.clone(), ..Default::default() };
    let mut store: Option<DatasetStore> = None;
    let mut splits: BTreeMap<String, SplitAssignment> = BTreeMap::new();
    for (pi, point) in points.iter().enumerate() {
        if shard.is_some_and(|s| pi % s.count != s.index) {
            continue;
        }
        for &seed in &spec.seeds {
            summary.runs_total += 1;
            let key = run_key(&hash, point, seed);
            if done.contains(&key) {
                summary.runs_skipped += 1;
                continue;
            }
            log::info!("run {key}");
            let mut stage = "data";
            let outcome = (|| -> Result<Vec<ResultRecord>> {
                if store.is_none() {
                    store = Some(load_or_build_store(spec)?);
                }
                let store = store.as_ref().expect("just set");
                stage = "split";
                let split_key = format!("{}", point.ratio);
                if !splits.contains_key(&split_key) {
                    let s = make_compositional_split(&store.spec, point.ratio, spec.split.seed)?;
                    s.check_invariants()?;
                    let p = dir.join("splits").join(format!("ratio-{}.json", point.ratio));
                    fs::create_dir_all(p.parent().expect("has parent")).at(&p)?;
                    fs::write(&p, serde_json::to_vec(&s)?).at(&p)?;
                    splits.insert(split_key.clone(), s);
                }
                let split = &splits[&split_key];
                let run_dir = dir.join("runs").join(point.slug()).join(format!("seed-{seed}"));
                let ctx = RunContext { spec, point, seed, key: &key, hash: &hash, split, store, run_dir: &run_dir };
                ctx.execute(&mut stage, &mut summary.models_trained)
            })();
            match outcome {
                Ok(records) => {
                    append_lines(&results_path, &records)?;
                    summary.records_written += records.len();
                    summary.runs_completed += 1;
                }
                Err(e) => {
                    log::error!("run {key} failed during {stage}: {e}");
                    let f = FailureRecord {
                        spec_hash: hash.clone(),
                        run_key: key.clone(),
                        coords: point.coords.clone(),
                        seed,
                        stage: stage.to_string(),
                        error: e.to_string(),
                    };
                    append_lines(&failures_path, &[f])?;
                    summary.runs_failed += 1;
                }
            }
        }
    }
    Ok(summary)
}

struct RunContext<'a> {
    spec: &'a ExperimentSpec,
    point: &'a GridPoint,
    seed: u64,
    key: &'a str,
    hash: &'a str,
    split: &'a SplitAssignment,
    store: &'a DatasetStore,
    run_dir: &'a Path,
}

impl RunContext<'_> {
    fn execute(&self, stage: &mut &'static str, trained: &mut usize) -> Result<Vec<ResultRecord>> {
        let start = Instant::now();
        let (spec, split, seed) = (self.spec, self.split, self.seed);
        let fs_spec = &self.store.spec;
        let mut artifacts = BTreeMap::new();

        *stage = "train";
        let outcome = train(&self.point.model, &split.train_ids, self.store, &spec.train.train_config(seed), &self.run_dir.join("train"))?;
        *trained += 1;
        artifacts.insert("checkpoint".to_string(), outcome.checkpoint_dir.clone());
        artifacts.insert("loss_log".to_string(), outcome.loss_log.clone());
        let model = outcome.model;
        let label = self.point.model.label();

        *stage = "extract";
        let mut modes: Vec<RepMode> = spec.readout.modes.clone();
        if spec.metrics.enabled && !modes.contains(&RepMode::Latent) {
            modes.push(RepMode::Latent);
        }
        let mut train_f = BTreeMap::new();
        let mut test_f = BTreeMap::new();
        let split_ref = split.fingerprint();
        for (part, ids, sink) in [("train", &split.train_ids, &mut train_f), ("test", &split.test_ids, &mut test_f)] {
            for mut b in extract_modes(&model, self.store, ids, &modes, seed, self.key)? {
                b.split_ref = Some(split_ref.clone());
                let bdir = self.run_dir.join("bundles").join(format!("{part}-{}", b.mode));
                b.save(&bdir)?;
                artifacts.insert(format!("bundle_{part}_{}", b.mode), bdir);
                sink.insert(b.mode, Features::from(&b));
            }
        }
        let messages: Option<Vec<MessageRecord>> = if matches!(self.point.model, ModelConfig::El(_)) {
            let all: Vec<usize> = split.train_ids.iter().chain(&split.test_ids).copied().collect();
            let msgs = extract_messages(&model, self.store, &all, seed, true)?;
            let p = self.run_dir.join("messages.jsonl");
            write_message_dump(&p, &msgs)?;
            artifacts.insert("messages".to_string(), p);
            Some(msgs)
        } else {
            None
        };

        *stage = "metrics";
        let metrics = if spec.metrics.enabled {
            let n = split.train_ids.len().min(spec.metrics.max_samples);
            let mut ids: Vec<usize> = sample(&mut rng_for(seed, "metric-subset"), split.train_ids.len(), n)
                .into_iter()
                .map(|i| split.train_ids[i])
                .collect();
            ids.sort_unstable();
            let latents = train_f[&RepMode::Latent].select(&ids)?;
            let report = compute_metrics(&latents, fs_spec, messages.as_deref(), &spec.metrics.metric_config(seed))?;
            let mdir = self.run_dir.join("metrics");
            write_matrices_csv(&report.matrices, fs_spec, &mdir)?;
            let p = mdir.join("metrics.json");
            fs::write(&p, serde_json::to_vec_pretty(&report)?).at(&p)?;
            artifacts.insert("metrics".to_string(), mdir);
            Some(report)
        } else {
            None
        };

        *stage = "readout";
        let us_train: BTreeSet<usize> = split.train_ids.iter().copied().collect();
        if split.test_ids.iter().any(|id| us_train.contains(id)) {
            return Err(Error::InvalidArgument("Test overlaps US-train".into()));
        }
        let mut records = Vec::new();
        for &n_label in &spec.readout.n_label {
            let labeled = sample_labeled_subset(split, n_label, seed)?;
            if !labeled.ids.iter().all(|id| us_train.contains(id)) {
                return Err(Error::InvalidArgument("S-train is not inside US-train".into()));
            }
            for &mode in &spec.readout.modes {
                let s_train = train_f[&mode].select(&labeled.ids)?;
                for &kind in &spec.readout.kinds {
                    let probes = fit_probes(&s_train, fs_spec, kind)?;
                    for &subset in &spec.readout.subsets {
                        let eval = match subset {
                            SubsetTag::STrain => s_train.clone(),
                            SubsetTag::UsTrain => train_f[&mode].clone(),
                            SubsetTag::Test => test_f[&mode].clone(),
                        };
                        let meta = ReadoutMeta { mode: mode.as_str().into(), model: label.clone(), n_label, kind, seed };
                        let readout = probes.score(&eval, fs_spec, meta)?;
                        records.push(ResultRecord {
                            spec_hash: self.hash.to_string(),
                            run_key: self.key.to_string(),
                            coords: self.point.coords.clone(),
                            model: label.clone(),
                            seed,
                            subset,
                            mode,
                            readout_kind: kind,
                            n_label,
                            readout,
                            metrics: metrics.clone(),
                            wall_clock_s: start.elapsed().as_secs_f64(),
                            artifacts: artifacts.clone(),
                        });
                    }
                }
            }
        }
        Ok(records)
    }
}
