//! `compgen` command line: data, splits, training, extraction, probes,
//! metrics and whole sweeps.
//!
//! Exit codes: 0 ok, 1 runtime error, 2 config or usage error, 3 a sweep
//! finished with quarantined failures.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use compgen::checkpoint::load_checkpoint;
use compgen::data::{desk_spec, dsprites_like_spec, dsprites_like_with, make_compositional_split, sample_labeled_subset, DatasetStore, FactorSpec, SplitAssignment};
use compgen::el::ElConfig;
use compgen::extract::{extract_messages, extract_modes, read_message_dump, write_message_dump, RepMode, RepresentationBundle};
use compgen::metrics::{compute_metrics, write_matrices_csv, AttributeEncoding, MetricConfig, DEFAULT_BINS, DEFAULT_PAIR_BUDGET};
use compgen::model::ModelConfig;
use compgen::orchestrate::{self, aggregate, emit_plots, read_failures, read_records, replot, ExperimentSpec, PlotOptions, Shard, SubsetTag};
use compgen::readout::{evaluate, evaluate_bundles, oracle_features, Features, OracleKind, ReadoutKind, ReadoutMeta};
use compgen::train::{train, TrainConfig};
use compgen::vae::VaeConfig;
use compgen::{Error, Result};

#[derive(Parser)]
#[command(name = "compgen", version, about = "Compositional generalization benchmark")]
struct Cli {
    /// Output root for relative output paths.
    #[arg(long, env = "COMPGEN_OUT", default_value = "compgen-out", global = true)]
    out_root: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a factored image store.
    GenData {
        #[command(flatten)]
        grid: GridArgs,
        /// Store directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw a compositional train/test split.
    Split {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value_t = 0.3)]
        ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model on the train split.
    Train {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 2000)]
        steps: u64,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-4)]
        learning_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        checkpoint_every: u64,
        #[arg(long, default_value_t = 100)]
        loss_log_every: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract representation bundles (and EL messages) from a checkpoint.
    Extract {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "pre,latent,post")]
        modes: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit few-label readouts and score them.
    Probe {
        /// Train-split bundle directory.
        #[arg(long, required_unless_present = "oracle")]
        train: Option<PathBuf>,
        /// Test-split bundle directory.
        #[arg(long, required_unless_present = "oracle")]
        test: Option<PathBuf>,
        /// Probe oracle features instead of bundles.
        #[arg(long, value_enum)]
        oracle: Option<OracleArg>,
        #[arg(long)]
        split: PathBuf,
        #[arg(long, default_value_t = 500)]
        n_label: usize,
        #[arg(long, value_enum, default_value_t = KindArg::Linear)]
        kind: KindArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON report path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Disentanglement and compositionality metrics on a bundle.
    Metrics {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        split: PathBuf,
        /// EL message dump, enables topographic similarity.
        #[arg(long)]
        messages: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
        #[arg(long, default_value_t = DEFAULT_PAIR_BUDGET)]
        pair_budget: usize,
        #[arg(long, value_enum, default_value_t = EncodingArg::Normalized)]
        attribute_encoding: EncodingArg,
        /// Use at most this many bundle rows (seeded sample).
        #[arg(long)]
        max_samples: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for metrics.json and the score matrices.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a sweep from a config file.
    Run {
        /// TOML experiment config; the bundled desk config when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, conflicts_with = "config")]
        preset: Option<PresetArg>,
        /// Override the seed list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Override the training steps.
        #[arg(long)]
        steps: Option<u64>,
        /// `index/count`: run every count-th grid point from index.
        #[arg(long)]
        shard: Option<String>,
        /// Print the resolved config and grid without running.
        #[arg(long)]
        dry_run: bool,
    },
    /// Mean ± std tables over a results directory.
    Aggregate {
        /// Sweep directory holding results*.jsonl.
        #[arg(long)]
        results: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "model,mode,readout_kind,subset,n_label")]
        group_by: Vec<String>,
        /// CSV path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit the standard plots, or re-render one plot from its CSV.
    Plot {
        #[arg(long, required_unless_present = "csv")]
        results: Option<PathBuf>,
        #[arg(long, conflicts_with = "results", requires = "svg")]
        csv: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = KindArg::Linear)]
        kind: KindArg,
        #[arg(long)]
        n_label: Option<usize>,
        #[arg(long, value_enum, default_value_t = SubsetArg::Test)]
        subset: SubsetArg,
        /// Plot directory; `<results>/plots` when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the quick invariant suites.
    Verify {
        /// Subset of suites: splits, store, readout, metrics, topsim.
        #[arg(value_delimiter = ',')]
        suites: Vec<String>,
    },
}

#[derive(Args)]
struct GridArgs {
    /// Existing store; overrides the grid flags.
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = GridArg::Desk)]
    grid: GridArg,
    #[arg(long, required_if_eq("grid", "custom"))]
    scale: Option<usize>,
    #[arg(long, required_if_eq("grid", "custom"))]
    rotation: Option<usize>,
    #[arg(long, required_if_eq("grid", "custom"))]
    position: Option<usize>,
    #[arg(long, default_value_t = 64)]
    resolution: usize,
}

impl GridArgs {
    fn spec(&self) -> Result<FactorSpec> {
        if let Some(dir) = &self.store {
            return Ok(DatasetStore::load(dir)?.spec);
        }
        Ok(match self.grid {
            GridArg::Desk => desk_spec(),
            GridArg::Dsprites => dsprites_like_spec(),
            GridArg::Custom => dsprites_like_with(self.scale.unwrap_or(1), self.rotation.unwrap_or(1), self.position.unwrap_or(1)),
        })
    }
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_enum)]
    family: FamilyArg,
    #[arg(long, default_value_t = 0.0)]
    beta: f64,
    #[arg(long, default_value_t = 10)]
    latent_dim: usize,
    #[arg(long, default_value_t = 10)]
    n_msg: usize,
    #[arg(long, default_value_t = 256)]
    n_vocab: usize,
    #[arg(long, value_enum, default_value_t = AblationArg::None)]
    ablation: AblationArg,
    #[arg(long, default_value_t = 256)]
    embedding_dim: usize,
    #[arg(long, default_value_t = 512)]
    hidden_dim: usize,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 2)]
    width_multiplier: usize,
}

impl ModelArgs {
    fn config(&self, resolution: usize, n_train: usize) -> ModelConfig {
        match self.family {
            FamilyArg::BetaVae | FamilyArg::BetaTcvae => {
                let base = if self.family == FamilyArg::BetaVae { VaeConfig::beta_vae(self.beta) } else { VaeConfig::beta_tcvae(self.beta, n_train) };
                ModelConfig::Vae(VaeConfig { latent_dim: self.latent_dim, width_multiplier: self.width_multiplier, resolution, ..base })
            }
            FamilyArg::El => ModelConfig::El(ElConfig {
                embedding_dim: self.embedding_dim,
                hidden_dim: self.hidden_dim,
                temperature: self.temperature,
                width_multiplier: self.width_multiplier,
                resolution,
                variable_length: self.ablation == AblationArg::None,
                stochastic: self.ablation != AblationArg::FixDet,
                ..ElConfig::new(self.n_vocab, self.n_msg)
            }),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GridArg {
    Desk,
    Dsprites,
    Custom,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FamilyArg {
    BetaVae,
    BetaTcvae,
    El,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AblationArg {
    None,
    Fix,
    FixDet,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Linear,
    Gbt,
}

impl From<KindArg> for ReadoutKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Linear => ReadoutKind::Linear,
            KindArg::Gbt => ReadoutKind::Gbt,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OracleArg {
    Attributes,
    AttributesSquared,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EncodingArg {
    Normalized,
    OneHot,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PresetArg {
    Desk,
    Paper,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SubsetArg {
    STrain,
    UsTrain,
    Test,
}

/// Relative paths are placed under the output root.
fn under(root: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::Io { path: parent.into(), source: e })?;
    }
    std::fs::write(path, serde_json::to_vec_pretty(v)?).map_err(|e| Error::Io { path: path.into(), source: e })
}

fn read_split(path: &Path) -> Result<SplitAssignment> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    let split: SplitAssignment = serde_json::from_slice(&bytes)?;
    split.check_invariants()?;
    Ok(split)
}

fn parse_modes(modes: &[String]) -> Result<Vec<RepMode>> {
    modes.iter().map(|m| m.parse()).collect()
}

fn parse_shard(s: &str) -> Result<Shard> {
    let bad = || Error::Config(format!("shard must look like index/count, got {s:?}"));
    let (i, n) = s.split_once('/').ok_or_else(bad)?;
    Ok(Shard { index: i.parse().map_err(|_| bad())?, count: n.parse().map_err(|_| bad())? })
}

/// Returns the exit code for a completed command.
fn dispatch(cli: Cli) -> Result<u8> {
    let root = cli.out_root;
    match cli.cmd {
        Cmd::GenData { grid, out } => {
            let spec = grid.spec()?;
            let store = DatasetStore::build(&spec, grid.resolution)?;
            let out = under(&root, &out);
            store.save(&out)?;
            print_json(&serde_json::json!({ "store": out, "n": store.len(), "checksum": store.checksum() }))?;
        }
        Cmd::Split { grid, ratio, seed, out } => {
            let split = make_compositional_split(&grid.spec()?, ratio, seed)?;
            let out = under(&root, &out);
            write_json(&out, &split)?;
            print_json(&serde_json::json!({
                "split": out,
                "train": split.train_ids.len(),
                "test": split.test_ids.len(),
                "fingerprint": split.fingerprint(),
            }))?;
        }
        Cmd::Train { store, split, model, steps, batch_size, learning_rate, seed, checkpoint_every, loss_log_every, out } => {
            let store = DatasetStore::load(&store)?;
            let split = read_split(&split)?;
            if split.spec != store.spec {
                return Err(Error::Config("split and store describe different grids".into()));
            }
            let cfg = model.config(store.height, split.train_ids.len());
            let tc = TrainConfig { batch_size, learning_rate, checkpoint_every, loss_log_every, ..TrainConfig::new(steps, seed) };
            let out = under(&root, &out);
            let outcome = train(&cfg, &split.train_ids, &store, &tc, &out)?;
            print_json(&serde_json::json!({
                "model": cfg.label(),
                "checkpoint": outcome.checkpoint_dir,
                "loss_log": outcome.loss_log,
                "first_loss": outcome.first().total(),
                "last_loss": outcome.last().total(),
            }))?;
        }
        Cmd::Extract { store, split, checkpoint, modes, seed, out } => {
            let store = DatasetStore::load(&store)?;
            let split = read_split(&split)?;
            let (model, manifest) = load_checkpoint(&checkpoint)?;
            let modes = parse_modes(&modes)?;
            let out = under(&root, &out);
            let model_ref = format!("{}@{}", manifest.config.label(), &manifest.digest()[..12]);
            let mut written = Vec::new();
            for (part, ids) in [("train", &split.train_ids), ("test", &split.test_ids)] {
                for mut b in extract_modes(&model, &store, ids, &modes, seed, &model_ref)? {
                    b.split_ref = Some(split.fingerprint());
                    let dir = out.join(format!("{part}-{}", b.mode));
                    b.save(&dir)?;
                    written.push(dir);
                }
            }
            if matches!(manifest.config, ModelConfig::El(_)) {
                let all: Vec<usize> = split.train_ids.iter().chain(&split.test_ids).copied().collect();
                let p = out.join("messages.jsonl");
                write_message_dump(&p, &extract_messages(&model, &store, &all, seed, true)?)?;
                written.push(p);
            }
            print_json(&written)?;
        }
        Cmd::Probe { train, test, oracle, split, n_label, kind, seed, out } => {
            let split = read_split(&split)?;
            let labeled = sample_labeled_subset(&split, n_label, seed)?;
            let kind = ReadoutKind::from(kind);
            let report = match oracle {
                Some(o) => {
                    let ok = if o == OracleArg::Attributes { OracleKind::Attributes } else { OracleKind::AttributesSquared };
                    let tr = oracle_features(&split.spec, &labeled.ids, ok);
                    let te = oracle_features(&split.spec, &split.test_ids, ok);
                    let name = if ok == OracleKind::Attributes { "attributes" } else { "attributes_squared" };
                    let meta = ReadoutMeta { mode: "oracle".into(), model: name.into(), n_label, kind, seed };
                    evaluate(&tr, &te, &split.spec, kind, meta)?
                }
                None => {
                    let tr = RepresentationBundle::load(train.as_deref().expect("required by clap"))?;
                    let te = RepresentationBundle::load(test.as_deref().expect("required by clap"))?;
                    let fp = split.fingerprint();
                    if [&tr, &te].iter().any(|b| b.split_ref.as_deref().is_some_and(|r| r != fp)) {
                        return Err(Error::Misaligned("bundle was extracted against a different split".into()));
                    }
                    let test_ids: BTreeSet<usize> = split.test_ids.iter().copied().collect();
                    if te.ids.iter().any(|id| !test_ids.contains(id)) {
                        return Err(Error::Misaligned("test bundle holds ids outside the test split".into()));
                    }
                    evaluate_bundles(&tr.select(&labeled.ids)?, &te, &split.spec, kind, seed)?
                }
            };
            match out {
                Some(p) => write_json(&under(&root, &p), &report)?,
                None => print_json(&report)?,
            }
        }
        Cmd::Metrics { bundle, split, messages, bins, pair_budget, attribute_encoding, max_samples, seed, out } => {
            let split = read_split(&split)?;
            let b = RepresentationBundle::load(&bundle)?;
            let mut feats = Features::from(&b);
            if let Some(m) = max_samples.filter(|&m| m < feats.ids.len()) {
                let mut rng = compgen::seed::rng_for(seed, "metric-subset");
                let mut ids: Vec<usize> = rand::seq::index::sample(&mut rng, feats.ids.len(), m).into_iter().map(|i| feats.ids[i]).collect();
                ids.sort_unstable();
                feats = feats.select(&ids)?;
            }
            let msgs = messages.map(|p| read_message_dump(&p)).transpose()?;
            let cfg = MetricConfig {
                bins,
                pair_budget,
                attribute_encoding: if attribute_encoding == EncodingArg::OneHot { AttributeEncoding::OneHot } else { AttributeEncoding::Normalized },
                seed,
                ..Default::default()
            };
            let report = compute_metrics(&feats, &split.spec, msgs.as_deref(), &cfg)?;
            let out = under(&root, &out);
            write_matrices_csv(&report.matrices, &split.spec, &out)?;
            write_json(&out.join("metrics.json"), &report)?;
            print_json(&report)?;
        }
        Cmd::Run { config, preset, seeds, steps, shard, dry_run } => {
            let mut spec = match (config, preset) {
                (Some(p), _) => ExperimentSpec::load(&p)?,
                (None, Some(PresetArg::Paper)) => ExperimentSpec::paper(),
                _ => ExperimentSpec::desk(),
            };
            if let Some(s) = seeds {
                spec.seeds = s;
            }
            if let Some(s) = steps {
                spec.train.steps = s;
            }
            spec.validate()?;
            let shard = shard.as_deref().map(parse_shard).transpose()?;
            if dry_run {
                let points: Vec<String> = spec.grid_points()?.iter().map(|p| p.key()).collect();
                print_json(&serde_json::json!({
                    "spec_hash": spec.hash(),
                    "output_dir": orchestrate::resolve_output_dir(&spec, &root),
                    "grid_points": points,
                    "seeds": spec.seeds,
                }))?;
                return Ok(0);
            }
            let summary = orchestrate::run(&spec, &root, shard)?;
            print_json(&summary)?;
            let done: BTreeSet<String> = read_records(&summary.output_dir)?.into_iter().map(|r| r.run_key).collect();
            let open = read_failures(&summary.output_dir)?.into_iter().filter(|f| !done.contains(&f.run_key)).count();
            if open > 0 {
                eprintln!("{open} quarantined failure(s), see failures*.jsonl");
                return Ok(3);
            }
        }
        Cmd::Aggregate { results, group_by, out } => {
            let records = read_records(&results)?;
            let keys: Vec<&str> = group_by.iter().map(String::as_str).collect();
            let table = aggregate(&records, &keys)?;
            match out {
                Some(p) => table.write_csv(&under(&root, &p))?,
                None => print!("{}", table.to_csv()?),
            }
        }
        Cmd::Plot { results, csv, svg, kind, n_label, subset, out } => {
            if let Some(csv) = csv {
                replot(&csv, &svg.expect("required by clap"))?;
                return Ok(0);
            }
            let results = results.expect("required by clap");
            let opts = PlotOptions {
                readout_kind: kind.into(),
                n_label,
                subset: match subset {
                    SubsetArg::STrain => SubsetTag::STrain,
                    SubsetArg::UsTrain => SubsetTag::UsTrain,
                    SubsetArg::Test => SubsetTag::Test,
                },
            };
            let dir = out.unwrap_or_else(|| results.join("plots"));
            let files = emit_plots(&read_records(&results)?, &dir, &opts)?;
            print_json(&files)?;
        }
        Cmd::Verify { suites } => {
            let outcomes = compgen::verify::run_suites(&suites)?;
            for o in &outcomes {
                println!("{} {:<8} {}", if o.passed { "PASS" } else { "FAIL" }, o.suite, o.detail);
            }
            if outcomes.iter().any(|o| !o.passed) {
                return Ok(1);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, Error::Config(_)) { 2 } else { 1 })
        }
    }
}
