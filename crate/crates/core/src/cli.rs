//! `seqsel` command-line interface.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::agent::{evaluate, random_rollout, train, SelectionLog, TraceRecord, TrainConfig};
use crate::checkpoint::{Checkpoint, Preprocess};
use crate::dataio::{
    load_csv, load_csv_with_labels, split, synth_generate, zscore_apply, zscore_fit, CategoryMap, Dataset,
    SynthSpec,
};
use crate::error::{Error, Result};
use crate::intel::{analyze, AnalyzeOptions, IntelligenceReport};
use crate::metrics::{confusion, summarize, MetricsReport};

pub const SEED_ENV: &str = "SEQSEL_SEED";

#[derive(Debug, Parser)]
#[command(name = "seqsel", version, about = "Sequential feature selection with a dueling double DQN")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train from a JSON run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Greedy evaluation of a checkpoint on a CSV.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate, then score the selection behaviour against a category map.
    Analyze {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        categories: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replace the learned policy with uniform-random valid actions.
        #[arg(long)]
        random_policy: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn default_label_column() -> String {
    "label".into()
}

fn default_test_fraction() -> f64 {
    0.2
}

fn default_true() -> bool {
    true
}

/// Training run description. Relative paths resolve against the directory
/// holding the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: PathBuf,
    #[serde(default = "default_label_column")]
    pub label_column: String,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default = "default_true")]
    pub stratified: bool,
    #[serde(default)]
    pub categories: Option<PathBuf>,
    pub out_dir: PathBuf,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        check_keys(&value)?;
        let mut cfg: RunConfig = serde_json::from_value(value)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.data);
        resolve(&mut cfg.out_dir);
        if let Some(c) = cfg.categories.as_mut() {
            resolve(c);
        }
        Ok(cfg)
    }

    /// Apply `SEQSEL_SEED` when set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            self.train.seed = raw
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("{SEED_ENV}='{raw}' is not an unsigned integer")))?;
        }
        Ok(())
    }
}

const RUN_KEYS: [&str; 7] = ["data", "label_column", "test_fraction", "split_seed", "stratified", "categories", "out_dir"];

// Flattened fields do not reject unknown keys on their own.
fn check_keys(value: &serde_json::Value) -> Result<()> {
    let train_keys = serde_json::to_value(TrainConfig::default())?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::InvalidConfig("config must be a JSON object".into()))?;
    for key in obj.keys() {
        if !RUN_KEYS.contains(&key.as_str()) && train_keys.get(key).is_none() {
            return Err(Error::InvalidConfig(format!("unknown config key '{key}'")));
        }
    }
    Ok(())
}

/// Parse arguments, run, and report failures as one JSON line on stderr.
/// Returns the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            let _ = writeln!(std::io::stderr(), "{line}");
            1
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { config } => cmd_train(&config),
        Command::Eval { ckpt, data, out } => cmd_eval(&ckpt, &data, &out).map(|_| ()),
        Command::Analyze {
            ckpt,
            data,
            categories,
            out,
            random_policy,
            seed,
        } => cmd_analyze(&ckpt, &data, &categories, &out, random_policy.then_some(seed)).map(|_| ()),
        Command::Synth { spec, out } => cmd_synth(&spec, &out),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_trace(path: &Path, trace: &[TraceRecord]) -> Result<()> {
    let mut text = String::new();
    for rec in trace {
        text.push_str(&serde_json::to_string(rec)?);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn class_names(data: &Dataset, k: usize) -> Vec<String> {
    (0..k).map(|c| data.class_name(c)).collect()
}

/// Report, confusion CSV, histogram CSV and selection log for one evaluation.
fn write_eval_outputs(out: &Path, data: &Dataset, k: usize, log: &SelectionLog, preds: &[usize]) -> Result<MetricsReport> {
    let cm = confusion(preds, data.labels(), k)?;
    let report = summarize(&cm, &log.lengths(), data.n_features());
    report.write_json(&out.join("report.json"))?;
    cm.write_csv(&out.join("confusion.csv"), &class_names(data, k))?;
    report.write_histogram_csv(&out.join("histogram.csv"))?;
    log.write_jsonl(&out.join("selections.jsonl"))?;
    Ok(report)
}

fn write_intel_outputs(out: &Path, report: &IntelligenceReport) -> Result<()> {
    report.write_json(&out.join("intel.json"))?;
    for t in &report.temporal {
        let name: String = t
            .class
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        t.matrix.write_csv(&out.join(format!("temporal_{name}.csv")), &report.categories)?;
    }
    Ok(())
}

pub fn cmd_train(config_path: &Path) -> Result<()> {
    let mut cfg = RunConfig::load(config_path)?;
    cfg.apply_env()?;
    cfg.train.validate()?;
    let raw = load_csv(&cfg.data, &cfg.label_column)?;
    let cats = cfg
        .categories
        .as_deref()
        .map(|p| CategoryMap::load(p, raw.n_features()))
        .transpose()?;
    let (train_raw, test_raw) = split(&raw, cfg.test_fraction, cfg.split_seed, cfg.stratified)?;
    let stats = zscore_fit(&train_raw)?;
    let mut train_set = zscore_apply(&train_raw, &stats)?;
    let mut test_set = zscore_apply(&test_raw, &stats)?;
    // class ids come from the full file so both splits agree on k
    let k = raw.n_classes();
    train_set = with_classes(train_set, k)?;
    test_set = with_classes(test_set, k)?;

    let out = &cfg.out_dir;
    create_dir(out)?;
    let result = train(&train_set, &cfg.train, Some(&test_set))?;
    let max_steps = cfg.train.max_steps_for(raw.n_features());

    let ckpt = Checkpoint {
        online: result.online.clone(),
        target: Some(result.target),
        optimizer: Some(result.optimizer),
        epoch: cfg.train.episodes,
        max_steps: cfg.train.max_steps,
        preprocess: Some(Preprocess {
            label_column: cfg.label_column.clone(),
            feature_names: raw.feature_names.clone(),
            label_names: raw.label_names.clone(),
            norm: Some(stats),
        }),
    };
    ckpt.save(&out.join("checkpoint"))?;
    write_trace(&out.join("trace.jsonl"), &result.trace)?;
    result.log.write_jsonl(&out.join("train_selections.jsonl"))?;
    test_raw.write_csv(&out.join("test.csv"), &cfg.label_column)?;

    let (log, preds) = evaluate(&result.online, &test_set, max_steps)?;
    write_eval_outputs(out, &test_set, k, &log, &preds)?;
    if let Some(cats) = &cats {
        let report = analyze(&log, &test_set, cats, AnalyzeOptions::default())?;
        write_intel_outputs(out, &report)?;
    }
    Ok(())
}

fn with_classes(ds: Dataset, k: usize) -> Result<Dataset> {
    if ds.n_classes() == k {
        return Ok(ds);
    }
    let mut out = Dataset::new(ds.features().clone(), ds.labels().to_vec(), k)?;
    out.feature_names = ds.feature_names;
    out.label_names = ds.label_names;
    out.norm_stats = ds.norm_stats;
    Ok(out)
}

/// Load `data` the way the checkpoint's training data was prepared.
fn prepare(ckpt: &Checkpoint, data: &Path) -> Result<Dataset> {
    let (label_column, known, norm) = match &ckpt.preprocess {
        Some(p) => (p.label_column.as_str(), p.label_names.as_deref(), p.norm.as_ref()),
        None => ("label", None, None),
    };
    let raw = load_csv_with_labels(data, label_column, known)?;
    let net = &ckpt.online;
    if raw.n_features() != net.n_features() {
        return Err(Error::DimensionMismatch {
            expected: net.n_features(),
            got: raw.n_features(),
        });
    }
    if raw.n_classes() > net.n_classes() {
        return Err(Error::DimensionMismatch {
            expected: net.n_classes(),
            got: raw.n_classes(),
        });
    }
    let ds = match norm {
        Some(stats) => zscore_apply(&raw, stats)?,
        None => raw,
    };
    with_classes(ds, net.n_classes())
}

pub fn cmd_eval(ckpt_dir: &Path, data: &Path, out: &Path) -> Result<MetricsReport> {
    let ckpt = Checkpoint::load(ckpt_dir)?;
    let ds = prepare(&ckpt, data)?;
    create_dir(out)?;
    let (log, preds) = evaluate(&ckpt.online, &ds, ckpt.eval_max_steps())?;
    write_eval_outputs(out, &ds, ckpt.online.n_classes(), &log, &preds)
}

/// `random_seed` switches to the uniform-random valid policy.
pub fn cmd_analyze(
    ckpt_dir: &Path,
    data: &Path,
    categories: &Path,
    out: &Path,
    random_seed: Option<u64>,
) -> Result<IntelligenceReport> {
    let ckpt = Checkpoint::load(ckpt_dir)?;
    let ds = prepare(&ckpt, data)?;
    let cats = CategoryMap::load(categories, ds.n_features())?;
    create_dir(out)?;
    let log = match random_seed {
        Some(seed) => random_rollout(&ds, ckpt.online.n_classes(), ckpt.eval_max_steps(), seed)?,
        None => evaluate(&ckpt.online, &ds, ckpt.eval_max_steps())?.0,
    };
    log.write_jsonl(&out.join("selections.jsonl"))?;
    let report = analyze(&log, &ds, &cats, AnalyzeOptions::default())?;
    write_intel_outputs(out, &report)?;
    Ok(report)
}

#[derive(Debug, Deserialize)]
struct SynthFile {
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_label_column")]
    label_column: String,
    #[serde(flatten)]
    spec: SynthSpec,
}

pub fn cmd_synth(spec_path: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(spec_path).map_err(|e| Error::io(spec_path, e))?;
    let file: SynthFile = serde_json::from_str(&text)?;
    let ds = synth_generate(&file.spec, file.seed)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    ds.write_csv(out, &file.label_column)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_paths() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.json");
        std::fs::write(&p, r#"{"data": "d.csv", "out_dir": "/abs/out", "episodes": 50, "arch": "ddqn"}"#).unwrap();
        let cfg = RunConfig::load(&p).unwrap();
        assert_eq!(cfg.data, dir.path().join("d.csv"));
        assert_eq!(cfg.out_dir, PathBuf::from("/abs/out"));
        assert_eq!(cfg.label_column, "label");
        assert_eq!(cfg.test_fraction, 0.2);
        assert!(cfg.stratified);
        assert_eq!(cfg.train.episodes, 50);
        assert_eq!(cfg.train.gamma, TrainConfig::default().gamma);
        assert_eq!(cfg.train.arch, crate::qnet::Arch::Ddqn);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.json");
        std::fs::write(&p, r#"{"data": "d.csv", "out_dir": "o", "epsiodes": 50}"#).unwrap();
        assert!(matches!(RunConfig::load(&p), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn argument_parsing() {
        let cli = Cli::try_parse_from(["seqsel", "analyze", "--ckpt", "c", "--data", "d", "--categories", "k", "--out", "o", "--random-policy"]).unwrap();
        match cli.command {
            Command::Analyze { random_policy, seed, .. } => {
                assert!(random_policy);
                assert_eq!(seed, 0);
            }
            other => panic!("parsed {other:?}"),
        }
        assert!(Cli::try_parse_from(["seqsel", "eval", "--ckpt", "c"]).is_err());
    }
}
