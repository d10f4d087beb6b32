//! Experiment config files.
//!
//! A config is a line-oriented file with `[section]` headers and
//! `key = value` lines; `#` starts a comment. Every key has a default, so an
//! empty file is a valid config. Overrides use the same keys written as
//! `section.key=value`.
//!
//! ```text
//! [model]
//! seed_arch = res:32x1-32x1
//! target_arch = res:32x4-32x4
//!
//! [policy]
//! name = fragrow
//! alpha = 4
//! ```
//!
//! [`CliConfig::to_text`] writes every key back out; parsing that text
//! reproduces the config exactly (floats use the shortest round-trip form).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::harness::{DataSource, DataSpec, TrainAccMode, TrainConfig};
use crate::morph::{ArchSpec, InitRule, WherePolicy};
use crate::netcore::SgdHyper;
use crate::timing::{PolicyName, WhenPolicy, DEFAULT_ALPHA, DEFAULT_EPSILON, DEFAULT_PATIENCE};

pub const SECTIONS: [&str; 5] = ["model", "policy", "data", "train", "output"];

const OVERFIT: &str = include_str!("../presets/overfit.cfg");
const UNDERFIT: &str = include_str!("../presets/underfit.cfg");

/// Built-in configs, addressable as `preset:<name>`.
pub const PRESETS: [(&str, &str); 2] = [("overfit", OVERFIT), ("underfit", UNDERFIT)];

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{origin}{}: {message}", line.map(|l| format!(":{l}")).unwrap_or_default())]
pub struct ConfigError {
    /// File path, `preset:<name>` or `override`.
    pub origin: String,
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn new(origin: &str, line: Option<usize>, message: impl Into<String>) -> Self {
        Self {
            origin: origin.to_string(),
            line,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    Gaussians,
    Clusters,
    Idx,
    Csv,
}

impl SourceKind {
    fn as_str(self) -> &'static str {
        match self {
            Self::Gaussians => "gaussians",
            Self::Clusters => "clusters",
            Self::Idx => "idx",
            Self::Csv => "csv",
        }
    }
}

/// Everything a config file can say. Source-specific data keys are kept
/// even when the chosen source ignores them, so echoing is lossless.
#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    // [model]
    pub seed_arch: ArchSpec,
    pub target_arch: ArchSpec,
    pub where_policy: WherePolicy,
    pub init: InitRule,
    pub moment_decay: f64,
    // [policy]
    pub policy: PolicyName,
    pub alpha: f64,
    pub freeze_interval: bool,
    /// Periodic period; `None` means round(I_max).
    pub period: Option<usize>,
    pub patience: usize,
    pub epsilon: f64,
    pub min_finetune: usize,
    // [data]
    pub source: SourceKind,
    pub classes: usize,
    pub dims: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    pub sep: f64,
    pub clusters_per_class: usize,
    pub spread: f64,
    pub label_noise: f64,
    pub train_images: String,
    pub train_labels: String,
    pub test_images: String,
    pub test_labels: String,
    pub train_csv: String,
    pub test_csv: String,
    pub val_fraction: f64,
    pub data_seed: u64,
    pub standardize: bool,
    // [train]
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub train_acc: TrainAccMode,
    pub run_seed: u64,
    // [output]
    pub out_dir: String,
    pub metrics_file: String,
    pub summary_file: String,
}

impl Default for CliConfig {
    fn default() -> Self {
        let sgd = SgdHyper::default();
        Self {
            seed_arch: "res:64x1-64x1-64x1-64x1".parse().expect("valid default"),
            target_arch: "res:64x2-64x2-64x2-64x2".parse().expect("valid default"),
            where_policy: WherePolicy::Sequential,
            init: InitRule::Copy,
            moment_decay: 0.99,
            policy: PolicyName::FraGrow,
            alpha: DEFAULT_ALPHA,
            freeze_interval: false,
            period: None,
            patience: DEFAULT_PATIENCE,
            epsilon: DEFAULT_EPSILON,
            min_finetune: 30,
            source: SourceKind::Gaussians,
            classes: 10,
            dims: 32,
            per_class: 500,
            test_per_class: 500,
            sep: 3.0,
            clusters_per_class: 4,
            spread: 2.0,
            label_noise: 0.0,
            train_images: String::new(),
            train_labels: String::new(),
            test_images: String::new(),
            test_labels: String::new(),
            train_csv: String::new(),
            test_csv: String::new(),
            val_fraction: 0.01,
            data_seed: 0,
            standardize: true,
            epochs: 180,
            lr: sgd.lr_base,
            momentum: sgd.momentum,
            weight_decay: sgd.weight_decay,
            batch_size: 128,
            train_acc: TrainAccMode::Full,
            run_seed: 0,
            out_dir: "growbench-out".into(),
            metrics_file: "metrics.jsonl".into(),
            summary_file: "summary.txt".into(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse `{v}`"))
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

fn parse_f64(v: &str) -> Result<f64, String> {
    let x: f64 = parse_num(v)?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("`{v}` is not a finite number"))
    }
}

fn keys_of(section: &str) -> &'static [&'static str] {
    match section {
        "model" => &["seed_arch", "target_arch", "where", "init", "moment_decay"],
        "policy" => &[
            "name",
            "alpha",
            "freeze_interval",
            "period",
            "patience",
            "epsilon",
            "min_finetune",
        ],
        "data" => &[
            "source",
            "classes",
            "dims",
            "per_class",
            "test_per_class",
            "sep",
            "clusters_per_class",
            "spread",
            "label_noise",
            "train_images",
            "train_labels",
            "test_images",
            "test_labels",
            "train_csv",
            "test_csv",
            "val_fraction",
            "seed",
            "standardize",
        ],
        "train" => &[
            "epochs",
            "lr",
            "momentum",
            "weight_decay",
            "batch_size",
            "train_acc",
            "seed",
        ],
        "output" => &["dir", "metrics", "summary"],
        _ => &[],
    }
}

impl CliConfig {
    /// Sets one key. Errors name the key and are meant to be wrapped with a
    /// location by the caller.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), String> {
        if !SECTIONS.contains(&section) {
            return Err(format!(
                "unknown section `{section}` (expected one of {})",
                SECTIONS.join(", ")
            ));
        }
        if !keys_of(section).contains(&key) {
            return Err(format!(
                "unknown key `{section}.{key}` (known: {})",
                keys_of(section).join(", ")
            ));
        }
        let v = value;
        let wrap = |r: Result<(), String>| r.map_err(|e| format!("{section}.{key}: {e}"));
        wrap((|| {
            match (section, key) {
                ("model", "seed_arch") => self.seed_arch = v.parse().map_err(|e| format!("{e}"))?,
                ("model", "target_arch") => self.target_arch = v.parse().map_err(|e| format!("{e}"))?,
                ("model", "where") => self.where_policy = v.parse().map_err(|e| format!("{e}"))?,
                ("model", "init") => self.init = v.parse().map_err(|e| format!("{e}"))?,
                ("model", "moment_decay") => self.moment_decay = parse_f64(v)?,
                ("policy", "name") => self.policy = v.parse().map_err(|e| format!("{e}"))?,
                ("policy", "alpha") => self.alpha = parse_f64(v)?,
                ("policy", "freeze_interval") => self.freeze_interval = parse_bool(v)?,
                ("policy", "period") => {
                    self.period = match v {
                        "auto" => None,
                        _ => Some(parse_num(v)?),
                    }
                }
                ("policy", "patience") => self.patience = parse_num(v)?,
                ("policy", "epsilon") => self.epsilon = parse_f64(v)?,
                ("policy", "min_finetune") => self.min_finetune = parse_num(v)?,
                ("data", "source") => {
                    self.source = match v {
                        "gaussians" => SourceKind::Gaussians,
                        "clusters" => SourceKind::Clusters,
                        "idx" => SourceKind::Idx,
                        "csv" => SourceKind::Csv,
                        _ => return Err(format!("unknown source `{v}` (gaussians|clusters|idx|csv)")),
                    }
                }
                ("data", "classes") => self.classes = parse_num(v)?,
                ("data", "dims") => self.dims = parse_num(v)?,
                ("data", "per_class") => self.per_class = parse_num(v)?,
                ("data", "test_per_class") => self.test_per_class = parse_num(v)?,
                ("data", "sep") => self.sep = parse_f64(v)?,
                ("data", "clusters_per_class") => self.clusters_per_class = parse_num(v)?,
                ("data", "spread") => self.spread = parse_f64(v)?,
                ("data", "label_noise") => self.label_noise = parse_f64(v)?,
                ("data", "train_images") => self.train_images = v.to_string(),
                ("data", "train_labels") => self.train_labels = v.to_string(),
                ("data", "test_images") => self.test_images = v.to_string(),
                ("data", "test_labels") => self.test_labels = v.to_string(),
                ("data", "train_csv") => self.train_csv = v.to_string(),
                ("data", "test_csv") => self.test_csv = v.to_string(),
                ("data", "val_fraction") => self.val_fraction = parse_f64(v)?,
                ("data", "seed") => self.data_seed = parse_num(v)?,
                ("data", "standardize") => self.standardize = parse_bool(v)?,
                ("train", "epochs") => self.epochs = parse_num(v)?,
                ("train", "lr") => self.lr = parse_f64(v)?,
                ("train", "momentum") => self.momentum = parse_f64(v)?,
                ("train", "weight_decay") => self.weight_decay = parse_f64(v)?,
                ("train", "batch_size") => self.batch_size = parse_num(v)?,
                ("train", "train_acc") => {
                    self.train_acc = match v {
                        "full" => TrainAccMode::Full,
                        "running" => TrainAccMode::Running,
                        _ => return Err(format!("expected full or running, got `{v}`")),
                    }
                }
                ("train", "seed") => self.run_seed = parse_num(v)?,
                ("output", "dir") => self.out_dir = v.to_string(),
                ("output", "metrics") => self.metrics_file = v.to_string(),
                ("output", "summary") => self.summary_file = v.to_string(),
                _ => unreachable!("key table and setter disagree on {section}.{key}"),
            }
            Ok(())
        })())
    }

    /// Current value of a key in config syntax.
    pub fn get(&self, section: &str, key: &str) -> Option<String> {
        let s = match (section, key) {
            ("model", "seed_arch") => self.seed_arch.to_string(),
            ("model", "target_arch") => self.target_arch.to_string(),
            ("model", "where") => self.where_policy.to_string(),
            ("model", "init") => self.init.to_string(),
            ("model", "moment_decay") => self.moment_decay.to_string(),
            ("policy", "name") => self.policy.to_string(),
            ("policy", "alpha") => self.alpha.to_string(),
            ("policy", "freeze_interval") => self.freeze_interval.to_string(),
            ("policy", "period") => self.period.map_or("auto".into(), |p| p.to_string()),
            ("policy", "patience") => self.patience.to_string(),
            ("policy", "epsilon") => self.epsilon.to_string(),
            ("policy", "min_finetune") => self.min_finetune.to_string(),
            ("data", "source") => self.source.as_str().into(),
            ("data", "classes") => self.classes.to_string(),
            ("data", "dims") => self.dims.to_string(),
            ("data", "per_class") => self.per_class.to_string(),
            ("data", "test_per_class") => self.test_per_class.to_string(),
            ("data", "sep") => self.sep.to_string(),
            ("data", "clusters_per_class") => self.clusters_per_class.to_string(),
            ("data", "spread") => self.spread.to_string(),
            ("data", "label_noise") => self.label_noise.to_string(),
            ("data", "train_images") => self.train_images.clone(),
            ("data", "train_labels") => self.train_labels.clone(),
            ("data", "test_images") => self.test_images.clone(),
            ("data", "test_labels") => self.test_labels.clone(),
            ("data", "train_csv") => self.train_csv.clone(),
            ("data", "test_csv") => self.test_csv.clone(),
            ("data", "val_fraction") => self.val_fraction.to_string(),
            ("data", "seed") => self.data_seed.to_string(),
            ("data", "standardize") => self.standardize.to_string(),
            ("train", "epochs") => self.epochs.to_string(),
            ("train", "lr") => self.lr.to_string(),
            ("train", "momentum") => self.momentum.to_string(),
            ("train", "weight_decay") => self.weight_decay.to_string(),
            ("train", "batch_size") => self.batch_size.to_string(),
            ("train", "train_acc") => match self.train_acc {
                TrainAccMode::Full => "full".into(),
                TrainAccMode::Running => "running".into(),
            },
            ("train", "seed") => self.run_seed.to_string(),
            ("output", "dir") => self.out_dir.clone(),
            ("output", "metrics") => self.metrics_file.clone(),
            ("output", "summary") => self.summary_file.clone(),
            _ => return None,
        };
        Some(s)
    }

    /// Parses config text on top of the defaults.
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text, origin)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = Some(i + 1);
            let line = raw.split_once('#').map_or(raw, |(l, _)| l).trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::new(origin, line_no, format!("malformed section header `{line}`")))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(ConfigError::new(
                        origin,
                        line_no,
                        format!("unknown section `[{name}]` (expected one of {})", SECTIONS.join(", ")),
                    ));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::new(origin, line_no, format!("expected `key = value`, got `{line}`")))?;
            let section = section
                .as_deref()
                .ok_or_else(|| ConfigError::new(origin, line_no, "key outside of any section"))?;
            self.set(section, key.trim(), value.trim())
                .map_err(|m| ConfigError::new(origin, line_no, m))?;
        }
        Ok(())
    }

    /// Applies one `section.key=value` override (a leading `--` is allowed).
    pub fn apply_override(&mut self, arg: &str) -> Result<(), ConfigError> {
        let origin = format!("override `{arg}`");
        let body = arg.strip_prefix("--").unwrap_or(arg);
        let (path, value) = body
            .split_once('=')
            .ok_or_else(|| ConfigError::new(&origin, None, "expected --section.key=value"))?;
        let (section, key) = path
            .split_once('.')
            .ok_or_else(|| ConfigError::new(&origin, None, "expected --section.key=value"))?;
        self.set(section, key, value.trim())
            .map_err(|m| ConfigError::new(&origin, None, m))
    }

    /// Every key with its current value, in file order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, section) in SECTIONS.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "[{section}]");
            for key in keys_of(section) {
                let value = self.get(section, key).expect("every listed key has a value");
                let _ = writeln!(out, "{key} = {value}");
            }
        }
        out
    }

    pub fn when_policy(&self) -> WhenPolicy {
        match self.policy {
            PolicyName::FraGrow => WhenPolicy::FraGrow {
                alpha: self.alpha,
                freeze: self.freeze_interval,
            },
            PolicyName::Periodic => WhenPolicy::Periodic { period: self.period },
            PolicyName::Convergent => WhenPolicy::Convergent {
                patience: self.patience,
                epsilon: self.epsilon,
            },
        }
    }

    fn data_source(&self) -> Result<DataSource, String> {
        let path = |name: &str, v: &str| {
            if v.is_empty() {
                Err(format!("data.{name} is required for source {}", self.source.as_str()))
            } else {
                Ok(PathBuf::from(v))
            }
        };
        Ok(match self.source {
            SourceKind::Gaussians => DataSource::Gaussians {
                classes: self.classes,
                dims: self.dims,
                per_class: self.per_class,
                test_per_class: self.test_per_class,
                sep: self.sep,
                label_noise: self.label_noise,
            },
            SourceKind::Clusters => DataSource::Clusters {
                classes: self.classes,
                dims: self.dims,
                clusters_per_class: self.clusters_per_class,
                per_class: self.per_class,
                test_per_class: self.test_per_class,
                spread: self.spread,
                label_noise: self.label_noise,
            },
            SourceKind::Idx => DataSource::Idx {
                train_images: path("train_images", &self.train_images)?,
                train_labels: path("train_labels", &self.train_labels)?,
                test_images: path("test_images", &self.test_images)?,
                test_labels: path("test_labels", &self.test_labels)?,
            },
            SourceKind::Csv => DataSource::Csv {
                train: path("train_csv", &self.train_csv)?,
                test: path("test_csv", &self.test_csv)?,
            },
        })
    }

    /// Builds and validates the harness config.
    pub fn to_train_config(&self) -> Result<TrainConfig, ConfigError> {
        let err = |m: String| ConfigError::new("config", None, m);
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(err(format!("data.val_fraction {} outside (0, 1)", self.val_fraction)));
        }
        if self.patience == 0 {
            return Err(err("policy.patience must be positive".into()));
        }
        if self.period == Some(0) {
            return Err(err("policy.period must be positive".into()));
        }
        let cfg = TrainConfig {
            seed_arch: self.seed_arch.clone(),
            target_arch: self.target_arch.clone(),
            policy: self.when_policy(),
            where_policy: self.where_policy,
            init: self.init,
            moment_decay: self.moment_decay,
            epochs: self.epochs,
            min_finetune: self.min_finetune,
            sgd: SgdHyper {
                lr_base: self.lr,
                momentum: self.momentum,
                weight_decay: self.weight_decay,
            },
            batch_size: self.batch_size,
            train_acc: self.train_acc,
            data: DataSpec {
                source: self.data_source().map_err(err)?,
                val_fraction: self.val_fraction,
                seed: self.data_seed,
                standardize: self.standardize,
            },
            run_seed: self.run_seed,
        };
        cfg.validate().map_err(|e| err(e.to_string()))?;
        Ok(cfg)
    }

    pub fn metrics_path(&self) -> PathBuf {
        Path::new(&self.out_dir).join(&self.metrics_file)
    }

    pub fn summary_path(&self) -> PathBuf {
        Path::new(&self.out_dir).join(&self.summary_file)
    }
}

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// Loads `preset:<name>` or a file path.
pub fn load(spec: &str) -> Result<CliConfig, ConfigError> {
    if let Some(name) = spec.strip_prefix("preset:") {
        let text = preset(name).ok_or_else(|| {
            let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            ConfigError::new(spec, None, format!("unknown preset (available: {})", names.join(", ")))
        })?;
        return CliConfig::parse(text, spec);
    }
    let text = std::fs::read_to_string(spec).map_err(|e| ConfigError::new(spec, None, e.to_string()))?;
    CliConfig::parse(&text, spec)
}
