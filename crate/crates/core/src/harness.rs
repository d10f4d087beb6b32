//! The grow-train-finetune loop, per-epoch evaluation, metrics files and
//! multi-run comparisons.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, SplitSpec, Standardizer};
use crate::error::{GrowError, Result};
use crate::morph::{self, ArchSpec, GrowthEvent, GrowthOrder, InitRule, MomentEnsemble, WherePolicy};
use crate::netcore::{self, LrSchedule, Network, OptState, SgdHyper};
use crate::rng::{self, Stream};
use crate::timing::{self, OrlReading, PolicyState, WhenPolicy};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Gaussians {
        classes: usize,
        dims: usize,
        per_class: usize,
        test_per_class: usize,
        sep: f64,
        label_noise: f64,
    },
    Clusters {
        classes: usize,
        dims: usize,
        clusters_per_class: usize,
        per_class: usize,
        test_per_class: usize,
        spread: f64,
        label_noise: f64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    pub source: DataSource,
    pub val_fraction: f64,
    pub seed: u64,
    pub standardize: bool,
}

/// Train/validation/test sets ready for training.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Builds the three splits. Synthetic test sets are drawn from the same
/// distribution as the training pool but with clean labels; label noise
/// only affects the pool that train and validation are split from.
pub fn prepare_data(spec: &DataSpec) -> Result<Splits> {
    let (pool, test) = match &spec.source {
        DataSource::Gaussians {
            classes,
            dims,
            per_class,
            test_per_class,
            sep,
            label_noise,
        } => (
            data::sample_gaussians(*classes, *dims, *per_class, *sep, *label_noise, spec.seed, Stream::Data)?,
            data::sample_gaussians(*classes, *dims, *test_per_class, *sep, 0.0, spec.seed, Stream::TestData)?,
        ),
        DataSource::Clusters {
            classes,
            dims,
            clusters_per_class,
            per_class,
            test_per_class,
            spread,
            label_noise,
        } => (
            data::sample_clusters(
                *classes,
                *dims,
                *clusters_per_class,
                *per_class,
                *spread,
                *label_noise,
                spec.seed,
                Stream::Data,
            )?,
            data::sample_clusters(
                *classes,
                *dims,
                *clusters_per_class,
                *test_per_class,
                *spread,
                0.0,
                spec.seed,
                Stream::TestData,
            )?,
        ),
        DataSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => (
            data::load_idx(train_images, train_labels)?,
            data::load_idx(test_images, test_labels)?,
        ),
        DataSource::Csv { train, test } => (data::load_csv(train)?, data::load_csv(test)?),
    };
    if pool.dim() != test.dim() {
        return Err(GrowError::Shape(format!(
            "train data has {} features, test data {}",
            pool.dim(),
            test.dim()
        )));
    }
    let classes = pool.num_classes.max(test.num_classes);
    let (mut train, mut val) = data::split(
        &pool,
        SplitSpec {
            val_fraction: spec.val_fraction,
            seed: spec.seed,
        },
    )?;
    let mut test = test;
    for d in [&mut train, &mut val, &mut test] {
        d.num_classes = classes;
    }
    if spec.standardize {
        let s = Standardizer::fit(&train);
        train = s.apply(&train);
        val = s.apply(&val);
        test = s.apply(&test);
    }
    Ok(Splits { train, val, test })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainAccMode {
    /// Dedicated full pass over the training set at epoch end.
    Full,
    /// Running average over the epoch's minibatches.
    Running,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Seed and target architectures; input and class counts are filled in
    /// from the data.
    pub seed_arch: ArchSpec,
    pub target_arch: ArchSpec,
    pub policy: WhenPolicy,
    pub where_policy: WherePolicy,
    pub init: InitRule,
    pub moment_decay: f64,
    pub epochs: usize,
    pub min_finetune: usize,
    pub sgd: SgdHyper,
    pub batch_size: usize,
    pub train_acc: TrainAccMode,
    pub data: DataSpec,
    pub run_seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<usize> {
        if self.epochs <= self.min_finetune {
            return Err(GrowError::InvalidArgument(format!(
                "epochs ({}) must exceed min finetune epochs ({})",
                self.epochs, self.min_finetune
            )));
        }
        if self.batch_size == 0 {
            return Err(GrowError::InvalidArgument("batch size must be positive".into()));
        }
        if !(self.moment_decay > 0.0 && self.moment_decay < 1.0) {
            return Err(GrowError::InvalidArgument(format!(
                "moment decay {} outside (0, 1)",
                self.moment_decay
            )));
        }
        let (mut seed, mut target) = (self.seed_arch.clone(), self.target_arch.clone());
        // io sizes are not known yet; compare the stage layout only
        seed = seed.with_io(1, 1);
        target = target.with_io(1, 1);
        seed.validate()?;
        target.validate()?;
        morph::count_added_blocks(&seed, &target)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub train_loss: f64,
    pub orl: f64,
    pub lr: f64,
    /// Blocks per stage at the end of the epoch (after any growth).
    pub blocks: Vec<usize>,
    pub grew: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub metrics: Vec<EpochMetrics>,
    pub events: Vec<GrowthEvent>,
    /// Mean epochs trained per added block; `None` when nothing was added.
    pub e_bar: Option<f64>,
    pub final_test_error: f64,
    pub final_train_error: f64,
    pub wall_seconds: f64,
}

impl RunResult {
    /// Epoch after which the network had its target size (0 for vanilla).
    pub fn growth_end_epoch(&self) -> usize {
        self.events.last().map_or(0, |e| e.epoch)
    }

    pub fn epochs_at_target(&self) -> usize {
        self.metrics.len() - self.growth_end_epoch()
    }

    /// Gaps between consecutive growth epochs, the first measured from 0.
    pub fn intervals(&self) -> Vec<usize> {
        let mut prev = 0;
        self.events
            .iter()
            .map(|e| {
                let gap = e.epoch - prev;
                prev = e.epoch;
                gap
            })
            .collect()
    }
}

/// Accuracy and ORL for one epoch, all in percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub train_acc: f64,
    pub train_loss: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub orl: f64,
}

/// Full-pass accuracies on all three splits.
pub fn evaluate(net: &Network, train: &Dataset, val: &Dataset, test: &Dataset) -> Result<Evaluation> {
    let (train_acc, train_loss) = net.evaluate(train)?;
    let (val_acc, _) = net.evaluate(val)?;
    let (test_acc, _) = net.evaluate(test)?;
    Ok(Evaluation {
        train_acc,
        train_loss,
        val_acc,
        test_acc,
        orl: timing::orl(train_acc, val_acc)?,
    })
}

pub fn run(config: &TrainConfig) -> Result<RunResult> {
    let splits = prepare_data(&config.data)?;
    run_on(config, &splits)
}

fn track_next(
    net: &Network,
    order: &GrowthOrder,
    target: &ArchSpec,
    decay: f64,
) -> Option<MomentEnsemble> {
    let stage = order.peek(&net.blocks_per_stage(), &target.blocks())?;
    let last = net.stages[stage].blocks.len() - 1;
    Some(MomentEnsemble::track(
        stage,
        last,
        &net.stages[stage].blocks[last].dense,
        decay,
    ))
}

/// Runs the growth loop on prepared data.
pub fn run_on(config: &TrainConfig, splits: &Splits) -> Result<RunResult> {
    let started = Instant::now();
    config.validate()?;
    let (dim, classes) = (splits.train.dim(), splits.train.num_classes);
    let seed_arch = config.seed_arch.clone().with_io(dim, classes);
    let target = config.target_arch.clone().with_io(dim, classes);
    let added = morph::count_added_blocks(&seed_arch, &target)?;

    let mut net = netcore::build_network(&seed_arch, config.run_seed)?;
    let mut opt = OptState::new(&net, config.sgd);
    let schedule = LrSchedule {
        lr_base: config.sgd.lr_base,
    };
    let mut policy = PolicyState::new(added, config.epochs, config.min_finetune)?;
    let mut order = GrowthOrder::new(config.where_policy);
    let mut shuffle_rng = rng::stream(config.run_seed, Stream::Shuffle);
    let mut growth_rng = rng::stream(config.run_seed, Stream::Growth);
    let use_moment = config.init == InitRule::Moment;
    let mut ensemble = if use_moment {
        track_next(&net, &order, &target, config.moment_decay)
    } else {
        None
    };
    // first 0-based epoch index trained at target size
    let mut finetune_start = (added == 0).then_some(0);

    let n = splits.train.len();
    let mut order_idx: Vec<usize> = (0..n).collect();
    let mut metrics = Vec::with_capacity(config.epochs);

    for k in 0..config.epochs {
        let epoch = k + 1;
        let lr = schedule.lr_at(k, finetune_start, config.epochs);

        order_idx.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for chunk in order_idx.chunks(config.batch_size) {
            let x = splits.train.features.select_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| splits.train.labels[i]).collect();
            let (loss, grads, correct) = net.loss_grads_and_hits(&x, &y)?;
            if !loss.is_finite() {
                return Err(GrowError::Diverged { epoch });
            }
            netcore::sgd_step(&mut net, &grads, &mut opt, lr)?;
            if let Some(ens) = ensemble.as_mut() {
                ens.update(&net.stages[ens.stage].blocks[ens.block].dense);
            }
            loss_sum += loss * chunk.len() as f64;
            hits += correct;
        }

        let (train_acc, train_loss) = match config.train_acc {
            TrainAccMode::Full => net.evaluate(&splits.train)?,
            TrainAccMode::Running => (100.0 * hits as f64 / n as f64, loss_sum / n as f64),
        };
        let (val_acc, _) = net.evaluate(&splits.val)?;
        let (test_acc, _) = net.evaluate(&splits.test)?;
        let reading = OrlReading::new(train_acc, val_acc)?;
        policy.observe_validation(epoch, val_acc);

        let mut grew = false;
        if net.total_blocks() < target.total_blocks() && policy.should_grow(&config.policy, epoch, &reading) {
            let stage = order
                .peek(&net.blocks_per_stage(), &target.blocks())
                .expect("an unsaturated stage exists below target size");
            let (block_index, init) = morph::grow(
                &mut net,
                &mut opt,
                &target,
                stage,
                config.init,
                ensemble.as_ref(),
                &mut growth_rng,
            )?;
            order.commit(stage);
            policy.record(GrowthEvent {
                epoch,
                stage,
                block_index,
                init,
            });
            grew = true;
            if net.total_blocks() == target.total_blocks() {
                finetune_start = Some(epoch);
            }
            if use_moment {
                ensemble = track_next(&net, &order, &target, config.moment_decay);
            }
        }

        metrics.push(EpochMetrics {
            epoch,
            train_acc,
            val_acc,
            test_acc,
            train_loss,
            orl: reading.orl,
            lr,
            blocks: net.blocks_per_stage(),
            grew,
        });
    }

    if policy.remaining > 0 {
        return Err(GrowError::BudgetUnexhausted {
            remaining: policy.remaining,
        });
    }
    let last = metrics.last().expect("at least one epoch");
    let e_bar = if policy.events.is_empty() {
        None
    } else {
        Some(timing::average_training_epochs(&policy.events, config.epochs)?)
    };
    Ok(RunResult {
        final_test_error: 100.0 - last.test_acc,
        final_train_error: 100.0 - last.train_acc,
        metrics,
        events: policy.events,
        e_bar,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

impl RunResult {
    /// Human-readable report: final errors, Ē and the growth event table.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "epochs:            {}", self.metrics.len());
        let _ = writeln!(out, "final test error:  {:.2}%", self.final_test_error);
        let _ = writeln!(out, "final train error: {:.2}%", self.final_train_error);
        match self.e_bar {
            Some(e) => {
                let _ = writeln!(out, "average training epochs per added block (E_bar): {e:.3}");
            }
            None => {
                let _ = writeln!(out, "average training epochs per added block (E_bar): n/a (no growth)");
            }
        }
        let _ = writeln!(out, "epochs at target size: {}", self.epochs_at_target());
        let _ = writeln!(out, "wall time: {:.2}s", self.wall_seconds);
        let _ = writeln!(out);
        let _ = writeln!(out, "growth events: {}", self.events.len());
        if !self.events.is_empty() {
            let _ = writeln!(out, "{:>6} {:>6} {:>6} {:>8} {:>8} {:>8}", "epoch", "stage", "block", "init", "gap", "orl");
            let mut prev = 0;
            for e in &self.events {
                let orl = self
                    .metrics
                    .get(e.epoch - 1)
                    .map_or_else(|| "n/a".to_string(), |m| format!("{:.2}", m.orl));
                let _ = writeln!(
                    out,
                    "{:>6} {:>6} {:>6} {:>8} {:>8} {:>8}",
                    e.epoch,
                    e.stage,
                    e.block_index,
                    e.init.to_string(),
                    e.epoch - prev,
                    orl
                );
                prev = e.epoch;
            }
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct Footer {
    events: Vec<GrowthEvent>,
    e_bar: Option<f64>,
    final_test_error: f64,
    final_train_error: f64,
    wall_seconds: f64,
}

/// One JSON object per epoch, then a footer with the growth events, Ē and
/// final errors.
pub fn write_metrics(result: &RunResult, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| GrowError::io(path, e);
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    for m in &result.metrics {
        serde_json::to_writer(&mut w, m).map_err(|e| io(e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    let footer = Footer {
        events: result.events.clone(),
        e_bar: result.e_bar,
        final_test_error: result.final_test_error,
        final_train_error: result.final_train_error,
        wall_seconds: result.wall_seconds,
    };
    serde_json::to_writer(&mut w, &footer).map_err(|e| io(e.into()))?;
    w.write_all(b"\n").map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<RunResult> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| GrowError::io(path, e))?;
    let mut metrics = Vec::new();
    let mut footer: Option<Footer> = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| GrowError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |e: serde_json::Error| GrowError::Parse {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        };
        if footer.is_some() {
            return Err(GrowError::Parse {
                path: path.to_path_buf(),
                message: format!("line {}: content after footer", i + 1),
            });
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(parse_err)?;
        if value.get("events").is_some() {
            footer = Some(serde_json::from_value(value).map_err(parse_err)?);
        } else {
            metrics.push(serde_json::from_value(value).map_err(parse_err)?);
        }
    }
    let footer = footer.ok_or_else(|| GrowError::Parse {
        path: path.to_path_buf(),
        message: "missing footer".into(),
    })?;
    Ok(RunResult {
        metrics,
        events: footer.events,
        e_bar: footer.e_bar,
        final_test_error: footer.final_test_error,
        final_train_error: footer.final_train_error,
        wall_seconds: footer.wall_seconds,
    })
}

/// Median and min–max spread of a sample; the spread is `None` for a
/// single value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub median: f64,
    pub spread: Option<(f64, f64)>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        let median = median(values)?;
        let spread = (values.len() > 1).then(|| {
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        });
        Some(Stat { median, spread })
    }
}

#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub label: String,
    pub vanilla: bool,
    /// One entry per seed; failed runs keep their error message.
    pub runs: Vec<std::result::Result<RunResult, String>>,
    pub test_error: Option<Stat>,
    pub train_error: Option<Stat>,
    pub e_bar: Option<Stat>,
    pub wall_seconds: Option<Stat>,
    /// Median wall time relative to the vanilla row (= 100).
    pub normalized_time: Option<f64>,
}

impl ComparisonRow {
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.is_err()).count()
    }
}

#[derive(Debug, Clone)]
pub struct ComparisonTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<ComparisonRow>,
}

/// Runs every config once per seed (the seed replaces `run_seed`) and
/// summarizes each config by medians. The first config whose seed and
/// target architectures coincide anchors normalized time at 100.
pub fn compare(configs: &[(String, TrainConfig)], seeds: &[u64]) -> Result<ComparisonTable> {
    if configs.is_empty() || seeds.is_empty() {
        return Err(GrowError::InvalidArgument(
            "compare needs at least one config and one seed".into(),
        ));
    }
    let mut cache: Vec<(DataSpec, std::result::Result<Splits, String>)> = Vec::new();
    let mut rows = Vec::with_capacity(configs.len());
    for (label, cfg) in configs {
        let pos = match cache.iter().position(|(spec, _)| spec == &cfg.data) {
            Some(p) => p,
            None => {
                cache.push((cfg.data.clone(), prepare_data(&cfg.data).map_err(|e| e.to_string())));
                cache.len() - 1
            }
        };
        let runs = seeds
            .iter()
            .map(|&seed| {
                let splits = cache[pos].1.as_ref().map_err(Clone::clone)?;
                let cfg = TrainConfig {
                    run_seed: seed,
                    ..cfg.clone()
                };
                run_on(&cfg, splits).map_err(|e| e.to_string())
            })
            .collect::<Vec<_>>();
        let ok: Vec<&RunResult> = runs.iter().filter_map(|r| r.as_ref().ok()).collect();
        let collect = |f: fn(&RunResult) -> Option<f64>| -> Option<Stat> {
            Stat::of(&ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
        };
        rows.push(ComparisonRow {
            label: label.clone(),
            vanilla: cfg.validate().map(|n| n == 0).unwrap_or(false),
            test_error: collect(|r| Some(r.final_test_error)),
            train_error: collect(|r| Some(r.final_train_error)),
            e_bar: collect(|r| r.e_bar),
            wall_seconds: collect(|r| Some(r.wall_seconds)),
            normalized_time: None,
            runs,
        });
    }
    let anchor = rows
        .iter()
        .find(|r| r.vanilla)
        .and_then(|r| r.wall_seconds)
        .map(|s| s.median);
    if let Some(anchor) = anchor.filter(|a| *a > 0.0) {
        for row in &mut rows {
            row.normalized_time = row.wall_seconds.map(|s| 100.0 * s.median / anchor);
        }
    }
    Ok(ComparisonTable {
        seeds: seeds.to_vec(),
        rows,
    })
}

fn fmt_stat(s: Option<Stat>) -> (String, String) {
    match s {
        Some(Stat { median, spread }) => (
            format!("{median:.2}"),
            spread.map_or_else(String::new, |(lo, hi)| format!("{lo:.2}..{hi:.2}")),
        ),
        None => ("n/a".into(), String::new()),
    }
}

impl ComparisonTable {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let w = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(24);
        let _ = writeln!(
            out,
            "{:<w$} {:>10} {:>16} {:>10} {:>16} {:>8} {:>10}  notes",
            "config", "test_err", "spread", "train_err", "spread", "e_bar", "time(%)"
        );
        for row in &self.rows {
            let (te, tes) = fmt_stat(row.test_error);
            let (tr, trs) = fmt_stat(row.train_error);
            let (eb, _) = fmt_stat(row.e_bar);
            let time = row
                .normalized_time
                .map_or_else(|| "n/a".to_string(), |t| format!("{t:.2}"));
            let notes = match row.failures() {
                0 => String::new(),
                k => format!("{k}/{} runs failed", row.runs.len()),
            };
            let _ = writeln!(
                out,
                "{:<w$} {:>10} {:>16} {:>10} {:>16} {:>8} {:>10}  {}",
                row.label, te, tes, tr, trs, eb, time, notes
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "config,test_error_median,test_error_min,test_error_max,train_error_median,train_error_min,train_error_max,e_bar_median,normalized_time,failed_runs\n",
        );
        let num = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x}"));
        for row in &self.rows {
            let parts = |s: Option<Stat>| {
                (
                    num(s.map(|s| s.median)),
                    num(s.and_then(|s| s.spread).map(|p| p.0)),
                    num(s.and_then(|s| s.spread).map(|p| p.1)),
                )
            };
            let (tm, tl, th) = parts(row.test_error);
            let (rm, rl, rh) = parts(row.train_error);
            let _ = writeln!(
                out,
                "{},{tm},{tl},{th},{rm},{rl},{rh},{},{},{}",
                row.label,
                num(row.e_bar.map(|s| s.median)),
                num(row.normalized_time),
                row.failures()
            );
        }
        out
    }
}
