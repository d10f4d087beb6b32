use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use growbench::config::{self, CliConfig, ConfigError};
use growbench::harness::{self, ComparisonTable, TrainConfig};
use growbench::plot::{self, Curve, PlotSpec};
use growbench::timing::PolicyName;

const SEED_ENV: &str = "GROWBENCH_SEED";

/// Neural growth experiments: train, compare policies, sweep alpha, plot.
#[derive(Parser)]
#[command(name = "growbench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one training job and write metrics plus a summary.
    Train(TrainArgs),
    /// Run several configs over several seeds and tabulate medians.
    Compare(CompareArgs),
    /// Run a FRAGrow config for several alpha values.
    SweepAlpha(SweepArgs),
    /// Draw learning curves from metrics files as SVG.
    Plot(PlotArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Config file or `preset:<name>`.
    config: String,
    /// Print the effective config and exit without training.
    #[arg(long)]
    print_config: bool,
    /// Overrides of the form `--section.key=value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct CompareArgs {
    /// Configs to compare; `PATH@section.key=value@...` adds per-config
    /// overrides.
    #[arg(required = true)]
    configs: Vec<String>,
    /// Number of seeds per config.
    #[arg(long, default_value_t = 3)]
    seeds: usize,
    /// Also run a vanilla (seed = target) version of the first config.
    #[arg(long)]
    vanilla: bool,
    /// Write the table as CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Override applied to every config (`section.key=value`), repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct SweepArgs {
    /// FRAGrow config file or `preset:<name>`.
    config: String,
    /// Comma-separated alpha values.
    #[arg(long, value_delimiter = ',', default_value = "2,4,6")]
    alphas: Vec<f64>,
    /// Number of seeds per alpha.
    #[arg(long, default_value_t = 3)]
    seeds: usize,
    /// Also run the vanilla target network so times are normalized.
    #[arg(long)]
    vanilla: bool,
    /// Write the sweep as CSV here as well.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Override applied before the sweep, repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct PlotArgs {
    /// Metrics files (JSONL) written by `train`.
    #[arg(required = true)]
    metrics: Vec<PathBuf>,
    /// Comma-separated curves: train_error, val_error, test_error,
    /// train_loss, orl, lr, blocks, interval.
    #[arg(long, value_delimiter = ',', default_value = "train_error,val_error,test_error")]
    curves: Vec<String>,
    /// Legend labels, one per metrics file (default: file stems).
    #[arg(long, value_delimiter = ',')]
    labels: Vec<String>,
    /// Epoch range as `LO:HI`.
    #[arg(long)]
    x_range: Option<String>,
    /// Value range as `LO:HI`, shared by all panels.
    #[arg(long)]
    y_range: Option<String>,
    #[arg(long)]
    title: Option<String>,
    #[arg(long, short, default_value = "plot.svg")]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<growbench::GrowError> for Failure {
    fn from(e: growbench::GrowError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Usage(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Loads a config spec with inline `@section.key=value` overrides.
fn load_with_inline(spec: &str, global: &[String]) -> Result<CliConfig, Failure> {
    let mut parts = spec.split('@');
    let base = parts.next().unwrap_or_default();
    let mut cfg = config::load(base)?;
    for o in global.iter().map(String::as_str).chain(parts) {
        cfg.apply_override(o)?;
    }
    Ok(cfg)
}

fn label_for(spec: &str, taken: &[String]) -> String {
    let base = spec.split('@').next().unwrap_or(spec);
    let mut label = base
        .strip_prefix("preset:")
        .map(str::to_string)
        .unwrap_or_else(|| {
            Path::new(base)
                .file_stem()
                .map_or_else(|| base.to_string(), |s| s.to_string_lossy().into_owned())
        });
    let inline: Vec<&str> = spec.split('@').skip(1).collect();
    if !inline.is_empty() {
        label = format!("{label}[{}]", inline.join(","));
    }
    let mut unique = label.clone();
    let mut k = 2;
    while taken.contains(&unique) {
        unique = format!("{label}#{k}");
        k += 1;
    }
    unique
}

fn seed_list(k: usize) -> Result<Vec<u64>, Failure> {
    if k == 0 {
        return Err(Failure::Usage("--seeds must be at least 1".into()));
    }
    let base = env_seed()?.unwrap_or(0);
    Ok((0..k as u64).map(|i| base + i).collect())
}

fn vanilla_of(cfg: &TrainConfig) -> TrainConfig {
    TrainConfig {
        seed_arch: cfg.target_arch.clone(),
        ..cfg.clone()
    }
}

fn write_file(path: &Path, text: &str) -> CmdResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn cmd_train(args: TrainArgs) -> CmdResult {
    let mut print_config = args.print_config;
    let mut cfg = config::load(&args.config)?;
    for o in &args.overrides {
        if o == "--print-config" {
            print_config = true;
            continue;
        }
        if !o.starts_with("--") {
            return Err(Failure::Usage(format!(
                "unexpected argument `{o}`; overrides look like --section.key=value"
            )));
        }
        cfg.apply_override(o)?;
    }
    if let Some(seed) = env_seed()? {
        cfg.run_seed = seed;
    }
    if print_config {
        print!("{}", cfg.to_text());
        return Ok(());
    }
    let train_cfg = cfg.to_train_config()?;
    let result = harness::run(&train_cfg)?;
    let metrics_path = cfg.metrics_path();
    if let Some(dir) = metrics_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    }
    harness::write_metrics(&result, &metrics_path)?;
    let summary = format!(
        "config: {}\npolicy: {}\nseed arch: {}\ntarget arch: {}\nrun seed: {}\n\n{}",
        args.config,
        train_cfg.policy.name(),
        cfg.seed_arch,
        cfg.target_arch,
        cfg.run_seed,
        result.summary()
    );
    write_file(&cfg.summary_path(), &summary)?;
    print!("{summary}");
    println!("\nmetrics: {}", metrics_path.display());
    println!("summary: {}", cfg.summary_path().display());
    Ok(())
}

fn emit_table(table: &ComparisonTable, csv: Option<&Path>, csv_text: &str) -> CmdResult {
    print!("{}", table.to_text());
    if let Some(path) = csv {
        write_file(path, csv_text)?;
    }
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> CmdResult {
    let seeds = seed_list(args.seeds)?;
    let mut configs: Vec<(String, TrainConfig)> = Vec::new();
    let mut labels = Vec::new();
    for spec in &args.configs {
        let cfg = load_with_inline(spec, &args.set)?.to_train_config()?;
        let label = label_for(spec, &labels);
        labels.push(label.clone());
        configs.push((label, cfg));
    }
    if args.vanilla {
        let (label, first) = &configs[0];
        configs.insert(0, (format!("vanilla({label})"), vanilla_of(first)));
    }
    let table = harness::compare(&configs, &seeds)?;
    emit_table(&table, args.csv.as_deref(), &table.to_csv())
}

fn cmd_sweep_alpha(args: SweepArgs) -> CmdResult {
    if args.alphas.is_empty() {
        return Err(Failure::Usage("--alphas needs at least one value".into()));
    }
    let seeds = seed_list(args.seeds)?;
    let base = load_with_inline(&args.config, &args.set)?;
    if base.policy != PolicyName::FraGrow {
        return Err(Failure::Usage(format!(
            "sweep-alpha needs policy.name = fragrow, config has {}",
            base.policy
        )));
    }
    let mut configs = Vec::new();
    if args.vanilla {
        configs.push(("vanilla".to_string(), vanilla_of(&base.to_train_config()?)));
    }
    for &alpha in &args.alphas {
        let mut c = base.clone();
        c.alpha = alpha;
        configs.push((format!("alpha={alpha}"), c.to_train_config()?));
    }
    let table = harness::compare(&configs, &seeds)?;
    let mut csv = String::from("alpha,test_error_median,train_error_median,e_bar_median,wall_seconds_median,normalized_time,failed_runs\n");
    let num = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for row in &table.rows {
        let alpha = row.label.strip_prefix("alpha=").unwrap_or(&row.label);
        csv.push_str(&format!(
            "{alpha},{},{},{},{},{},{}\n",
            num(row.test_error.map(|s| s.median)),
            num(row.train_error.map(|s| s.median)),
            num(row.e_bar.map(|s| s.median)),
            num(row.wall_seconds.map(|s| s.median)),
            num(row.normalized_time),
            row.failures()
        ));
    }
    print!("{csv}");
    if let Some(path) = &args.csv {
        write_file(path, &csv)?;
    }
    Ok(())
}

fn parse_range(name: &str, s: &Option<String>) -> Result<Option<(f64, f64)>, Failure> {
    let Some(s) = s else { return Ok(None) };
    let bad = || Failure::Usage(format!("--{name} `{s}`: expected LO:HI"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    Ok(Some((lo, hi)))
}

fn cmd_plot(args: PlotArgs) -> CmdResult {
    let curves = args
        .curves
        .iter()
        .map(|c| c.parse::<Curve>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    if !args.labels.is_empty() && args.labels.len() != args.metrics.len() {
        return Err(Failure::Usage(format!(
            "{} labels for {} metrics files",
            args.labels.len(),
            args.metrics.len()
        )));
    }
    let spec = PlotSpec {
        curves,
        x_range: parse_range("x-range", &args.x_range)?,
        y_range: parse_range("y-range", &args.y_range)?,
        title: args.title,
    };
    let mut series = Vec::new();
    for (i, path) in args.metrics.iter().enumerate() {
        let run = harness::read_metrics(path)?;
        let label = args.labels.get(i).cloned().unwrap_or_else(|| {
            path.file_stem()
                .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
        });
        series.push((label, run));
    }
    let svg = plot::render_svg(&series, &spec)?;
    write_file(&args.out, &svg)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Compare(a) => cmd_compare(a),
        Command::SweepAlpha(a) => cmd_sweep_alpha(a),
        Command::Plot(a) => cmd_plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
