//! Command-line surface of the benchmark.
//!
//! Four commands: `ingest` summarizes a raw check-in file, `preprocess`
//! turns one into a dataset on disk, `run` executes a cross-validated
//! experiment from a config file (flags override config fields), and
//! `analyze` hosts the dataset analyses and sweeps. Every experiment
//! writes a self-describing directory `<out>/<name>/` containing the
//! resolved config, results as JSON and CSV, and a log. Output is staged
//! in `<out>/<name>.partial/` and renamed into place only on success, so
//! a failed run never leaves a half-written target.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 ingest error,
//! 4 runtime error. The output root defaults to `$TULBENCH_OUT`, then
//! `./runs`. Seeds are never defaulted from the clock: `run` requires one
//! in the config or via `--seed`, analyses require `--seed`, and the
//! synthetic path takes the seed from its spec file.

use std::fs::File;
use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use tulbench::analyze;
use tulbench::encode::Sampler;
use tulbench::error::{Error, Result};
use tulbench::evaluate::{cross_validate, EvalConfig};
use tulbench::ingest::{self, ColumnSchema, DEFAULT_REJECT_THRESHOLD};
use tulbench::model::{MetricsReport, SegmentedDataset, Timescale};
use tulbench::pipeline::{self, PipelineConfig, RelabelOrder};
use tulbench::report;

const OUT_ENV: &str = "TULBENCH_OUT";

#[derive(Parser)]
#[command(
    name = "tulbench",
    version,
    about = "Benchmark linking anonymous check-in trajectories to their users"
)]
struct Cli {
    /// Worker threads for parallel sections (default: all hardware threads).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a raw check-in file and print summary statistics.
    Ingest(IngestArgs),
    /// Segment, filter and relabel a raw file into a dataset on disk.
    Preprocess(PreprocessArgs),
    /// Run one cross-validated experiment described by a config file.
    Run(RunArgs),
    /// Dataset analyses and hyperparameter sweeps.
    #[command(subcommand)]
    Analyze(AnalyzeCmd),
}

// ============================================================================
// shared argument blocks
// ============================================================================

#[derive(Args)]
struct SchemaArgs {
    /// Built-in layout: canonical, brightkite, gowalla or weeplaces.
    #[arg(long, conflicts_with = "schema")]
    format: Option<String>,

    /// JSON file describing a custom column layout.
    #[arg(long)]
    schema: Option<PathBuf>,
}

impl SchemaArgs {
    fn resolve(&self) -> Result<ColumnSchema> {
        resolve_schema(self.format.as_deref(), self.schema.as_deref())
    }
}

fn resolve_schema(format: Option<&str>, schema_file: Option<&Path>) -> Result<ColumnSchema> {
    match (format, schema_file) {
        (Some(name), None) => ColumnSchema::by_name(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown format {name:?}; known formats: {} (or pass --schema <file>)",
                ColumnSchema::KNOWN_FORMATS.join(", ")
            ))
        }),
        (None, Some(path)) => {
            let file = File::open(path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let schema: ColumnSchema = serde_json::from_reader(file)
                .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
            schema.validate()?;
            Ok(schema)
        }
        (None, None) => Err(Error::Config(
            "no input layout given; pass --format <name> or --schema <file>".into(),
        )),
        (Some(_), Some(_)) => {
            Err(Error::Config("--format and --schema are mutually exclusive".into()))
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Encoding dimension, 1 to 3.
    #[arg(long, default_value_t = 1)]
    d: usize,

    /// Neighbors consulted per query.
    #[arg(long, default_value_t = 3)]
    k: usize,

    /// Venue sampler: max, min or median.
    #[arg(long, default_value = "max")]
    sampler: Sampler,

    /// Fold-assignment seed; required, reproducibility has no default.
    #[arg(long)]
    seed: u64,
}

#[derive(Args)]
struct OutArgs {
    /// Experiment name, the directory created under the output root.
    #[arg(long)]
    name: Option<String>,

    /// Output root (default: $TULBENCH_OUT, then ./runs).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl OutArgs {
    fn root(&self) -> PathBuf {
        out_root(self.out.clone())
    }
}

fn out_root(explicit: Option<PathBuf>) -> PathBuf {
    explicit
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

#[derive(Args)]
struct DataArgs {
    /// Preprocessed dataset base path (as written by `preprocess --out`).
    #[arg(long)]
    data: PathBuf,
}

impl DataArgs {
    fn load(&self) -> Result<SegmentedDataset> {
        pipeline::load_dataset(&self.data)
    }
}

// ============================================================================
// ingest
// ============================================================================

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    schema: SchemaArgs,

    /// Raw check-in file; `.gz` inputs are decompressed transparently.
    input: PathBuf,

    /// Maximum tolerated fraction of malformed lines.
    #[arg(long, default_value_t = DEFAULT_REJECT_THRESHOLD)]
    reject_threshold: f64,

    /// Print the summary as JSON instead of text.
    #[arg(long)]
    json: bool,
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let schema = args.schema.resolve()?;
    let summary = ingest::summarize_file(&args.input, schema, args.reject_threshold)?;
    if args.json {
        print!("{}", report::to_json(&summary));
    } else {
        let date = |d: Option<chrono::DateTime<chrono::Utc>>| {
            d.map_or_else(|| "-".to_string(), |d| d.format("%Y-%m-%d").to_string())
        };
        println!("check-ins: {}", summary.checkin_count);
        println!("users:     {}", summary.unique_users);
        println!("venues:    {}", summary.unique_venues);
        println!("range:     {} .. {}", date(summary.date_min), date(summary.date_max));
        println!("rejected:  {}", summary.rejected_lines);
    }
    Ok(())
}

// ============================================================================
// preprocess
// ============================================================================

#[derive(Args)]
struct PreprocessArgs {
    #[command(flatten)]
    schema: SchemaArgs,

    /// Raw check-in file; `.gz` inputs are decompressed transparently.
    input: PathBuf,

    /// Calendar interval cutting trajectories: daily, weekly or monthly.
    #[arg(long)]
    timescale: Timescale,

    /// Minimum check-ins per trajectory (default 3/5/10 by timescale).
    #[arg(long)]
    min_checkins: Option<usize>,

    /// Minimum trajectories per user.
    #[arg(long = "min-trajs", default_value_t = 10)]
    min_trajectories: usize,

    /// Keep original IDs instead of assigning dense sequential ones.
    #[arg(long)]
    no_relabel: bool,

    /// Venue numbering traversal: user-time or user-venue-time.
    #[arg(long, default_value = "user-time")]
    relabel_order: RelabelOrder,

    /// Maximum tolerated fraction of malformed lines.
    #[arg(long, default_value_t = DEFAULT_REJECT_THRESHOLD)]
    reject_threshold: f64,

    /// Destination base path; writes `<out>.tsv` and `<out>.json`.
    #[arg(long)]
    out: PathBuf,
}

fn cmd_preprocess(args: PreprocessArgs) -> Result<()> {
    let schema = args.schema.resolve()?;
    let (records, rejected) = ingest::read_all(&args.input, schema, args.reject_threshold)?;
    eprintln!("read {} records ({rejected} rejected)", records.len());
    let config = PipelineConfig {
        timescale: args.timescale,
        min_checkins: args
            .min_checkins
            .unwrap_or_else(|| args.timescale.default_min_checkins()),
        min_trajectories: args.min_trajectories,
        relabel: !args.no_relabel,
        relabel_order: args.relabel_order,
    };
    let dataset = pipeline::build_dataset(records, &config)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    pipeline::save_dataset(&dataset, &args.out)?;
    println!(
        "{} dataset: {} check-ins, {} trajectories, {} users, {} venues",
        dataset.timescale,
        dataset.checkin_count,
        dataset.trajectory_count,
        dataset.user_count,
        dataset.venue_count
    );
    println!("written to {}", args.out.display());
    Ok(())
}

// ============================================================================
// run
// ============================================================================

/// Declarative description of one experiment. Unknown fields are rejected
/// so config typos surface before any work happens.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentConfig {
    /// Experiment name; becomes the output directory name.
    name: String,
    /// Raw check-in file, or a preprocessed base path with `preprocessed`.
    data: PathBuf,
    #[serde(default)]
    format: Option<String>,
    #[serde(default)]
    schema_file: Option<PathBuf>,
    /// When set, `data` points at `preprocess --out` output.
    #[serde(default)]
    preprocessed: bool,
    timescale: Timescale,
    #[serde(default)]
    min_checkins: Option<usize>,
    #[serde(default)]
    min_trajectories: Option<usize>,
    #[serde(default)]
    relabel_order: RelabelOrder,
    d: usize,
    #[serde(default = "default_sampler")]
    sampler: Sampler,
    k: usize,
    #[serde(default = "default_acc_ks")]
    acc_ks: Vec<u32>,
    #[serde(default = "default_n_folds")]
    n_folds: usize,
    /// Mandatory; reproducibility is not optional.
    #[serde(default)]
    seed: Option<u64>,
    /// Restrict to the top N users by check-in count.
    #[serde(default)]
    users: Option<usize>,
    #[serde(default)]
    out: Option<PathBuf>,
    #[serde(default = "default_reject_threshold")]
    reject_threshold: f64,
}

fn default_sampler() -> Sampler {
    Sampler::Max
}

fn default_acc_ks() -> Vec<u32> {
    vec![1, 5]
}

fn default_n_folds() -> usize {
    3
}

fn default_reject_threshold() -> f64 {
    DEFAULT_REJECT_THRESHOLD
}

impl ExperimentConfig {
    fn eval_config(&self) -> Result<EvalConfig> {
        let seed = self
            .seed
            .ok_or_else(|| Error::Config("seed is mandatory; set it in the config or pass --seed".into()))?;
        let mut cfg = EvalConfig::new(self.d, self.sampler, self.k, seed);
        cfg.acc_ks = self.acc_ks.clone();
        cfg.n_folds = self.n_folds;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Full validation before any work: every referenced path must exist.
    fn validate(&self) -> Result<()> {
        check_name(&self.name)?;
        self.eval_config()?;
        if self.preprocessed {
            let (tsv, json) = pipeline::dataset_paths(&self.data);
            for p in [&tsv, &json] {
                if !p.exists() {
                    return Err(Error::Config(format!(
                        "preprocessed dataset file {} does not exist",
                        p.display()
                    )));
                }
            }
        } else {
            if !self.data.exists() {
                return Err(Error::Config(format!(
                    "data file {} does not exist",
                    self.data.display()
                )));
            }
            resolve_schema(self.format.as_deref(), self.schema_file.as_deref())?;
        }
        if let Some(0) = self.users {
            return Err(Error::Config("user cap must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config JSON; flags below override its fields.
    #[arg(long)]
    config: PathBuf,

    /// Experiment name; also names the output directory.
    #[arg(long)]
    name: Option<String>,
    /// Seed for fold shuffling; some seed is mandatory here or in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Encoding dimension: 1, 2 or 3.
    #[arg(long)]
    d: Option<usize>,
    /// Neighbors consulted per prediction.
    #[arg(long)]
    k: Option<usize>,
    /// Venue sampler: max, min or median.
    #[arg(long)]
    sampler: Option<Sampler>,
    /// Calendar interval cutting trajectories: daily, weekly or monthly.
    #[arg(long)]
    timescale: Option<Timescale>,
    /// Restrict to the top N users by check-in count.
    #[arg(long)]
    users: Option<usize>,
    /// Output root; overrides the config and the TULBENCH_OUT variable.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let file = File::open(&args.config)
        .map_err(|e| Error::Config(format!("{}: {e}", args.config.display())))?;
    let mut config: ExperimentConfig = serde_json::from_reader(file)
        .map_err(|e| Error::Config(format!("{}: {e}", args.config.display())))?;

    // Flags win over config fields.
    if let Some(v) = args.name {
        config.name = v;
    }
    if let Some(v) = args.seed {
        config.seed = Some(v);
    }
    if let Some(v) = args.d {
        config.d = v;
    }
    if let Some(v) = args.k {
        config.k = v;
    }
    if let Some(v) = args.sampler {
        config.sampler = v;
    }
    if let Some(v) = args.timescale {
        config.timescale = v;
    }
    if let Some(v) = args.users {
        config.users = Some(v);
    }
    if let Some(v) = args.out {
        config.out = Some(v);
    }
    config.validate()?;

    let out = out_root(config.out.clone());
    let staging = Staging::new(&out, &config.name)?;
    let mut log = Logger::new(&staging.dir.join("log.txt"))?;
    log.line(&format!("staging in {}", staging.dir.display()))?;

    let dataset = load_run_input(&config, &mut log)?;
    let dataset = match config.users {
        Some(n) => {
            log.line(&format!("restricting to top {n} users"))?;
            analyze::top_n_users(&dataset, n)?
        }
        None => dataset,
    };
    log.line(&format!(
        "dataset: {} check-ins, {} trajectories, {} users",
        dataset.checkin_count, dataset.trajectory_count, dataset.user_count
    ))?;

    let report = cross_validate(&dataset, &config.eval_config()?)?;
    log.line(&format!(
        "acc@1 {:.4}, macro_f1 {:.4}, {} queries over {} candidates",
        report.acc_at.get(&1).copied().unwrap_or(f64::NAN),
        report.macro_f1,
        report.query_count,
        report.search_space_size
    ))?;

    write_file(&staging.dir.join("config.json"), &report::to_json(&config))?;
    write_file(&staging.dir.join("report.json"), &report::to_json(&report))?;
    write_file(&staging.dir.join("report.csv"), &report::metrics_csv(&report))?;
    log.finish()?;
    let final_dir = staging.commit()?;
    println!("report written to {}", final_dir.display());
    Ok(())
}

fn load_run_input(config: &ExperimentConfig, log: &mut Logger) -> Result<SegmentedDataset> {
    if config.preprocessed {
        log.line(&format!("loading preprocessed dataset {}", config.data.display()))?;
        let dataset = pipeline::load_dataset(&config.data)?;
        if dataset.timescale != config.timescale {
            return Err(Error::Config(format!(
                "config says {} but {} holds a {} dataset",
                config.timescale,
                config.data.display(),
                dataset.timescale
            )));
        }
        return Ok(dataset);
    }
    let schema = resolve_schema(config.format.as_deref(), config.schema_file.as_deref())?;
    log.line(&format!("ingesting {}", config.data.display()))?;
    let (records, rejected) = ingest::read_all(&config.data, schema, config.reject_threshold)?;
    log.line(&format!("read {} records ({rejected} rejected)", records.len()))?;
    let pipeline_config = PipelineConfig {
        timescale: config.timescale,
        min_checkins: config
            .min_checkins
            .unwrap_or_else(|| config.timescale.default_min_checkins()),
        min_trajectories: config.min_trajectories.unwrap_or(10),
        relabel: true,
        relabel_order: config.relabel_order,
    };
    pipeline::build_dataset(records, &pipeline_config)
}

// ============================================================================
// analyze
// ============================================================================

#[derive(Subcommand)]
enum AnalyzeCmd {
    /// Venue-set uniqueness statistics over the most active users.
    Uniqueness(UniquenessArgs),
    /// Pairwise Jaccard distance matrix over the most active users.
    Jaccard(JaccardArgs),
    /// Misclassification rate across neighbor counts k.
    SweepK(SweepKArgs),
    /// Full metric reports across encoding dimensions d.
    SweepD(SweepDArgs),
    /// Same-source comparison across the three timescales.
    Intervals(IntervalsArgs),
    /// Metrics at increasing top-N user counts.
    Scaling(ScalingArgs),
    /// Warm per-query latency on one fold.
    Timing(TimingArgs),
    /// Generate a synthetic corpus and run the full benchmark on it.
    Synth(SynthArgs),
}

#[derive(Args)]
struct UniquenessArgs {
    #[command(flatten)]
    data: DataArgs,
    /// How many of the most active users to compare.
    #[arg(long, default_value_t = 25)]
    top: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct JaccardArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Matrix side: the N most active users.
    #[arg(long, default_value_t = 25)]
    top: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct SweepKArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    eval: EvalArgs,
    /// Neighbor counts to evaluate.
    #[arg(long, value_delimiter = ',', default_value = "1,3,5,7,9,11,13,15")]
    k_values: Vec<usize>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct SweepDArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    eval: EvalArgs,
    /// Encoding dimensions to evaluate.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    d_values: Vec<usize>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct IntervalsArgs {
    /// Preprocessed daily dataset base path.
    #[arg(long)]
    daily: PathBuf,
    /// Preprocessed weekly dataset base path.
    #[arg(long)]
    weekly: PathBuf,
    /// Preprocessed monthly dataset base path.
    #[arg(long)]
    monthly: PathBuf,
    #[command(flatten)]
    eval: EvalArgs,
    /// Users per timescale (default: the minimum across the three).
    #[arg(long)]
    users: Option<usize>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct ScalingArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    eval: EvalArgs,
    /// Ascending top-N user counts; oversized entries are skipped.
    #[arg(long, value_delimiter = ',', default_value = "10,100,1000,10000,100000")]
    grid: Vec<usize>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct TimingArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    eval: EvalArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct SynthArgs {
    /// Corpus spec JSON; omitted fields use the desk-scale defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Calendar interval cutting trajectories: daily, weekly or monthly.
    #[arg(long, default_value = "daily")]
    timescale: Timescale,
    /// Minimum check-ins per trajectory (default 3/5/10 by timescale).
    #[arg(long)]
    min_checkins: Option<usize>,
    /// Minimum trajectories per user.
    #[arg(long = "min-trajs", default_value_t = 10)]
    min_trajectories: usize,
    /// Encoding dimension, 1 to 3.
    #[arg(long, default_value_t = 1)]
    d: usize,
    /// Neighbors consulted per query.
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Venue sampler: max, min or median.
    #[arg(long, default_value = "max")]
    sampler: Sampler,
    /// Overrides the seed stored in the corpus spec file.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    out: OutArgs,
}

/// CSV of one metric report per row, first column labeling the grid point.
/// All rows come from one sweep, so they share their ACC@K cutoffs.
fn sweep_csv(label: &str, rows: &[(String, &MetricsReport)]) -> String {
    let ks: Vec<u32> = rows.first().map_or_else(Vec::new, |r| r.1.acc_at.keys().copied().collect());
    let mut out = format!("{label},{}\n", report::metrics_csv_header(&ks));
    for (value, r) in rows {
        out.push_str(&format!("{value},{}\n", report::metrics_csv_row(r)));
    }
    out
}

fn cmd_analyze(cmd: AnalyzeCmd) -> Result<()> {
    match cmd {
        AnalyzeCmd::Uniqueness(args) => {
            let dataset = args.data.load()?;
            let stats = analyze::uniqueness_stats(&dataset, args.top)?;
            let mut csv = report::TidyTable::new(&["user", "venue_set_size"]);
            for (u, n) in &stats.venue_set_sizes {
                csv.push_row(vec![u.to_string(), n.to_string()])?;
            }
            emit(&args.out, "uniqueness", &report::to_json(&stats), &csv.to_csv(), |log| {
                log.line(&format!(
                    "top {} users: mean jaccard distance {:.4}, venue/user ratio {:.2}",
                    stats.top_n, stats.mean_jaccard_distance, stats.venue_user_ratio
                ))
            })
        }
        AnalyzeCmd::Jaccard(args) => {
            let dataset = args.data.load()?;
            let (users, matrix) = analyze::jaccard_matrix(&dataset, args.top)?;
            #[derive(Serialize)]
            struct MatrixDoc {
                users: Vec<u64>,
                matrix: Vec<Vec<f64>>,
            }
            let csv = report::matrix_csv("user", &users, &matrix)?;
            let doc = MatrixDoc { users, matrix };
            emit(&args.out, "jaccard", &report::to_json(&doc), &csv, |log| {
                log.line(&format!("{0} x {0} distance matrix", doc.users.len()))
            })
        }
        AnalyzeCmd::SweepK(args) => {
            let dataset = args.data.load()?;
            let points = analyze::sweep_k(
                &dataset,
                args.eval.d,
                args.eval.sampler,
                &args.k_values,
                args.eval.seed,
            )?;
            let mut csv = report::TidyTable::new(&["k", "error_rate"]);
            for p in &points {
                csv.push_row(vec![p.k.to_string(), p.error_rate.to_string()])?;
            }
            emit(&args.out, "sweep-k", &report::to_json(&points), &csv.to_csv(), |log| {
                log.line(&format!("{} grid points", points.len()))
            })
        }
        AnalyzeCmd::SweepD(args) => {
            let dataset = args.data.load()?;
            let points = analyze::sweep_d(
                &dataset,
                &args.d_values,
                args.eval.sampler,
                args.eval.k,
                args.eval.seed,
            )?;
            let rows: Vec<(String, &MetricsReport)> =
                points.iter().map(|p| (p.d.to_string(), &p.report)).collect();
            emit(&args.out, "sweep-d", &report::to_json(&points), &sweep_csv("d", &rows), |log| {
                log.line(&format!("{} grid points", points.len()))
            })
        }
        AnalyzeCmd::Intervals(args) => {
            let daily = pipeline::load_dataset(&args.daily)?;
            let weekly = pipeline::load_dataset(&args.weekly)?;
            let monthly = pipeline::load_dataset(&args.monthly)?;
            let cmp = analyze::interval_comparison(
                &[&daily, &weekly, &monthly],
                args.eval.d,
                args.eval.sampler,
                args.eval.k,
                args.eval.seed,
                args.users,
            )?;
            let rows: Vec<(String, &MetricsReport)> =
                cmp.reports.iter().map(|(ts, r)| (ts.name().to_string(), r)).collect();
            emit(
                &args.out,
                "intervals",
                &report::to_json(&cmp),
                &sweep_csv("timescale", &rows),
                |log| log.line(&format!("evaluated on top {} users per timescale", cmp.n_users)),
            )
        }
        AnalyzeCmd::Scaling(args) => {
            let dataset = args.data.load()?;
            let curve = analyze::scaling_curve(
                &dataset,
                &args.grid,
                args.eval.d,
                args.eval.sampler,
                args.eval.k,
                args.eval.seed,
            )?;
            let rows: Vec<(String, &MetricsReport)> =
                curve.points.iter().map(|p| (p.n_users.to_string(), &p.report)).collect();
            emit(
                &args.out,
                "scaling",
                &report::to_json(&curve),
                &sweep_csv("n_users", &rows),
                |log| {
                    if !curve.skipped.is_empty() {
                        log.line(&format!(
                            "skipped oversized grid entries {:?} (population {})",
                            curve.skipped, dataset.user_count
                        ))?;
                    }
                    log.line(&format!("{} grid points", curve.points.len()))
                },
            )
        }
        AnalyzeCmd::Timing(args) => {
            let dataset = args.data.load()?;
            let profile = analyze::timing_profile(
                &dataset,
                args.eval.d,
                args.eval.sampler,
                args.eval.k,
                args.eval.seed,
            )?;
            let mut csv = report::TidyTable::new(&[
                "query_count",
                "search_space_size",
                "mean_query_time_ms",
                "index_build_ms",
                "machine",
            ]);
            csv.push_row(vec![
                profile.query_count.to_string(),
                profile.search_space_size.to_string(),
                profile.mean_query_time_ms.to_string(),
                profile.index_build_ms.to_string(),
                profile.machine.clone(),
            ])?;
            emit(&args.out, "timing", &report::to_json(&profile), &csv.to_csv(), |log| {
                log.line(&format!(
                    "{:.4} ms/query over {} queries against {} candidates",
                    profile.mean_query_time_ms, profile.query_count, profile.search_space_size
                ))
            })
        }
        AnalyzeCmd::Synth(args) => cmd_synth(args),
    }
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut spec: analyze::SyntheticSpec = match &args.spec {
        Some(path) => {
            let file = File::open(path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            serde_json::from_reader(file)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => analyze::SyntheticSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let out = args.out.root();
    let name = args.out.name.clone().unwrap_or_else(|| "synth".to_string());
    let staging = Staging::new(&out, &name)?;
    let mut log = Logger::new(&staging.dir.join("log.txt"))?;
    log.line(&format!("staging in {}", staging.dir.display()))?;

    let (records, ledger) = analyze::generate_synthetic(&spec)?;
    log.line(&format!(
        "generated {} check-ins for {} users ({} private visits)",
        ledger.checkin_count, ledger.user_count, ledger.private_visits
    ))?;
    let pipeline_config = PipelineConfig {
        timescale: args.timescale,
        min_checkins: args
            .min_checkins
            .unwrap_or_else(|| args.timescale.default_min_checkins()),
        min_trajectories: args.min_trajectories,
        relabel: true,
        relabel_order: RelabelOrder::UserTime,
    };
    let dataset = pipeline::build_dataset(records, &pipeline_config)?;
    log.line(&format!(
        "dataset: {} trajectories, {} users, {} venues",
        dataset.trajectory_count, dataset.user_count, dataset.venue_count
    ))?;
    let report =
        cross_validate(&dataset, &EvalConfig::new(args.d, args.sampler, args.k, spec.seed))?;
    log.line(&format!(
        "acc@1 {:.4}, macro_f1 {:.4}",
        report.acc_at.get(&1).copied().unwrap_or(f64::NAN),
        report.macro_f1
    ))?;

    #[derive(Serialize)]
    struct GeneratorDoc<'a> {
        spec: &'a analyze::SyntheticSpec,
        ledger: &'a analyze::GeneratorLedger,
    }
    write_file(
        &staging.dir.join("generator.json"),
        &report::to_json(&GeneratorDoc { spec: &spec, ledger: &ledger }),
    )?;
    write_file(&staging.dir.join("report.json"), &report::to_json(&report))?;
    write_file(&staging.dir.join("report.csv"), &report::metrics_csv(&report))?;
    log.finish()?;
    let final_dir = staging.commit()?;
    println!("report written to {}", final_dir.display());
    Ok(())
}

/// Writes the two standard artifacts of an analysis into a staged
/// directory, commits it, and prints the final location.
fn emit(
    out: &OutArgs,
    default_name: &str,
    json: &str,
    csv: &str,
    log_summary: impl FnOnce(&mut Logger) -> Result<()>,
) -> Result<()> {
    let name = out.name.clone().unwrap_or_else(|| default_name.to_string());
    let staging = Staging::new(&out.root(), &name)?;
    let mut log = Logger::new(&staging.dir.join("log.txt"))?;
    log.line(&format!("staging in {}", staging.dir.display()))?;
    log_summary(&mut log)?;
    write_file(&staging.dir.join("result.json"), json)?;
    write_file(&staging.dir.join("result.csv"), csv)?;
    log.finish()?;
    let final_dir = staging.commit()?;
    println!("results written to {}", final_dir.display());
    Ok(())
}

// ============================================================================
// output plumbing
// ============================================================================

fn check_name(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && !name.starts_with('.')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if !ok {
        return Err(Error::Config(format!(
            "experiment name {name:?} must be non-empty alphanumeric with - _ . and cannot start with a dot"
        )));
    }
    Ok(())
}

/// Staged output directory: work happens in `<target>.partial`, which is
/// renamed to `<target>` only on success. A failed run leaves the partial
/// directory behind for inspection and never touches the target.
struct Staging {
    dir: PathBuf,
    target: PathBuf,
}

impl Staging {
    fn new(out_root: &Path, name: &str) -> Result<Staging> {
        check_name(name)?;
        let target = out_root.join(name);
        let dir = out_root.join(format!("{name}.partial"));
        if dir.exists() {
            std::fs::remove_dir_all(&dir)?;
        }
        std::fs::create_dir_all(&dir)?;
        Ok(Staging { dir, target })
    }

    fn commit(self) -> Result<PathBuf> {
        if self.target.exists() {
            std::fs::remove_dir_all(&self.target)?;
        }
        std::fs::rename(&self.dir, &self.target)?;
        Ok(self.target)
    }
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Plain-text progress log, mirrored to stderr and `log.txt`.
struct Logger {
    file: std::io::BufWriter<File>,
}

impl Logger {
    fn new(path: &Path) -> Result<Logger> {
        Ok(Logger { file: std::io::BufWriter::new(File::create(path)?) })
    }

    fn line(&mut self, msg: &str) -> Result<()> {
        let stamped = format!("[{}] {msg}", chrono::Utc::now().format("%H:%M:%S%.3f"));
        eprintln!("{stamped}");
        writeln!(self.file, "{stamped}")?;
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.file.flush()?;
        Ok(())
    }
}

// ============================================================================
// entry point
// ============================================================================

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::Schema(_)
        | Error::InvalidDimension(_)
        | Error::KOutOfRange { .. }
        | Error::MissingTimescale(_)
        | Error::UserCapTooLarge { .. } => 2,
        Error::Io(_) | Error::RejectRatio { .. } => 3,
        _ => 4,
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size thread pool: {e}")))?;
    }
    match cli.command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Preprocess(args) => cmd_preprocess(args),
        Command::Run(args) => cmd_run(args),
        Command::Analyze(cmd) => cmd_analyze(cmd),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
