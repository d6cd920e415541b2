mod config;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use leakaudit::audit::{build_report, default_quorum, AuditConfig, AuditReport, Combination, VerdictRule};
use leakaudit::dataset::{
    load_manifest, make_split, validate_split, DatasetManifest, LoadOptions, ManifestFormat, SplitSpec,
    SplitStrategy,
};
use leakaudit::detmetrics::Metric;
use leakaudit::leakage::{default_percents, leak_count, make_leakage_plan, percents_with_step, LeakagePlan};
use leakaudit::phash::{hash_corpus, read_hash_csv, write_hash_csv, FsImageLoader};
use leakaudit::runner::{load_records, run_plan, AdapterConfig, MockParams, RunConfig, RunMode};
use leakaudit::simindex::{cross_split_scan, ScanMethod, ScanOptions, SimilarityReport, DEFAULT_MAX_DIST};

use config::ToolConfig;

const MANIFEST_FILE: &str = "manifest.json";
const SPLIT_FILE: &str = "split.json";
const PLAN_FILE: &str = "plan.json";
const HASHES_FILE: &str = "hashes.csv";
const SIMILARITY_JSON: &str = "similarity.json";
const SIMILARITY_MD: &str = "similarity.md";

/// Audit the train/test split of an object-detection dataset for leakage.
///
/// All intermediate state lives under --work-dir, so each step can be rerun
/// or resumed on its own: split -> plan -> run -> audit, with hash/scan as
/// the similarity side channel.
#[derive(Parser)]
#[command(name = "leakaudit", version)]
struct Cli {
    /// Directory holding manifest, split, plan, journal and reports.
    #[arg(long, global = true, default_value = ".")]
    work_dir: PathBuf,
    /// TOML config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores; 1 for external adapters).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Perceptual-hash images and write `id,hash_hex` rows.
    Hash(HashArgs),
    /// Count near-duplicate pairs across the train/test boundary.
    Scan(ScanArgs),
    /// Load a dataset and create the base train/test split.
    Split(SplitArgs),
    /// Plan the leakage steps and repetitions.
    Plan(PlanArgs),
    /// Execute the planned runs (mock detector or external adapter).
    Run(RunArgs),
    /// Aggregate runs, apply the decision rule and write reports.
    /// Exits 0 when no leakage is detected and 3 when it is.
    Audit(AuditArgs),
    /// Print a previously written audit.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    /// `images/` and `labels/` directories with KITTI label files.
    Kitti,
    /// A JSON manifest file (or a directory containing manifest.json).
    Manifest,
}

#[derive(Args, Clone)]
struct DatasetArgs {
    /// Dataset root.
    #[arg(long)]
    root: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Comma-separated class names for KITTI labels (default: the KITTI classes).
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<String>>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Side {
    Train,
    Test,
    All,
}

#[derive(Args)]
struct HashArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    /// Which side of the split to hash; train/test need a prior `split`.
    #[arg(long, value_enum, default_value = "all")]
    side: Side,
    /// Output CSV (default: <work-dir>/hashes.csv).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScanArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    /// Maximum Hamming distance to report.
    #[arg(long)]
    max_dist: Option<u32>,
    /// Read hashes from this CSV instead of hashing the images.
    #[arg(long)]
    hashes: Option<PathBuf>,
    /// Maximum number of pairs listed in the report (the histogram is always complete).
    #[arg(long)]
    pair_cap: Option<usize>,
    /// Force the banded index with this many bands.
    #[arg(long)]
    bands: Option<usize>,
    /// Print the histogram with odd distances folded into the next even bucket.
    #[arg(long)]
    even_buckets: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    /// First floor(N * ratio) ids in sorted order go to train.
    Ratio,
    /// First --train-count ids in sorted order go to train.
    FirstN,
    /// Whole sequences per side.
    Sequence,
    /// Id lists read from --train-list / --test-list.
    Explicit,
}

#[derive(Args)]
struct SplitArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    train_count: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    train_seq: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    test_seq: Option<Vec<String>>,
    /// File with one train id per line.
    #[arg(long)]
    train_list: Option<PathBuf>,
    /// File with one test id per line.
    #[arg(long)]
    test_list: Option<PathBuf>,
}

#[derive(Args)]
struct PlanArgs {
    /// Leakage step size in percent (steps 0, s, 2s, ..., 100).
    #[arg(long, conflicts_with = "percents")]
    step: Option<u32>,
    /// Explicit comma-separated percents, strictly increasing.
    #[arg(long, value_delimiter = ',')]
    percents: Option<Vec<u32>>,
    /// Repetitions per step.
    #[arg(long)]
    reps: Option<u32>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MockProfile {
    /// No pre-existing leakage.
    Clean,
    /// Split already shares most of its test content with train.
    Leaky,
}

#[derive(Args)]
struct RunArgs {
    /// Use the closed-form mock detector.
    #[arg(long, value_enum, conflicts_with = "adapter")]
    mock: Option<MockProfile>,
    /// Override the mock's pre-existing leakage level in [0,1].
    #[arg(long)]
    lambda: Option<f64>,
    /// Override the mock's curve exponent.
    #[arg(long)]
    alpha: Option<f64>,
    /// Override the mock's jitter amplitude.
    #[arg(long)]
    noise: Option<f64>,
    /// Override the mock's seed.
    #[arg(long)]
    mock_seed: Option<u64>,
    /// External command; must contain {split_manifest} and {out_metrics}.
    #[arg(long)]
    adapter: Option<String>,
    /// Per-run timeout for the adapter, in seconds.
    #[arg(long)]
    timeout_secs: Option<f64>,
    /// Allow several adapter runs at once.
    #[arg(long)]
    parallel_safe: bool,
    /// Execute at most this many pending runs.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CombinationArg {
    AnyStepAnyMetric,
    AnyStepAllMetrics,
    AllSteps,
}

#[derive(Args)]
struct AuditArgs {
    /// Relative-increase threshold (fraction, 0.05 = 5%).
    #[arg(long)]
    threshold: Option<f64>,
    /// Leakage percents whose rate is checked.
    #[arg(long, value_delimiter = ',')]
    watch_percents: Option<Vec<u32>>,
    /// Metrics whose rate is checked (precision, recall, map50, f1).
    #[arg(long, value_delimiter = ',')]
    watch_metrics: Option<Vec<Metric>>,
    #[arg(long, value_enum)]
    combination: Option<CombinationArg>,
    /// Minimum successful repetitions per step (default: 80% of planned).
    #[arg(long)]
    quorum: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Markdown,
    Json,
    Csv,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, value_enum, default_value = "markdown")]
    format: ReportFormat,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    let cfg = ToolConfig::load(cli.config.as_deref())?;
    let jobs = cli.jobs.or(cfg.run.jobs);
    if jobs == Some(0) {
        bail!("--jobs must be at least 1");
    }
    if let Some(n) = jobs {
        // best effort: a global pool may already exist in tests
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let ctx = Ctx { work_dir: cli.work_dir, cfg, jobs };
    match cli.command {
        Command::Hash(a) => cmd_hash(&ctx, a),
        Command::Scan(a) => cmd_scan(&ctx, a),
        Command::Split(a) => cmd_split(&ctx, a),
        Command::Plan(a) => cmd_plan(&ctx, a),
        Command::Run(a) => cmd_run(&ctx, a),
        Command::Audit(a) => cmd_audit(&ctx, a),
        Command::Report(a) => cmd_report(&ctx, a),
    }
}

struct Ctx {
    work_dir: PathBuf,
    cfg: ToolConfig,
    jobs: Option<usize>,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.work_dir.join(name)
    }

    fn read_json<T: DeserializeOwned>(&self, name: &str, hint: &str) -> Result<T> {
        let path = self.path(name);
        let text = fs::read_to_string(&path)
            .with_context(|| format!("cannot read {} (run `{hint}` first)", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("malformed {}", path.display()))
    }

    fn write(&self, name: &str, body: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.work_dir)
            .with_context(|| format!("cannot create work dir {}", self.work_dir.display()))?;
        let path = self.path(name);
        fs::write(&path, body).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }

    fn split(&self) -> Result<SplitSpec> {
        self.read_json(SPLIT_FILE, "split")
    }

    /// Manifest from --root when given, else the one saved by `split`.
    fn manifest(&self, args: &DatasetArgs) -> Result<DatasetManifest> {
        if args.root.is_some() || self.cfg.dataset.root.is_some() {
            load_dataset(self, args)
        } else {
            self.read_json(MANIFEST_FILE, "split --root <DIR>")
        }
    }
}

fn load_dataset(ctx: &Ctx, args: &DatasetArgs) -> Result<DatasetManifest> {
    let Some(root) = args.root.clone().or_else(|| ctx.cfg.dataset.root.clone()) else {
        bail!("no dataset root: pass --root or set [dataset] root");
    };
    if !root.exists() {
        bail!("dataset root {} does not exist", root.display());
    }
    let root = root.canonicalize().with_context(|| format!("cannot resolve {}", root.display()))?;
    let format = match (args.format, ctx.cfg.dataset.format.as_deref()) {
        (Some(FormatArg::Kitti), _) => ManifestFormat::KittiDir,
        (Some(FormatArg::Manifest), _) => ManifestFormat::ManifestJson,
        (None, Some("kitti")) => ManifestFormat::KittiDir,
        (None, Some("manifest")) => ManifestFormat::ManifestJson,
        (None, Some(other)) => bail!("unknown dataset format {other:?} (kitti or manifest)"),
        (None, None) if root.is_file() || root.join(MANIFEST_FILE).is_file() => ManifestFormat::ManifestJson,
        (None, None) => ManifestFormat::KittiDir,
    };
    let mut options = LoadOptions::default();
    if let Some(classes) = args.classes.clone().or_else(|| ctx.cfg.dataset.classes.clone()) {
        options.class_names = classes;
    }
    let manifest = load_manifest(&root, format, &options)
        .with_context(|| format!("cannot load dataset at {}", root.display()))?;
    Ok(manifest)
}

fn side_ids(ctx: &Ctx, manifest: &DatasetManifest, side: Side) -> Result<BTreeSet<String>> {
    if side == Side::All {
        return Ok(manifest.ids());
    }
    let split = ctx.split()?;
    Ok(if side == Side::Train { split.train_ids } else { split.test_ids })
}

fn cmd_hash(ctx: &Ctx, args: HashArgs) -> Result<u8> {
    let manifest = ctx.manifest(&args.dataset)?;
    let ids = side_ids(ctx, &manifest, args.side)?;
    let hashes = hash_corpus(&manifest, &ids, &FsImageLoader::default())?;
    if !hashes.failures.is_empty() {
        eprintln!("warning: {} image(s) could not be hashed and were omitted", hashes.failures.len());
    }
    let out = args.out.unwrap_or_else(|| ctx.path(HASHES_FILE));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
    }
    let file = fs::File::create(&out).with_context(|| format!("cannot write {}", out.display()))?;
    write_hash_csv(file, &hashes.bits())?;
    println!("hashed {} of {} images -> {}", hashes.hashes.len(), ids.len(), out.display());
    Ok(0)
}

fn cmd_scan(ctx: &Ctx, args: ScanArgs) -> Result<u8> {
    let split = ctx.split()?;
    let (train, test) = match &args.hashes {
        Some(path) => {
            let file = fs::File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
            let all = read_hash_csv(file)?;
            let pick = |ids: &BTreeSet<String>| {
                all.iter().filter(|(k, _)| ids.contains(*k)).map(|(k, v)| (k.clone(), *v)).collect()
            };
            (pick(&split.train_ids), pick(&split.test_ids))
        }
        None => {
            let manifest = ctx.manifest(&args.dataset)?;
            let hash_side = |ids: &BTreeSet<String>| -> Result<_> {
                if ids.is_empty() {
                    return Ok(Default::default());
                }
                let h = hash_corpus(&manifest, ids, &FsImageLoader::default())?;
                if !h.failures.is_empty() {
                    eprintln!("warning: {} image(s) could not be hashed and were omitted", h.failures.len());
                }
                Ok(h.bits())
            };
            (hash_side(&split.train_ids)?, hash_side(&split.test_ids)?)
        }
    };

    let sc = &ctx.cfg.scan;
    let mut opts = ScanOptions {
        max_dist: args.max_dist.or(sc.max_dist).unwrap_or(DEFAULT_MAX_DIST),
        ..Default::default()
    };
    if let Some(cap) = args.pair_cap.or(sc.pair_cap) {
        opts.pair_cap = cap;
    }
    if let Some(bands) = args.bands.or(sc.bands) {
        opts.method = ScanMethod::Index { bands };
    }
    let mut report = cross_split_scan(&train, &test, &opts)?;
    report.split_ref = Some(split.content_hash());
    ctx.write(SIMILARITY_JSON, &report.to_json())?;
    let md = report.to_markdown(args.even_buckets);
    ctx.write(SIMILARITY_MD, &md)?;
    print!("{md}");
    Ok(0)
}

fn read_id_list(path: &Path) -> Result<BTreeSet<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read id list {}", path.display()))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

fn cmd_split(ctx: &Ctx, args: SplitArgs) -> Result<u8> {
    let manifest = load_dataset(ctx, &args.dataset)?;
    let sc = &ctx.cfg.split;
    let strategy = match (args.strategy, sc.strategy.as_deref()) {
        (Some(s), _) => s,
        (None, Some(name)) => StrategyArg::from_str(name, true)
            .map_err(|_| anyhow::anyhow!("unknown split strategy {name:?}"))?,
        (None, None) => StrategyArg::Ratio,
    };
    let strategy = match strategy {
        StrategyArg::Ratio => SplitStrategy::ByRatio { ratio: args.ratio.or(sc.ratio).unwrap_or(0.7) },
        StrategyArg::FirstN => SplitStrategy::FirstN {
            train_count: args.train_count.or(sc.train_count).context("first-n needs --train-count")?,
        },
        StrategyArg::Sequence => SplitStrategy::BySequence {
            train: args
                .train_seq
                .or_else(|| sc.train_sequences.clone())
                .context("sequence strategy needs --train-seq")?,
            test: args.test_seq.or_else(|| sc.test_sequences.clone()),
        },
        StrategyArg::Explicit => {
            let train = args.train_list.or_else(|| sc.train_list.clone()).context("explicit needs --train-list")?;
            let test = args.test_list.or_else(|| sc.test_list.clone()).context("explicit needs --test-list")?;
            SplitStrategy::Explicit { train_ids: read_id_list(&train)?, test_ids: read_id_list(&test)? }
        }
    };

    let split = make_split(&manifest, &strategy)?;
    let check = validate_split(&manifest, &split);
    if !check.valid {
        bail!("invalid split: {}", check.problems.join("; "));
    }
    ctx.write(MANIFEST_FILE, &serde_json::to_string_pretty(&manifest)?)?;
    ctx.write(SPLIT_FILE, &split.to_json())?;
    println!(
        "{}: {} train / {} test images (coverage {:.1}%), split {}",
        manifest.name,
        check.train_count,
        check.test_count,
        check.coverage * 100.0,
        &split.content_hash()[..12]
    );
    Ok(0)
}

fn cmd_plan(ctx: &Ctx, args: PlanArgs) -> Result<u8> {
    let split = ctx.split()?;
    let pc = &ctx.cfg.plan;
    let percents = match (args.percents, args.step) {
        (Some(p), _) => p,
        (None, Some(step)) => percents_with_step(step),
        (None, None) => match (&pc.percents, pc.step) {
            (Some(p), _) => p.clone(),
            (None, Some(step)) => percents_with_step(step),
            (None, None) => default_percents(),
        },
    };
    let reps = args.reps.or(pc.repetitions).unwrap_or(10);
    let seed = args.seed.or(pc.seed).unwrap_or(42);
    let plan = make_leakage_plan(&split, &percents, reps, seed)?;
    ctx.write(PLAN_FILE, &plan.to_json())?;

    println!("| Leakage | Leaked test images | Train size |");
    println!("|---:|---:|---:|");
    for &p in &plan.step_percents {
        println!("| {p}% | {} | {} |", leak_count(split.test_ids.len(), p), split.train_ids.len());
    }
    println!("{} steps x {} repetitions, seed {seed}", plan.step_percents.len(), reps);
    Ok(0)
}

enum Detector {
    Mock(MockProfile),
    Adapter(String),
}

fn cmd_run(ctx: &Ctx, args: RunArgs) -> Result<u8> {
    let split = ctx.split()?;
    let plan: LeakagePlan = ctx.read_json(PLAN_FILE, "plan")?;
    let rc = &ctx.cfg.run;

    // flags first, then config; a mock flag beats a configured adapter and vice versa
    let from_config = || -> Result<Option<Detector>> {
        if let Some(name) = rc.mock.as_deref() {
            let profile =
                MockProfile::from_str(name, true).map_err(|_| anyhow::anyhow!("unknown mock profile {name:?}"))?;
            return Ok(Some(Detector::Mock(profile)));
        }
        Ok(rc.adapter.clone().map(Detector::Adapter))
    };
    let detector = match (args.mock, args.adapter.clone()) {
        (Some(profile), _) => Detector::Mock(profile),
        (None, Some(cmd)) => Detector::Adapter(cmd),
        (None, None) => from_config()?.context("choose a detector: --mock clean|leaky or --adapter <COMMAND>")?,
    };
    let mode = match detector {
        Detector::Mock(profile) => {
            let mut p = match profile {
                MockProfile::Clean => MockParams::clean(),
                MockProfile::Leaky => MockParams::leaky(),
            };
            if let Some(l) = args.lambda.or(rc.lambda) {
                p.lambda = l;
            }
            if let Some(a) = args.alpha.or(rc.alpha) {
                p.alpha = a;
            }
            if let Some(n) = args.noise.or(rc.noise) {
                p.noise_eps = n;
            }
            if let Some(s) = args.mock_seed.or(rc.mock_seed) {
                p.seed = s;
            }
            RunMode::Mock(p)
        }
        Detector::Adapter(command) => {
            let mut adapter = AdapterConfig::new(command, args.timeout_secs.or(rc.timeout_secs).unwrap_or(86_400.0));
            adapter.parallel_safe = args.parallel_safe || rc.parallel_safe.unwrap_or(false);
            let manifest: DatasetManifest = ctx.read_json(MANIFEST_FILE, "split")?;
            RunMode::External { adapter, manifest }
        }
    };

    let mut config = RunConfig::in_dir(&ctx.work_dir);
    config.jobs = ctx.jobs;
    config.limit = args.limit;
    let outcome = run_plan(&plan, &split, &mode, &config)?;
    for f in &outcome.failures {
        eprintln!("warning: run {}% rep {} failed: {}", f.percent, f.repetition, f.error.lines().next().unwrap_or(""));
    }
    println!(
        "executed {} runs ({} failed); {} of {} planned runs recorded in {}",
        outcome.executed,
        outcome.failures.len(),
        outcome.records.len(),
        plan.steps.len(),
        config.journal_path.display()
    );
    Ok(0)
}

fn cmd_audit(ctx: &Ctx, args: AuditArgs) -> Result<u8> {
    let split = ctx.split()?;
    let plan: LeakagePlan = ctx.read_json(PLAN_FILE, "plan")?;
    let manifest: Option<DatasetManifest> = ctx.read_json(MANIFEST_FILE, "split").ok();
    let (records, failures) = load_records(&ctx.path("runs.jsonl"))?;
    if records.is_empty() {
        bail!("no run records in {} (run `run` first)", ctx.path("runs.jsonl").display());
    }
    let similarity: Option<SimilarityReport> = if ctx.path(SIMILARITY_JSON).is_file() {
        Some(ctx.read_json(SIMILARITY_JSON, "scan")?)
    } else {
        None
    };

    let vc = &ctx.cfg.verdict;
    let defaults = VerdictRule::default();
    let watched_metrics = match (args.watch_metrics, &vc.watched_metrics) {
        (Some(m), _) => m,
        (None, Some(names)) => names
            .iter()
            .map(|n| n.parse::<Metric>().map_err(anyhow::Error::msg))
            .collect::<Result<_>>()?,
        (None, None) => defaults.watched_metrics,
    };
    let combination = match (args.combination, vc.combination.as_deref()) {
        (Some(c), _) => c,
        (None, Some(name)) => CombinationArg::from_str(name, true)
            .map_err(|_| anyhow::anyhow!("unknown combination {name:?}"))?,
        (None, None) => CombinationArg::AnyStepAnyMetric,
    };
    let rule = VerdictRule {
        threshold: args.threshold.or(vc.threshold).unwrap_or(defaults.threshold),
        watched_percents: args
            .watch_percents
            .or_else(|| vc.watched_percents.clone())
            .unwrap_or(defaults.watched_percents),
        watched_metrics,
        combination: match combination {
            CombinationArg::AnyStepAnyMetric => Combination::AnyStepAnyMetric,
            CombinationArg::AnyStepAllMetrics => Combination::AnyStepAllMetrics,
            CombinationArg::AllSteps => Combination::AllSteps,
        },
    };
    let config = AuditConfig { rule, quorum: args.quorum.or(vc.quorum).unwrap_or(default_quorum(plan.repetitions)) };

    let dataset = manifest.as_ref().map_or("dataset", |m| m.name.as_str());
    let report = build_report(dataset, &split, &plan, &records, &failures, &config, similarity)?;
    report.write_all(&ctx.work_dir).context("cannot write audit outputs")?;

    let v = &report.verdict;
    println!("verdict: {}", v.label());
    for t in &v.triggering_steps {
        println!("  {}% {}: {:+.2}%", t.percent, t.metric, t.rate * 100.0);
    }
    Ok(v.exit_code() as u8)
}

fn cmd_report(ctx: &Ctx, args: ReportArgs) -> Result<u8> {
    let report: AuditReport = ctx.read_json("audit.json", "audit")?;
    match args.format {
        ReportFormat::Markdown => print!("{}", report.to_markdown()),
        ReportFormat::Json => println!("{}", report.to_json()),
        ReportFormat::Csv => print!("{}", report.steps_csv()),
    }
    Ok(0)
}
