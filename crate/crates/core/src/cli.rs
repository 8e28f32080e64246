//! The `rbpasta` command line. Data goes to stdout or `--out`; diagnostics
//! and the one-line JSON error go to stderr.

use std::ffi::OsString;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use tracing_subscriber::EnvFilter;

use crate::attention::FusionMode;
use crate::classes::{load_class_file, partition_by_rarity_with, ClassPartition, ClassTable, DEFAULT_RARITY_THRESHOLD};
use crate::error::{Error, Result};
use crate::eval::{diff_reports, evaluate_at, format_table, Detection, EvalReport, GtPair, Setting, DEFAULT_IOU_THRESHOLD};
use crate::io::{read_json, read_jsonl, to_json_pretty, to_jsonl, write_file, InstanceRecord};
use crate::pipeline::score_instances;
use crate::rules::{
    aggregate_annotations, all_ones, booleanize, load_annotations, validate_rules, RuleMatrix, DEFAULT_BOOL_THRESHOLD,
};
use crate::service::{serve, Session, SessionConfig};
use crate::synth::{generate_benchmark, SynthConfig};
use crate::trainer::{train, Checkpoint, ModelParams, RulesAt, TrainConfig};

/// Environment variable holding the tracing filter, e.g. `RBP_LOG=debug`.
pub const LOG_ENV: &str = "RBP_LOG";

#[derive(Debug, Parser)]
#[command(name = "rbpasta", version, about = "Rule-modulated part attention for HOI detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build, convert, check and inspect rule matrices.
    #[command(subcommand)]
    Rules(RulesCommand),
    /// Train head (and optionally attention) parameters, writing a checkpoint.
    Train(TrainArgs),
    /// Score instance records into detections (JSON lines).
    Score(ScoreArgs),
    /// Evaluate detections against ground truth.
    Eval(EvalArgs),
    /// Per-class AP deltas between two evaluation reports.
    Diff(DiffArgs),
    /// Write a seeded synthetic benchmark with planted rules.
    Synth(SynthArgs),
    /// Start the local HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct RarityArgs {
    /// Classes with fewer training instances than this are rare.
    #[arg(long, default_value_t = DEFAULT_RARITY_THRESHOLD)]
    rarity_threshold: u32,
    /// Keep `no_interaction` classes out of the rare set.
    #[arg(long)]
    exclude_no_interaction: bool,
}

impl RarityArgs {
    fn partition(&self, table: &ClassTable) -> ClassPartition {
        partition_by_rarity_with(table, self.rarity_threshold, self.exclude_no_interaction)
    }
}

#[derive(Debug, Subcommand)]
enum RulesCommand {
    /// Average annotator labels (CSV) into a decimal rules file.
    Aggregate {
        #[arg(long)]
        classes: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[command(flatten)]
        rarity: RarityArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Threshold a decimal rules file into a boolean one.
    Booleanize {
        #[arg(long)]
        rules: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BOOL_THRESHOLD)]
        threshold: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// All-ones control rules for every class.
    Allones {
        #[arg(long)]
        classes: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a rules file against the class table; exits nonzero on violations.
    Validate {
        #[arg(long)]
        rules: PathBuf,
        #[arg(long)]
        classes: PathBuf,
        #[command(flatten)]
        rarity: RarityArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rules as a classes x parts CSV matrix.
    Heatmap {
        #[arg(long)]
        rules: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    classes: PathBuf,
    /// Training instance records (JSON lines).
    #[arg(long)]
    train: PathBuf,
    /// Rules file; all ones when omitted.
    #[arg(long)]
    rules: Option<PathBuf>,
    #[command(flatten)]
    rarity: RarityArgs,
    /// JSON file with TrainConfig fields; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    train_attention: bool,
    #[arg(long, value_enum)]
    rules_at: Option<RulesAt>,
    /// Hidden width of each part's attention predictor.
    #[arg(long, default_value_t = crate::experiment::DEFAULT_HIDDEN)]
    hidden: usize,
    /// Checkpoint path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    instances: PathBuf,
    /// Rules file; without it attentions are used unmodulated.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Class table used to fill missing non-rare rule rows with ones.
    #[arg(long)]
    classes: Option<PathBuf>,
    #[command(flatten)]
    rarity: RarityArgs,
    #[arg(long, value_enum, default_value_t = FusionMode::Mean)]
    fusion: FusionMode,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SettingChoice {
    Default,
    Ko,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    classes: PathBuf,
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, value_enum, default_value_t = SettingChoice::Default)]
    setting: SettingChoice,
    #[command(flatten)]
    rarity: RarityArgs,
    #[arg(long, default_value_t = DEFAULT_IOU_THRESHOLD)]
    iou_threshold: f64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Row label in table output.
    #[arg(long, default_value = "model")]
    name: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DiffArgs {
    /// Baseline report.
    #[arg(long)]
    a: PathBuf,
    /// Compared report; deltas are b minus a.
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// JSON file with SynthConfig fields; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_classes: Option<usize>,
    #[arg(long)]
    n_rare: Option<usize>,
    #[arg(long)]
    shots_per_rare: Option<u32>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    rule_sparsity: Option<f64>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    signal_strength: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    classes: PathBuf,
    #[arg(long)]
    instances: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Decimal or boolean rules backing the fixed variants.
    #[arg(long)]
    rules: Option<PathBuf>,
    #[command(flatten)]
    rarity: RarityArgs,
    #[arg(long, value_enum, default_value_t = FusionMode::Mean)]
    fusion: FusionMode,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long, default_value_t = 7878)]
    port: u16,
    /// Evaluation worker pool size; defaults to the available cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Where the save endpoint writes the custom rules.
    #[arg(long)]
    save: Option<PathBuf>,
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            emit_error("usage", e.to_string().trim_end());
            return 2;
        }
    };
    init_logging();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            emit_error(e.kind(), &e.to_string());
            1
        }
    }
}

fn init_logging() {
    let filter = EnvFilter::try_from_env(LOG_ENV).unwrap_or_else(|_| EnvFilter::new("warn"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn emit_error(kind: &str, message: &str) {
    eprintln!("{}", json!({ "error": kind, "message": message }));
}

fn emit(out: Option<&Path>, contents: &str) -> Result<()> {
    match out {
        Some(path) => write_file(path, contents),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(contents.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Rules(cmd) => rules(cmd),
        Command::Train(args) => train_cmd(args),
        Command::Score(args) => score_cmd(args),
        Command::Eval(args) => eval_cmd(args),
        Command::Diff(args) => {
            let a: EvalReport = read_json(&args.a)?;
            let b: EvalReport = read_json(&args.b)?;
            emit(args.out.as_deref(), &to_json_pretty(&diff_reports(&a, &b)?))
        }
        Command::Synth(args) => synth_cmd(args),
        Command::Serve(args) => serve_cmd(args),
    }
}

fn rules(cmd: RulesCommand) -> Result<()> {
    match cmd {
        RulesCommand::Aggregate {
            classes,
            annotations,
            rarity,
            out,
        } => {
            let table = load_class_file(&classes)?;
            let partition = rarity.partition(&table);
            let file = std::fs::File::open(&annotations).map_err(|e| Error::io(annotations.display(), e))?;
            let sets = load_annotations(file, &annotations.display().to_string())?;
            let m = aggregate_annotations(&sets, &table, &partition)?;
            emit(out.as_deref(), &m.to_json())
        }
        RulesCommand::Booleanize { rules, threshold, out } => {
            let m = booleanize(&RuleMatrix::load(&rules)?, threshold)?;
            emit(out.as_deref(), &m.to_json())
        }
        RulesCommand::Allones { classes, out } => emit(out.as_deref(), &all_ones(&load_class_file(&classes)?).to_json()),
        RulesCommand::Validate {
            rules,
            classes,
            rarity,
            out,
        } => {
            let table = load_class_file(&classes)?;
            let report = validate_rules(&RuleMatrix::load(&rules)?, &rarity.partition(&table));
            emit(out.as_deref(), &to_json_pretty(&report))?;
            if report.ok {
                Ok(())
            } else {
                Err(Error::Domain(format!("{} rule violations in {}", report.violations.len(), rules.display())))
            }
        }
        RulesCommand::Heatmap { rules, out } => emit(out.as_deref(), &RuleMatrix::load(&rules)?.heatmap_csv()),
    }
}

/// Loads `path` (or all ones) and fills missing non-rare rows.
fn load_rules(path: Option<&Path>, table: &ClassTable, partition: &ClassPartition) -> Result<RuleMatrix> {
    let Some(path) = path else {
        return Ok(all_ones(table));
    };
    let mut m = RuleMatrix::load(path)?;
    m.fill_missing_non_rare(partition);
    Ok(m)
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(p) => read_json::<TrainConfig>(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.iterations {
        config.iterations = v;
    }
    if let Some(v) = args.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = args.rules_at {
        config.rules_at = v;
    }
    config.train_attention |= args.train_attention;
    config.check()?;

    let table = load_class_file(&args.classes)?;
    let partition = args.rarity.partition(&table);
    let rules = load_rules(args.rules.as_deref(), &table, &partition)?;
    let records: Vec<InstanceRecord> = read_jsonl(&args.train)?;
    let first = records
        .first()
        .ok_or_else(|| Error::EmptyPool(format!("{} has no training records", args.train.display())))?;
    let feature_dim = first.features()?.feature_dim();
    let ids = table.ids();
    let examples = records.iter().map(|r| r.labeled(&ids)).collect::<Result<Vec<_>>>()?;
    let init = ModelParams::seeded(feature_dim, first.object_feature.len(), args.hidden, &ids, config.seed);
    let (params, report) = train(&examples, &config, &rules, &init)?;
    tracing::info!(iterations = config.iterations, final_loss = ?report.final_loss, "training finished");
    let checkpoint = Checkpoint {
        params,
        seed: config.seed,
        iterations: config.iterations,
    };
    emit(args.out.as_deref(), &to_json_pretty(&checkpoint))
}

fn score_cmd(args: ScoreArgs) -> Result<()> {
    let checkpoint: Checkpoint = read_json(&args.checkpoint)?;
    checkpoint.params.check()?;
    let rules = match (&args.rules, &args.classes) {
        (None, _) => None,
        (Some(r), None) => Some(RuleMatrix::load(r)?),
        (Some(r), Some(c)) => {
            let table = load_class_file(c)?;
            Some(load_rules(Some(r), &table, &args.rarity.partition(&table))?)
        }
    };
    let records: Vec<InstanceRecord> = read_jsonl(&args.instances)?;
    let dets = score_instances(&records, &checkpoint.params, rules.as_ref(), args.fusion)?;
    emit(args.out.as_deref(), &to_jsonl(&dets))
}

fn eval_cmd(args: EvalArgs) -> Result<()> {
    let table = load_class_file(&args.classes)?;
    let partition = args.rarity.partition(&table);
    let dets: Vec<Detection> = read_jsonl(&args.detections)?;
    let gts: Vec<GtPair> = read_jsonl(&args.gt)?;
    let run = |s: Setting| evaluate_at(&dets, &gts, &table, &partition, s, args.iou_threshold);
    let (def, ko) = match args.setting {
        SettingChoice::Default => (Some(run(Setting::Default)?), None),
        SettingChoice::Ko => (None, Some(run(Setting::KnownObject)?)),
        SettingChoice::Both => (Some(run(Setting::Default)?), Some(run(Setting::KnownObject)?)),
    };
    let text = match args.format {
        Format::Table => format_table(&[(args.name.as_str(), def.as_ref(), ko.as_ref())]),
        Format::Json => match (def, ko) {
            (Some(d), Some(k)) => to_json_pretty(&json!({ "default": d, "ko": k })),
            (Some(r), None) | (None, Some(r)) => r.to_json(),
            (None, None) => unreachable!("at least one setting is evaluated"),
        },
    };
    emit(args.out.as_deref(), &text)
}

fn synth_cmd(args: SynthArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(p) => read_json::<SynthConfig>(p)?,
        None => SynthConfig::default(),
    };
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.n_classes {
        config.n_classes = v;
    }
    if let Some(v) = args.n_rare {
        config.n_rare = v;
    }
    if let Some(v) = args.shots_per_rare {
        config.shots_per_rare = v;
    }
    if let Some(v) = args.feature_dim {
        config.feature_dim = v;
    }
    if let Some(v) = args.rule_sparsity {
        config.rule_sparsity = v;
    }
    if let Some(v) = args.noise_std {
        config.noise_std = v;
    }
    if let Some(v) = args.signal_strength {
        config.signal_strength = v;
    }
    let ds = generate_benchmark(&config)?;
    ds.write_to(&args.out)?;
    tracing::info!(dir = %args.out.display(), classes = ds.table.len(), "synthetic benchmark written");
    Ok(())
}

fn serve_cmd(args: ServeArgs) -> Result<()> {
    let table = load_class_file(&args.classes)?;
    let partition = args.rarity.partition(&table);
    let checkpoint: Checkpoint = read_json(&args.checkpoint)?;
    checkpoint.params.check()?;
    let rules = args.rules.as_deref().map(RuleMatrix::load).transpose()?;
    let workers = args
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let session = Session::new(SessionConfig {
        records: read_jsonl(&args.instances)?,
        gts: read_jsonl(&args.gt)?,
        table,
        partition,
        params: checkpoint.params,
        rules,
        fusion: args.fusion,
        workers,
        save_path: args.save,
    })?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::io("<runtime>", e))?;
    runtime.block_on(serve(session, SocketAddr::new(args.host, args.port)))
}
