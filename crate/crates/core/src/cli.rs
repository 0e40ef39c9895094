//! The `botwatch` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric divergence.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::crawler::{self, Clock, CrawlState, FixtureSource, RunOptions, SimulatedClock, SystemClock};
use crate::features::{extract_all, extract_features};
use crate::ingest::{self, Dataset};
use crate::metrics::MetricsError;
use crate::mlp::{self, MlpError};
use crate::normalize::{self, OutOfRangePolicy, Scaling};
use crate::synth;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Diverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Diverged(_) => EXIT_DIVERGED,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Diverged(m) => m,
        }
    }
}

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

/// `println!` for command output. A reader that has gone away (`| head`)
/// ends the command quietly instead of panicking.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        if let Err(e) = writeln!(std::io::stdout().lock(), $($arg)*) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                return Ok(());
            }
            return Err(data(e));
        }
    }};
}

impl From<MlpError> for CliError {
    fn from(e: MlpError) -> Self {
        match e {
            MlpError::NonFiniteLoss { .. } => CliError::Diverged(e.to_string()),
            MlpError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            MlpError::EmptyBatch | MlpError::Metrics(MetricsError::EmptyInput) => {
                CliError::Data(format!("EmptyInput: {e}"))
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "botwatch", version, about = "Bot account detection pipeline")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice in the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic dataset.
    Synth(SynthArgs),
    /// Crawl a fixture account source under the request budget.
    Crawl(CrawlArgs),
    /// List accounts whose follower/friend ratio reaches a threshold.
    Flag(FlagArgs),
    /// Shuffle and split a labeled dataset into train and test files.
    Split(SplitArgs),
    /// Extract and normalize features into the training CSV.
    Build(BuildArgs),
    /// Train a model on a normalized CSV.
    Train(TrainArgs),
    /// Evaluate a model on a normalized CSV.
    Eval(EvalArgs),
    /// Classify account JSON documents.
    Predict(PredictArgs),
    /// Train one model per learning rate and compare accuracies.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 860)]
    pub n: usize,
    #[arg(long)]
    pub bot_fraction: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CrawlArgs {
    #[arg(long)]
    pub fixture_dir: PathBuf,
    /// Starting account id (repeatable). Ignored with --resume.
    #[arg(long = "seed-account")]
    pub seed_accounts: Vec<String>,
    /// Output dataset (NDJSON), rewritten at the end of every invocation.
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint file [default: <out>.checkpoint.json]
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Continue from the checkpoint instead of starting fresh.
    #[arg(long)]
    pub resume: bool,
    /// Stop after this many steps.
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub max_requests: Option<u32>,
    #[arg(long)]
    pub window_secs: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Use simulated time: budget waits complete instantly.
    #[arg(long)]
    pub simulated_clock: bool,
}

#[derive(Debug, Args)]
pub struct FlagArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Minimum follower/friend ratio [default: 20]
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 760)]
    pub train_size: usize,
    #[arg(long)]
    pub train_out: PathBuf,
    #[arg(long)]
    pub test_out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScalingArg {
    LogRatio,
    MinMax,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub csv_out: PathBuf,
    /// Where to write fitted statistics [default: sidecar next to the CSV]
    #[arg(long)]
    pub stats_out: Option<PathBuf>,
    /// Apply previously fitted statistics instead of fitting on this dataset.
    #[arg(long)]
    pub stats_in: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub scaling: Option<ScalingArg>,
    /// Fail on values below the fitted minimum instead of clamping.
    #[arg(long)]
    pub reject_out_of_range: bool,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub passes: Option<usize>,
    /// Hidden layer widths, comma separated (e.g. 25 or 10,10).
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// Rows per gradient step, or `full`.
    #[arg(long, value_parser = parse_batch)]
    pub batch_size: Option<BatchSize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchSize(pub Option<usize>);

fn parse_batch(text: &str) -> Result<BatchSize, String> {
    crate::mlp::parse_batch_size(text).map(BatchSize)
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub csv: PathBuf,
    #[arg(long)]
    pub model_out: PathBuf,
    /// Per-epoch loss/accuracy TSV [default: <model_out>.trace.tsv]
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub csv: PathBuf,
    /// Also write the report as JSON here.
    #[arg(long)]
    pub json_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Normalization statistics fitted on the training data.
    #[arg(long)]
    pub stats: PathBuf,
    /// Account JSON documents to classify.
    #[arg(required = true)]
    pub accounts: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub train_csv: PathBuf,
    #[arg(long)]
    pub eval_csv: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.005,0.01,0.02,0.05,0.1")]
    pub rates: Vec<f64>,
    /// Plot-ready `rate<TAB>accuracy<TAB>diverged` table.
    #[arg(long)]
    pub tsv_out: Option<PathBuf>,
    #[command(flatten)]
    pub flags: TrainFlags,
}

/// Parses `args` (including the program name), runs the command, prints
/// any error to stderr and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> CliResult {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(CliError::Usage)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    match cli.command {
        Command::Synth(args) => cmd_synth(&config, args),
        Command::Crawl(args) => cmd_crawl(&config, args),
        Command::Flag(args) => cmd_flag(&config, args),
        Command::Split(args) => cmd_split(&config, args),
        Command::Build(args) => cmd_build(&config, args),
        Command::Train(args) => cmd_train(&config, args),
        Command::Eval(args) => cmd_eval(args),
        Command::Predict(args) => cmd_predict(&config, args),
        Command::Sweep(args) => cmd_sweep(&config, args),
    }
}

fn write_file(path: &Path, contents: &str) -> CliResult {
    std::fs::write(path, contents).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_dataset(path: &Path) -> CliResult<Dataset> {
    ingest::load_dataset(path).map_err(data)
}

fn cmd_synth(config: &RunConfig, args: SynthArgs) -> CliResult {
    let fraction = args.bot_fraction.unwrap_or(config.synth.bot_fraction);
    let dataset = synth::generate(args.n, fraction, &config.synth.profile, config.seed).map_err(|e| match e {
        synth::SynthError::InvalidProfile { .. } => data(e),
        _ => CliError::Usage(e.to_string()),
    })?;
    ingest::save_dataset(&dataset, &args.out).map_err(data)?;
    out!("wrote {} accounts to {}", dataset.len(), args.out.display());
    Ok(())
}

fn cmd_crawl(config: &RunConfig, args: CrawlArgs) -> CliResult {
    let mut policy = config.rate_limit;
    if let Some(max) = args.max_requests {
        policy.max_requests = max;
    }
    if let Some(secs) = args.window_secs {
        policy.window =
            Duration::try_from_secs_f64(secs).map_err(|e| CliError::Usage(format!("--window-secs: {e}")))?;
    }
    policy.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let checkpoint_path = args.checkpoint.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".checkpoint.json");
        PathBuf::from(p)
    });
    let mut state = if args.resume {
        crawler::resume(&checkpoint_path).map_err(data)?
    } else {
        if args.seed_accounts.is_empty() {
            return Err(CliError::Usage("at least one --seed-account is required".into()));
        }
        CrawlState::new(args.seed_accounts.iter().cloned())
    };
    let mut source = FixtureSource::open(&args.fixture_dir).map_err(data)?;

    let options = RunOptions {
        max_steps: args.max_steps.unwrap_or(u64::MAX),
        checkpoint_every: args.checkpoint_every.unwrap_or(config.crawl.checkpoint_every),
        checkpoint_path: Some(checkpoint_path.clone()),
    };
    let clock: Box<dyn Clock> = if args.simulated_clock {
        let start = state
            .requests_log
            .back()
            .copied()
            .into_iter()
            .chain(state.wait_until)
            .max()
            .unwrap_or(0);
        Box::new(SimulatedClock::new(start))
    } else {
        Box::new(SystemClock)
    };
    let steps = crawler::continue_crawl(&mut state, &mut source, &policy, clock.as_ref(), &options).map_err(data)?;
    ingest::save_dataset(&state.collected, &args.out).map_err(data)?;
    out!(
        "{} steps, {} accounts collected, {} queued; checkpoint {}",
        steps,
        state.collected.len(),
        state.frontier.len(),
        checkpoint_path.display()
    );
    Ok(())
}

fn cmd_flag(config: &RunConfig, args: FlagArgs) -> CliResult {
    let dataset = load_dataset(&args.dataset)?;
    let threshold = args.threshold.unwrap_or(config.tff_threshold);
    let flagged = ingest::flag_by_tff(&dataset, threshold).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut out = String::new();
    for id in flagged {
        let record = dataset
            .records()
            .iter()
            .find(|r| r.account_id == id)
            .expect("flagged id exists");
        writeln!(out, "{id}\t{}", ingest::tff_ratio(record)).expect("string write");
    }
    if !out.is_empty() {
        out!("{}", out.trim_end_matches('\n'));
    }
    Ok(())
}

fn cmd_split(config: &RunConfig, args: SplitArgs) -> CliResult {
    let dataset = load_dataset(&args.dataset)?;
    let (train, test) = ingest::split(&dataset, args.train_size, config.seed).map_err(data)?;
    ingest::save_dataset(&train, &args.train_out).map_err(data)?;
    ingest::save_dataset(&test, &args.test_out).map_err(data)?;
    out!("train {} / test {}", train.len(), test.len());
    Ok(())
}

fn cmd_build(config: &RunConfig, args: BuildArgs) -> CliResult {
    let dataset = load_dataset(&args.dataset)?;
    let rows = extract_all(&dataset);
    let scaling = match args.scaling {
        Some(ScalingArg::LogRatio) => Scaling::LogRatio,
        Some(ScalingArg::MinMax) => Scaling::MinMax,
        None => config.normalize.scaling,
    };
    let policy = if args.reject_out_of_range {
        OutOfRangePolicy::Reject
    } else {
        config.normalize.out_of_range
    };
    let stats = match &args.stats_in {
        Some(path) => normalize::load_stats(path).map_err(data)?,
        None => {
            let features: Vec<_> = rows.iter().map(|(f, _)| *f).collect();
            normalize::fit(&features, scaling).map_err(data)?
        }
    };
    let summary = normalize::emit_csv(&rows, &stats, policy, &args.csv_out).map_err(data)?;
    let stats_out = args.stats_out.unwrap_or_else(|| normalize::sidecar_path(&args.csv_out));
    normalize::save_stats(&stats, &stats_out).map_err(data)?;
    out!(
        "wrote {} rows to {} ({} clamped values); stats {}",
        summary.rows,
        args.csv_out.display(),
        summary.clamped_values,
        stats_out.display()
    );
    Ok(())
}

fn apply_train_flags(config: &RunConfig, flags: &TrainFlags) -> mlp::MlpConfig {
    let mut mlp = config.mlp_config();
    if let Some(lr) = flags.learning_rate {
        mlp.learning_rate = lr;
    }
    if let Some(passes) = flags.passes {
        mlp.passes = passes;
    }
    if let Some(hidden) = &flags.hidden {
        mlp.hidden_layout = hidden.clone();
    }
    if let Some(BatchSize(batch)) = flags.batch_size {
        mlp.batch_size = batch;
    }
    mlp
}

fn read_rows(path: &Path) -> CliResult<Vec<normalize::Sample>> {
    let rows = normalize::read_csv(path).map_err(data)?;
    if rows.is_empty() {
        return Err(CliError::Data(format!("EmptyInput: {} has no rows", path.display())));
    }
    Ok(rows)
}

fn short(v: f64) -> String {
    if v.abs() < 1e6 {
        format!("{v:.6}")
    } else {
        format!("{v:.6e}")
    }
}

fn cmd_train(config: &RunConfig, args: TrainArgs) -> CliResult {
    let mlp_config = apply_train_flags(config, &args.flags);
    mlp_config.validate()?;
    let rows = read_rows(&args.csv)?;
    let (model, trace) = mlp::train(&mlp_config, &rows)?;
    mlp::save_model(&model, &args.model_out)?;

    let trace_path = args
        .trace_out
        .unwrap_or_else(|| args.model_out.with_extension("trace.tsv"));
    let mut tsv = String::from("epoch\tloss\taccuracy\n");
    for (epoch, (loss, acc)) in trace.loss.iter().zip(&trace.accuracy).enumerate() {
        writeln!(tsv, "{}\t{loss:.9}\t{acc:.6}", epoch + 1).expect("string write");
    }
    write_file(&trace_path, &tsv)?;

    let first = trace.loss.first().copied().unwrap_or(f64::NAN);
    let last = trace.loss.last().copied().unwrap_or(f64::NAN);
    out!(
        "trained {} passes on {} rows: loss {} -> {}, training accuracy {:.4}",
        trace.len(),
        rows.len(),
        short(first),
        short(last),
        trace.accuracy.last().copied().unwrap_or(0.0)
    );
    out!("model {}; trace {}", args.model_out.display(), trace_path.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> CliResult {
    let model = mlp::load_model(&args.model)?;
    let rows = read_rows(&args.csv)?;
    let report = mlp::evaluate_model(&model, &rows)?;
    out!("{report}");
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    match &args.json_out {
        Some(path) => write_file(path, &(json + "\n"))?,
        None => out!("{json}"),
    }
    Ok(())
}

fn cmd_predict(config: &RunConfig, args: PredictArgs) -> CliResult {
    let model = mlp::load_model(&args.model)?;
    let stats = normalize::load_stats(&args.stats).map_err(data)?;
    let mut out = String::new();
    for path in &args.accounts {
        let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let account = ingest::parse_account_with_cap(&bytes, config.tweet_cap)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let row = normalize::transform_row(&extract_features(&account), &stats, config.normalize.out_of_range)
            .map_err(data)?;
        let prediction = model.predict(&row.values)?;
        writeln!(
            out,
            "{}\t{}\t{:.6}",
            account.account_id, prediction.class, prediction.score
        )
        .expect("string write");
    }
    if !out.is_empty() {
        out!("{}", out.trim_end_matches('\n'));
    }
    Ok(())
}

fn cmd_sweep(config: &RunConfig, args: SweepArgs) -> CliResult {
    let base = apply_train_flags(config, &args.flags);
    base.validate()?;
    let train_rows = read_rows(&args.train_csv)?;
    let eval_rows = read_rows(&args.eval_csv)?;
    let points = mlp::lr_sweep(&base, &args.rates, &train_rows, &eval_rows)?;

    let mut tsv = String::from("learning_rate\taccuracy\tdiverged\n");
    out!("{:>14}  {:>9}  note", "learning rate", "accuracy");
    for p in &points {
        let note = if p.diverged { "diverged" } else { "" };
        out!(
            "{}",
            format!("{:>14}  {:>9.4}  {note}", p.learning_rate, p.accuracy).trim_end()
        );
        writeln!(tsv, "{}\t{:.6}\t{}", p.learning_rate, p.accuracy, p.diverged).expect("string write");
    }
    if let Some(path) = &args.tsv_out {
        write_file(path, &tsv)?;
    }
    Ok(())
}
