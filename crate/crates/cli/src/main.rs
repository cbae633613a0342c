mod config;

use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use promas::bundle::ModelBundle;
use promas::data::{load_dataset, split_dataset, DatasetSplit, StepIndexBase, Trajectory, Turn};
use promas::detector::CalibrationStrategy;
use promas::embedding::{
    EmbeddingProvider, FileProvider, HttpConfig, HttpProvider, PromptEncoder, ProviderMode,
    SidecarEncoder, StateEncoder, StepStateKind, SyntheticProvider,
};
use promas::evaluation::{evaluate, random_baseline};
use promas::manifold::Stage1Config;
use promas::markov::FailCountsScope;
use promas::monitor::{Monitor, Session};
use promas::pipeline::{calibrate_thresholds, sweep_k, train_bundle, TrainConfig};
use promas::proactive::Stage2Config;
use promas::quantizer::KMeansConfig;
use promas::synth::{generate, write_corpus, GeneratorConfig};
use promas::{Error, ErrorClass};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_MODEL: u8 = 4;

/// Proactive breach forecasting for multi-agent dialogue logs.
#[derive(Parser)]
#[command(name = "promas", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled synthetic corpus.
    Gen(GenArgs),
    /// Train a model bundle.
    Train(TrainArgs),
    /// Recalibrate the alert thresholds of a bundle.
    Calibrate(CalibrateArgs),
    /// Evaluate a bundle on held-out trajectories.
    Eval(EvalArgs),
    /// Train once per cluster count and tabulate accuracy.
    SweepK(SweepArgs),
    /// Stream-score a dialogue read as JSON lines from standard input.
    Monitor(MonitorArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    n_trajectories: usize,
    #[arg(long, default_value_t = 8)]
    min_len: usize,
    #[arg(long, default_value_t = 16)]
    max_len: usize,
    #[arg(long, default_value_t = 4)]
    agents: usize,
    #[arg(long, default_value_t = 32)]
    latent_dim: usize,
    #[arg(long, default_value_t = 8)]
    clusters: usize,
    #[arg(long, default_value_t = 0.5)]
    failure_rate: f64,
    /// Breach source cluster [default: 0].
    #[arg(long, requires = "breach_to")]
    breach_from: Option<usize>,
    /// Breach target cluster [default: clusters − 1].
    #[arg(long, requires = "breach_from")]
    breach_to: Option<usize>,
    /// Gaussian noise on states.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Log-normal spread of action magnitudes.
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    /// Norm of a per-dialogue offset on step states.
    #[arg(long, default_value_t = 0.0)]
    task_spread: f64,
    /// Successors per cluster in the planted chain.
    #[arg(long, default_value_t = 3)]
    successors: usize,
    /// Emit turn text for the token-level path instead of state sidecars.
    #[arg(long)]
    text_mode: bool,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// TOML file whose keys are long flag names.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderKind {
    /// `<id>.steps.pmeb` / `<id>.context.pmeb` next to each trajectory.
    Sidecar,
    /// Deterministic hash-based token states.
    Synthetic,
    /// Precomputed `<prompt hash>.pmeb` files.
    File,
    /// JSON embedding endpoint.
    Http,
}

#[derive(Clone, Copy, ValueEnum)]
enum FileMode {
    TokenLevel,
    PrePooled,
}

#[derive(Clone, Copy, ValueEnum)]
enum StepState {
    Extraction,
    History,
}

#[derive(Args)]
struct ProviderArgs {
    #[arg(long, value_enum, default_value_t = ProviderKind::Sidecar)]
    provider: ProviderKind,
    /// Token-state width of the synthetic provider.
    #[arg(long, default_value_t = 64)]
    synthetic_dim: usize,
    #[arg(long, default_value_t = 0)]
    synthetic_seed: u64,
    /// Directory of the file provider.
    #[arg(long)]
    embeddings_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FileMode::TokenLevel)]
    file_mode: FileMode,
    /// Endpoint of the HTTP provider.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value_t = 30.0)]
    timeout_secs: f64,
    /// Extra attempts after a transport failure.
    #[arg(long, default_value_t = 2)]
    retries: u32,
    /// Prompt the per-step states are encoded from.
    #[arg(long, value_enum, default_value_t = StepState::Extraction)]
    step_state: StepState,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum SplitKind {
    Train,
    Test,
    All,
}

#[derive(Args)]
struct DataArgs {
    /// Directory of trajectory JSON files.
    data: PathBuf,
    /// Whether `mistake_step` counts from 0 or 1.
    #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=1))]
    step_base: u8,
    #[arg(long, default_value_t = 0.2)]
    train_fraction: f64,
    #[arg(long, default_value_t = 42)]
    split_seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum CalibrationKind {
    Percentile,
    Kmeans2,
}

#[derive(Args)]
struct ThresholdArgs {
    #[arg(long, value_enum, default_value_t = CalibrationKind::Percentile)]
    calibration: CalibrationKind,
    /// Percentile of the pooled training risks used as the base threshold.
    #[arg(long, default_value_t = 85.0)]
    p: f64,
    /// Minimum risk velocity for a jump alert.
    #[arg(long, default_value_t = 0.15)]
    jump: f64,
    /// Panic threshold offset above the base threshold.
    #[arg(long, default_value_t = 0.30)]
    panic_offset: f64,
    /// Alert on the base threshold alone, without jump detection.
    #[arg(long)]
    static_threshold: bool,
}

impl ThresholdArgs {
    fn strategy(&self) -> CalibrationStrategy {
        match self.calibration {
            CalibrationKind::Percentile => CalibrationStrategy::Percentile { p: self.p },
            CalibrationKind::Kmeans2 => CalibrationStrategy::Kmeans2,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FailScope {
    All,
    PostBreach,
}

#[derive(Args)]
struct ModelArgs {
    /// Number of action prototypes.
    #[arg(short, long, default_value_t = 30)]
    k: usize,
    /// Predicted prototypes kept for the risk expectation.
    #[arg(long, default_value_t = 5)]
    top_m: usize,
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 2.0)]
    beta: f64,
    #[arg(long, default_value_t = 256)]
    score_hidden: usize,
    #[arg(long, default_value_t = 2048)]
    projection_hidden: usize,
    #[arg(long, default_value_t = 1024)]
    projection_dim: usize,
    #[arg(long, default_value_t = 1e-4)]
    stage1_lr: f64,
    #[arg(long, default_value_t = 32)]
    stage1_batch: usize,
    #[arg(long, default_value_t = 15)]
    stage1_epochs: usize,
    #[arg(long, default_value_t = 1.0)]
    margin: f64,
    /// Probability of a random instead of a hard negative.
    #[arg(long, default_value_t = 0.5)]
    random_negative_weight: f64,
    #[arg(long, default_value_t = 1e-3)]
    stage2_lr: f64,
    #[arg(long, default_value_t = 32)]
    stage2_batch: usize,
    #[arg(long, default_value_t = 15)]
    stage2_epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    label_smoothing: f64,
    #[arg(long, default_value_t = 512)]
    head_hidden: usize,
    #[arg(long, default_value_t = 256)]
    kmeans_batch: usize,
    #[arg(long, default_value_t = 200)]
    kmeans_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    kmeans_tol: f64,
    /// Which transitions of a failed dialogue count as failures.
    #[arg(long, value_enum, default_value_t = FailScope::All)]
    fail_counts_scope: FailScope,
    /// Quantize raw deltas without Stage 1 training.
    #[arg(long)]
    no_triplet: bool,
    /// Feed states instead of causal deltas.
    #[arg(long)]
    absolute_states: bool,
    /// Replace the expected transition risk with a binary classifier.
    #[arg(long)]
    binary_baseline: bool,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Provenance timestamp recorded in the bundle.
    #[arg(long)]
    created: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Bundle to write.
    #[arg(long)]
    out: PathBuf,
    /// Part of the dataset to train on.
    #[arg(long, value_enum, default_value_t = SplitKind::Train)]
    split: SplitKind,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    thresholds: ThresholdArgs,
    #[command(flatten)]
    provider: ProviderArgs,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    bundle: PathBuf,
    /// Where to write the recalibrated bundle [default: overwrite --bundle].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitKind::Train)]
    split: SplitKind,
    #[command(flatten)]
    thresholds: ThresholdArgs,
    #[command(flatten)]
    provider: ProviderArgs,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitKind::Test)]
    split: SplitKind,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Also write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write one `<id>.csv` risk trace per trajectory into this directory.
    #[arg(long)]
    traces: Option<PathBuf>,
    /// Monte-Carlo trials of the uniform-guess baseline; 0 skips it.
    #[arg(long, default_value_t = 0)]
    random_trials: usize,
    #[command(flatten)]
    provider: ProviderArgs,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Cluster counts to try, comma-separated.
    #[arg(long, value_delimiter = ',', default_values_t = promas::pipeline::DEFAULT_SWEEP_K.to_vec())]
    ks: Vec<usize>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    thresholds: ThresholdArgs,
    #[command(flatten)]
    provider: ProviderArgs,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct MonitorArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Stop reading input after the first alert.
    #[arg(long)]
    halt_on_alert: bool,
    #[command(flatten)]
    provider: ProviderArgs,
    #[arg(long)]
    config: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let args: Vec<OsString> = std::env::args_os().collect();
    let cli = match parse(args) {
        Ok(cli) => cli,
        Err(code) => return code,
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> ExitCode {
    ExitCode::from(match e.class() {
        ErrorClass::Data => EXIT_DATA,
        ErrorClass::Model => EXIT_MODEL,
    })
}

fn parse(args: Vec<OsString>) -> Result<Cli, ExitCode> {
    let command = Cli::command();
    let clap_exit = |e: clap::Error| {
        let _ = e.print();
        ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 })
    };
    let matches = command.clone().try_get_matches_from(&args).map_err(clap_exit)?;
    let merged = config::merge(&command, &matches, args).map_err(|msg| {
        eprintln!("error: {msg}");
        ExitCode::from(EXIT_USAGE)
    })?;
    let matches = command.try_get_matches_from(merged).map_err(clap_exit)?;
    Cli::from_arg_matches(&matches).map_err(clap_exit)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Eval(a) => eval(a),
        Command::SweepK(a) => sweep(a),
        Command::Monitor(a) => monitor(a),
    }
}

fn gen(a: GenArgs) -> CliResult<()> {
    let config = GeneratorConfig {
        n_trajectories: a.n_trajectories,
        length_range: (a.min_len, a.max_len),
        n_agents: a.agents,
        latent_dim: a.latent_dim,
        n_true_clusters: a.clusters,
        failure_rate: a.failure_rate,
        breach_transition: a.breach_from.zip(a.breach_to),
        noise_scale: a.noise,
        magnitude_jitter: a.jitter,
        task_spread: a.task_spread,
        successors: a.successors,
        text_mode: a.text_mode,
        seed: a.seed,
    };
    let corpus = generate(&config)?;
    write_corpus(&corpus, &a.out)?;
    let failures = corpus
        .trajectories
        .iter()
        .filter(|t| t.annotation.is_some())
        .count();
    println!(
        "wrote {} trajectories ({failures} failures) to {}",
        corpus.trajectories.len(),
        a.out.display()
    );
    Ok(())
}

fn step_kind(s: StepState) -> StepStateKind {
    match s {
        StepState::Extraction => StepStateKind::Extraction,
        StepState::History => StepStateKind::History,
    }
}

/// Build the state encoder; `data` is where sidecar states live.
fn encoder(p: &ProviderArgs, data: Option<&Path>) -> CliResult<Box<dyn StateEncoder>> {
    let kind = step_kind(p.step_state);
    let provider: Box<dyn EmbeddingProvider> = match p.provider {
        ProviderKind::Sidecar => {
            let dir = data.ok_or_else(|| {
                Failure::Usage("the sidecar provider only serves dataset files; pick another --provider".into())
            })?;
            return Ok(Box::new(SidecarEncoder::new(dir)));
        }
        ProviderKind::Synthetic => Box::new(SyntheticProvider {
            seed: p.synthetic_seed,
            dim: p.synthetic_dim,
        }),
        ProviderKind::File => Box::new(FileProvider {
            dir: p
                .embeddings_dir
                .clone()
                .ok_or_else(|| Failure::Usage("--embeddings-dir is required for the file provider".into()))?,
            mode: match p.file_mode {
                FileMode::TokenLevel => ProviderMode::TokenLevel,
                FileMode::PrePooled => ProviderMode::PrePooled,
            },
        }),
        ProviderKind::Http => {
            if !(p.timeout_secs > 0.0) {
                return Err(Failure::Usage("--timeout-secs must be positive".into()));
            }
            Box::new(HttpProvider::new(HttpConfig {
                endpoint: p
                    .endpoint
                    .clone()
                    .ok_or_else(|| Failure::Usage("--endpoint is required for the http provider".into()))?,
                timeout: Duration::from_secs_f64(p.timeout_secs),
                retries: p.retries,
            })?)
        }
    };
    Ok(Box::new(PromptEncoder::new(provider, kind)))
}

fn load(d: &DataArgs, split: SplitKind) -> CliResult<Vec<Trajectory>> {
    let base = StepIndexBase::from_base(d.step_base).expect("range-checked by clap");
    let all = load_dataset(&d.data, base)?;
    if split == SplitKind::All {
        return Ok(all);
    }
    let s = split_dataset(&all, d.train_fraction, d.split_seed)?;
    let ids = if split == SplitKind::Train { &s.train } else { &s.test };
    Ok(DatasetSplit::select(&all, ids).into_iter().cloned().collect())
}

fn train_config(m: &ModelArgs, t: &ThresholdArgs, p: &ProviderArgs, d: &DataArgs) -> TrainConfig {
    TrainConfig {
        k: m.k,
        top_m: m.top_m,
        epsilon: m.epsilon,
        beta: m.beta,
        score_hidden: m.score_hidden,
        projection_hidden: m.projection_hidden,
        projection_dim: m.projection_dim,
        stage1: Stage1Config {
            learning_rate: m.stage1_lr,
            batch_size: m.stage1_batch,
            epochs: m.stage1_epochs,
            margin: m.margin,
            random_negative_weight: m.random_negative_weight,
            seed: m.seed,
        },
        stage2: Stage2Config {
            learning_rate: m.stage2_lr,
            batch_size: m.stage2_batch,
            epochs: m.stage2_epochs,
            label_smoothing: m.label_smoothing,
            hidden: m.head_hidden,
            seed: m.seed,
        },
        kmeans: KMeansConfig {
            batch_size: m.kmeans_batch,
            max_iters: m.kmeans_iters,
            tol: m.kmeans_tol,
            ..KMeansConfig::default()
        },
        calibration: t.strategy(),
        delta_jump: t.jump,
        panic_offset: t.panic_offset,
        static_threshold: t.static_threshold,
        absolute_states: m.absolute_states,
        no_triplet: m.no_triplet,
        binary_baseline: m.binary_baseline,
        fail_counts_scope: match m.fail_counts_scope {
            FailScope::All => FailCountsScope::All,
            FailScope::PostBreach => FailCountsScope::PostBreach,
        },
        step_state: step_kind(p.step_state),
        seed: m.seed,
        train_fraction: d.train_fraction,
        split_seed: d.split_seed,
        created: m.created.clone(),
    }
}

fn train(a: TrainArgs) -> CliResult<()> {
    let trajs = load(&a.data, a.split)?;
    let refs: Vec<&Trajectory> = trajs.iter().collect();
    let enc = encoder(&a.provider, Some(&a.data.data))?;
    let config = train_config(&a.model, &a.thresholds, &a.provider, &a.data);
    let bundle = train_bundle(&refs, enc.as_ref(), &config)?;
    bundle.save(&a.out)?;
    let th = &bundle.thresholds;
    println!(
        "trained on {} trajectories: K={} tau_base={:.4} tau_max={:.4}; wrote {}",
        refs.len(),
        bundle.k(),
        th.tau_base,
        th.tau_max,
        a.out.display()
    );
    Ok(())
}

fn calibrate(a: CalibrateArgs) -> CliResult<()> {
    let mut bundle = ModelBundle::load(&a.bundle)?;
    let trajs = load(&a.data, a.split)?;
    let refs: Vec<&Trajectory> = trajs.iter().collect();
    let enc = encoder(&a.provider, Some(&a.data.data))?;
    let t = &a.thresholds;
    bundle.thresholds = calibrate_thresholds(
        &bundle,
        &refs,
        enc.as_ref(),
        t.strategy(),
        t.jump,
        t.panic_offset,
        t.static_threshold,
    )?;
    let out = a.out.unwrap_or(a.bundle);
    bundle.save(&out)?;
    let th = &bundle.thresholds;
    println!(
        "calibrated on {} risks: tau_base={:.4} delta={:.4} tau_max={:.4}{}; wrote {}",
        th.sample_count,
        th.tau_base,
        th.delta_jump,
        th.tau_max,
        if th.static_threshold { " (static)" } else { "" },
        out.display()
    );
    Ok(())
}

fn io_error(path: &Path, e: std::io::Error) -> Failure {
    Failure::Run(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn eval(a: EvalArgs) -> CliResult<()> {
    let bundle = ModelBundle::load(&a.bundle)?;
    let trajs = load(&a.data, a.split)?;
    let refs: Vec<&Trajectory> = trajs.iter().collect();
    let enc = encoder(&a.provider, Some(&a.data.data))?;
    let (report, traces) = evaluate(&refs, &bundle, enc.as_ref())?;
    let baseline = if a.random_trials > 0 {
        Some(random_baseline(&refs, bundle.provenance.seed, a.random_trials)?)
    } else {
        None
    };
    if let Some(path) = &a.report {
        std::fs::write(path, report.to_json()?).map_err(|e| io_error(path, e))?;
    }
    if let Some(dir) = &a.traces {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        for (id, trace) in &traces {
            let path = dir.join(format!("{id}.csv"));
            std::fs::write(&path, trace.to_csv()).map_err(|e| io_error(&path, e))?;
        }
    }
    match a.format {
        Format::Json => {
            let mut v: Value = serde_json::from_str(&report.to_json()?).map_err(Error::from)?;
            if let Some(b) = &baseline {
                v["random_baseline"] = serde_json::to_value(b).map_err(Error::from)?;
            }
            println!("{}", serde_json::to_string_pretty(&v).map_err(Error::from)?);
        }
        Format::Table => {
            print!("{}", report.to_table());
            if let Some(b) = &baseline {
                println!(
                    "random baseline: step {:.2}% (mc {:.2}% ± {:.2}), agent {:.2}%, eta {:.2}%",
                    b.analytic_step_accuracy * 100.0,
                    b.mc_step_accuracy * 100.0,
                    b.step_std_error * 100.0,
                    b.analytic_agent_accuracy * 100.0,
                    b.analytic_eta * 100.0
                );
            }
        }
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> CliResult<()> {
    if a.ks.is_empty() {
        return Err(Failure::Usage("--ks needs at least one value".into()));
    }
    let train = load(&a.data, SplitKind::Train)?;
    let test = load(&a.data, SplitKind::Test)?;
    let train: Vec<&Trajectory> = train.iter().collect();
    let test: Vec<&Trajectory> = test.iter().collect();
    let enc = encoder(&a.provider, Some(&a.data.data))?;
    let config = train_config(&a.model, &a.thresholds, &a.provider, &a.data);
    let rows = sweep_k(&train, &test, enc.as_ref(), &config, &a.ks)?;
    match a.format {
        Format::Json => {
            let v: Vec<Value> = rows
                .iter()
                .map(|(k, r)| json!({"k": k, "step_accuracy": r.step_accuracy, "agent_accuracy": r.agent_accuracy, "mean_eta": r.mean_eta}))
                .collect();
            println!("{}", serde_json::to_string_pretty(&v).map_err(Error::from)?);
        }
        Format::Table => {
            println!("{:>4}  {:>9}  {:>9}  {:>8}", "K", "step (%)", "agent (%)", "eta (%)");
            for (k, r) in &rows {
                println!(
                    "{k:>4}  {:>9.2}  {:>9.2}  {:>8.2}",
                    r.step_accuracy * 100.0,
                    r.agent_accuracy * 100.0,
                    r.mean_eta * 100.0
                );
            }
        }
    }
    Ok(())
}

/// One line of the monitor input protocol.
enum Input {
    Task(String),
    Turn { agent: String, text: String },
}

fn parse_line(line: &str) -> Result<Input, String> {
    let v: Value = serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    let field = |name: &str| {
        v.get(name)
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| format!("missing string field `{name}`"))
    };
    match v.get("type").and_then(Value::as_str) {
        Some("task") => Ok(Input::Task(field("text")?)),
        Some("turn") => Ok(Input::Turn {
            agent: field("agent")?,
            text: field("text")?,
        }),
        Some(other) => Err(format!("unknown line type `{other}`")),
        None => Err("missing `type`".into()),
    }
}

fn monitor(a: MonitorArgs) -> CliResult<()> {
    let bundle = ModelBundle::load(&a.bundle)?;
    let enc = encoder(&a.provider, None)?;
    let monitor = Monitor::new(&bundle, enc.as_ref())?;
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let mut session: Option<Session> = None;
    let fail = |out: &mut dyn Write, msg: String, e: Failure| -> CliResult<()> {
        let _ = writeln!(out, "{}", json!({ "error": msg }));
        let _ = out.flush();
        Err(e)
    };
    for (n, line) in stdin.lock().lines().enumerate() {
        let line = line.map_err(|e| io_error(Path::new("<stdin>"), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let input = match parse_line(&line) {
            Ok(i) => i,
            Err(msg) => {
                let msg = format!("line {}: {msg}", n + 1);
                return fail(&mut out, msg.clone(), Failure::Run(Error::MalformedDocument(msg)));
            }
        };
        match input {
            Input::Task(text) => session = Some(Session::new("stdin", &text)),
            Input::Turn { agent, text } => {
                let Some(s) = session.as_mut() else {
                    let msg = format!("line {}: turn before any task line", n + 1);
                    return fail(&mut out, msg.clone(), Failure::Run(Error::MalformedDocument(msg)));
                };
                let turn = Turn {
                    index: s.revealed(),
                    agent,
                    content: text,
                };
                let assessment = match monitor.step(s, turn) {
                    Ok(a) => a,
                    Err(e) => return fail(&mut out, e.to_string(), Failure::Run(e)),
                };
                let record = serde_json::to_string(&assessment).map_err(Error::from)?;
                writeln!(out, "{record}").map_err(|e| io_error(Path::new("<stdout>"), e))?;
                out.flush().map_err(|e| io_error(Path::new("<stdout>"), e))?;
                if a.halt_on_alert && assessment.alert {
                    break;
                }
            }
        }
    }
    Ok(())
}
