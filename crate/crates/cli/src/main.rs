//! `nomperf` command line: generate -> train -> predict -> evaluate -> flag -> plot.
//!
//! Exit codes: 0 success, 1 usage or malformed input, 2 data or numeric error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nomperf::config::{self, Versioned};
use nomperf::eval::{self, FlagPolicy, UtilizationModel};
use nomperf::pipeline::{self, OptimizerChoice, TrainConfig};
use nomperf::sim::{self, ScenarioConfig};
use nomperf::{io, modelfile, plot, Activation, Error, EvalReport};

/// Directory searched for `scenario.toml` and `train.toml` when no config
/// path is given.
const CONFIG_DIR_ENV: &str = "NOMPERF_CONFIG_DIR";

#[derive(Parser)]
#[command(name = "nomperf", version, about = "Nominal vehicle speed prediction and anomaly flagging")]
struct Cli {
    /// Log more detail (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus of run CSVs plus manifest.json.
    Generate(GenerateArgs),
    /// Train a network on a directory of run CSVs.
    Train(TrainArgs),
    /// Predict speed for a mission profile.
    Predict(PredictArgs),
    /// Compare the network and baselines against a recorded run.
    Evaluate(EvaluateArgs),
    /// Flag anomalous intervals in an evaluation report.
    Flag(FlagArgs),
    /// Render figures and tables from an evaluation report.
    Plot(PlotArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Scenario TOML. Defaults to $NOMPERF_CONFIG_DIR/scenario.toml, then the
    /// built-in canonical scenario.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ActivationArg {
    Logistic,
    Tanh,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Scg,
    Sgd,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum UtilArg {
    Recorded,
    Forecast,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory of run CSVs.
    #[arg(long)]
    data: PathBuf,
    /// Training TOML. Defaults to $NOMPERF_CONFIG_DIR/train.toml if present.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the training trace as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Training cycles (SCG) or epochs (SGD).
    #[arg(long)]
    cycles: Option<usize>,
    #[arg(long, value_enum)]
    activation: Option<ActivationArg>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
    /// Run ids to leave out of training.
    #[arg(long = "holdout")]
    holdout: Vec<String>,
    /// Print the error after every cycle.
    #[arg(long)]
    display: bool,
}

#[derive(Args)]
struct UtilArgs {
    #[arg(long, value_enum, default_value = "recorded")]
    util: UtilArg,
    /// Burn coefficient for --util forecast. Defaults to 1 / profile duration.
    #[arg(long)]
    burn: Option<f64>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Profile CSV (`t,cmd_speed` at command changes).
    #[arg(long)]
    profile: PathBuf,
    #[command(flatten)]
    util: UtilArgs,
    /// Run CSV supplying the recorded utilization series.
    #[arg(long)]
    utilization: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FlagKnobs {
    #[arg(long, default_value_t = eval::DEFAULT_K)]
    k: f64,
    #[arg(long, default_value_t = eval::DEFAULT_WINDOW)]
    window: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Recorded run CSV to evaluate.
    #[arg(long)]
    run: PathBuf,
    /// Training runs for the speed-average baseline. The evaluated run is
    /// skipped if present.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    util: UtilArgs,
    #[arg(long, default_value_t = eval::DEFAULT_BIN_WIDTH)]
    bin_width: f64,
    #[command(flatten)]
    flag: FlagKnobs,
    #[arg(long)]
    out: PathBuf,
    /// Also write the network's flagged intervals as CSV.
    #[arg(long)]
    flags: Option<PathBuf>,
}

#[derive(Args)]
struct FlagArgs {
    #[arg(long)]
    report: PathBuf,
    /// Model whose training residual statistics set the threshold.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = eval::METHOD_ANN)]
    method: String,
    #[command(flatten)]
    flag: FlagKnobs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    report: PathBuf,
    /// Output prefix; writes <prefix>_overlay.svg, _overlay.csv,
    /// _accumulated.svg and _accumulated.csv.
    #[arg(long)]
    out: PathBuf,
}

/// Error plus the exit code it maps to.
struct Failure {
    code: u8,
    err: Error,
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let code = match &err {
            Error::Parse(_)
            | Error::Config(_)
            | Error::UnsupportedVersion(_)
            | Error::Truncated(_)
            | Error::Checksum
            | Error::EmptyInput(_)
            | Error::Io(_) => 1,
            _ => 2,
        };
        Failure { code, err }
    }
}

type CliResult = std::result::Result<(), Failure>;

fn write_atomic(path: &Path, bytes: &[u8]) -> nomperf::Result<()> {
    use std::io::Write;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn default_config(name: &str) -> Option<PathBuf> {
    let dir = std::env::var_os(CONFIG_DIR_ENV)?;
    let p = Path::new(&dir).join(name);
    p.is_file().then_some(p)
}

fn load_config<T>(path: &Path) -> nomperf::Result<T>
where
    T: serde::de::DeserializeOwned + Versioned,
{
    let text = std::fs::read_to_string(path)?;
    config::from_toml(&text).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn generate(a: GenerateArgs) -> CliResult {
    let mut cfg = match a.scenario.or_else(|| default_config("scenario.toml")) {
        Some(p) => load_config::<ScenarioConfig>(&p)?,
        None => ScenarioConfig::canonical(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let (runs, manifest) = sim::generate_corpus(&cfg)?;
    std::fs::create_dir_all(&a.out).map_err(Error::Io)?;
    for run in &runs {
        let path = a.out.join(format!("{}.csv", run.run_id()));
        write_atomic(&path, io::format_run(run).as_bytes())?;
    }
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
    write_atomic(&a.out.join("manifest.json"), json.as_bytes())?;
    log::info!("wrote {} runs to {}", runs.len(), a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> CliResult {
    let mut cfg = match a.config.or_else(|| default_config("train.toml")) {
        Some(p) => load_config::<TrainConfig>(&p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.hidden {
        cfg.hidden_units = v;
    }
    if let Some(v) = a.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = a.activation {
        cfg.activation = match v {
            ActivationArg::Logistic => Activation::Logistic,
            ActivationArg::Tanh => Activation::Tanh,
        };
    }
    if let Some(v) = a.optimizer {
        cfg.optimizer = match v {
            OptimizerArg::Scg => OptimizerChoice::Scg,
            OptimizerArg::Sgd => OptimizerChoice::Sgd,
        };
    }
    if let Some(v) = a.cycles {
        cfg.scg.max_cycles = v;
        cfg.sgd.epochs = v;
    }
    cfg.holdout_run_ids.extend(a.holdout);
    cfg.scg.display |= a.display;

    let runs = io::read_run_dir(&a.data)?;
    if runs.is_empty() {
        return Err(Error::EmptyInput(format!("no run CSVs in {}", a.data.display())).into());
    }
    let artifact = match pipeline::train_pipeline(&runs, &cfg) {
        Ok(x) => x,
        Err(e) => {
            if let Some(trace) = e.trace() {
                eprint!("{}", trace.to_csv());
            }
            return Err(e.into());
        }
    };
    write_atomic(&a.out, &modelfile::to_bytes(&artifact))?;
    if let Some(p) = a.trace {
        write_atomic(&p, artifact.trace.to_csv().as_bytes())?;
    }
    log::info!(
        "trained {} cycles, final error {:?}",
        artifact.trace.cycles_run,
        artifact.trace.final_error()
    );
    Ok(())
}

fn util_model(
    u: &UtilArgs,
    recorded: impl FnOnce() -> nomperf::Result<Vec<f64>>,
    duration: f64,
) -> nomperf::Result<UtilizationModel> {
    match u.util {
        UtilArg::Recorded => Ok(UtilizationModel::Recorded(recorded()?)),
        UtilArg::Forecast => match u.burn {
            Some(burn) => Ok(UtilizationModel::Forecast { burn, exponent: 3.0 }),
            None => UtilizationModel::calibrated(duration),
        },
    }
}

fn predict(a: PredictArgs) -> CliResult {
    let artifact = modelfile::load(&a.model)?;
    let text = std::fs::read_to_string(&a.profile).map_err(Error::Io)?;
    let profile = io::parse_profile(&text, artifact.raw_dt())?;
    let util = util_model(
        &a.util,
        || match &a.utilization {
            Some(p) => Ok(io::read_run(p)?.utilizations()),
            None => Err(Error::Config(
                "--util recorded needs --utilization <run.csv>".into(),
            )),
        },
        profile.duration(),
    )?;
    let trace = eval::predict_run(&artifact, &profile, &util)?;
    let mut s = String::from("t,cmd_speed,predicted_speed,utilization\n");
    for k in 0..trace.len() {
        s.push_str(&format!(
            "{},{},{},{}\n",
            trace.t[k], trace.cmd_speed[k], trace.predicted_speed[k], trace.utilization[k]
        ));
    }
    write_atomic(&a.out, s.as_bytes())?;
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> CliResult {
    let artifact = modelfile::load(&a.model)?;
    let run = io::read_run(&a.run)?;
    let training = match &a.data {
        Some(dir) => io::read_run_dir(dir)?
            .into_iter()
            .filter(|r| r.run_id() != run.run_id())
            .collect(),
        None => Vec::new(),
    };
    let duration = run.len() as f64 * run.dt();
    let util = util_model(&a.util, || Ok(run.utilizations()), duration)?;
    let mut report = eval::evaluate_all(Some(&artifact), &util, &training, &run, a.bin_width)?;
    let policy = FlagPolicy {
        k: a.flag.k,
        window: a.flag.window,
    };
    if report.len() >= policy.window {
        report.flag(eval::METHOD_ANN, &artifact.residuals, policy)?;
    } else {
        log::warn!("run shorter than the flag window; no flags computed");
    }
    write_atomic(&a.out, report.to_json()?.as_bytes())?;
    if let Some(p) = a.flags {
        write_atomic(&p, io::format_flags(&report.flags).as_bytes())?;
    }
    Ok(())
}

fn read_report(path: &Path) -> nomperf::Result<EvalReport> {
    EvalReport::from_json(&std::fs::read_to_string(path)?).map_err(|e| match e {
        Error::LengthMismatch(m) => Error::Parse(format!("malformed report: {m}")),
        other => other,
    })
}

fn flag(a: FlagArgs) -> CliResult {
    let artifact = modelfile::load(&a.model)?;
    let mut report = read_report(&a.report)?;
    report.flag(
        &a.method,
        &artifact.residuals,
        FlagPolicy {
            k: a.flag.k,
            window: a.flag.window,
        },
    )?;
    write_atomic(&a.out, io::format_flags(&report.flags).as_bytes())?;
    Ok(())
}

fn plot_cmd(a: PlotArgs) -> CliResult {
    let report = read_report(&a.report)?;
    let files = plot::render_all(&report)?;
    let prefix = a.out.to_string_lossy().into_owned();
    for (suffix, content) in files {
        write_atomic(Path::new(&format!("{prefix}_{suffix}")), content.as_bytes())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let display = matches!(&cli.cmd, Command::Train(t) if t.display);
    let level = match (cli.verbose, display) {
        (0, false) => "warn",
        (0, true) | (1, _) => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let result = match cli.cmd {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Flag(a) => flag(a),
        Command::Plot(a) => plot_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.err);
            ExitCode::from(f.code)
        }
    }
}
