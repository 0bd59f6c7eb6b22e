use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use openhealth::classifier::{
    evaluate, fit_and_evaluate, labeled_features, quantize, to_examples, EvalReport, MlpModel, QuantizedModel,
    MODEL_MAGIC, QUANT_MAGIC,
};
use openhealth::config::{ConfigDocument, ConfigError};
use openhealth::datagen::{generate_synthetic, read_dataset, storage_budget, write_dataset};
use openhealth::firmware::{awake_power_mw, plan_duty_cycle, EnergyState, HOUR_MS};
use openhealth::pipeline::PipelineError;
use openhealth::sim::{replay, run_scenario, ReplayCheck, Scenario, SimError};
use openhealth::{App, LabelKind};

#[derive(Parser)]
#[command(name = "openhealth", version, about = "Wearable health-monitoring node simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum AppArg {
    Har,
    Gesture,
}

impl From<AppArg> for App {
    fn from(a: AppArg) -> App {
        match a {
            AppArg::Har => App::Har,
            AppArg::Gesture => App::Gesture,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic labeled recording as dataset CSV.
    Datagen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides synthetic_models.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides synthetic_models.app.
        #[arg(long, value_enum)]
        app: Option<AppArg>,
    },
    /// Train a classifier on a dataset and print the loss history.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        app: AppArg,
        #[arg(long)]
        out: PathBuf,
        /// Also write the int8 model here.
        #[arg(long)]
        quantized: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evaluate a model on a dataset and print a per-class accuracy table.
    Eval {
        #[arg(long, required_unless_present = "from_report")]
        data: Option<PathBuf>,
        #[arg(long, required_unless_present = "from_report")]
        model: Option<PathBuf>,
        /// Write the report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Render a previously saved JSON report instead of evaluating.
        #[arg(long, conflicts_with_all = ["data", "model"])]
        from_report: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Memory, raw-storage and daily energy budgets.
    Budget {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run a scenario and write its trace.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, env = "OPENHEALTH_SIM_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        trace: PathBuf,
        /// Metrics JSON; printed to stdout when omitted.
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long)]
        device_log: Option<PathBuf>,
        #[arg(long)]
        observations: Option<PathBuf>,
    },
    /// Re-check a stored trace.
    Replay {
        #[arg(long)]
        trace: PathBuf,
    },
    /// Print the default configuration document.
    Config,
}

#[derive(Debug)]
enum CliError {
    /// Configuration or usage problem: exit 2.
    Config(String),
    /// Bad input data or a failed validation: exit 3.
    Data(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => c.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

fn data_err(e: impl fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_config(path: Option<&Path>) -> Result<ConfigDocument, CliError> {
    Ok(match path {
        Some(p) => ConfigDocument::load(p)?,
        None => ConfigDocument::default(),
    })
}

fn load_model(path: &Path) -> Result<MlpModel, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let model = match bytes.get(..4) {
        Some(m) if m == MODEL_MAGIC => MlpModel::from_bytes(&bytes),
        Some(m) if m == QUANT_MAGIC => QuantizedModel::from_bytes(&bytes).map(|q| q.dequantize()),
        _ => return Err(CliError::Data(format!("{}: not a model file", path.display()))),
    };
    model.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn app_for(kind: LabelKind) -> App {
    match kind {
        LabelKind::Activity => App::Har,
        LabelKind::Gesture => App::Gesture,
    }
}

/// Groups digits in threes: 5400000 -> "5,400,000".
fn thousands(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn cmd_datagen(config: Option<&Path>, out: &Path, seed: Option<u64>, app: Option<AppArg>) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    let syn = &cfg.synthetic_models;
    let app = app.map_or(syn.app, App::from);
    let seed = seed.unwrap_or(syn.seed);
    let rec = generate_synthetic(&syn.model(app, seed), &syn.schedule(app), syn.rate_hz).map_err(data_err)?;
    write_dataset(&rec, out).map_err(data_err)?;
    println!("wrote {} samples ({} annotations) to {}", rec.samples.len(), rec.annotations.len(), out.display());
    Ok(())
}

fn features_for(
    cfg: &ConfigDocument,
    data: &Path,
    app: App,
) -> Result<Vec<(openhealth::pipeline::FeatureVector, usize)>, CliError> {
    let rec = read_dataset(data).map_err(data_err)?;
    let channels = cfg.pipeline.channels_for(app);
    let feats = labeled_features(&rec, cfg.pipeline.window, cfg.pipeline.overlap, app.label_kind()).map_err(data_err)?;
    feats
        .into_iter()
        .map(|(f, c)| Ok((f.select(channels)?, c)))
        .collect::<Result<Vec<_>, PipelineError>>()
        .map_err(data_err)
}

fn cmd_train(
    data: &Path,
    app: App,
    out: &Path,
    quantized: Option<&Path>,
    config: Option<&Path>,
) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    let feats = features_for(&cfg, data, app)?;
    let (outcome, report) = fit_and_evaluate(&to_examples(&feats), app.label_kind(), &cfg.train).map_err(data_err)?;
    let h = &outcome.history;
    println!("model {:?}", cfg.layer_sizes(app));
    println!("epoch  loss");
    println!("{:>5}  {:.6}", 0, h.initial);
    for (i, l) in h.epochs.iter().enumerate() {
        println!("{:>5}  {l:.6}", i + 1);
    }
    println!("final  {:.6}", h.final_loss);
    println!();
    print!("{}", report.render_table());
    write_file(out, outcome.model.to_bytes())?;
    if let Some(q) = quantized {
        let qm = quantize(&outcome.model);
        write_file(q, qm.to_bytes())?;
        println!("int8 model: {} bytes of flash", qm.flash_bytes());
    }
    Ok(())
}

fn cmd_eval(
    data: Option<&Path>,
    model: Option<&Path>,
    report_out: Option<&Path>,
    from_report: Option<&Path>,
    config: Option<&Path>,
) -> Result<(), CliError> {
    let report = match from_report {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            let r: EvalReport = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            r.check_consistency().map_err(data_err)?;
            r
        }
        None => {
            let (data, model) = data.zip(model).ok_or_else(|| CliError::Config("--data and --model are required".into()))?;
            let cfg = load_config(config)?;
            let model = load_model(model)?;
            let kind = model
                .kind
                .ok_or_else(|| CliError::Data("model does not record its label set".into()))?;
            let feats = features_for(&cfg, data, app_for(kind))?;
            evaluate(&model, &to_examples(&feats)).map_err(data_err)?
        }
    };
    print!("{}", report.render_table());
    if let Some(path) = report_out {
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        write_file(path, json + "\n")?;
    }
    Ok(())
}

fn cmd_budget(config: Option<&Path>) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    let b = &cfg.budget;
    let app = b.app;
    let ledger = cfg.memory_ledger(app).map_err(|e| CliError::Config(e.to_string()))?;
    let sizes = cfg.layer_sizes(app);
    println!(
        "memory ({}): window {} x {} ch, model {:?}",
        format!("{app:?}").to_lowercase(),
        cfg.pipeline.window,
        cfg.pipeline.channels_for(app).len(),
        sizes
    );
    println!(
        "  sram   {:>7} / {} bytes  (headroom {})",
        ledger.sram_used_bytes,
        ledger.sram_limit_bytes,
        ledger.sram_headroom()
    );
    println!(
        "         samples {} + features {} + activations {} + stack {}",
        ledger.sample_buffer_bytes, ledger.feature_bytes, ledger.activation_bytes, ledger.stack_bytes
    );
    println!(
        "  flash  {:>7} / {} bytes  (headroom {})",
        ledger.flash_used_bytes,
        ledger.flash_limit_bytes,
        ledger.flash_headroom()
    );
    println!("         int8 model {} + code reserve {}", ledger.model_bytes, ledger.code_reserve_bytes);

    let bytes = storage_budget(b.storage_rate_hz, b.storage_channels, b.bytes_per_scalar, b.storage_seconds)
        .map_err(|e| CliError::Config(format!("budget: {e}")))?;
    let span = if b.storage_seconds == 3600 { "hour".to_string() } else { format!("{} s", b.storage_seconds) };
    println!(
        "storage: {} Hz x {} ch x {} B = {} bytes/{span}",
        b.storage_rate_hz,
        b.storage_channels,
        b.bytes_per_scalar,
        thousands(bytes)
    );

    let profile = &cfg.device_profile;
    let energy = EnergyState::new(&cfg.energy);
    let plan = plan_duty_cycle(&energy.harvest, profile, app, &energy, &cfg.energy);
    let day_h = 24.0 * HOUR_MS as f64 / HOUR_MS as f64;
    let harvest: f64 = energy.harvest.slots().iter().map(|p| p * energy.mppt_efficiency).sum();
    let duty: f64 = plan.fractions.iter().sum::<f64>() / 24.0;
    println!("energy per day:");
    println!("  harvest after MPPT   {harvest:.3} mWh");
    println!("  always active        {:.3} mWh", day_h * profile.active_power_mw(app));
    println!("  always asleep        {:.3} mWh", day_h * profile.p_sleep_mw);
    println!("  awake power          {:.3} mW", awake_power_mw(profile, app));
    println!(
        "  planned duty {:.1}%   planned {:.3} mWh of budget {:.3} mWh",
        100.0 * duty,
        plan.planned_mwh,
        plan.budget_mwh
    );
    Ok(())
}

fn cmd_simulate(
    config: Option<&Path>,
    seed: u64,
    trace: &Path,
    metrics: Option<&Path>,
    device_log: Option<&Path>,
    observations: Option<&Path>,
) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    let scenario = Scenario::from_config(&cfg)?;
    let out = run_scenario(&scenario, seed)?;
    write_file(trace, &out.trace)?;
    let json = serde_json::to_string_pretty(&out.metrics).expect("metrics serialize") + "\n";
    match metrics {
        Some(path) => write_file(path, json)?,
        None => print!("{json}"),
    }
    if let Some(path) = device_log {
        write_file(path, &out.device_log)?;
    }
    if let Some(path) = observations {
        write_file(path, &out.observations)?;
    }
    Ok(())
}

fn cmd_replay(trace: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(trace).map_err(|e| CliError::Data(format!("{}: {e}", trace.display())))?;
    let report = replay(&text, &ReplayCheck::ALL)?;
    print!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Data("replay found violations".into()))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Datagen { config, out, seed, app } => cmd_datagen(config.as_deref(), &out, seed, app),
        Command::Train { data, app, out, quantized, config } => {
            cmd_train(&data, app.into(), &out, quantized.as_deref(), config.as_deref())
        }
        Command::Eval { data, model, report, from_report, config } => cmd_eval(
            data.as_deref(),
            model.as_deref(),
            report.as_deref(),
            from_report.as_deref(),
            config.as_deref(),
        ),
        Command::Budget { config } => cmd_budget(config.as_deref()),
        Command::Simulate { config, seed, trace, metrics, device_log, observations } => cmd_simulate(
            config.as_deref(),
            seed,
            &trace,
            metrics.as_deref(),
            device_log.as_deref(),
            observations.as_deref(),
        ),
        Command::Replay { trace } => cmd_replay(&trace),
        Command::Config => {
            println!("{}", ConfigDocument::default().to_json_pretty());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
