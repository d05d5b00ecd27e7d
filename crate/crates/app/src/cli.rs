//! Command-line entry point.
//!
//! Exit status: 0 on success, 2 on a usage error (unknown subcommand or flag), 3 on
//! invalid configuration or input, 1 on any other failure.

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use bolus_core::advisor::DoseRecord;
use bolus_core::pg::{read_samples_csv, serialize_samples, write_samples_csv, MealClass, PgTrainingSample};
use bolus_insilico::protocol::{run_data_collection, write_boluses_csv, write_cgm_csv, write_meals_csv};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::clinical::{meal_events, parse_timestamp, read_meals, read_trace, sibling_meals_path};
use crate::config::AppConfig;
use crate::error::{AppError, AppResult, InvalidContext};
use crate::models::{save_model, ModelSet};
use crate::pipeline::{patient_seed, run_cohort, split_by_class, PolicyKind, Scenario};
use crate::replay::replay;
use crate::report;
use crate::service::{self, ApiError, RecommendRequest, ServiceState};

#[derive(Debug, Parser)]
#[command(name = "bolus", version, about = "Data-driven meal bolus advisor")]
pub struct Cli {
    /// JSON configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the configuration file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the one-week data-collection protocol and write training samples.
    Collect(CollectArgs),
    /// Fit breakfast and lunch/dinner predictors.
    Train(TrainArgs),
    /// Run a protocol with one bolus policy and write the traces.
    Simulate(SimulateArgs),
    /// Compare the advisor against the calculator over the cohort.
    Evaluate(EvaluateArgs),
    /// One recommendation from a preprandial glucose window.
    Recommend(RecommendArgs),
    /// Advisory-mode replay over a clinical trace.
    Replay(ReplayArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MealInfoArg {
    With,
    Without,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Advisor,
    Calculator,
    Both,
}

#[derive(Debug, Args)]
pub struct CollectArgs {
    /// Only this cohort patient, e.g. adult#001.
    #[arg(long)]
    pub patient: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Samples file written by `collect`.
    #[arg(long, conflicts_with = "trace", required_unless_present = "trace")]
    pub samples: Option<PathBuf>,
    /// Clinical trace (timestamp,glucose) to serialize into samples.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Meals file for --trace; defaults to the sibling `<stem>.meals.csv`.
    #[arg(long, requires = "trace")]
    pub meals: Option<PathBuf>,
    /// Use only meals strictly before this ISO-8601 time.
    #[arg(long, requires = "trace")]
    pub until: Option<String>,
    /// Train without the carbohydrate input.
    #[arg(long)]
    pub meal_free: bool,
    /// Train only this meal class.
    #[arg(long, value_parser = parse_meal_class)]
    pub meal_class: Option<MealClass>,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    #[arg(long, value_enum, default_value = "a")]
    pub protocol: ProtocolArg,
    /// Basal rate as a fraction of nominal; repeatable. Protocol A always uses 1.
    #[arg(long = "basal-scale")]
    pub basal_scale: Vec<f64>,
    /// Whether the advisor is told the carbohydrate content.
    #[arg(long, value_enum)]
    pub meal_info: Option<MealInfoArg>,
    /// Only this cohort patient.
    #[arg(long)]
    pub patient: Option<String>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, value_enum, default_value = "calculator")]
    pub policy: PolicyArg,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, value_enum, default_value = "both")]
    pub policy: PolicyArg,
}

#[derive(Debug, Args)]
pub struct RecommendArgs {
    /// Predictor file; repeat for one per meal class.
    #[arg(long, required = true)]
    pub model: Vec<PathBuf>,
    /// Eight comma-separated glucose readings (mg/dL), oldest first, 15 min apart.
    #[arg(long, allow_hyphen_values = true)]
    pub window: String,
    /// Carbohydrate content in grams, for meal-aware models.
    #[arg(long)]
    pub carbs: Option<f64>,
    #[arg(long, value_parser = parse_meal_class)]
    pub meal_class: Option<MealClass>,
    /// Previous dose as `seconds:units`; repeatable.
    #[arg(long = "dose", value_parser = parse_dose)]
    pub doses: Vec<DoseRecord>,
    /// Current time in seconds on the dose clock.
    #[arg(long)]
    pub now: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub trace: PathBuf,
    /// Defaults to the sibling `<stem>.meals.csv`.
    #[arg(long)]
    pub meals: Option<PathBuf>,
    /// Predictor file; repeat for one per meal class.
    #[arg(long, required = true)]
    pub model: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Predictor file; repeat for one per meal class.
    #[arg(long, required = true)]
    pub model: Vec<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
}

fn parse_meal_class(s: &str) -> Result<MealClass, String> {
    s.parse::<MealClass>().map_err(|e| e.to_string())
}

fn parse_dose(s: &str) -> Result<DoseRecord, String> {
    let (t, u) = s
        .split_once(':')
        .ok_or_else(|| format!("expected seconds:units, got `{s}`"))?;
    let time: f64 = t.trim().parse().map_err(|_| format!("bad time `{t}`"))?;
    let units: f64 = u.trim().parse().map_err(|_| format!("bad units `{u}`"))?;
    Ok(DoseRecord { time, units })
}

/// Parses argv and runs the command; returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(cli: &Cli) -> AppResult<AppConfig> {
    let mut cfg = match &cli.config {
        Some(p) => AppConfig::load(p)?,
        None => AppConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> AppResult<()> {
    let config = load_config(cli)?;
    match &cli.command {
        Command::Collect(a) => collect(a, &config, &cli.out),
        Command::Train(a) => train(a, &config, &cli.out),
        Command::Simulate(a) => simulate(a, &config, &cli.out),
        Command::Evaluate(a) => evaluate(a, &config, &cli.out),
        Command::Recommend(a) => recommend(a, &config, &cli.out),
        Command::Replay(a) => replay_cmd(a, &config, &cli.out),
        Command::Serve(a) => {
            let models = ModelSet::load(&a.model)?;
            service::serve(a.addr, ServiceState { config, models })
        }
    }
}

fn create(path: &Path) -> AppResult<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn patient_dir(out: &Path, id: &str) -> PathBuf {
    out.join(id.replace('#', "_"))
}

fn collect(a: &CollectArgs, config: &AppConfig, out: &Path) -> AppResult<()> {
    let cohort = config.cohort()?;
    let mut found = false;
    for (k, p) in cohort.patients.iter().enumerate() {
        if a.patient.as_deref().is_some_and(|id| id != p.id) {
            continue;
        }
        found = true;
        let (result, samples) = run_data_collection(p, patient_seed(config.seed, k))?;
        let dir = patient_dir(out, &p.id);
        write_samples_csv(create(&dir.join("samples.csv"))?, &samples)?;
        write_cgm_csv(create(&dir.join("collection_cgm.csv"))?, &result)?;
        write_boluses_csv(create(&dir.join("collection_boluses.csv"))?, &result)?;
        write_meals_csv(create(&dir.join("collection_meals.csv"))?, &result)?;
        let breakfast = samples.iter().filter(|s| s.meal_class == MealClass::Breakfast).count();
        println!(
            "{}: {} samples ({} breakfast, {} lunch/dinner) -> {}",
            p.id,
            samples.len(),
            breakfast,
            samples.len() - breakfast,
            dir.display()
        );
    }
    if !found {
        return Err(AppError::invalid(format!(
            "no patient `{}` in the cohort",
            a.patient.as_deref().unwrap_or_default()
        )));
    }
    Ok(())
}

fn training_samples(a: &TrainArgs) -> AppResult<Vec<PgTrainingSample>> {
    if let Some(path) = &a.samples {
        let file = File::open(path).invalid(&path.display().to_string())?;
        return read_samples_csv(file).invalid(&path.display().to_string());
    }
    let trace_path = a.trace.as_ref().expect("clap requires --samples or --trace");
    let trace = read_trace(trace_path)?;
    let meals_path = a.meals.clone().unwrap_or_else(|| sibling_meals_path(trace_path));
    let mut meals = read_meals(&meals_path, trace.origin)?;
    if let Some(until) = &a.until {
        let cut = parse_timestamp(until)
            .ok_or_else(|| AppError::invalid(format!("--until `{until}` is not an ISO-8601 timestamp")))?;
        meals.retain(|m| m.time < cut);
    }
    let serialized = serialize_samples(&trace.trace, &meal_events(&meals)?).invalid("samples")?;
    for s in &serialized.skipped {
        log::info!("meal at t={}s skipped: {:?}", s.time, s.reason);
    }
    Ok(serialized.samples)
}

fn train(a: &TrainArgs, config: &AppConfig, out: &Path) -> AppResult<()> {
    let samples = training_samples(a)?;
    let classes: Vec<MealClass> = match a.meal_class {
        Some(c) => vec![c],
        None => vec![MealClass::Breakfast, MealClass::LunchDinner],
    };
    for class in classes {
        let subset = split_by_class(&samples, class);
        if subset.is_empty() && a.meal_class.is_none() {
            log::warn!("no {class} samples; skipping");
            continue;
        }
        let predictor = bolus_core::pg::train_pg_model_with::<f64>(&subset, !a.meal_free, &config.training)
            .map_err(|e| match e {
                bolus_core::Error::InsufficientData(m) => AppError::invalid(format!("{class}: {m}")),
                other => AppError::runtime(format!("{class}: {other}")),
            })?;
        let path = save_model(out, class, &predictor)?;
        println!("{class}: {} samples -> {}", subset.len(), path.display());
    }
    Ok(())
}

fn policies(p: PolicyArg) -> Vec<PolicyKind> {
    match p {
        PolicyArg::Advisor => vec![PolicyKind::Advisor],
        PolicyArg::Calculator => vec![PolicyKind::Calculator],
        PolicyArg::Both => vec![PolicyKind::Calculator, PolicyKind::Advisor],
    }
}

/// Protocol A defaults to both meal-information cases; protocol B to the 80% and 110%
/// basal cases without meal information.
pub fn scenarios(a: &ScenarioArgs) -> AppResult<Vec<Scenario>> {
    if let Some(s) = a.basal_scale.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(AppError::invalid(format!("--basal-scale must be > 0, got {s}")));
    }
    let meal_info: Vec<bool> = match (a.meal_info, a.protocol) {
        (Some(MealInfoArg::With), _) => vec![true],
        (Some(MealInfoArg::Without), _) => vec![false],
        (Some(MealInfoArg::Both), _) | (None, ProtocolArg::A) => vec![true, false],
        (None, ProtocolArg::B) => vec![false],
    };
    Ok(match a.protocol {
        ProtocolArg::A => {
            if !a.basal_scale.is_empty() {
                return Err(AppError::invalid("--basal-scale applies to protocol B only"));
            }
            meal_info.into_iter().map(Scenario::protocol_a).collect()
        }
        ProtocolArg::B => {
            let scales = if a.basal_scale.is_empty() {
                vec![0.8, 1.1]
            } else {
                a.basal_scale.clone()
            };
            meal_info
                .iter()
                .flat_map(|&m| scales.iter().map(move |&s| Scenario::protocol_b(s, m)))
                .collect()
        }
    })
}

fn simulate(a: &SimulateArgs, config: &AppConfig, out: &Path) -> AppResult<()> {
    let cohort = config.cohort()?;
    let outcomes = run_cohort(
        &cohort,
        a.scenario.patient.as_deref(),
        &scenarios(&a.scenario)?,
        &policies(a.policy),
        config,
        config.seed,
    )?;
    report::write_traces(out, &outcomes)?;
    report::write_metrics_csv(&out.join("metrics.csv"), &outcomes)?;
    let text = report::metrics_text(&outcomes);
    print!("{text}");
    std::fs::write(out.join("metrics.txt"), text)?;
    Ok(())
}

fn evaluate(a: &EvaluateArgs, config: &AppConfig, out: &Path) -> AppResult<()> {
    let cohort = config.cohort()?;
    let outcomes = run_cohort(
        &cohort,
        a.scenario.patient.as_deref(),
        &scenarios(&a.scenario)?,
        &policies(a.policy),
        config,
        config.seed,
    )?;
    std::fs::create_dir_all(out)?;
    let comparison = report::comparison_text(&outcomes);
    let per_patient = report::metrics_text(&outcomes);
    std::fs::write(out.join("comparison.txt"), &comparison)?;
    std::fs::write(out.join("metrics.txt"), &per_patient)?;
    report::write_comparison_csv(&out.join("comparison.csv"), &outcomes)?;
    report::write_metrics_csv(&out.join("metrics.csv"), &outcomes)?;
    report::write_boluses_table(&out.join("boluses.csv"), &outcomes)?;
    print!("{}", if comparison.is_empty() { &per_patient } else { &comparison });
    Ok(())
}

fn recommend(a: &RecommendArgs, config: &AppConfig, out: &Path) -> AppResult<()> {
    let window = a
        .window
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| AppError::invalid(format!("--window: `{s}` is not a number")))
        })
        .collect::<AppResult<Vec<f64>>>()?;
    let state = ServiceState {
        config: config.clone(),
        models: ModelSet::load(&a.model)?,
    };
    let req = RecommendRequest {
        schema: None,
        window,
        carbs: a.carbs,
        meal_class: a.meal_class,
        history: a.doses.clone(),
        now: a.now,
        seed: Some(config.seed),
    };
    let resp = service::handle_recommend(&state, &req).map_err(|e| match e {
        ApiError::Validation(fields) => AppError::invalid(
            fields
                .iter()
                .map(|f| format!("{}: {}", f.field, f.message))
                .collect::<Vec<_>>()
                .join("; "),
        ),
        ApiError::MealAwareness { meal_aware: true } => {
            AppError::invalid("the model is meal-aware; pass --carbs")
        }
        ApiError::MealAwareness { meal_aware: false } => {
            AppError::invalid("the model is meal-free; omit --carbs")
        }
        ApiError::Internal(m) => AppError::runtime(m),
    })?;
    let json = serde_json::to_string_pretty(&resp).expect("response serializes");
    println!("{json}");
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("recommendation.json"), json)?;
    Ok(())
}

fn replay_cmd(a: &ReplayArgs, config: &AppConfig, out: &Path) -> AppResult<()> {
    let trace = read_trace(&a.trace)?;
    let meals_path = a.meals.clone().unwrap_or_else(|| sibling_meals_path(&a.trace));
    let meals = read_meals(&meals_path, trace.origin)?;
    let models = ModelSet::load(&a.model)?;
    let report = replay(&trace, &meals, &models, config, config.seed)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(
        out.join("replay.json"),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    report.write_csv(create(&out.join("replay.csv"))?)?;
    print!("{}", report.text());
    Ok(())
}
