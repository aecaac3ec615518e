//! Command-line interface: fit estimators on environment-labelled CSV data,
//! simulate from model specifications, replicate the synthetic studies, and
//! evaluate coefficients against perturbation classes.
//!
//! Exit codes: 0 on success, 2 on input errors (malformed CSV/JSON, missing
//! files, invalid configuration), 3 on numerical or method errors (the
//! message names the error, e.g. `NonPdSystem`).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use drig::adaptation::AdaptationError;
use drig::estimators::{self, EstimatorError, FitResult, GammaMatrix};
use drig::experiments::{self, ExperimentConfig, ExperimentError};
use drig::io::{self, IoError};
use drig::robustness::{self, ClassKind, RobustnessError};
use drig::scm::{empirical_moments, ScmError, ScmSpec};

#[derive(Parser)]
#[command(
    name = "drig",
    about = "Distributionally robust linear regression from multi-environment data",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit an estimator on an environment-labelled CSV file.
    Fit(FitArgs),
    /// Draw samples from a model specification into a CSV file.
    Simulate(SimulateArgs),
    /// Run a configured experiment sweep, writing CSV and JSON artifacts.
    Replicate(ReplicateArgs),
    /// Evaluate a coefficient's exact worst-case risk over a perturbation class.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct FitArgs {
    /// CSV file with an environment column, covariate columns and a response column.
    #[arg(long)]
    csv: PathBuf,
    /// Name of the environment-label column.
    #[arg(long, default_value = "env")]
    env_column: String,
    /// Name of the response column.
    #[arg(long, default_value = "y")]
    response_column: String,
    #[arg(long, value_enum)]
    method: FitMethod,
    /// Regularization strength for drig / anchor / scalar drig_a.
    #[arg(long)]
    gamma: Option<f64>,
    /// Penalty matrix for drig_a: inline JSON or a path to a JSON file with
    /// fields gamma_x (matrix) and gamma_y (scalar).
    #[arg(long)]
    gamma_matrix: Option<String>,
    /// Environment weighting: sample-size proportions or uniform.
    #[arg(long, value_enum, default_value = "size")]
    weights: WeightsFlag,
    /// Reference environment label (default: smallest label).
    #[arg(long)]
    reference: Option<String>,
    /// Also write the fit result JSON to this path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitMethod {
    Drig,
    DrigInf,
    Anchor,
    CausalDantzig,
    GroupDro,
    DrigA,
    OlsRef,
    OlsPooled,
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightsFlag {
    Uniform,
    Size,
}

#[derive(Args)]
struct SimulateArgs {
    /// Model specification JSON.
    #[arg(long)]
    spec: PathBuf,
    /// Rows to draw per environment.
    #[arg(long)]
    n_per_env: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path (header `env,x1,...,xp,y`).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReplicateArgs {
    /// Experiment configuration JSON.
    #[arg(long)]
    config: PathBuf,
    /// Directory receiving results.csv and summary.json.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Model specification JSON.
    #[arg(long)]
    spec: PathBuf,
    /// Coefficient JSON: a bare array or a fit-result object with field `b`.
    #[arg(long)]
    b: PathBuf,
    /// Perturbation class kind.
    #[arg(long, value_enum)]
    class: ClassFlag,
    /// Strength for drig / anchor / scalar drig_a classes.
    #[arg(long)]
    gamma: Option<f64>,
    /// Penalty matrix JSON for the drig_a class.
    #[arg(long)]
    gamma_matrix: Option<String>,
    /// Also write the risk report JSON to this path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassFlag {
    Drig,
    Anchor,
    DrigA,
    GroupDro,
    Causal,
}

/// Input problems exit 2, numerical/method failures exit 3.
enum CliError {
    Input(String),
    Method(String),
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ScmError> for CliError {
    fn from(e: ScmError) -> Self {
        match e {
            ScmError::SingularModel { .. } => CliError::Method(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        match e {
            EstimatorError::InvalidInput(_) => CliError::Input(e.to_string()),
            _ => CliError::Method(e.to_string()),
        }
    }
}

impl From<AdaptationError> for CliError {
    fn from(e: AdaptationError) -> Self {
        CliError::Method(e.to_string())
    }
}

impl From<RobustnessError> for CliError {
    fn from(e: RobustnessError) -> Self {
        match e {
            RobustnessError::InvalidInput(_) => CliError::Input(e.to_string()),
            RobustnessError::Scm(s) => s.into(),
            RobustnessError::Estimator(s) => s.into(),
            RobustnessError::NoDominatingEnvironment => CliError::Method(e.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::InvalidConfig(_) => CliError::Input(e.to_string()),
            ExperimentError::Scm(s) => s.into(),
        }
    }
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("DRIG_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Replicate(args) => cmd_replicate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Method(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn parse_gamma_matrix(raw: &str) -> Result<GammaMatrix, CliError> {
    let parsed = serde_json::from_str::<GammaMatrix>(raw).or_else(|_| {
        io::read_json::<GammaMatrix>(Path::new(raw))
            .map_err(|e| CliError::Input(format!("--gamma-matrix: {e}")))
    })?;
    Ok(parsed)
}

fn cmd_fit(args: FitArgs) -> Result<(), CliError> {
    let parsed = io::read_environment_csv(
        &args.csv,
        &args.env_column,
        &args.response_column,
        args.reference.as_deref(),
    )?;
    let weights = match args.weights {
        WeightsFlag::Size => None,
        WeightsFlag::Uniform => {
            Some(vec![1.0 / parsed.samples.len() as f64; parsed.samples.len()])
        }
    };
    let moments = empirical_moments(&parsed.samples, weights.as_deref())?;

    let need_gamma = |gamma: Option<f64>| {
        gamma.ok_or_else(|| CliError::Input("--gamma is required for this method".into()))
    };
    let fit: FitResult = match args.method {
        FitMethod::Drig => estimators::drig(&moments, need_gamma(args.gamma)?)?,
        FitMethod::Anchor => estimators::anchor(&moments, need_gamma(args.gamma)?)?,
        FitMethod::DrigInf => estimators::drig_infinity(&moments)?,
        FitMethod::CausalDantzig => estimators::causal_dantzig(&moments)?,
        FitMethod::GroupDro => estimators::group_dro(&moments, 1e-6, 100_000)?,
        FitMethod::OlsRef => estimators::ols_ref(&moments)?,
        FitMethod::OlsPooled => estimators::ols_pooled(&moments)?,
        FitMethod::DrigA => {
            let gamma = match (&args.gamma_matrix, args.gamma) {
                (Some(raw), _) => parse_gamma_matrix(raw)?,
                (None, Some(g)) => GammaMatrix::drig_equivalent(g, parsed.covariates.len()),
                (None, None) => {
                    return Err(CliError::Input(
                        "--method drig-a needs --gamma or --gamma-matrix".into(),
                    ))
                }
            };
            estimators::drig_a(&moments, &gamma)?
        }
    };
    let body = serde_json::to_string_pretty(&fit).expect("serializable");
    println!("{body}");
    if let Some(out) = args.out {
        io::write_atomic(&out, body.as_bytes())?;
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    if args.n_per_env == 0 {
        return Err(CliError::Input("--n-per-env must be >= 1".into()));
    }
    let spec: ScmSpec = io::read_json(&args.spec)?;
    spec.validate()?;
    let mut labels = Vec::new();
    let mut samples = Vec::new();
    for e in 0..spec.environments.len() {
        labels.push(e.to_string());
        samples.push(spec.sample(e, args.n_per_env, args.seed.wrapping_add(e as u64))?);
    }
    io::write_samples_csv(&args.out, &labels, &samples)?;
    Ok(())
}

fn cmd_replicate(args: ReplicateArgs) -> Result<(), CliError> {
    let config: ExperimentConfig = io::read_json(&args.config)?;
    let output = experiments::run(&config)?;
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", args.out_dir.display())))?;
    let csv = experiments::rows_to_csv(&output.rows);
    io::write_atomic(&args.out_dir.join("results.csv"), csv.as_bytes())?;
    io::write_json_atomic(&args.out_dir.join("summary.json"), &output.summary)?;
    for line in output.summary.render_lines() {
        println!("{line}");
    }
    if !output.summary.errors.is_empty() {
        eprintln!(
            "note: {} evaluation(s) failed; see summary.json",
            output.summary.errors.len()
        );
    }
    Ok(())
}

fn read_coefficients(path: &Path) -> Result<DVector<f64>, CliError> {
    #[derive(serde::Deserialize)]
    struct WithB {
        b: Vec<f64>,
    }
    if let Ok(direct) = io::read_json::<Vec<f64>>(path) {
        return Ok(DVector::from_vec(direct));
    }
    let with_b: WithB = io::read_json(path)?;
    Ok(DVector::from_vec(with_b.b))
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let spec: ScmSpec = io::read_json(&args.spec)?;
    spec.validate()?;
    let b = read_coefficients(&args.b)?;
    if b.len() != spec.p {
        return Err(CliError::Input(format!(
            "coefficient length {} does not match p = {}",
            b.len(),
            spec.p
        )));
    }
    let need_gamma = |gamma: Option<f64>| {
        gamma.ok_or_else(|| CliError::Input("--gamma is required for this class".into()))
    };
    let kind = match args.class {
        ClassFlag::Drig => ClassKind::Drig {
            gamma: need_gamma(args.gamma)?,
        },
        ClassFlag::Anchor => ClassKind::Anchor {
            gamma: need_gamma(args.gamma)?,
        },
        ClassFlag::DrigA => match (&args.gamma_matrix, args.gamma) {
            (Some(raw), _) => ClassKind::DrigA(parse_gamma_matrix(raw)?),
            (None, Some(g)) => ClassKind::DrigA(GammaMatrix::drig_equivalent(g, spec.p)),
            (None, None) => {
                return Err(CliError::Input(
                    "--class drig-a needs --gamma or --gamma-matrix".into(),
                ))
            }
        },
        ClassFlag::GroupDro => ClassKind::GroupDro,
        ClassFlag::Causal => ClassKind::Causal,
    };
    let label = kind.label();
    let class = robustness::build_class(&spec, kind)?;
    let risk = robustness::worst_case_risk(&spec, &b, &class)?;
    let attained = robustness::attaining_intervention(&spec, &b, &class)?;

    let risk_value = if risk.is_finite() {
        serde_json::json!(risk)
    } else {
        serde_json::json!("inf")
    };
    let attained_value = match attained {
        Some(v) => {
            let gram: Vec<Vec<f64>> = (0..v.len())
                .map(|i| (0..v.len()).map(|j| v[i] * v[j]).collect())
                .collect();
            serde_json::json!(gram)
        }
        None => serde_json::Value::Null,
    };
    let report = serde_json::json!({
        "risk": risk_value,
        "class": label,
        "attained_by": attained_value,
    });
    let body = serde_json::to_string_pretty(&report).expect("serializable");
    println!("{body}");
    if let Some(out) = args.out {
        io::write_atomic(&out, body.as_bytes())?;
    }
    Ok(())
}
