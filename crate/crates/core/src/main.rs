use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pategen::data::{load_csv, CsvSchema};
use pategen::error::{Error, ErrorKind, Result};
use pategen::estimators::EstimatorId;
use pategen::report::{
    estimate, replay_from_json, simulate_file, write_estimate, write_simulation, EstimateDocument,
    EstimateProvenance, EstimateRequest,
};
use pategen::simulation::{
    delta_p_population, pop_covariate_mean, solve_alpha0, solve_beta2, Layers, ScenarioFile,
};
use pategen::variance::VarianceMethodId;

#[derive(Parser, Debug)]
#[command(name = "pategen", version, about = "Generalize trial treatment effects to a target population")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate the PATE on a combined trial + population CSV.
    Estimate(EstimateArgs),
    /// Run Monte Carlo studies from a scenario file or a previous JSON report.
    Simulate(SimulateArgs),
    /// Solve α0 and β2 for a target selection probability and PATE.
    DeriveParams(DeriveArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated estimator names (OLS, OLS_cor, WOLS, WOLS_cor, MODSV, MODSV_cor, SV_ONLY, IPW).
    #[arg(long, default_value = "IPW")]
    estimators: String,
    /// Comma-separated variance methods (MEST, SURVEY_LIN, LINCOMB, RB, WSB, WAWSB).
    #[arg(long, default_value = "MEST")]
    variance: String,
    #[arg(long, default_value_t = 500)]
    bootstrap_reps: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value = "s")]
    study_col: String,
    #[arg(long, default_value = "t")]
    treatment_col: String,
    #[arg(long, default_value = "y")]
    outcome_col: String,
    /// Comma-separated covariate columns; all other columns when absent.
    #[arg(long)]
    covariates: Option<String>,
    /// Output path stem; `.csv` and `.json` are both written.
    #[arg(long, default_value = "estimate")]
    out: PathBuf,
    /// Format printed to stdout.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// TOML scenario file, or a JSON report to replay.
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    estimators: Option<String>,
    #[arg(long)]
    variance: Option<String>,
    #[arg(long)]
    bootstrap_reps: Option<usize>,
    /// Bootstrap only the first this-many (outer) replicates.
    #[arg(long)]
    bootstrap_subsample: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    level: Option<f64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    layers: Option<String>,
    #[arg(long)]
    inner_reps: Option<usize>,
    /// Output path stem; `.csv`, `_figure.csv` and `.json` are written.
    #[arg(long, default_value = "simulation")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args, Debug)]
struct DeriveArgs {
    #[arg(long, allow_hyphen_values = true)]
    pate: f64,
    #[arg(long, allow_hyphen_values = true)]
    beta3: f64,
    #[arg(long, allow_hyphen_values = true)]
    alpha1: f64,
    #[arg(long, default_value_t = 0.2)]
    target_p: f64,
}

fn parse_list<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<Vec<T>> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect()
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })
        }
        _ => Ok(()),
    }
}

fn print_file(path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    print!("{text}");
    Ok(())
}

fn cmd_estimate(a: EstimateArgs) -> Result<()> {
    let schema = CsvSchema {
        study: a.study_col,
        treatment: a.treatment_col,
        outcome: a.outcome_col,
        covariates: a
            .covariates
            .map(|c| c.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()),
    };
    let request = EstimateRequest {
        estimators: parse_list(&a.estimators)?,
        methods: parse_list(&a.variance)?,
        bootstrap_reps: a.bootstrap_reps,
        seed: a.seed,
        level: a.level,
        ..EstimateRequest::default()
    };
    request.validate()?;
    let sample = load_csv(&a.data, &schema)?;
    let run = estimate(&sample, &request)?;
    for w in &run.weights.warnings {
        eprintln!("warning: {w}");
    }
    let doc = EstimateDocument {
        kind: "estimate".into(),
        provenance: EstimateProvenance { data: a.data, schema },
        run,
    };
    ensure_parent(&a.out)?;
    let (csv, json) = write_estimate(&a.out, &doc)?;
    match a.format {
        Format::Csv => print_file(&csv),
        Format::Json => print_file(&json),
    }
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let is_json = a.scenario.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let text = std::fs::read_to_string(&a.scenario).map_err(|e| Error::Io { path: a.scenario.clone(), source: e })?;
    let mut file = if is_json { replay_from_json(&text)? } else { ScenarioFile::parse(&text)? };
    let run = &mut file.run;
    if let Some(v) = a.estimators {
        run.estimators = Some(parse_list::<EstimatorId>(&v)?);
    }
    if let Some(v) = a.variance {
        run.variance = Some(parse_list::<VarianceMethodId>(&v)?);
    }
    if let Some(v) = a.layers {
        run.layers = Some(v.parse::<Layers>()?);
    }
    run.bootstrap_reps = a.bootstrap_reps.or(run.bootstrap_reps);
    run.bootstrap_subsample = a.bootstrap_subsample.or(run.bootstrap_subsample);
    run.seed = a.seed.or(run.seed);
    run.level = a.level.or(run.level);
    run.reps = a.reps.or(run.reps);
    run.inner_reps = a.inner_reps.or(run.inner_reps);
    let config = file.run.to_config();
    let uses_bootstrap = config.methods.iter().any(|m| m.bootstrap_scheme().is_some());
    if file.run.seed.is_none() {
        return Err(Error::Config(
            if uses_bootstrap {
                "a seed is required for bootstrap methods".into()
            } else {
                "a seed is required for simulation (set --seed or run.seed)".into()
            },
        ));
    }
    config.validate()?;
    let doc = simulate_file(&file, &config)?;
    for r in &doc.results {
        let c = &r.report.replicates;
        if c.skipped_degenerate + c.skipped_numerical > 0 {
            eprintln!(
                "{}: skipped {} degenerate and {} numerically failed replicates of {}",
                r.name, c.skipped_degenerate, c.skipped_numerical, c.requested
            );
        }
    }
    ensure_parent(&a.out)?;
    let paths = write_simulation(&a.out, &doc)?;
    match a.format {
        Format::Csv => print_file(&paths[0]),
        Format::Json => print_file(&paths[2]),
    }
}

fn cmd_derive(a: DeriveArgs) -> Result<()> {
    let alpha0 = solve_alpha0(a.alpha1, a.target_p)?;
    let beta2 = solve_beta2(a.pate, a.beta3, alpha0, a.alpha1);
    let pop_mean = pop_covariate_mean(alpha0, a.alpha1);
    let delta_p = delta_p_population(alpha0, a.alpha1);
    println!("[[scenario]]");
    println!("alpha0 = {alpha0}");
    println!("alpha1 = {}", a.alpha1);
    println!("beta2 = {beta2}");
    println!("beta3 = {}", a.beta3);
    println!("# target P(S=1) = {}", a.target_p);
    println!("# true PATE = {}", a.pate);
    println!("# E(X|S=0) = {pop_mean}");
    println!("# delta_p = {delta_p}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::DeriveParams(a) => cmd_derive(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Validation => 2,
                ErrorKind::Numerical => 3,
                ErrorKind::Io => 4,
            })
        }
    }
}
