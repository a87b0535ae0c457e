mod svg;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use retailopt_core::eval::{run_suite, Scenario};
use retailopt_core::io::{read_json, read_session, write_atomic, write_json, write_session, EstimateFile, SessionFile};
use retailopt_core::pipeline::{estimate, Method, RunConfig};
use retailopt_core::synth::{generate_session, ScenarioConfig};
use retailopt_core::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;

#[derive(Parser)]
#[command(name = "retailopt", version, about = "Absolute indoor trajectory estimation from drifted relative motion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic sessions and a manifest.
    Generate(GenerateArgs),
    /// Estimate the absolute trajectory of one session.
    Estimate(EstimateArgs),
    /// Compare methods on a directory of sessions with ground truth.
    Eval(EvalArgs),
    /// Draw a session and estimates as SVG.
    Plot(PlotArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Scenario configuration (JSON); defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Seed of the first session; later sessions use consecutive seeds.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    session: PathBuf,
    /// Run configuration (JSON); defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = Method::RetailOpt)]
    method: Method,
    /// Record wall-clock runtime in the output file.
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of session files.
    #[arg(long)]
    sessions: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "retailopt,tsp,raw")]
    methods: Vec<Method>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    session: PathBuf,
    #[arg(long, num_args = 0.., value_delimiter = ',')]
    estimates: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    first_seed: u64,
    count: usize,
    config: ScenarioConfig,
    sessions: Vec<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Estimate(a) => estimate_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Plot(a) => plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::InvalidSession(problems) = &e {
                for p in problems {
                    eprintln!("  {p}");
                }
            }
            ExitCode::from(if e.is_infeasible() { EXIT_INFEASIBLE } else { EXIT_DATA })
        }
    }
}

fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        Error::Json(j) => Error::InvalidInput(format!("{}: {j}", path.display())),
        other => other,
    }
}

fn load_run_config(path: Option<&Path>) -> Result<RunConfig, Error> {
    let cfg = match path {
        Some(p) => read_json(p).map_err(|e| with_path(p, e))?,
        None => RunConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn generate(a: GenerateArgs) -> Result<(), Error> {
    let base: ScenarioConfig = match &a.config {
        Some(p) => read_json(p).map_err(|e| with_path(p, e))?,
        None => ScenarioConfig::default(),
    };
    base.validate()?;
    fs::create_dir_all(&a.out).map_err(|e| with_path(&a.out, e.into()))?;
    let mut names = Vec::with_capacity(a.count);
    for i in 0..a.count as u64 {
        let seed = a.seed + i;
        let session = generate_session(&ScenarioConfig { seed, ..base.clone() })?;
        let name = format!("session_{seed:06}.json");
        write_session(&a.out.join(&name), &session)?;
        names.push(name);
    }
    let manifest = Manifest {
        first_seed: a.seed,
        count: a.count,
        config: base,
        sessions: names,
    };
    write_json(&a.out.join("manifest.json"), &manifest)
}

fn estimate_cmd(a: EstimateArgs) -> Result<(), Error> {
    let cfg = load_run_config(a.config.as_deref())?;
    let session = read_session(&a.session).map_err(|e| with_path(&a.session, e))?;
    let start = Instant::now();
    let est = estimate(&session, a.method, &cfg)?;
    let runtime = a.timing.then(|| start.elapsed().as_millis() as u64);
    write_json(&a.out, &EstimateFile::from_estimate(&est, runtime))
}

/// Session files in `dir`, sorted by name; the manifest is not a session.
fn session_files(dir: &Path) -> Result<Vec<PathBuf>, Error> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| with_path(dir, e.into()))? {
        let path = entry?.path();
        let is_json = path.extension().is_some_and(|e| e == "json");
        if is_json && path.file_name().is_some_and(|n| n != "manifest.json") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn eval_cmd(a: EvalArgs) -> Result<(), Error> {
    let cfg = load_run_config(a.config.as_deref())?;
    let mut scenarios = Vec::new();
    for path in session_files(&a.sessions)? {
        let session = read_session(&path).map_err(|e| with_path(&path, e))?;
        let id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        if session.ground_truth.is_none() {
            eprintln!("warning: {id} has no ground truth, skipped");
        }
        scenarios.push(Scenario {
            id,
            carry_mode: None,
            session,
        });
    }
    if scenarios.is_empty() {
        return Err(Error::InvalidInput(format!("no session files in {}", a.sessions.display())));
    }
    let report = run_suite(&scenarios, &a.methods, &a.seeds, &cfg);
    for row in &report.rows {
        if let Err(msg) = &row.ape_m {
            eprintln!("warning: {} {} seed {} failed: {msg}", row.scenario_id, row.method, row.seed);
        }
    }
    write_atomic(&a.out, report.to_csv()?.as_bytes())
}

fn plot(a: PlotArgs) -> Result<(), Error> {
    let session = read_session(&a.session).map_err(|e| with_path(&a.session, e))?;
    let mut estimates = Vec::with_capacity(a.estimates.len());
    for p in &a.estimates {
        let est: EstimateFile = read_json(p).map_err(|e| with_path(p, e))?;
        if est.trajectory.is_empty() {
            return Err(Error::InvalidInput(format!("{}: empty trajectory", p.display())));
        }
        estimates.push(est);
    }
    write_atomic(&a.out, svg::render(&SessionFile::from_session(&session), &estimates).as_bytes())
}
