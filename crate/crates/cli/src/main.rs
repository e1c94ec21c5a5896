use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use optdesign::experiment::{self, PRESET_NAMES};
use optdesign::io::{read_design_csv, write_design_csv, ErrorBody, ErrorReport, SCHEMA_VERSION};
use optdesign::regularization::build_phi2;
use optdesign::{build_vandermonde, compress, Algorithm, BasisSpec, CandidateSet, Error, ExperimentConfig, Overrides};
use serde_json::json;

/// D-optimal designs on finite candidate sets.
#[derive(Parser)]
#[command(name = "optdesign", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a preset or a config file and write its artifacts.
    Run(RunArgs),
    /// Compress a design to at most dim Φ² points with the same Φ²-moments.
    Compress(DesignArgs),
    /// Report KKT residuals of a design.
    Check(CheckArgs),
    /// List the built-in presets.
    Presets,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    preset: Option<String>,
    /// TOML, or JSON when the extension is `.json`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    algo: Option<Algo>,
    #[arg(long)]
    tau0: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    rmax: Option<usize>,
    #[arg(long)]
    toll: Option<f64>,
    #[arg(long)]
    nstep: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Algo {
    Fixed,
    Adaptive,
    Regularized,
    Titterington,
}

impl From<Algo> for Algorithm {
    fn from(a: Algo) -> Self {
        match a {
            Algo::Fixed => Algorithm::Fixed,
            Algo::Adaptive => Algorithm::Adaptive,
            Algo::Regularized => Algorithm::Regularized,
            Algo::Titterington => Algorithm::Titterington,
        }
    }
}

#[derive(Args)]
struct DesignArgs {
    /// Design CSV with `index` and `weight` columns.
    #[arg(long)]
    design: PathBuf,
    /// Candidate points, one per row.
    #[arg(long)]
    points: PathBuf,
    #[arg(long)]
    model_degree: usize,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    design: PathBuf,
    #[arg(long)]
    points: PathBuf,
    #[arg(long)]
    model_degree: usize,
    /// Largest accepted KKT residual.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
}

/// Exit code of `check` when the design is not optimal within `--tol`.
const CHECK_FAILED: u8 = 1;

const NON_CONVERGENCE: i32 = 5;

fn run(a: RunArgs) -> Result<u8, Error> {
    let mut cfg = match (&a.preset, &a.config) {
        (Some(p), _) => ExperimentConfig::preset(p)?,
        (None, Some(c)) => ExperimentConfig::from_file(c)?,
        (None, None) => unreachable!("clap requires one of the two"),
    };
    cfg.apply(&Overrides {
        algorithm: a.algo.map(Into::into),
        tau0: a.tau0,
        alpha: a.alpha,
        beta: a.beta,
        eps: a.eps,
        r_max: a.rmax,
        toll: a.toll,
        n_step: a.nstep,
        seed: a.seed,
        out_dir: a.out_dir,
    })?;
    let dir = cfg.out_dir();
    let out = experiment::run_experiment(&cfg)?;
    let r = &out.report;
    println!(
        "{}: M={} N={} steps={} converged={} kkt={:.3e} support={} logdet={:.15e}",
        r.name, r.m, r.n, r.steps, r.converged, r.kkt.max_residual, r.kkt.support_size, r.logdet
    );
    if let Some(c) = &r.compression {
        println!("compressed: {} -> {} points, moment residual {:.3e}", c.support_before, c.support_after, c.moment_residual);
    }
    println!("artifacts: {}", dir.display());
    if let Some(msg) = &r.termination {
        // Artifacts describe the last iterate; the exit code still reports the failure.
        let report = ErrorReport {
            schema_version: SCHEMA_VERSION,
            error: ErrorBody { kind: "NonConvergence".into(), message: msg.clone(), exit_code: NON_CONVERGENCE },
        };
        eprintln!("{}", serde_json::to_string(&report).expect("error report serializes"));
        return Ok(NON_CONVERGENCE as u8);
    }
    Ok(0)
}

fn load(points: &PathBuf, design: &PathBuf, degree: usize) -> Result<(CandidateSet, optdesign::Vandermonde, optdesign::Design), Error> {
    let x = CandidateSet::from_csv(points)?;
    let v = build_vandermonde(&x, &BasisSpec::total_degree(degree))?;
    let w = read_design_csv(design, x.len())?;
    Ok((x, v, w))
}

fn compress_cmd(a: DesignArgs) -> Result<u8, Error> {
    let (x, v, w) = load(&a.points, &a.design, a.model_degree)?;
    let p2 = build_phi2(&v);
    let c = compress(&w, &p2)?;
    let wc = c.to_design();
    match &a.out {
        Some(p) => write_design_csv(File::create(p)?, &x, wc.weights())?,
        None => write_design_csv(io::stdout().lock(), &x, wc.weights())?,
    }
    eprintln!(
        "{}",
        json!({
            "schema_version": SCHEMA_VERSION,
            "support_before": w.support().len(),
            "support_after": c.len(),
            "n2": p2.n2(),
            "compressed": c.compressed,
            "moment_residual": c.moment_residual,
            "moment_scale": c.moment_scale,
        })
    );
    Ok(0)
}

fn check_cmd(a: CheckArgs) -> Result<u8, Error> {
    let (_, v, w) = load(&a.points, &a.design, a.model_degree)?;
    let kkt = experiment::check_design(&v, &w)?;
    let ok = kkt.max_residual <= a.tol;
    let report = json!({
        "schema_version": SCHEMA_VERSION,
        "m": v.m(),
        "n": v.n(),
        "support_size": kkt.support.len(),
        "max_residual": kkt.max_residual,
        "mass_error": kkt.mass_error,
        "tol": a.tol,
        "optimal": ok,
    });
    println!("{}", serde_json::to_string_pretty(&report).expect("json values serialize"));
    Ok(if ok { 0 } else { CHECK_FAILED })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Compress(a) => compress_cmd(a),
        Command::Check(a) => check_cmd(a),
        Command::Presets => {
            let mut out = io::stdout().lock();
            for p in PRESET_NAMES {
                let _ = writeln!(out, "{p}");
            }
            Ok(0)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let report = ErrorReport::from(&e);
            eprintln!("{}", serde_json::to_string(&report).expect("error report serializes"));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
