//! Experiment configurations, the end-to-end pipeline and its artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::compression::{compress, CompressedDesign};
use crate::design::{build_vandermonde, gram_matrix, CandidateSet, Design, SqrtDesign, Vandermonde};
use crate::diagnostics::{
    self, error_estimate, hessian_spectrum, kkt_from_gradient, rate_analysis, strengthen_with_gradient,
    titterington_solve, wellposedness_probe, witness_energy_change, ErrorEstimate, ProbeOptions, RateReport,
    TitteringtonOptions, TitteringtonRow, Verdict,
};
use crate::error::{Error, Result};
use crate::flow::{solve_adaptive, solve_fixed_step, FlowOutcome, FlowParams, FlowTrace, Objective};
use crate::generators;
use crate::io::{self, ResidualTimeRow, SCHEMA_VERSION};
use crate::linalg;
use crate::regularization::{build_phi2, kernel_projector, solve_regularized, EtaSchedule, KernelProjector, Phi2Space};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Generator {
    ChebyshevLobattoGrid {
        deg: usize,
        #[serde(default = "two")]
        dim: usize,
    },
    /// Points in `[-1, 1]²`.
    UniformCloud { m: usize, seed: u64 },
    GaussianCloud { m: usize, seed: u64 },
    DiskAdmissibleMesh { mesh_degree: usize },
    /// Headered CSV, one coordinate per column.
    CsvFile { path: PathBuf },
}

fn two() -> usize {
    2
}

impl Generator {
    pub fn generate(&self) -> Result<CandidateSet> {
        match self {
            Generator::ChebyshevLobattoGrid { deg, dim } => generators::gen_chebyshev_lobatto_grid(*deg, *dim),
            Generator::UniformCloud { m, seed } => generators::gen_uniform_cloud(*m, *seed),
            Generator::GaussianCloud { m, seed } => generators::gen_gaussian_cloud(*m, *seed),
            Generator::DiskAdmissibleMesh { mesh_degree } => generators::gen_disk_admissible_mesh(*mesh_degree),
            Generator::CsvFile { path } => CandidateSet::from_csv(path),
        }
    }

    fn set_seed(&mut self, s: u64) -> bool {
        match self {
            Generator::UniformCloud { seed, .. } | Generator::GaussianCloud { seed, .. } => {
                *seed = s;
                true
            }
            _ => false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Constant τ; indefinite step Hessians are damped.
    Fixed,
    Adaptive,
    /// η-continuation on the adaptive flow.
    Regularized,
    Titterington,
}

/// Titterington run over the same wall-clock budget as the main solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Baseline {
    pub options: TitteringtonOptions,
    /// Budget as a multiple of the main solve time.
    pub time_factor: f64,
}

impl Default for Baseline {
    fn default() -> Self {
        Baseline { options: TitteringtonOptions { toll: 0.0, ..Default::default() }, time_factor: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsOptions {
    /// Dense Hessian eigenvalues (skipped above `dense_cap` points).
    pub spectrum: bool,
    pub probe: bool,
    pub probe_options: ProbeOptions,
    /// Number of tail steps summarized in the rate report.
    pub rate_tail: usize,
    /// Residuals at or below this are left out of the rate report.
    pub rate_floor: f64,
    pub dense_cap: usize,
}

impl Default for DiagnosticsOptions {
    fn default() -> Self {
        DiagnosticsOptions {
            spectrum: true,
            probe: true,
            probe_options: ProbeOptions::default(),
            rate_tail: 10,
            rate_floor: 1e-14,
            dense_cap: 2000,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputOptions {
    /// Defaults to `out/<name>`.
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub generator: Generator,
    /// Total degree of the Chebyshev model space.
    pub model_degree: usize,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub flow: FlowParams,
    #[serde(default)]
    pub eta: EtaSchedule,
    #[serde(default)]
    pub compress: bool,
    #[serde(default)]
    pub titterington: TitteringtonOptions,
    #[serde(default)]
    pub baseline: Option<Baseline>,
    #[serde(default)]
    pub diagnostics: DiagnosticsOptions,
    #[serde(default)]
    pub output: OutputOptions,
}

pub const PRESET_NAMES: [&str; 7] = ["exp1a", "exp1b", "exp2", "exp3", "exp4", "exp4b", "exp5"];

fn preset_source(name: &str) -> Option<&'static str> {
    Some(match name {
        "exp1a" => include_str!("../presets/exp1a.toml"),
        "exp1b" => include_str!("../presets/exp1b.toml"),
        "exp2" => include_str!("../presets/exp2.toml"),
        "exp3" => include_str!("../presets/exp3.toml"),
        "exp4" => include_str!("../presets/exp4.toml"),
        "exp4b" => include_str!("../presets/exp4b.toml"),
        "exp5" => include_str!("../presets/exp5.toml"),
        _ => return None,
    })
}

/// Command-line style overrides applied on top of a config.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub algorithm: Option<Algorithm>,
    pub tau0: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub eps: Option<f64>,
    pub r_max: Option<usize>,
    pub toll: Option<f64>,
    pub n_step: Option<usize>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let src = preset_source(name).ok_or_else(|| {
            Error::InvalidConfig(format!("unknown preset `{name}` (known: {})", PRESET_NAMES.join(", ")))
        })?;
        Self::from_toml(src)
    }

    pub fn from_toml(src: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(src)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `.json` files as JSON and anything else as TOML.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let src = fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            let cfg: Self = serde_json::from_str(&src)?;
            cfg.validate()?;
            Ok(cfg)
        } else {
            Self::from_toml(&src)
        }
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(a) = o.algorithm {
            self.algorithm = a;
        }
        let f = &mut self.flow;
        f.tau0 = o.tau0.unwrap_or(f.tau0);
        f.alpha = o.alpha.unwrap_or(f.alpha);
        f.beta = o.beta.unwrap_or(f.beta);
        f.eps = o.eps.unwrap_or(f.eps);
        f.r_max = o.r_max.unwrap_or(f.r_max);
        f.n_step = o.n_step.unwrap_or(f.n_step);
        if o.toll.is_some() {
            f.toll = o.toll;
        }
        if let Some(s) = o.seed {
            if !self.generator.set_seed(s) {
                return Err(Error::InvalidConfig("--seed applies only to random clouds".into()));
            }
            self.diagnostics.probe_options.seed = s;
        }
        if o.out_dir.is_some() {
            self.output.dir = o.out_dir.clone();
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.flow.validate()?;
        if self.algorithm == Algorithm::Regularized {
            self.eta.validate()?;
        }
        if let Some(b) = &self.baseline {
            if !(b.time_factor > 0.0) {
                return Err(Error::InvalidConfig("baseline time_factor must be positive".into()));
            }
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::InvalidConfig("name must be a non-empty file name".into()));
        }
        Ok(())
    }

    pub fn out_dir(&self) -> PathBuf {
        self.output.dir.clone().unwrap_or_else(|| Path::new("out").join(&self.name))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct KktSummary {
    pub max_residual: f64,
    pub max_residual_on_support: f64,
    pub max_residual_off_support: f64,
    pub mass_error: f64,
    pub support_size: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct SupportBracket {
    pub lower: usize,
    pub upper: usize,
    pub support_size: usize,
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GOptimality {
    pub max_bergman: f64,
    pub n: usize,
    /// `max B ∈ [N − 1e-6, N + 1e-8]`.
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumSummary {
    pub min: f64,
    pub max: f64,
    /// Eigenvalues below `−1e-12 · max|λ|`.
    pub negative: usize,
    /// Eigenvalues with `|λ| ≤ 1e-12 · max|λ|`.
    pub near_zero: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct WellPosednessSummary {
    pub verdict: Verdict,
    pub kernel_dim: usize,
    pub support_kernel_dim: usize,
    pub witness_distance: f64,
    pub witness_energy_change: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CompressionSummary {
    pub compressed: bool,
    pub support_before: usize,
    pub support_after: usize,
    pub n2: usize,
    pub moment_residual: f64,
    pub moment_scale: f64,
    pub mass_change: f64,
    pub logdet_before: f64,
    pub logdet_after: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EtaRoundSummary {
    pub eta: f64,
    pub steps: usize,
    pub converged: bool,
    pub change: f64,
    pub grad_inf: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BaselineSummary {
    pub iterations: usize,
    pub time_budget_s: f64,
    pub kkt_residual: f64,
    pub logdet: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Timings {
    pub generate_s: f64,
    pub vandermonde_s: f64,
    pub solve_s: f64,
    pub compress_s: f64,
    pub diagnostics_s: f64,
    pub total_s: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DiagnosticsReport {
    pub schema_version: u32,
    pub name: String,
    pub algorithm: Algorithm,
    pub m: usize,
    pub n: usize,
    pub n2: Option<usize>,
    pub converged: bool,
    /// Set when the solver stopped early; the report then describes the last iterate.
    pub termination: Option<String>,
    pub steps: usize,
    /// `‖∇F‖∞` (or `‖∇F_η‖∞`) at the returned point, absent for the multiplicative solver.
    pub grad_inf: Option<f64>,
    pub eta_final: Option<f64>,
    pub kkt: KktSummary,
    pub support_bracket: SupportBracket,
    pub g_optimality: GOptimality,
    pub logdet: f64,
    pub spectrum: Option<SpectrumSummary>,
    pub wellposedness: Option<WellPosednessSummary>,
    pub error_estimate: Option<ErrorEstimate>,
    pub compression: Option<CompressionSummary>,
    pub eta_rounds: Vec<EtaRoundSummary>,
    pub baseline: Option<BaselineSummary>,
    pub rates: Option<RateReport>,
    pub timings: Timings,
}

/// Everything produced by one run.
#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub points: CandidateSet,
    pub design: Design,
    pub trace: Option<FlowTrace>,
    pub titterington_trace: Vec<TitteringtonRow>,
    pub baseline_trace: Vec<TitteringtonRow>,
    pub grad_e: nalgebra::DVector<f64>,
    pub kkt_residual: Vec<f64>,
    pub spectrum: Option<Vec<f64>>,
    pub compressed: Option<CompressedDesign>,
    pub report: DiagnosticsReport,
}

fn since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

/// Keeps the last iterate of a flow that ran out of steps or restarts.
fn partial_flow(r: Result<FlowOutcome>) -> Result<(FlowOutcome, Option<String>)> {
    match r {
        Ok(o) => Ok((o, None)),
        Err(e @ (Error::NonConvergence { .. } | Error::RestartBudgetExhausted { .. })) => {
            let msg = e.to_string();
            match e {
                Error::NonConvergence { partial, .. } | Error::RestartBudgetExhausted { partial, .. } => {
                    Ok((*partial, Some(msg)))
                }
                _ => unreachable!(),
            }
        }
        Err(e) => Err(e),
    }
}

struct Solved {
    design: Design,
    z: Option<SqrtDesign>,
    trace: Option<FlowTrace>,
    titterington: Vec<TitteringtonRow>,
    termination: Option<String>,
    steps: usize,
    eta_final: Option<f64>,
    eta_rounds: Vec<EtaRoundSummary>,
}

fn solve(cfg: &ExperimentConfig, v: &Vandermonde, phi2: Option<&(Phi2Space, KernelProjector)>) -> Result<Solved> {
    let m = v.m();
    let z0 = SqrtDesign::uniform(m);
    let from_flow = |(o, term): (FlowOutcome, Option<String>)| Solved {
        design: o.z.square(),
        steps: o.steps(),
        z: Some(o.z),
        trace: Some(o.trace),
        titterington: Vec::new(),
        termination: term,
        eta_final: None,
        eta_rounds: Vec::new(),
    };
    let obj = Objective::energy_f(v);
    Ok(match cfg.algorithm {
        Algorithm::Fixed => {
            let p = FlowParams { damped: true, ..cfg.flow.clone() };
            from_flow(partial_flow(solve_fixed_step(&obj, &z0, &p))?)
        }
        Algorithm::Adaptive => from_flow(partial_flow(solve_adaptive(&obj, &z0, &cfg.flow))?),
        Algorithm::Regularized => {
            let (_, proj) = phi2.expect("projector is built for regularized runs");
            match solve_regularized(v, &z0, &cfg.eta, &cfg.flow, proj) {
                Ok(out) => {
                    let mut trace = FlowTrace::default();
                    let mut offset = 0;
                    let mut t0 = 0.0;
                    let mut rounds = Vec::new();
                    for r in &out.rounds {
                        for row in &r.outcome.trace.rows {
                            if offset > 0 && row.k == 0 {
                                continue;
                            }
                            let mut row = row.clone();
                            row.k += offset;
                            row.elapsed_s += t0;
                            trace.rows.push(row);
                        }
                        offset += r.outcome.steps();
                        t0 = trace.last().map_or(0.0, |r| r.elapsed_s);
                        rounds.push(EtaRoundSummary {
                            eta: r.eta,
                            steps: r.outcome.steps(),
                            converged: r.outcome.converged,
                            change: r.change,
                            grad_inf: r.outcome.grad_inf(),
                        });
                    }
                    Solved {
                        design: out.z.square(),
                        z: Some(out.z),
                        steps: offset,
                        trace: Some(trace),
                        titterington: Vec::new(),
                        termination: None,
                        eta_final: Some(out.eta_final),
                        eta_rounds: rounds,
                    }
                }
                Err(e) => from_flow(partial_flow(Err(e))?),
            }
        }
        Algorithm::Titterington => match titterington_solve(v, &Design::uniform(m), &cfg.titterington) {
            Ok(out) => Solved {
                design: out.w,
                z: None,
                trace: None,
                titterington: out.trace,
                termination: None,
                steps: out.iterations,
                eta_final: None,
                eta_rounds: Vec::new(),
            },
            Err(e) => return Err(e),
        },
    })
}

/// Runs the pipeline without writing anything.
pub fn execute(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let t_all = Instant::now();
    let mut timings = Timings::default();

    let t = Instant::now();
    let x = cfg.generator.generate()?;
    timings.generate_s = since(t);

    let t = Instant::now();
    let v = build_vandermonde(&x, &BasisSpec::total_degree(cfg.model_degree))?;
    timings.vandermonde_s = since(t);
    let (m, n) = (v.m(), v.n());

    let need_phi2 = cfg.algorithm == Algorithm::Regularized || cfg.compress || cfg.diagnostics.probe;
    let phi2 = need_phi2.then(|| {
        let p2 = build_phi2(&v);
        let proj = kernel_projector(&p2);
        (p2, proj)
    });

    let t = Instant::now();
    let solved = solve(cfg, &v, phi2.as_ref())?;
    timings.solve_s = since(t);

    let t = Instant::now();
    let mut baseline_trace = Vec::new();
    let baseline = match &cfg.baseline {
        Some(b) => {
            let budget = b.time_factor * timings.solve_s;
            let opts = TitteringtonOptions { time_limit_s: Some(budget), ..b.options };
            let out = titterington_solve(&v, &Design::uniform(m), &opts)?;
            baseline_trace = out.trace;
            Some(BaselineSummary {
                iterations: out.iterations,
                time_budget_s: budget,
                kkt_residual: out.kkt.max_residual,
                logdet: out.logdet,
            })
        }
        None => None,
    };

    let w = solved.design.clone();
    let z = solved.z.clone().unwrap_or_else(|| w.sqrt());
    let eval = Objective::energy_f(&v).evaluate(&z)?;
    let kkt = kkt_from_gradient(&w, &eval.grad_e);
    let t_sup = w.support_threshold();
    let (mut on, mut off) = (0.0f64, 0.0f64);
    for i in 0..m {
        if w.weights()[i] > t_sup {
            on = on.max(kkt.residual_vector[i]);
        } else {
            off = off.max(kkt.residual_vector[i]);
        }
    }
    let support_size = kkt.support.len();
    let n2 = phi2.as_ref().map(|(p2, _)| p2.n2());
    let upper = n2.unwrap_or(n * (n + 1) / 2);
    let max_b = eval.bergman.max();
    let logdet = gram_matrix(&v, &w)?.logdet.unwrap_or(f64::NEG_INFINITY);

    let grad_inf = match (&solved.z, cfg.algorithm) {
        (Some(z), Algorithm::Regularized) => {
            let (_, proj) = phi2.as_ref().expect("projector is built for regularized runs");
            let eta = solved.eta_final.unwrap_or(0.0);
            Some(linalg::norm_inf(&Objective::regularized(&v, eta, proj).evaluate(z)?.grad))
        }
        (Some(_), _) => Some(linalg::norm_inf(&eval.grad)),
        (None, _) => None,
    };

    let mut spectrum = None;
    let mut spectrum_summary = None;
    if cfg.diagnostics.spectrum && m <= cfg.diagnostics.dense_cap {
        let eig = hessian_spectrum(&Objective::energy_f(&v), &z, cfg.diagnostics.dense_cap)?;
        let scale = eig.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        spectrum_summary = Some(SpectrumSummary {
            min: eig[0],
            max: *eig.last().unwrap(),
            negative: eig.iter().filter(|&&l| l < -1e-12 * scale).count(),
            near_zero: eig.iter().filter(|&&l| l.abs() <= 1e-12 * scale).count(),
        });
        spectrum = Some(eig);
    }

    let wellposedness = match (&phi2, cfg.diagnostics.probe) {
        (Some((p2, proj)), true) => {
            let mut cert = wellposedness_probe(&w, p2, proj, &cfg.diagnostics.probe_options);
            strengthen_with_gradient(&mut cert, &w, &eval.grad_e);
            let change = match &cert.witness {
                Some(step) => Some(witness_energy_change(&v, &w, step)?),
                None => None,
            };
            Some(WellPosednessSummary {
                verdict: cert.verdict,
                kernel_dim: cert.kernel_dim,
                support_kernel_dim: cert.support_kernel_dim,
                witness_distance: cert.witness_distance,
                witness_energy_change: change,
            })
        }
        _ => None,
    };
    // The estimate needs dense eigenvalues of the support block.
    let estimate = if w.support().len() <= cfg.diagnostics.dense_cap {
        error_estimate(&v, &z).ok()
    } else {
        None
    };
    let rates = solved
        .trace
        .as_ref()
        .map(|tr| rate_analysis(tr, cfg.diagnostics.rate_tail, cfg.diagnostics.rate_floor));
    timings.diagnostics_s = since(t);

    let t = Instant::now();
    let mut compressed = None;
    let mut compression = None;
    if cfg.compress {
        let (p2, _) = phi2.as_ref().expect("Φ² is built when compressing");
        let c = compress(&w, p2)?;
        let wc = c.to_design();
        let after = gram_matrix(&v, &wc)?.logdet.unwrap_or(f64::NEG_INFINITY);
        compression = Some(CompressionSummary {
            compressed: c.compressed,
            support_before: support_size,
            support_after: c.len(),
            n2: p2.n2(),
            moment_residual: c.moment_residual,
            moment_scale: c.moment_scale,
            mass_change: (wc.mass() - w.mass()).abs(),
            logdet_before: logdet,
            logdet_after: after,
        });
        compressed = Some(c);
    }
    timings.compress_s = since(t);
    timings.total_s = since(t_all);

    let report = DiagnosticsReport {
        schema_version: SCHEMA_VERSION,
        name: cfg.name.clone(),
        algorithm: cfg.algorithm,
        m,
        n,
        n2,
        converged: solved.termination.is_none(),
        termination: solved.termination.clone(),
        steps: solved.steps,
        grad_inf,
        eta_final: solved.eta_final,
        kkt: KktSummary {
            max_residual: kkt.max_residual,
            max_residual_on_support: on,
            max_residual_off_support: off,
            mass_error: kkt.mass_error,
            support_size,
        },
        support_bracket: SupportBracket {
            lower: n,
            upper,
            support_size,
            holds: (n..=upper).contains(&support_size),
        },
        g_optimality: GOptimality {
            max_bergman: max_b,
            n,
            holds: max_b >= n as f64 - 1e-6 && max_b <= n as f64 + 1e-8,
        },
        logdet,
        spectrum: spectrum_summary,
        wellposedness,
        error_estimate: estimate,
        compression,
        eta_rounds: solved.eta_rounds,
        baseline,
        rates,
        timings,
    };
    Ok(ExperimentOutcome {
        config: cfg.clone(),
        points: x,
        design: w,
        trace: solved.trace,
        titterington_trace: solved.titterington,
        baseline_trace,
        grad_e: eval.grad_e,
        kkt_residual: kkt.residual_vector,
        spectrum,
        compressed,
        report,
    })
}

/// File names written into the output directory.
pub mod artifacts {
    pub const POINTS: &str = "points.csv";
    pub const DESIGN: &str = "design.csv";
    pub const COMPRESSED: &str = "design_compressed.csv";
    pub const TRACE: &str = "trace.csv";
    pub const KKT: &str = "kkt.csv";
    pub const SPECTRUM: &str = "spectrum.csv";
    pub const RESIDUAL_TIME: &str = "residual_time.csv";
    pub const DIAGNOSTICS: &str = "diagnostics.json";
    pub const CONFIG: &str = "config.json";
}

/// Writes every artifact of `out` into `dir`.
pub fn write_artifacts(out: &ExperimentOutcome, dir: &Path) -> Result<()> {
    use artifacts::*;
    fs::create_dir_all(dir)?;
    io::write_points_csv(io::create(dir, POINTS)?, &out.points)?;
    io::write_design_csv(io::create(dir, DESIGN)?, &out.points, out.design.weights())?;
    if let Some(c) = &out.compressed {
        io::write_design_csv(io::create(dir, COMPRESSED)?, &out.points, c.to_design().weights())?;
    }
    if let Some(tr) = &out.trace {
        tr.write_csv(io::create(dir, TRACE)?)?;
    }
    io::write_kkt_csv(io::create(dir, KKT)?, &out.points, &out.design, &out.grad_e, &out.kkt_residual)?;
    if let Some(eig) = &out.spectrum {
        io::write_spectrum_csv(io::create(dir, SPECTRUM)?, eig)?;
    }
    let mut rows = out.trace.as_ref().map(ResidualTimeRow::from_trace).unwrap_or_default();
    rows.extend(ResidualTimeRow::from_titterington(&out.titterington_trace));
    let mut base = ResidualTimeRow::from_titterington(&out.baseline_trace);
    for r in &mut base {
        r.algorithm = "titterington_baseline".into();
    }
    rows.extend(base);
    io::write_residual_time_csv(io::create(dir, RESIDUAL_TIME)?, &rows)?;
    io::write_json(dir.join(DIAGNOSTICS), &out.report)?;
    io::write_json(dir.join(CONFIG), &out.config)?;
    Ok(())
}

/// Executes `cfg` and writes its artifacts to [`ExperimentConfig::out_dir`].
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let out = execute(cfg)?;
    write_artifacts(&out, &cfg.out_dir())?;
    Ok(out)
}

/// KKT report for a design read from disk, as used by the `check` command.
pub fn check_design(v: &Vandermonde, w: &Design) -> Result<diagnostics::KktReport> {
    let eval = Objective::energy_f(v).evaluate(&w.sqrt())?;
    Ok(kkt_from_gradient(w, &eval.grad_e))
}
