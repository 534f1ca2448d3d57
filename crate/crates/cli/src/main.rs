//! Batch front door for the worm-QMC library: parse a Hamiltonian document,
//! run estimation / verification / diagnostics, emit machine-readable JSON
//! result documents with full provenance (tool version, manifest echo, RNG
//! algorithm and seed, resolved per-module config).
//!
//! Exit codes: 0 success, 1 I/O, 2 input parse error, 3 Hamiltonian
//! validation error, 4 oracle cap exceeded, 5 runtime/verification failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use wormline::chain::{Chain, ChainParams, RunStats, TraceWriter};
use wormline::diagnostics::{
    adaptive_burnin, autocorrelation_function, empirical_tv_decay, sector_ratio_monitor,
    write_series_tsv, SectorRatioReport, TimeSeries,
};
use wormline::estimator::{estimate_partition_function, plan, ratio_observable, EstimatorParams};
use wormline::hamiltonian::{build_schedule, choose_trotter_number, XYHamiltonian};
use wormline::oracle::{
    build_transition_matrix, enumerate_space, exact_trotterized_z, exact_z, spectral_gap,
    SpectralOutcome, DEFAULT_QUBIT_CAP, DEFAULT_STATE_CAP,
};
use wormline::worldline::{Geometry, WorldlineConfig};
use wormline::{Error, RNG_ALGORITHM};

const EXIT_IO: u8 = 1;
const EXIT_PARSE: u8 = 2;
const EXIT_VALIDATION: u8 = 3;
const EXIT_CAP: u8 = 4;
const EXIT_RUNTIME: u8 = 5;

const CONFIG_ENV: &str = "WORMLINE_CONFIG";

#[derive(Parser)]
#[command(
    name = "wormline",
    version,
    about = "Worm (operator-loop) path-integral QMC for stoquastic XY Hamiltonians"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Estimate the partition function Z(beta, H) to multiplicative precision.
    Estimate(EstimateArgs),
    /// Run the exact oracle suite (stationarity, detailed balance, spectral
    /// gap, Trotter sandwich, sector bound, telescoping identity).
    Verify(VerifyArgs),
    /// Emit mixing diagnostics: TV decay, autocorrelation functions, sector
    /// occupancy, optional binary step trace.
    Diagnose(DiagnoseArgs),
    /// Print the Trotter/sampling plan (L, k, S, operator counts) without
    /// running anything.
    Schedule(ScheduleArgs),
}

/// Flags shared by every subcommand; echoed verbatim into output documents.
#[derive(Args, Serialize, Clone)]
struct CommonArgs {
    /// Hamiltonian document: {"n", "pairs": [{"i","j","a","b"}], "fields": [{"i","d"}]}
    #[arg(long)]
    hamiltonian: PathBuf,
    /// Inverse temperature.
    #[arg(long)]
    beta: f64,
    /// Target multiplicative precision e^{+-eps}.
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    /// 64-bit RNG seed (ChaCha8 streams derive from it).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output document path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Config file path; falls back to $WORMLINE_CONFIG.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write runtime_seconds as 0 for byte-stable output documents.
    #[arg(long, default_value_t = false)]
    no_timing: bool,
    /// Override the Trotter number L.
    #[arg(long)]
    trotter_l: Option<u32>,
    /// Trotter constant c_L (default 4).
    #[arg(long)]
    c_l: Option<f64>,
    /// Sample-budget constant c_S (default 8).
    #[arg(long)]
    c_s: Option<f64>,
    /// Failure-probability budget (default 0.1).
    #[arg(long)]
    fail_prob: Option<f64>,
    /// Burn-in steps (default 20*M).
    #[arg(long)]
    burnin: Option<u64>,
    /// Thinning stride in steps (default M, one sweep).
    #[arg(long)]
    thinning: Option<u64>,
    /// Lazy hold probability (default 0.5).
    #[arg(long)]
    laziness: Option<f64>,
    /// Independent chains per grid point, split RNG streams (default 1).
    #[arg(long)]
    chains: Option<u32>,
    /// Median-of-means groups (robustness knob, off by default).
    #[arg(long)]
    mom_groups: Option<u32>,
    /// Accept beta < 1 without rescaling.
    #[arg(long, default_value_t = false)]
    allow_small_beta: bool,
}

#[derive(Args, Serialize, Clone)]
struct EstimateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonArgs,
}

#[derive(Args, Serialize, Clone)]
struct VerifyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonArgs,
    /// Flagging threshold: sector mass ratio above multiple*M fails the bound check.
    #[arg(long)]
    sector_ratio_multiple: Option<f64>,
}

#[derive(Args, Serialize, Clone)]
struct DiagnoseArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonArgs,
    /// Output directory for the diagnostics bundle.
    #[arg(long, default_value = "wormline-diagnostics")]
    out_dir: PathBuf,
    /// Thinned sweeps to record (default 1000).
    #[arg(long)]
    sweeps: Option<u64>,
    /// Exact TV-decay horizon in steps (default 512).
    #[arg(long)]
    tv_horizon: Option<usize>,
    /// Write the binary step trace of the measurement phase here.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args, Serialize, Clone)]
struct ScheduleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonArgs,
}

/// Optional config file; flags override these, these override defaults.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ToolConfig {
    c_l: Option<f64>,
    c_s: Option<f64>,
    fail_prob: Option<f64>,
    laziness: Option<f64>,
    chains: Option<u32>,
    burnin_steps: Option<u64>,
    thinning_steps: Option<u64>,
    median_of_means_groups: Option<u32>,
    allow_small_beta: Option<bool>,
    oracle_qubit_cap: Option<u32>,
    enum_state_cap: Option<u64>,
    sector_ratio_multiple: Option<f64>,
    tv_horizon: Option<usize>,
    diagnose_sweeps: Option<u64>,
}

/// Fully resolved per-module knobs, echoed into every output document.
#[derive(Debug, Clone, Serialize)]
struct ResolvedConfig {
    estimator: EstimatorParams,
    oracle_qubit_cap: u32,
    enum_state_cap: u64,
    sector_ratio_multiple: f64,
    tv_horizon: usize,
    diagnose_sweeps: u64,
    config_file: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidHamiltonian(_) => EXIT_VALIDATION,
            Error::QubitCap { .. } | Error::EnumerationCap { .. } => EXIT_CAP,
            Error::Io(_) => EXIT_IO,
            _ => EXIT_RUNTIME,
        };
        Failure::new(code, e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.cmd {
        Cmd::Estimate(args) => cmd_estimate(args),
        Cmd::Verify(args) => cmd_verify(args),
        Cmd::Diagnose(args) => cmd_diagnose(args),
        Cmd::Schedule(args) => cmd_schedule(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(common: &CommonArgs) -> Result<(ToolConfig, Option<PathBuf>), Failure> {
    let path = match &common.config {
        Some(p) => Some(p.clone()),
        None => std::env::var_os(CONFIG_ENV).map(PathBuf::from),
    };
    match &path {
        None => Ok((ToolConfig::default(), None)),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                Failure::new(
                    EXIT_PARSE,
                    format!("cannot read config {}: {e}", p.display()),
                )
            })?;
            let cfg = serde_json::from_str(&text).map_err(|e| {
                Failure::new(EXIT_PARSE, format!("malformed config {}: {e}", p.display()))
            })?;
            Ok((cfg, path))
        }
    }
}

fn resolve(common: &CommonArgs) -> Result<ResolvedConfig, Failure> {
    let (file, config_file) = load_config(common)?;
    let defaults = EstimatorParams::default();
    let estimator = EstimatorParams {
        c_l: common.c_l.or(file.c_l).unwrap_or(defaults.c_l),
        c_s: common.c_s.or(file.c_s).unwrap_or(defaults.c_s),
        fail_prob: common
            .fail_prob
            .or(file.fail_prob)
            .unwrap_or(defaults.fail_prob),
        laziness: common
            .laziness
            .or(file.laziness)
            .unwrap_or(defaults.laziness),
        chains: common.chains.or(file.chains).unwrap_or(defaults.chains),
        trotter_l: common.trotter_l,
        burnin_steps: common.burnin.or(file.burnin_steps),
        thinning_steps: common.thinning.or(file.thinning_steps),
        median_of_means_groups: common.mom_groups.or(file.median_of_means_groups),
        allow_small_beta: common.allow_small_beta
            || file.allow_small_beta.unwrap_or(defaults.allow_small_beta),
        c2_patience: defaults.c2_patience,
    };
    Ok(ResolvedConfig {
        estimator,
        oracle_qubit_cap: file.oracle_qubit_cap.unwrap_or(DEFAULT_QUBIT_CAP),
        enum_state_cap: file.enum_state_cap.unwrap_or(DEFAULT_STATE_CAP),
        sector_ratio_multiple: file.sector_ratio_multiple.unwrap_or(100.0),
        tv_horizon: file.tv_horizon.unwrap_or(512),
        diagnose_sweeps: file.diagnose_sweeps.unwrap_or(1000),
        config_file,
    })
}

fn load_hamiltonian(path: &Path) -> Result<XYHamiltonian, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Failure::new(
            EXIT_PARSE,
            format!("cannot read hamiltonian {}: {e}", path.display()),
        )
    })?;
    let h: XYHamiltonian = serde_json::from_str(&text).map_err(|e| {
        Failure::new(
            EXIT_PARSE,
            format!("malformed hamiltonian {}: {e}", path.display()),
        )
    })?;
    Ok(h)
}

fn ensure_valid(h: &XYHamiltonian) -> Result<Vec<String>, Failure> {
    let report = h.validate();
    if report.is_ok() {
        Ok(report.warnings)
    } else {
        Err(Failure::new(
            EXIT_VALIDATION,
            format!("invalid Hamiltonian: {}", report.violations.join("; ")),
        ))
    }
}

#[derive(Serialize)]
struct ToolInfo {
    name: &'static str,
    version: &'static str,
}

#[derive(Serialize)]
struct RngInfo {
    algorithm: &'static str,
    seed: u64,
}

/// Every output document: tool version, manifest echo, resolved config, RNG
/// identity, wall-clock, and the subcommand-specific result.
#[derive(Serialize)]
struct Document<T: Serialize> {
    tool: ToolInfo,
    subcommand: &'static str,
    manifest: serde_json::Value,
    config: ResolvedConfig,
    rng: RngInfo,
    runtime_seconds: f64,
    result: T,
}

fn emit_document<T: Serialize>(out: &Option<PathBuf>, doc: &Document<T>) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(doc)
        .map_err(|e| Failure::new(EXIT_IO, format!("serialization failed: {e}")))?;
    match out {
        Some(path) => {
            if let Some(dir) = path.parent() {
                if !dir.as_os_str().is_empty() {
                    std::fs::create_dir_all(dir)
                        .map_err(|e| Failure::new(EXIT_IO, format!("mkdir failed: {e}")))?;
                }
            }
            std::fs::write(path, text.as_bytes())
                .map_err(|e| Failure::new(EXIT_IO, format!("write failed: {e}")))?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn manifest_value<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).expect("manifests serialize")
}

// --- estimate ---------------------------------------------------------

fn cmd_estimate(args: EstimateArgs) -> Result<(), Failure> {
    let start = Instant::now();
    let common = &args.common;
    let resolved = resolve(common)?;
    let h = load_hamiltonian(&common.hamiltonian)?;
    ensure_valid(&h)?;

    let mut result = estimate_partition_function(
        &h,
        common.beta,
        common.eps,
        &resolved.estimator,
        common.seed,
    )
    .map_err(Failure::from)?;
    if common.no_timing {
        result.clear_timing();
    }
    let runtime = if common.no_timing {
        0.0
    } else {
        start.elapsed().as_secs_f64()
    };
    let log_z = result.log_z;
    let z = result.z;
    let doc = Document {
        tool: ToolInfo {
            name: "wormline",
            version: env!("CARGO_PKG_VERSION"),
        },
        subcommand: "estimate",
        manifest: manifest_value(&args),
        config: resolved,
        rng: RngInfo {
            algorithm: RNG_ALGORITHM,
            seed: common.seed,
        },
        runtime_seconds: runtime,
        result,
    };
    emit_document(&common.out, &doc)?;
    if common.out.is_some() {
        println!("log_Z = {log_z:.6}  Z = {z:.6}");
    }
    Ok(())
}

// --- schedule ---------------------------------------------------------

#[derive(Serialize)]
struct SchedulePlan {
    n: u32,
    #[serde(rename = "L")]
    l: u32,
    delta: f64,
    #[serde(rename = "M1")]
    m1: u32,
    #[serde(rename = "M2")]
    m2: u32,
    #[serde(rename = "M")]
    m: u32,
    junctions: u32,
    h_norm: f64,
    k: u32,
    #[serde(rename = "S")]
    s: u64,
    grid: Vec<f64>,
    total_samples: u64,
}

fn cmd_schedule(args: ScheduleArgs) -> Result<(), Failure> {
    let start = Instant::now();
    let common = &args.common;
    let resolved = resolve(common)?;
    let h = load_hamiltonian(&common.hamiltonian)?;
    ensure_valid(&h)?;

    let es = plan(&h, common.beta, common.eps, &resolved.estimator).map_err(Failure::from)?;
    let sched = build_schedule(&h, common.beta, es.l).map_err(Failure::from)?;
    let plan_out = SchedulePlan {
        n: h.n,
        l: es.l,
        delta: sched.delta,
        m1: sched.m1,
        m2: sched.m2,
        m: sched.m(),
        junctions: sched.junction_count(),
        h_norm: es.h_norm,
        k: es.k,
        s: es.samples_per_step,
        grid: es.beta_grid,
        total_samples: es.k as u64 * es.samples_per_step,
    };
    println!(
        "L = {} (delta = {:.6})\nM1 = {}, M2 = {}, M = {} (junctions = {})\n\
         H_norm = {}\nk = {} step(s), S = {} samples/step ({} total)",
        plan_out.l,
        plan_out.delta,
        plan_out.m1,
        plan_out.m2,
        plan_out.m,
        plan_out.junctions,
        plan_out.h_norm,
        plan_out.k,
        plan_out.s,
        plan_out.total_samples
    );
    if common.out.is_some() {
        let runtime = if common.no_timing {
            0.0
        } else {
            start.elapsed().as_secs_f64()
        };
        let doc = Document {
            tool: ToolInfo {
                name: "wormline",
                version: env!("CARGO_PKG_VERSION"),
            },
            subcommand: "schedule",
            manifest: manifest_value(&args),
            config: resolved,
            rng: RngInfo {
                algorithm: RNG_ALGORITHM,
                seed: common.seed,
            },
            runtime_seconds: runtime,
            result: plan_out,
        };
        emit_document(&common.out, &doc)?;
    }
    Ok(())
}

// --- verify -----------------------------------------------------------

#[derive(Serialize)]
struct CheckOutcome {
    name: &'static str,
    status: &'static str, // pass | fail | info | skipped
    residual: Option<f64>,
    threshold: Option<f64>,
    detail: String,
}

#[derive(Serialize)]
struct VerificationReport {
    all_passed: bool,
    enumerated_states: usize,
    #[serde(rename = "L_enumeration")]
    l_enum: u32,
    #[serde(rename = "L_trotter_rule")]
    l_rule: u32,
    checks: Vec<CheckOutcome>,
}

fn residual_check(
    name: &'static str,
    residual: f64,
    threshold: f64,
    detail: String,
) -> CheckOutcome {
    CheckOutcome {
        name,
        status: if residual <= threshold {
            "pass"
        } else {
            "fail"
        },
        residual: Some(residual),
        threshold: Some(threshold),
        detail,
    }
}

fn cmd_verify(args: VerifyArgs) -> Result<(), Failure> {
    let start = Instant::now();
    let common = &args.common;
    let mut resolved = resolve(common)?;
    if let Some(m) = args.sector_ratio_multiple {
        resolved.sector_ratio_multiple = m;
    }
    let h = load_hamiltonian(&common.hamiltonian)?;
    let warnings = ensure_valid(&h)?;

    let l_rule = choose_trotter_number(&h, common.beta, common.eps, resolved.estimator.c_l)
        .map_err(Failure::from)?;
    let l_enum = common.trotter_l.unwrap_or(l_rule);

    let mut checks = Vec::new();
    checks.push(CheckOutcome {
        name: "validation",
        status: "pass",
        residual: None,
        threshold: None,
        detail: if warnings.is_empty() {
            "constraints satisfied".into()
        } else {
            format!("constraints satisfied; warnings: {}", warnings.join("; "))
        },
    });

    // enumeration against the dense trace (exit 4 when over the caps)
    let geom = Geometry::new(build_schedule(&h, common.beta, l_enum).map_err(Failure::from)?)
        .map_err(Failure::from)?;
    let space = enumerate_space(&geom, resolved.enum_state_cap).map_err(Failure::from)?;
    let dense_trot = exact_trotterized_z(&h, common.beta, l_enum, resolved.oracle_qubit_cap)
        .map_err(Failure::from)?;
    let enum_res = (space.c0_weight_sum() - dense_trot).abs() / dense_trot.abs().max(1e-300);
    checks.push(residual_check(
        "enumeration_matches_dense_trace",
        enum_res,
        1e-10,
        format!(
            "{} states; sum W(C0) = {:.12e} vs trace {:.12e} at L = {l_enum}",
            space.len(),
            space.c0_weight_sum(),
            dense_trot
        ),
    ));

    let p = build_transition_matrix(&space, resolved.estimator.laziness);
    checks.push(residual_check(
        "row_stochastic",
        p.row_sum_residual(),
        1e-12,
        "every transition-matrix row sums to 1".into(),
    ));
    checks.push(residual_check(
        "stationarity",
        p.stationarity_residual(space.pi()),
        1e-12,
        "pi P = pi for the reweighted two-head law".into(),
    ));
    checks.push(residual_check(
        "detailed_balance",
        p.detailed_balance_residual(space.pi()),
        1e-12,
        "pi(z) P(z,z') = pi(z') P(z',z) on every edge".into(),
    ));

    let degenerate = h.c_min().is_some_and(|c| c == 0.0) || geom.schedule().delta == 0.0;
    let classes = p.communicating_classes();
    checks.push(CheckOutcome {
        name: "reachability",
        status: if classes.len() == 1 {
            "pass"
        } else if degenerate {
            "info"
        } else {
            "fail"
        },
        residual: Some(classes.len() as f64 - 1.0),
        threshold: Some(0.0),
        detail: if classes.len() == 1 {
            "single communicating class".into()
        } else {
            format!(
                "{} communicating classes (sizes {:?}); degenerate instance: {degenerate}",
                classes.len(),
                classes.iter().map(Vec::len).collect::<Vec<_>>()
            )
        },
    });

    checks.push(match spectral_gap(&p, space.pi()) {
        Ok(SpectralOutcome::Gap(g)) => CheckOutcome {
            name: "spectral_gap",
            status: if g > 0.0 { "pass" } else { "fail" },
            residual: Some(g),
            threshold: Some(0.0),
            detail: format!("1 - lambda_2 = {g:.6e}"),
        },
        Ok(SpectralOutcome::Reducible(c)) => CheckOutcome {
            name: "spectral_gap",
            status: if degenerate { "info" } else { "fail" },
            residual: None,
            threshold: None,
            detail: format!("reducible chain: {} classes", c.len()),
        },
        Err(e) => CheckOutcome {
            name: "spectral_gap",
            status: "skipped",
            residual: None,
            threshold: None,
            detail: e.to_string(),
        },
    });

    let z_exact = exact_z(&h, common.beta, resolved.oracle_qubit_cap).map_err(Failure::from)?;
    let z_trot_rule = exact_trotterized_z(&h, common.beta, l_rule, resolved.oracle_qubit_cap)
        .map_err(Failure::from)?;
    let ratio = z_trot_rule / z_exact;
    let bound = (common.eps / 4.0).exp();
    checks.push(CheckOutcome {
        name: "trotter_sandwich",
        status: if ratio >= 1.0 / bound && ratio <= bound {
            "pass"
        } else {
            "fail"
        },
        residual: Some(ratio.ln().abs()),
        threshold: Some(common.eps / 4.0),
        detail: format!(
            "Z_trot/Z = {ratio:.9} at rule L = {l_rule}, eps = {}",
            common.eps
        ),
    });

    let mass_ratio = space.sector_mass_ratio();
    let m_total = geom.schedule().m() as f64;
    checks.push(residual_check(
        "sector_mass_bound",
        mass_ratio,
        resolved.sector_ratio_multiple * m_total,
        format!(
            "exact C2/C0 mass ratio {mass_ratio:.6} = {:.4}*M",
            mass_ratio / m_total
        ),
    ));

    if common.beta > 0.0 {
        let beta_lo = common.beta / 2.0;
        let geom_lo = Geometry::new(build_schedule(&h, beta_lo, l_enum).map_err(Failure::from)?)
            .map_err(Failure::from)?;
        let space_lo = enumerate_space(&geom_lo, resolved.enum_state_cap).map_err(Failure::from)?;
        let mut expectation = 0.0;
        for i in (0..space_lo.len()).filter(|&i| space_lo.is_c0(i)) {
            let pi0 = space_lo.weights()[i] / space_lo.c0_weight_sum();
            expectation +=
                pi0 * ratio_observable(&space_lo.config(i), beta_lo, common.beta, l_enum);
        }
        let dense_lo = exact_trotterized_z(&h, beta_lo, l_enum, resolved.oracle_qubit_cap)
            .map_err(Failure::from)?;
        let quotient = dense_trot / dense_lo;
        checks.push(residual_check(
            "telescoping_identity",
            (expectation - quotient).abs() / quotient.abs().max(1e-300),
            1e-10,
            format!(
                "E[ratio] = {expectation:.12e} vs quotient {quotient:.12e} over [{beta_lo}, {}]",
                common.beta
            ),
        ));
    } else {
        checks.push(CheckOutcome {
            name: "telescoping_identity",
            status: "skipped",
            residual: None,
            threshold: None,
            detail: "beta = 0 has a single trivial grid point".into(),
        });
    }

    let all_passed = checks.iter().all(|c| c.status != "fail");
    let report = VerificationReport {
        all_passed,
        enumerated_states: space.len(),
        l_enum,
        l_rule,
        checks,
    };
    for c in &report.checks {
        println!(
            "{:<32} {:<7} {}",
            c.name,
            c.status,
            c.residual
                .map_or(String::new(), |r| format!("residual {r:.3e}"))
        );
    }
    let runtime = if common.no_timing {
        0.0
    } else {
        start.elapsed().as_secs_f64()
    };
    let failed = !report.all_passed;
    let doc = Document {
        tool: ToolInfo {
            name: "wormline",
            version: env!("CARGO_PKG_VERSION"),
        },
        subcommand: "verify",
        manifest: manifest_value(&args),
        config: resolved,
        rng: RngInfo {
            algorithm: RNG_ALGORITHM,
            seed: common.seed,
        },
        runtime_seconds: runtime,
        result: report,
    };
    emit_document(&common.out, &doc)?;
    if failed {
        return Err(Failure::new(EXIT_RUNTIME, "verification checks failed"));
    }
    Ok(())
}

// --- diagnose ---------------------------------------------------------

#[derive(Serialize)]
struct SeriesDiagnostics {
    tau_int: Option<f64>,
    window: Option<usize>,
    adaptive_burnin_steps: Option<u64>,
    acf_file: Option<String>,
    notice: Option<String>,
}

#[derive(Serialize)]
struct DiagnoseReport {
    #[serde(rename = "L")]
    l: u32,
    #[serde(rename = "M")]
    m: u32,
    sweeps: u64,
    burnin_steps: u64,
    thinning_steps: u64,
    log_weight: SeriesDiagnostics,
    offdiag_count: SeriesDiagnostics,
    sector: SectorRatioReport,
    tv_file: Option<String>,
    tv_notice: Option<String>,
    trace_file: Option<String>,
    trace_records: Option<u64>,
    files: Vec<String>,
}

fn series_diagnostics(
    dir: &Path,
    file_name: &str,
    series: &TimeSeries,
    thinning: u64,
    files: &mut Vec<String>,
) -> Result<SeriesDiagnostics, Failure> {
    match series.integrated_autocorrelation(6.0) {
        Ok(est) => {
            let max_lag = (4 * est.window).min(series.values.len() / 3);
            let rho = autocorrelation_function(&series.values, max_lag).map_err(Failure::from)?;
            let path = dir.join(file_name);
            write_series_tsv(
                &path,
                "lag",
                "rho",
                rho.iter().enumerate().map(|(t, r)| (t as f64, *r)),
            )
            .map_err(Failure::from)?;
            files.push(file_name.to_string());
            Ok(SeriesDiagnostics {
                tau_int: Some(est.tau_int),
                window: Some(est.window),
                adaptive_burnin_steps: Some(adaptive_burnin(est.tau_int, thinning)),
                acf_file: Some(file_name.to_string()),
                notice: None,
            })
        }
        Err(e) => Ok(SeriesDiagnostics {
            tau_int: None,
            window: None,
            adaptive_burnin_steps: None,
            acf_file: None,
            notice: Some(e.to_string()),
        }),
    }
}

fn cmd_diagnose(args: DiagnoseArgs) -> Result<(), Failure> {
    let start = Instant::now();
    let common = &args.common;
    let mut resolved = resolve(common)?;
    if let Some(tv) = args.tv_horizon {
        resolved.tv_horizon = tv;
    }
    let h = load_hamiltonian(&common.hamiltonian)?;
    ensure_valid(&h)?;

    let l = match common.trotter_l {
        Some(l) => l,
        None => choose_trotter_number(&h, common.beta, common.eps, resolved.estimator.c_l)
            .map_err(Failure::from)?,
    };
    let sched = build_schedule(&h, common.beta, l).map_err(Failure::from)?;
    let m = sched.m();
    let geom = Geometry::new(sched).map_err(Failure::from)?;
    let sweeps = args.sweeps.unwrap_or(resolved.diagnose_sweeps);
    let thinning = resolved.estimator.thinning_steps.unwrap_or(m as u64).max(1);
    let burnin = resolved.estimator.burnin_steps.unwrap_or(20 * m as u64);

    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| Failure::new(EXIT_IO, format!("mkdir failed: {e}")))?;
    let mut files = Vec::new();

    // measurement run recording the two default observables per sweep
    let mut chain = Chain::new(
        WorldlineConfig::canonical_initial(std::sync::Arc::clone(&geom)),
        ChainParams {
            laziness: resolved.estimator.laziness,
            seed: common.seed,
            stream: 0,
        },
    )
    .map_err(Failure::from)?;
    chain.run(burnin, |_, _| {});

    let mut log_weight_series = TimeSeries {
        name: "log_weight".into(),
        values: Vec::with_capacity(sweeps as usize),
        chain_id: 0,
        seed: common.seed,
    };
    let mut offdiag_series = TimeSeries {
        name: "offdiag_count".into(),
        values: Vec::with_capacity(sweeps as usize),
        chain_id: 0,
        seed: common.seed,
    };
    let mut trace_writer = match &args.trace {
        Some(path) => {
            let file = std::fs::File::create(path)
                .map_err(|e| Failure::new(EXIT_IO, format!("cannot create trace: {e}")))?;
            Some(TraceWriter::new(file).map_err(Failure::from)?)
        }
        None => None,
    };
    let mut stats = RunStats::default();
    for _ in 0..sweeps {
        let run = if let Some(w) = trace_writer.as_mut() {
            let mut res: Result<(), Error> = Ok(());
            let run = chain.run(thinning, |_, rec| {
                if res.is_ok() {
                    res = w.write(rec);
                }
            });
            res.map_err(Failure::from)?;
            run
        } else {
            chain.run(thinning, |_, _| {})
        };
        stats.steps += run.steps;
        stats.holds += run.holds;
        stats.accepted += run.accepted;
        stats.c0_steps += run.c0_steps;
        stats.c2_steps += run.c2_steps;
        log_weight_series.values.push(chain.log_weight());
        offdiag_series.values.push(chain.offdiag_count() as f64);
    }
    let trace_records = trace_writer.as_ref().map(|w| w.records_written());
    if let Some(w) = trace_writer {
        w.finish().map_err(Failure::from)?;
    }

    let log_weight = series_diagnostics(
        &args.out_dir,
        "acf_log_weight.tsv",
        &log_weight_series,
        thinning,
        &mut files,
    )?;
    let offdiag_count = series_diagnostics(
        &args.out_dir,
        "acf_offdiag.tsv",
        &offdiag_series,
        thinning,
        &mut files,
    )?;

    // exact TV decay when the space fits under the cap
    let (tv_file, tv_notice) = match enumerate_space(&geom, resolved.enum_state_cap) {
        Ok(space) => {
            let p = build_transition_matrix(&space, resolved.estimator.laziness);
            let curve = empirical_tv_decay(
                &p,
                space.pi(),
                space.canonical_initial_index(),
                resolved.tv_horizon,
            );
            let path = args.out_dir.join("tv_decay.tsv");
            write_series_tsv(
                &path,
                "step",
                "tv",
                curve.iter().enumerate().map(|(t, v)| (t as f64, *v)),
            )
            .map_err(Failure::from)?;
            files.push("tv_decay.tsv".to_string());
            (Some("tv_decay.tsv".to_string()), None)
        }
        Err(e @ Error::EnumerationCap { .. }) => (
            None,
            Some(format!(
                "TV decay skipped: {e}; autocorrelation-only bundle"
            )),
        ),
        Err(e) => return Err(e.into()),
    };

    let sector = sector_ratio_monitor(&stats, m, resolved.sector_ratio_multiple, 1.96);
    let report = DiagnoseReport {
        l,
        m,
        sweeps,
        burnin_steps: burnin,
        thinning_steps: thinning,
        log_weight,
        offdiag_count,
        sector,
        tv_file,
        tv_notice,
        trace_file: args.trace.as_ref().map(|p| p.display().to_string()),
        trace_records,
        files,
    };

    let runtime = if common.no_timing {
        0.0
    } else {
        start.elapsed().as_secs_f64()
    };
    let doc = Document {
        tool: ToolInfo {
            name: "wormline",
            version: env!("CARGO_PKG_VERSION"),
        },
        subcommand: "diagnose",
        manifest: manifest_value(&args),
        config: resolved,
        rng: RngInfo {
            algorithm: RNG_ALGORITHM,
            seed: common.seed,
        },
        runtime_seconds: runtime,
        result: report,
    };
    let doc_path = args.out_dir.join("diagnose.json");
    let text = serde_json::to_string_pretty(&doc)
        .map_err(|e| Failure::new(EXIT_IO, format!("serialization failed: {e}")))?;
    std::fs::write(&doc_path, text.as_bytes())
        .map_err(|e| Failure::new(EXIT_IO, format!("write failed: {e}")))?;
    let mut stdout = std::io::stdout().lock();
    writeln!(
        stdout,
        "diagnostics bundle written to {}",
        args.out_dir.display()
    )
    .ok();
    Ok(())
}
