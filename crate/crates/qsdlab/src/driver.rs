//! Experiment driver: runs a resolved configuration, aggregates results
//! deterministically, and writes one CSV artifact per run.
//!
//! Every CSV starts with a header row, then the comment line
//! `# seed=<seed> config_hash=<hash>` where the hash is FNV-1a 64 over the
//! raw config text, then the data rows. Floats are printed with Rust's
//! shortest round-trip formatting, so identical runs produce byte-identical
//! files.

use crate::config::{ConfigError, Experiment, ExperimentSpec, ResolvedConfig};
use crate::coupling::{self, CouplingConfig, CouplingError};
use crate::dynamics::{DynamicsError, ProcessKind};
use crate::kernels::{self, KernelError};
use crate::model::{ModelError, PhysParams, State};
use crate::oracle::{self, OracleError};
use crate::qsd::{self, QsdError};
use crate::stats::StatsError;
use crate::stream::{self, component};
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

/// Failure classes aligned with the process exit codes: configuration
/// problems exit 2, numerical or degenerate-ensemble failures exit 3, and
/// I/O failures exit 1.
#[derive(Debug)]
pub enum RunError {
    Config(String),
    Numeric(String),
    Io(String),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(m) => write!(f, "configuration error: {m}"),
            RunError::Numeric(m) => write!(f, "numerical error: {m}"),
            RunError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for RunError {}

impl RunError {
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numeric(_) => 3,
            RunError::Io(_) => 1,
        }
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e.to_string())
    }
}

impl From<ModelError> for RunError {
    fn from(e: ModelError) -> Self {
        RunError::Config(e.to_string())
    }
}

impl From<KernelError> for RunError {
    fn from(e: KernelError) -> Self {
        match e {
            KernelError::InvalidTime(_)
            | KernelError::InvalidAlpha(_)
            | KernelError::InvalidInput { .. } => RunError::Config(e.to_string()),
            KernelError::IndefiniteCovariance { .. }
            | KernelError::DegenerateCovariance { .. }
            | KernelError::SeriesNoConvergence(_) => RunError::Numeric(e.to_string()),
        }
    }
}

impl From<DynamicsError> for RunError {
    fn from(e: DynamicsError) -> Self {
        match e {
            DynamicsError::InvalidConfig(_)
            | DynamicsError::Model(_)
            | DynamicsError::StartOutsideDomain => RunError::Config(e.to_string()),
            DynamicsError::Kernel(k) => k.into(),
        }
    }
}

impl From<OracleError> for RunError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::GridTooCoarse { .. }
            | OracleError::BadEndpoints { .. }
            | OracleError::BadTolerance(_)
            | OracleError::DimensionMismatch { .. } => RunError::Config(e.to_string()),
            OracleError::SingularMatrix { .. }
            | OracleError::NoConvergence(_)
            | OracleError::NotDecaying(_)
            | OracleError::SignChange(_) => RunError::Numeric(e.to_string()),
        }
    }
}

impl From<StatsError> for RunError {
    fn from(e: StatsError) -> Self {
        RunError::Numeric(e.to_string())
    }
}

impl From<QsdError> for RunError {
    fn from(e: QsdError) -> Self {
        match e {
            QsdError::InvalidConfig(_) => RunError::Config(e.to_string()),
            QsdError::Degenerate { .. } | QsdError::AllCensored => {
                RunError::Numeric(e.to_string())
            }
            QsdError::Dynamics(d) => d.into(),
            QsdError::Oracle(o) => o.into(),
            QsdError::Stats(s) => s.into(),
            QsdError::Model(m) => m.into(),
        }
    }
}

impl From<CouplingError> for RunError {
    fn from(e: CouplingError) -> Self {
        match e {
            CouplingError::InvalidConfig(_) | CouplingError::Model(_) => {
                RunError::Config(e.to_string())
            }
            CouplingError::Stats(s) => s.into(),
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

/// FNV-1a 64-bit hash of the raw config text, stamped into every CSV.
pub fn config_hash(text: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

#[derive(Debug)]
pub struct RunSummary {
    pub experiment: &'static str,
    pub csv_path: PathBuf,
    pub rows: usize,
    /// One-line human-readable summary, printed by the binary.
    pub line: String,
}

fn write_csv(
    out: &std::path::Path,
    name: &str,
    header: &str,
    seed: u64,
    hash: u64,
    rows: &[String],
) -> Result<PathBuf, RunError> {
    fs::create_dir_all(out)?;
    let path = out.join(name);
    let mut text = String::new();
    text.push_str(header);
    text.push('\n');
    let _ = writeln!(text, "# seed={seed} config_hash={hash:016x}");
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    fs::write(&path, text)?;
    Ok(path)
}

/// Runs the experiment described by `cfg`; `config_text` is the raw file
/// content, hashed into the CSV comment line.
pub fn run(cfg: &ResolvedConfig, config_text: &str) -> Result<RunSummary, RunError> {
    let hash = config_hash(config_text);
    match &cfg.spec {
        ExperimentSpec::KernelsCheck => run_kernels_check(cfg, hash),
        ExperimentSpec::Oracle { field, beta, a, b, n } => {
            run_oracle(cfg, hash, field, *beta, *a, *b, *n)
        }
        ExperimentSpec::Fv {
            kind,
            domain,
            field,
            params,
            fv,
            oracle_n,
        } => run_fv(cfg, hash, *kind, domain, field, params, fv, *oracle_n),
        ExperimentSpec::Sweep {
            gammas,
            domain,
            field,
            beta,
            sweep,
        } => run_sweep(cfg, hash, gammas, domain, field, *beta, sweep),
        ExperimentSpec::Coupling {
            gammas,
            field,
            beta,
            ..
        } => run_coupling(cfg, hash, gammas, field, *beta),
        ExperimentSpec::ExitLaw {
            kind,
            domain,
            field,
            params,
            dt,
            horizon,
            n_trajectories,
            bridge_correction,
            oracle_n,
        } => run_exit_law(
            cfg,
            hash,
            *kind,
            domain,
            field,
            params,
            *dt,
            *horizon,
            *n_trajectories,
            *bridge_correction,
            *oracle_n,
        ),
        ExperimentSpec::Gibbs {
            kind,
            field,
            params,
            x0,
            dt,
            n_steps,
            burn_in_steps,
        } => run_gibbs(cfg, hash, *kind, field, params, x0, *dt, *n_steps, *burn_in_steps),
    }
}

struct CheckRow {
    name: &'static str,
    input: &'static str,
    expected: f64,
    got: f64,
    tol: f64,
}

impl CheckRow {
    fn rel_err(&self) -> f64 {
        if self.expected == 0.0 {
            self.got.abs()
        } else {
            ((self.got - self.expected) / self.expected).abs()
        }
    }

    fn pass(&self) -> bool {
        self.rel_err() < self.tol
    }
}

/// Closed-form battery: frozen reference values for the kernel building
/// blocks, their identities, and their large-friction limits.
fn kernels_battery() -> Result<Vec<CheckRow>, RunError> {
    let unit = PhysParams::new(1.0, 1.0)?;
    let x0 = State::new(vec![0.0], vec![1.0])?;
    let mut rows = vec![
        CheckRow {
            name: "phi1",
            input: "rho=1",
            expected: 0.6321205588285577,
            got: kernels::phi1(1.0),
            tol: 1e-14,
        },
        CheckRow {
            name: "phi1_negative",
            input: "rho=-1",
            expected: 1.7182818284590453,
            got: kernels::phi1(-1.0),
            tol: 1e-14,
        },
        CheckRow {
            name: "phi2",
            input: "rho=1",
            expected: 0.5042737221737349,
            got: kernels::phi2(1.0),
            tol: 1e-14,
        },
        CheckRow {
            name: "phi2_large",
            input: "rho=100",
            expected: 0.0002955,
            got: kernels::phi2(100.0),
            tol: 1e-14,
        },
        CheckRow {
            name: "phi",
            input: "rho=1",
            expected: 0.39307148985558726,
            got: kernels::phi_fn(1.0),
            tol: 1e-14,
        },
    ];
    // The reduced phi must agree with its defining combination
    // 4 phi2(rho) phi1(2 rho) - 3 phi1(rho)^4 across the whole range.
    let mut max_rel = 0.0f64;
    for i in 0..1000 {
        let rho = 1e-6 * (30.0f64 / 1e-6).powf(i as f64 / 999.0);
        let combo = 4.0 * kernels::phi2(rho) * kernels::phi1(2.0 * rho)
            - 3.0 * kernels::phi1(rho).powi(4);
        max_rel = max_rel.max(((kernels::phi_fn(rho) - combo) / combo).abs());
    }
    rows.push(CheckRow {
        name: "phi_identity_max_rel",
        input: "1000 log-spaced rho in [1e-6; 30]",
        expected: 0.0,
        got: max_rel,
        tol: 1e-10,
    });
    rows.push(CheckRow {
        name: "cov_block_det",
        input: "t=1 gamma=1 beta=1 alpha=1",
        expected: 0.13102382995186243,
        got: kernels::det_cov(1.0, &unit, 1.0, 1)?.0,
        tol: 1e-12,
    });
    rows.push(CheckRow {
        name: "mean_q",
        input: "t=1 gamma=1 beta=1 q=0 p=1",
        expected: 0.6321205588285577,
        got: kernels::kernel_moments(&x0, 1.0, &unit, 1.0)?.m_q[0],
        tol: 1e-14,
    });
    rows.push(CheckRow {
        name: "cpp_longtime",
        input: "t=200 gamma=1 beta=1 alpha=0.5",
        expected: 2.0,
        got: kernels::kernel_cov(200.0, &unit, 0.5)?.c_pp,
        tol: 1e-12,
    });
    rows.push(CheckRow {
        name: "asym_gamma6_phi",
        input: "gamma=1000 t=1",
        expected: 5.999988,
        got: 1000.0f64.powi(6) * kernels::phi_fn(1e6),
        tol: 1e-9,
    });
    rows.push(CheckRow {
        name: "asym_gamma4_phi2",
        input: "gamma=1000 t=1",
        expected: 2.9999955,
        got: 1000.0f64.powi(4) * kernels::phi2(1e6),
        tol: 1e-9,
    });
    rows.push(CheckRow {
        name: "ub_prefactor_flat",
        input: "t=1 gamma=1 beta=1 f_sup=0 c=1 alpha=0.5 d=1",
        expected: 1.1283791670955126,
        got: kernels::ub_series_prefactor(1.0, &unit, 0.0, 1.0, 0.5, 1)?,
        tol: 1e-14,
    });
    let slow = PhysParams::new(2.0, 3.0)?;
    let physical = kernels::ub_series_prefactor(3.0 * 0.7, &slow, 1.5, 0.8, 1.0, 2)?;
    let rescaled = kernels::ub_series_prefactor_rescaled(0.7, 2.0, 1.5, 0.8, 1.0, 2)?;
    rows.push(CheckRow {
        name: "ub_rescaled_identity",
        input: "t=0.7 gamma=3 beta=2 f_sup=1.5 c=0.8 alpha=1 d=2",
        expected: 0.0,
        got: ((physical - rescaled) / rescaled).abs(),
        tol: 1e-12,
    });
    Ok(rows)
}

fn run_kernels_check(cfg: &ResolvedConfig, hash: u64) -> Result<RunSummary, RunError> {
    let battery = kernels_battery()?;
    let rows: Vec<String> = battery
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{}",
                r.name,
                r.input,
                r.expected,
                r.got,
                r.rel_err(),
                r.pass()
            )
        })
        .collect();
    let path = write_csv(
        &cfg.out,
        "kernels_check.csv",
        "name,input,expected,got,rel_err,pass",
        cfg.seed,
        hash,
        &rows,
    )?;
    let passed = battery.iter().filter(|r| r.pass()).count();
    let line = format!(
        "experiment=kernels_check rows={} passed={passed}/{} csv={}",
        rows.len(),
        rows.len(),
        path.display()
    );
    if passed != battery.len() {
        let failed: Vec<&str> = battery
            .iter()
            .filter(|r| !r.pass())
            .map(|r| r.name)
            .collect();
        return Err(RunError::Numeric(format!(
            "kernel reference checks failed: {}",
            failed.join(", ")
        )));
    }
    Ok(RunSummary {
        experiment: "kernels_check",
        csv_path: path,
        rows: rows.len(),
        line,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_oracle(
    cfg: &ResolvedConfig,
    hash: u64,
    field: &crate::model::ForceField,
    beta: f64,
    a: f64,
    b: f64,
    n: usize,
) -> Result<RunSummary, RunError> {
    let pair = oracle::oracle_qsd(
        field,
        beta,
        a,
        b,
        n,
        oracle::DEFAULT_ORACLE_TOL,
        oracle::DEFAULT_ORACLE_MAX_ITER,
    )?;
    let rows: Vec<String> = (0..pair.grid.n())
        .map(|i| format!("{},{}", pair.grid.node(i), pair.psi[i]))
        .collect();
    let path = write_csv(&cfg.out, "oracle.csv", "q,psi", cfg.seed, hash, &rows)?;
    let line = format!(
        "experiment=oracle rows={} csv={} | lambda0={} residual={} iterations={}",
        rows.len(),
        path.display(),
        pair.lambda0,
        pair.residual,
        pair.iterations
    );
    Ok(RunSummary {
        experiment: "oracle",
        csv_path: path,
        rows: rows.len(),
        line,
    })
}

const SWEEP_HEADER: &str =
    "gamma,N,T,dt,lambda0_rescaled,lambda0_stderr,w1_position,p_mean,p_var,p_skew,p_exkurt,branch_events,seed";

#[allow(clippy::too_many_arguments)]
fn run_fv(
    cfg: &ResolvedConfig,
    hash: u64,
    kind: ProcessKind,
    domain: &crate::model::Domain,
    field: &crate::model::ForceField,
    params: &PhysParams,
    fv: &crate::qsd::FvConfig,
    oracle_n: Option<usize>,
) -> Result<RunSummary, RunError> {
    let est = qsd::fleming_viot(kind, domain, field, params, fv)?;
    let w1 = match (oracle_n, est.dim) {
        (Some(n), 1) => {
            let (a, b) = match domain {
                crate::model::Domain::Interval { a, b } => (*a, *b),
                _ => unreachable!("oracle_n implies an interval domain"),
            };
            let reference = oracle::oracle_qsd(
                field,
                params.beta(),
                a,
                b,
                n,
                oracle::DEFAULT_ORACLE_TOL,
                oracle::DEFAULT_ORACLE_MAX_ITER,
            )?;
            est.w1_position(&reference.to_density()?)?.0
        }
        _ => f64::NAN,
    };
    let gauss = match kind {
        ProcessKind::Langevin => {
            let g = qsd::momentum_gaussianity(&est.momentum_samples, params.beta())?;
            (g.mean, g.var, g.skew, g.exkurt)
        }
        ProcessKind::Overdamped => (f64::NAN, f64::NAN, f64::NAN, f64::NAN),
    };
    let row = format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
        est.gamma,
        fv.n_particles,
        fv.t_final,
        fv.dt,
        est.lambda0_hat,
        est.lambda0_stderr,
        w1,
        gauss.0,
        gauss.1,
        gauss.2,
        gauss.3,
        est.branch_events,
        cfg.seed
    );
    let path = write_csv(&cfg.out, "fv.csv", SWEEP_HEADER, cfg.seed, hash, &[row])?;
    let line = format!(
        "experiment=fv rows=1 csv={} | lambda0={} stderr={} branch_events={} w1={}",
        path.display(),
        est.lambda0_hat,
        est.lambda0_stderr,
        est.branch_events,
        w1
    );
    Ok(RunSummary {
        experiment: "fv",
        csv_path: path,
        rows: 1,
        line,
    })
}

fn run_sweep(
    cfg: &ResolvedConfig,
    hash: u64,
    gammas: &[f64],
    domain: &crate::model::Domain,
    field: &crate::model::ForceField,
    beta: f64,
    sweep: &crate::qsd::SweepConfig,
) -> Result<RunSummary, RunError> {
    let (rows, reference) = qsd::gamma_sweep(gammas, domain, field, beta, sweep, cfg.seed)?;
    let csv_rows: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.gamma,
                r.n_particles,
                r.t_final,
                r.dt,
                r.lambda0_rescaled,
                r.lambda0_stderr,
                r.w1_position,
                r.p_mean,
                r.p_var,
                r.p_skew,
                r.p_exkurt,
                r.branch_events,
                r.seed
            )
        })
        .collect();
    let path = write_csv(&cfg.out, "sweep.csv", SWEEP_HEADER, cfg.seed, hash, &csv_rows)?;
    let last = rows.last().expect("non-empty sweep");
    let line = format!(
        "experiment=sweep rows={} csv={} | lambda0_ref={} last_gamma={} lambda0={} w1={}",
        csv_rows.len(),
        path.display(),
        reference.lambda0,
        last.gamma,
        last.lambda0_rescaled,
        last.w1_position
    );
    Ok(RunSummary {
        experiment: "sweep",
        csv_path: path,
        rows: csv_rows.len(),
        line,
    })
}

fn run_coupling(
    cfg: &ResolvedConfig,
    hash: u64,
    gammas: &[f64],
    field: &crate::model::ForceField,
    beta: f64,
) -> Result<RunSummary, RunError> {
    let mut csv_rows = Vec::with_capacity(gammas.len());
    let mut last_report = None;
    for (leg, &gamma) in gammas.iter().enumerate() {
        let leg_cfg: CouplingConfig = crate::config::coupling_leg(&cfg.spec, gamma, cfg.seed)
            .ok_or_else(|| RunError::Config("not a coupling spec".into()))?;
        let params = PhysParams::new(beta, gamma)?;
        let report = coupling::coupling_experiment(&leg_cfg, field, &params, leg as u32)?;
        csv_rows.push(format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            report.gamma,
            report.t_final,
            report.replicates,
            report.sup_qw_mean,
            report.sup_qw_stderr,
            report.sup_wbar_mean,
            report.max_abs_corr_zy,
            report.pt_mean,
            report.pt_var,
            report.qp_terminal_corr,
            report.seed
        ));
        last_report = Some(report);
    }
    let path = write_csv(
        &cfg.out,
        "coupling.csv",
        "gamma,T,replicates,sup_qw_mean,sup_qw_stderr,sup_wbar_mean,max_abs_corr_zy,pT_mean,pT_var,qp_terminal_corr,seed",
        cfg.seed,
        hash,
        &csv_rows,
    )?;
    let last = last_report.expect("non-empty gamma list");
    let line = format!(
        "experiment=coupling rows={} csv={} | last_gamma={} sup_qw={} max_corr_zy={} pT_var={}",
        csv_rows.len(),
        path.display(),
        last.gamma,
        last.sup_qw_mean,
        last.max_abs_corr_zy,
        last.pt_var
    );
    Ok(RunSummary {
        experiment: "coupling",
        csv_path: path,
        rows: csv_rows.len(),
        line,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_exit_law(
    cfg: &ResolvedConfig,
    hash: u64,
    kind: ProcessKind,
    domain: &crate::model::Domain,
    field: &crate::model::ForceField,
    params: &PhysParams,
    dt: f64,
    horizon: f64,
    n_trajectories: usize,
    bridge_correction: bool,
    oracle_n: usize,
) -> Result<RunSummary, RunError> {
    let (a, b) = match domain {
        crate::model::Domain::Interval { a, b } => (*a, *b),
        _ => return Err(RunError::Config("exit_law needs an interval domain".into())),
    };
    let reference = oracle::oracle_qsd(
        field,
        params.beta(),
        a,
        b,
        oracle_n,
        oracle::DEFAULT_ORACLE_TOL,
        oracle::DEFAULT_ORACLE_MAX_ITER,
    )?;
    let starts = qsd::states_from_density(
        &reference.to_density()?,
        n_trajectories,
        kind,
        params.beta(),
        cfg.seed,
        0,
    );
    let stats = qsd::exit_law_probe(
        &starts,
        kind,
        domain,
        field,
        params,
        dt,
        horizon,
        bridge_correction,
        cfg.seed,
        0,
    )?;
    let row = format!(
        "{},{},{},{},{}",
        stats.n,
        stats.mean_exit,
        stats.rate_mle,
        stats.ks_stat,
        stats.censored_fraction()
    );
    let path = write_csv(
        &cfg.out,
        "exit_law.csv",
        "n,mean_exit,rate_mle,ks_stat,censored_fraction",
        cfg.seed,
        hash,
        &[row],
    )?;
    let mut line = format!(
        "experiment=exit_law rows=1 csv={} | rate_mle={} ks={} censored_fraction={}",
        path.display(),
        stats.rate_mle,
        stats.ks_stat,
        stats.censored_fraction()
    );
    if stats.censored_fraction() > 0.01 {
        let _ = write!(
            line,
            " (warning: censored fraction exceeds 1%; lengthen the horizon)"
        );
    }
    Ok(RunSummary {
        experiment: "exit_law",
        csv_path: path,
        rows: 1,
        line,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_gibbs(
    cfg: &ResolvedConfig,
    hash: u64,
    kind: ProcessKind,
    field: &crate::model::ForceField,
    params: &PhysParams,
    x0: &State,
    dt: f64,
    n_steps: u64,
    burn_in_steps: u64,
) -> Result<RunSummary, RunError> {
    let mut rng = stream::derive(cfg.seed, component::GIBBS, 0);
    let report =
        crate::dynamics::gibbs_probe(x0, kind, field, params, dt, n_steps, burn_in_steps, &mut rng)?;
    let gamma = match kind {
        ProcessKind::Langevin => params.gamma(),
        ProcessKind::Overdamped => 0.0,
    };
    let process = match kind {
        ProcessKind::Langevin => "langevin",
        ProcessKind::Overdamped => "overdamped",
    };
    let row = format!(
        "{},{},{},{},{},{},{},{},{},{}",
        process,
        gamma,
        params.beta(),
        dt,
        n_steps,
        report.mean_q,
        report.var_q,
        report.mean_p,
        report.var_p,
        report.corr_qp
    );
    let path = write_csv(
        &cfg.out,
        "gibbs.csv",
        "process,gamma,beta,dt,n_steps,mean_q,var_q,mean_p,var_p,corr_qp",
        cfg.seed,
        hash,
        &[row],
    )?;
    let line = format!(
        "experiment=gibbs rows=1 csv={} | var_q={} var_p={} corr_qp={}",
        path.display(),
        report.var_q,
        report.var_p,
        report.corr_qp
    );
    Ok(RunSummary {
        experiment: "gibbs",
        csv_path: path,
        rows: 1,
        line,
    })
}

/// Convenience used by the binary and the CLI tests: parse, resolve, run.
pub fn run_from_text(
    text: &str,
    experiment: Experiment,
    seed_override: Option<u64>,
    out_override: Option<PathBuf>,
) -> Result<RunSummary, RunError> {
    let resolved = crate::config::resolve(text, experiment, seed_override, out_override)?;
    run(&resolved, text)
}
