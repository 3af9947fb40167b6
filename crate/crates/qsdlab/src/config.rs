//! TOML experiment configuration: parsing, defaults, and strict
//! validation.
//!
//! One file drives one experiment. Unknown keys are rejected by the
//! deserializer with line numbers; keys that are known but not consumed
//! by the requested experiment are rejected here, so a config cannot
//! silently carry settings that do nothing.

use crate::coupling::CouplingConfig;
use crate::dynamics::{steps_for, ProcessKind};
use crate::model::{Domain, ForceField, PhysParams, State};
use crate::qsd::{FvConfig, SweepConfig};
use serde::Deserialize;
use std::collections::BTreeSet;
use std::path::PathBuf;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    /// Syntax, type, duplicate-key, or unknown-key failure straight from
    /// the TOML parser; the message carries line and column.
    #[error("{0}")]
    Parse(String),
    #[error("config key '{key}': {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    KernelsCheck,
    Oracle,
    Fv,
    Sweep,
    Coupling,
    ExitLaw,
    Gibbs,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::KernelsCheck,
        Experiment::Oracle,
        Experiment::Fv,
        Experiment::Sweep,
        Experiment::Coupling,
        Experiment::ExitLaw,
        Experiment::Gibbs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::KernelsCheck => "kernels_check",
            Experiment::Oracle => "oracle",
            Experiment::Fv => "fv",
            Experiment::Sweep => "sweep",
            Experiment::Coupling => "coupling",
            Experiment::ExitLaw => "exit_law",
            Experiment::Gibbs => "gibbs",
        }
    }
}

impl FromStr for Experiment {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| {
                invalid(
                    "experiment",
                    format!(
                        "unknown experiment '{s}'; expected one of {}",
                        Experiment::ALL.map(|e| e.name()).join(", ")
                    ),
                )
            })
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    experiment: String,
    seed: Option<u64>,
    out: Option<String>,
    #[serde(default)]
    params: ParamsSection,
    domain: Option<DomainSection>,
    field: Option<FieldSection>,
    #[serde(default)]
    run: RunSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsSection {
    beta: Option<f64>,
    gamma: Option<f64>,
    gammas: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DomainSection {
    kind: String,
    a: Option<f64>,
    b: Option<f64>,
    center: Option<Vec<f64>>,
    radius: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FieldSection {
    kind: String,
    kappa: Option<f64>,
    height: Option<f64>,
    clamp_radius: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    process: Option<String>,
    n_particles: Option<usize>,
    t_final: Option<f64>,
    dt: Option<f64>,
    burn_in: Option<f64>,
    snapshot_stride: Option<usize>,
    bridge_correction: Option<bool>,
    oracle_n: Option<usize>,
    n_grid: Option<usize>,
    n_sub: Option<usize>,
    replicates: Option<usize>,
    horizon: Option<f64>,
    n_trajectories: Option<usize>,
    n_steps: Option<u64>,
    x0: Option<Vec<f64>>,
    p0: Option<Vec<f64>>,
}

impl ParamsSection {
    fn set_keys(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.beta.is_some() {
            v.push("params.beta");
        }
        if self.gamma.is_some() {
            v.push("params.gamma");
        }
        if self.gammas.is_some() {
            v.push("params.gammas");
        }
        v
    }
}

impl RunSection {
    fn set_keys(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        macro_rules! key {
            ($field:ident) => {
                if self.$field.is_some() {
                    v.push(concat!("run.", stringify!($field)));
                }
            };
        }
        key!(process);
        key!(n_particles);
        key!(t_final);
        key!(dt);
        key!(burn_in);
        key!(snapshot_stride);
        key!(bridge_correction);
        key!(oracle_n);
        key!(n_grid);
        key!(n_sub);
        key!(replicates);
        key!(horizon);
        key!(n_trajectories);
        key!(n_steps);
        key!(x0);
        key!(p0);
        v
    }
}

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_BETA: f64 = 1.0;
pub const DEFAULT_CLAMP_RADIUS: f64 = 4.0;
pub const DEFAULT_ORACLE_N: usize = 4000;
pub const DEFAULT_N_PARTICLES: usize = 2000;
pub const DEFAULT_FV_T_FINAL: f64 = 20.0;
pub const DEFAULT_FV_DT: f64 = 1e-3;
pub const DEFAULT_SNAPSHOT_STRIDE: usize = 100;
pub const DEFAULT_COUPLING_T_FINAL: f64 = 1.0;
pub const DEFAULT_N_GRID: usize = 200;
pub const DEFAULT_REPLICATES: usize = 200;
pub const DEFAULT_HORIZON: f64 = 5.0;
pub const DEFAULT_N_TRAJECTORIES: usize = 10_000;
pub const DEFAULT_GIBBS_DT: f64 = 1e-2;
pub const DEFAULT_GIBBS_STEPS: u64 = 10_000_000;

/// Fully resolved, validated experiment description.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub out: PathBuf,
    pub spec: ExperimentSpec,
}

#[derive(Debug, Clone)]
pub enum ExperimentSpec {
    KernelsCheck,
    Oracle {
        field: ForceField,
        beta: f64,
        a: f64,
        b: f64,
        n: usize,
    },
    Fv {
        kind: ProcessKind,
        domain: Domain,
        field: ForceField,
        params: PhysParams,
        fv: FvConfig,
        /// Grid size of the overdamped eigen reference used for the W1
        /// column; None when the domain has no 1D oracle.
        oracle_n: Option<usize>,
    },
    Sweep {
        gammas: Vec<f64>,
        domain: Domain,
        field: ForceField,
        beta: f64,
        sweep: SweepConfig,
    },
    Coupling {
        gammas: Vec<f64>,
        field: ForceField,
        beta: f64,
        t_final: f64,
        n_grid: usize,
        n_sub: usize,
        replicates: usize,
        x0: State,
    },
    ExitLaw {
        kind: ProcessKind,
        domain: Domain,
        field: ForceField,
        params: PhysParams,
        dt: f64,
        horizon: f64,
        n_trajectories: usize,
        bridge_correction: bool,
        oracle_n: usize,
    },
    Gibbs {
        kind: ProcessKind,
        field: ForceField,
        params: PhysParams,
        x0: State,
        dt: f64,
        n_steps: u64,
        burn_in_steps: u64,
    },
}

fn parse_process(run: &RunSection, default: ProcessKind) -> Result<ProcessKind, ConfigError> {
    match run.process.as_deref() {
        None => Ok(default),
        Some("overdamped") => Ok(ProcessKind::Overdamped),
        Some("langevin") => Ok(ProcessKind::Langevin),
        Some(other) => Err(invalid(
            "run.process",
            format!("expected 'overdamped' or 'langevin', got '{other}'"),
        )),
    }
}

fn resolve_domain(section: &Option<DomainSection>) -> Result<Domain, ConfigError> {
    let Some(s) = section else {
        return Ok(Domain::interval(-1.0, 1.0).expect("default interval"));
    };
    match s.kind.as_str() {
        "interval" => {
            if s.center.is_some() || s.radius.is_some() {
                return Err(invalid(
                    "domain",
                    "interval domains take 'a' and 'b', not 'center'/'radius'",
                ));
            }
            let a = s.a.ok_or_else(|| invalid("domain.a", "required for interval"))?;
            let b = s.b.ok_or_else(|| invalid("domain.b", "required for interval"))?;
            Domain::interval(a, b).map_err(|e| invalid("domain", e.to_string()))
        }
        "ball" => {
            if s.a.is_some() || s.b.is_some() {
                return Err(invalid(
                    "domain",
                    "ball domains take 'center' and 'radius', not 'a'/'b'",
                ));
            }
            let center = s
                .center
                .clone()
                .ok_or_else(|| invalid("domain.center", "required for ball"))?;
            let radius = s
                .radius
                .ok_or_else(|| invalid("domain.radius", "required for ball"))?;
            Domain::ball(center, radius).map_err(|e| invalid("domain", e.to_string()))
        }
        other => Err(invalid(
            "domain.kind",
            format!("expected 'interval' or 'ball', got '{other}'"),
        )),
    }
}

fn resolve_field(section: &Option<FieldSection>) -> Result<ForceField, ConfigError> {
    let Some(s) = section else {
        return Ok(ForceField::zero());
    };
    let clamp = s.clamp_radius.unwrap_or(DEFAULT_CLAMP_RADIUS);
    match s.kind.as_str() {
        "zero" => {
            if s.kappa.is_some() || s.height.is_some() || s.clamp_radius.is_some() {
                return Err(invalid("field", "the zero field takes no parameters"));
            }
            Ok(ForceField::zero())
        }
        "harmonic" => {
            if s.height.is_some() {
                return Err(invalid("field.height", "not used by the harmonic field"));
            }
            ForceField::harmonic(s.kappa.unwrap_or(1.0), clamp)
                .map_err(|e| invalid("field", e.to_string()))
        }
        "double_well" => {
            if s.kappa.is_some() {
                return Err(invalid("field.kappa", "not used by the double-well field"));
            }
            ForceField::double_well(s.height.unwrap_or(1.0), clamp)
                .map_err(|e| invalid("field", e.to_string()))
        }
        other => Err(invalid(
            "field.kind",
            format!("expected 'zero', 'harmonic', or 'double_well', got '{other}'"),
        )),
    }
}

fn require_gamma(params: &ParamsSection) -> Result<f64, ConfigError> {
    params
        .gamma
        .ok_or_else(|| invalid("params.gamma", "required for the kinetic process"))
}

fn phys_params(beta: f64, gamma: f64, key: &str) -> Result<PhysParams, ConfigError> {
    PhysParams::new(beta, gamma).map_err(|e| invalid(key, e.to_string()))
}

fn state_from(x0: &Option<Vec<f64>>, p0: &Option<Vec<f64>>) -> Result<State, ConfigError> {
    let q = x0.clone().unwrap_or_else(|| vec![0.0]);
    let p = p0.clone().unwrap_or_else(|| vec![0.0; q.len()]);
    State::new(q, p).map_err(|e| invalid("run.x0", e.to_string()))
}

/// Parses and validates a config for the given CLI subcommand, applying
/// optional seed and output-directory overrides.
pub fn resolve(
    text: &str,
    cli_experiment: Experiment,
    seed_override: Option<u64>,
    out_override: Option<PathBuf>,
) -> Result<ResolvedConfig, ConfigError> {
    let file: FileConfig =
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let experiment: Experiment = file.experiment.parse()?;
    if experiment != cli_experiment {
        return Err(invalid(
            "experiment",
            format!(
                "config declares '{}' but the subcommand is '{}'",
                experiment.name(),
                cli_experiment.name()
            ),
        ));
    }
    let seed = seed_override.or(file.seed).unwrap_or(DEFAULT_SEED);
    let out = out_override
        .or_else(|| file.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));

    let uses_domain = matches!(
        experiment,
        Experiment::Oracle | Experiment::Fv | Experiment::Sweep | Experiment::ExitLaw
    );
    let uses_field = experiment != Experiment::KernelsCheck;
    if file.domain.is_some() && !uses_domain {
        return Err(invalid(
            "domain",
            format!("not used by experiment '{}'", experiment.name()),
        ));
    }
    if file.field.is_some() && !uses_field {
        return Err(invalid(
            "field",
            format!("not used by experiment '{}'", experiment.name()),
        ));
    }

    // Experiment-dependent pieces that the key allowlist depends on.
    let beta = file.params.beta.unwrap_or(DEFAULT_BETA);
    if !(beta.is_finite() && beta > 0.0) {
        return Err(invalid("params.beta", format!("must be positive, got {beta}")));
    }
    let kind = parse_process(
        &file.run,
        match experiment {
            Experiment::Gibbs => ProcessKind::Langevin,
            _ => ProcessKind::Overdamped,
        },
    )?;
    let domain = resolve_domain(&file.domain)?;
    let is_interval = matches!(domain, Domain::Interval { .. });

    check_consumed_keys(&file, experiment, kind, is_interval)?;

    let field = resolve_field(&file.field)?;
    let run = &file.run;
    let spec = match experiment {
        Experiment::KernelsCheck => ExperimentSpec::KernelsCheck,
        Experiment::Oracle => {
            let (a, b) = interval_bounds(&domain)?;
            ExperimentSpec::Oracle {
                field,
                beta,
                a,
                b,
                n: run.oracle_n.unwrap_or(DEFAULT_ORACLE_N),
            }
        }
        Experiment::Fv => {
            let gamma = match kind {
                ProcessKind::Langevin => require_gamma(&file.params)?,
                ProcessKind::Overdamped => 1.0,
            };
            let params = phys_params(beta, gamma, "params")?;
            let t_final = run.t_final.unwrap_or(DEFAULT_FV_T_FINAL);
            let bridge_default = kind == ProcessKind::Overdamped && is_interval;
            let fv = FvConfig {
                n_particles: run.n_particles.unwrap_or(DEFAULT_N_PARTICLES),
                t_final,
                dt: run.dt.unwrap_or(DEFAULT_FV_DT),
                burn_in: run.burn_in.unwrap_or(t_final / 2.0),
                snapshot_stride: run.snapshot_stride.unwrap_or(DEFAULT_SNAPSHOT_STRIDE),
                bridge_correction: run.bridge_correction.unwrap_or(bridge_default),
                seed,
                ensemble_id: 0,
            };
            let oracle_n = if is_interval {
                Some(run.oracle_n.unwrap_or(DEFAULT_ORACLE_N))
            } else {
                None
            };
            ExperimentSpec::Fv {
                kind,
                domain,
                field,
                params,
                fv,
                oracle_n,
            }
        }
        Experiment::Sweep => {
            let gammas = file
                .params
                .gammas
                .clone()
                .ok_or_else(|| invalid("params.gammas", "required for the sweep"))?;
            if gammas.is_empty() {
                return Err(invalid("params.gammas", "must not be empty"));
            }
            interval_bounds(&domain)?;
            let t_final = run.t_final.unwrap_or(DEFAULT_FV_T_FINAL);
            ExperimentSpec::Sweep {
                gammas,
                domain,
                field,
                beta,
                sweep: SweepConfig {
                    n_particles: run.n_particles.unwrap_or(DEFAULT_N_PARTICLES),
                    t_final,
                    dt: run.dt.unwrap_or(DEFAULT_FV_DT),
                    burn_in: run.burn_in.unwrap_or(t_final / 2.0),
                    snapshot_stride: run.snapshot_stride.unwrap_or(DEFAULT_SNAPSHOT_STRIDE),
                    oracle_n: run.oracle_n.unwrap_or(DEFAULT_ORACLE_N),
                },
            }
        }
        Experiment::Coupling => {
            let gammas = match (&file.params.gamma, &file.params.gammas) {
                (Some(_), Some(_)) => {
                    return Err(invalid(
                        "params.gammas",
                        "give either 'gamma' or 'gammas', not both",
                    ));
                }
                (Some(g), None) => vec![*g],
                (None, Some(gs)) if !gs.is_empty() => gs.clone(),
                _ => {
                    return Err(invalid(
                        "params.gamma",
                        "the coupling run needs 'gamma' or a non-empty 'gammas'",
                    ));
                }
            };
            ExperimentSpec::Coupling {
                gammas,
                field,
                beta,
                t_final: run.t_final.unwrap_or(DEFAULT_COUPLING_T_FINAL),
                n_grid: run.n_grid.unwrap_or(DEFAULT_N_GRID),
                n_sub: run.n_sub.unwrap_or(0),
                replicates: run.replicates.unwrap_or(DEFAULT_REPLICATES),
                x0: state_from(&run.x0, &run.p0)?,
            }
        }
        Experiment::ExitLaw => {
            let gamma = match kind {
                ProcessKind::Langevin => require_gamma(&file.params)?,
                ProcessKind::Overdamped => 1.0,
            };
            let params = phys_params(beta, gamma, "params")?;
            interval_bounds(&domain)?;
            let bridge_default = kind == ProcessKind::Overdamped;
            ExperimentSpec::ExitLaw {
                kind,
                domain,
                field,
                params,
                dt: run.dt.unwrap_or(DEFAULT_FV_DT),
                horizon: run.horizon.unwrap_or(DEFAULT_HORIZON),
                n_trajectories: run.n_trajectories.unwrap_or(DEFAULT_N_TRAJECTORIES),
                bridge_correction: run.bridge_correction.unwrap_or(bridge_default),
                oracle_n: run.oracle_n.unwrap_or(DEFAULT_ORACLE_N),
            }
        }
        Experiment::Gibbs => {
            let gamma = match kind {
                ProcessKind::Langevin => require_gamma(&file.params)?,
                ProcessKind::Overdamped => 1.0,
            };
            let params = phys_params(beta, gamma, "params")?;
            let dt = run.dt.unwrap_or(DEFAULT_GIBBS_DT);
            if !(dt.is_finite() && dt > 0.0) {
                return Err(invalid("run.dt", format!("must be positive, got {dt}")));
            }
            let n_steps = run.n_steps.unwrap_or(DEFAULT_GIBBS_STEPS);
            let burn_in_steps = match run.burn_in {
                Some(b) if b > 0.0 => steps_for(b, dt),
                Some(_) => 0,
                None => n_steps / 100,
            };
            if burn_in_steps >= n_steps {
                return Err(invalid(
                    "run.burn_in",
                    "burn-in covers the whole run; nothing left to sample",
                ));
            }
            ExperimentSpec::Gibbs {
                kind,
                field,
                params,
                x0: state_from(&run.x0, &run.p0)?,
                dt,
                n_steps,
                burn_in_steps,
            }
        }
    };
    Ok(ResolvedConfig {
        experiment,
        seed,
        out,
        spec,
    })
}

fn interval_bounds(domain: &Domain) -> Result<(f64, f64), ConfigError> {
    match domain {
        Domain::Interval { a, b } => Ok((*a, *b)),
        _ => Err(invalid(
            "domain.kind",
            "this experiment needs an interval domain (its reference solution is 1D)",
        )),
    }
}

/// Rejects `params`/`run` keys that are set but not consumed by the
/// experiment, so a config cannot carry silently ignored settings.
fn check_consumed_keys(
    file: &FileConfig,
    experiment: Experiment,
    kind: ProcessKind,
    is_interval: bool,
) -> Result<(), ConfigError> {
    let mut allowed: BTreeSet<&'static str> = BTreeSet::new();
    match experiment {
        Experiment::KernelsCheck => {}
        Experiment::Oracle => {
            allowed.extend(["params.beta", "run.oracle_n"]);
        }
        Experiment::Fv => {
            allowed.extend([
                "params.beta",
                "run.process",
                "run.n_particles",
                "run.t_final",
                "run.dt",
                "run.burn_in",
                "run.snapshot_stride",
                "run.bridge_correction",
            ]);
            if kind == ProcessKind::Langevin {
                allowed.insert("params.gamma");
            }
            if is_interval {
                allowed.insert("run.oracle_n");
            }
        }
        Experiment::Sweep => {
            allowed.extend([
                "params.beta",
                "params.gammas",
                "run.n_particles",
                "run.t_final",
                "run.dt",
                "run.burn_in",
                "run.snapshot_stride",
                "run.oracle_n",
            ]);
        }
        Experiment::Coupling => {
            allowed.extend([
                "params.beta",
                "params.gamma",
                "params.gammas",
                "run.t_final",
                "run.n_grid",
                "run.n_sub",
                "run.replicates",
                "run.x0",
                "run.p0",
            ]);
        }
        Experiment::ExitLaw => {
            allowed.extend([
                "params.beta",
                "run.process",
                "run.dt",
                "run.horizon",
                "run.n_trajectories",
                "run.bridge_correction",
                "run.oracle_n",
            ]);
            if kind == ProcessKind::Langevin {
                allowed.insert("params.gamma");
            }
        }
        Experiment::Gibbs => {
            allowed.extend([
                "params.beta",
                "run.process",
                "run.dt",
                "run.n_steps",
                "run.burn_in",
                "run.x0",
                "run.p0",
            ]);
            if kind == ProcessKind::Langevin {
                allowed.insert("params.gamma");
            }
        }
    }
    let mut set = file.params.set_keys();
    set.extend(file.run.set_keys());
    for key in set {
        if !allowed.contains(key) {
            return Err(invalid(
                key,
                format!("not used by experiment '{}'", experiment.name()),
            ));
        }
    }
    Ok(())
}

/// Builds the per-friction coupling config for one leg of a coupling run.
pub fn coupling_leg(spec: &ExperimentSpec, gamma: f64, seed: u64) -> Option<CouplingConfig> {
    match spec {
        ExperimentSpec::Coupling {
            t_final,
            n_grid,
            n_sub,
            replicates,
            x0,
            ..
        } => Some(CouplingConfig {
            gamma,
            t_final: *t_final,
            n_grid: *n_grid,
            n_sub: *n_sub,
            replicates: *replicates,
            x0: x0.clone(),
            seed,
        }),
        _ => None,
    }
}
