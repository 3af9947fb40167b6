//! Quasi-stationary distribution estimation with a Fleming-Viot particle
//! system, exit-law statistics, and the friction sweep tying the kinetic
//! process to its overdamped limit.
//!
//! The Fleming-Viot system advances `N` particles of the absorbed dynamics;
//! each absorbed particle is instantly rebranched onto a donor chosen
//! uniformly among the other `N - 1`. After burn-in the empirical measure
//! approximates the QSD and the branching intensity estimates the exit rate:
//! `lambda0_hat = branch_events / (N * (T - burn_in))`.
//!
//! Particles advance in parallel, then a sequential index-order sweep
//! resolves rebranching: a donor below the exiting index contributes its
//! post-step (possibly already rebranched) state, a donor above contributes
//! its pre-step state. This reproduces a fully sequential particle sweep
//! bit for bit while keeping the expensive advance data-parallel.

use crate::dynamics::{
    steps_for, ClockMode, DynamicsError, IntegratorConfig, ProcessKind, StepOutcome, Stepper,
};
use crate::exec;
use crate::model::{Domain, ForceField, ModelError, PhysParams, State};
use crate::oracle::{self, EigenPair, OracleError};
use crate::stats::{self, GridDensity, StatsError};
use crate::stream::{self, component, Stream};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QsdError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("degenerate particle system: all particles exited during step {step}")]
    Degenerate { step: u64 },
    #[error("no trajectory exited before the horizon; exit law is undefined")]
    AllCensored,
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Number of post-burn-in windows used for the rate standard error.
const RATE_BATCHES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct FvConfig {
    pub n_particles: usize,
    pub t_final: f64,
    pub dt: f64,
    pub burn_in: f64,
    /// Snapshot every this many post-burn-in steps.
    pub snapshot_stride: usize,
    pub bridge_correction: bool,
    pub seed: u64,
    /// Distinguishes independent runs under one master seed (sweep legs).
    pub ensemble_id: u32,
}

/// Fleming-Viot output: the branching-rate estimate with a 10-window
/// standard error and the post-burn-in phase-space snapshots, flattened as
/// `snapshot major, particle, coordinate`.
#[derive(Debug, Clone, PartialEq)]
pub struct QsdEstimate {
    /// Friction of the kinetic run; zero marks an overdamped run.
    pub gamma: f64,
    pub lambda0_hat: f64,
    pub lambda0_stderr: f64,
    pub branch_events: u64,
    pub position_samples: Vec<f64>,
    pub momentum_samples: Vec<f64>,
    pub dim: usize,
    pub n_snapshots: usize,
}

struct Particle {
    q: Vec<f64>,
    p: Vec<f64>,
    f: Vec<f64>,
    rng: Stream,
}

fn uniform_in_domain(domain: &Domain, rng: &mut Stream) -> Vec<f64> {
    match domain {
        Domain::Interval { a, b } => vec![a + (b - a) * rng.gen::<f64>()],
        Domain::Ball { center, radius } => loop {
            let d = center.len();
            let mut q = Vec::with_capacity(d);
            let mut r2 = 0.0;
            for _ in 0..d {
                let x: f64 = 2.0 * rng.gen::<f64>() - 1.0;
                r2 += x * x;
                q.push(x);
            }
            if r2 < 1.0 {
                for (qk, c) in q.iter_mut().zip(center) {
                    *qk = c + radius * *qk;
                }
                return q;
            }
        },
    }
}

fn validate_fv(
    kind: ProcessKind,
    domain: &Domain,
    cfg: &FvConfig,
) -> Result<(u64, u64), QsdError> {
    if cfg.n_particles < 2 {
        return Err(QsdError::InvalidConfig(format!(
            "need at least 2 particles, got {}",
            cfg.n_particles
        )));
    }
    if !(cfg.dt.is_finite() && cfg.dt > 0.0) {
        return Err(QsdError::InvalidConfig(format!("bad dt {}", cfg.dt)));
    }
    if !(cfg.t_final.is_finite() && cfg.t_final > 0.0) {
        return Err(QsdError::InvalidConfig(format!(
            "bad t_final {}",
            cfg.t_final
        )));
    }
    if !(cfg.burn_in >= 0.0 && cfg.burn_in < cfg.t_final) {
        return Err(QsdError::InvalidConfig(format!(
            "burn_in {} must lie in [0, t_final)",
            cfg.burn_in
        )));
    }
    if cfg.snapshot_stride == 0 {
        return Err(QsdError::InvalidConfig("snapshot_stride must be >= 1".into()));
    }
    if cfg.bridge_correction && kind == ProcessKind::Langevin {
        return Err(QsdError::InvalidConfig(
            "bridge correction applies to the overdamped process only".into(),
        ));
    }
    if cfg.bridge_correction && !matches!(domain, Domain::Interval { .. }) {
        return Err(QsdError::InvalidConfig(
            "bridge correction requires an interval domain".into(),
        ));
    }
    let n_steps = steps_for(cfg.t_final, cfg.dt);
    let burn_steps = if cfg.burn_in == 0.0 {
        0
    } else {
        steps_for(cfg.burn_in, cfg.dt)
    };
    let post = n_steps.saturating_sub(burn_steps);
    if post < RATE_BATCHES as u64 {
        return Err(QsdError::InvalidConfig(format!(
            "post-burn-in window has {post} steps; need at least {RATE_BATCHES}"
        )));
    }
    if post / cfg.snapshot_stride as u64 == 0 {
        return Err(QsdError::InvalidConfig(
            "snapshot_stride exceeds the post-burn-in window".into(),
        ));
    }
    Ok((n_steps, burn_steps))
}

/// Runs the Fleming-Viot system. Kinetic runs use the rescaled clock, so
/// `t_final`, `dt`, and the estimated rate are all in rescaled time.
pub fn fleming_viot(
    kind: ProcessKind,
    domain: &Domain,
    field: &ForceField,
    params: &PhysParams,
    cfg: &FvConfig,
) -> Result<QsdEstimate, QsdError> {
    let (n_steps, burn_steps) = validate_fv(kind, domain, cfg)?;
    let post_steps = n_steps - burn_steps;
    let clock = match kind {
        ProcessKind::Langevin => ClockMode::Rescaled,
        ProcessKind::Overdamped => ClockMode::Physical,
    };
    let stepper = Stepper::new(
        kind,
        &IntegratorConfig {
            dt: cfg.dt,
            clock,
            bridge_correction: cfg.bridge_correction,
        },
        params,
    )?;
    let n = cfg.n_particles;
    let d = domain.dim();
    let momentum_sd = params.inv_beta().sqrt();
    let mut init_rng = stream::derive2(cfg.seed, component::FV_INIT, cfg.ensemble_id, 0);
    let mut particles: Vec<Particle> = (0..n)
        .map(|i| {
            let q = uniform_in_domain(domain, &mut init_rng);
            let p = match kind {
                ProcessKind::Langevin => (0..d)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut init_rng);
                        momentum_sd * z
                    })
                    .collect(),
                ProcessKind::Overdamped => vec![0.0; d],
            };
            Particle {
                q,
                p,
                f: vec![0.0; d],
                rng: stream::derive2(cfg.seed, component::FV_PARTICLE, cfg.ensemble_id, i as u32),
            }
        })
        .collect();
    let mut resample_rng = stream::derive2(cfg.seed, component::FV_RESAMPLE, cfg.ensemble_id, 0);

    let mut pre_q = vec![0.0; n * d];
    let mut pre_p = vec![0.0; n * d];
    let mut batch_events = [0u64; RATE_BATCHES];
    let mut branch_events = 0u64;
    let n_snapshots = (post_steps / cfg.snapshot_stride as u64) as usize;
    let mut position_samples = Vec::with_capacity(n_snapshots * n * d);
    let mut momentum_samples = match kind {
        ProcessKind::Langevin => Vec::with_capacity(n_snapshots * n * d),
        ProcessKind::Overdamped => Vec::new(),
    };

    for k in 0..n_steps {
        for (i, part) in particles.iter().enumerate() {
            pre_q[i * d..(i + 1) * d].copy_from_slice(&part.q);
            pre_p[i * d..(i + 1) * d].copy_from_slice(&part.p);
        }
        let outcomes = exec::map_mut(&mut particles, |_, part| {
            stepper.advance(
                &mut part.q,
                &mut part.p,
                &mut part.f,
                field,
                Some(domain),
                &mut part.rng,
            )
        });
        let exited = outcomes
            .iter()
            .filter(|o| matches!(o, StepOutcome::Exited { .. }))
            .count();
        if exited == n {
            return Err(QsdError::Degenerate { step: k });
        }
        if exited > 0 {
            for i in 0..n {
                if !matches!(outcomes[i], StepOutcome::Exited { .. }) {
                    continue;
                }
                let mut j = resample_rng.gen_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                if j < i {
                    let (before, rest) = particles.split_at_mut(i);
                    rest[0].q.copy_from_slice(&before[j].q);
                    rest[0].p.copy_from_slice(&before[j].p);
                } else {
                    particles[i].q.copy_from_slice(&pre_q[j * d..(j + 1) * d]);
                    particles[i].p.copy_from_slice(&pre_p[j * d..(j + 1) * d]);
                }
            }
        }
        if k >= burn_steps {
            let m = k - burn_steps;
            if exited > 0 {
                branch_events += exited as u64;
                let b = (m * RATE_BATCHES as u64 / post_steps) as usize;
                batch_events[b] += exited as u64;
            }
            if (m + 1) % cfg.snapshot_stride as u64 == 0
                && position_samples.len() < n_snapshots * n * d
            {
                for part in &particles {
                    position_samples.extend_from_slice(&part.q);
                }
                if kind == ProcessKind::Langevin {
                    for part in &particles {
                        momentum_samples.extend_from_slice(&part.p);
                    }
                }
            }
        }
    }

    let window = post_steps as f64 * cfg.dt;
    let lambda0_hat = branch_events as f64 / (n as f64 * window);
    let mut rates = [0.0f64; RATE_BATCHES];
    for (b, rate) in rates.iter_mut().enumerate() {
        let lo = b as u64 * post_steps / RATE_BATCHES as u64;
        let hi = (b as u64 + 1) * post_steps / RATE_BATCHES as u64;
        *rate = batch_events[b] as f64 / (n as f64 * (hi - lo) as f64 * cfg.dt);
    }
    let mean_rate = rates.iter().sum::<f64>() / RATE_BATCHES as f64;
    let var_rate = rates
        .iter()
        .map(|r| (r - mean_rate) * (r - mean_rate))
        .sum::<f64>()
        / (RATE_BATCHES as f64 - 1.0);
    let lambda0_stderr = (var_rate / RATE_BATCHES as f64).sqrt();

    Ok(QsdEstimate {
        gamma: match kind {
            ProcessKind::Langevin => params.gamma(),
            ProcessKind::Overdamped => 0.0,
        },
        lambda0_hat,
        lambda0_stderr,
        branch_events,
        position_samples,
        momentum_samples,
        dim: d,
        n_snapshots,
    })
}

impl QsdEstimate {
    /// Samples of one coordinate across all snapshots and particles.
    pub fn position_coord(&self, c: usize) -> Vec<f64> {
        self.position_samples
            .iter()
            .skip(c)
            .step_by(self.dim)
            .copied()
            .collect()
    }

    pub fn momentum_coord(&self, c: usize) -> Vec<f64> {
        self.momentum_samples
            .iter()
            .skip(c)
            .step_by(self.dim)
            .copied()
            .collect()
    }

    /// Pooled W1 against a reference density plus the standard error over
    /// ten consecutive snapshot batches (NaN when there are fewer than ten
    /// snapshots). One-dimensional runs only.
    pub fn w1_position(&self, reference: &GridDensity) -> Result<(f64, f64), QsdError> {
        if self.dim != 1 {
            return Err(QsdError::InvalidConfig(
                "w1_position applies to 1D runs".into(),
            ));
        }
        let pooled = stats::wasserstein1_vs_density(&self.position_samples, reference)?;
        if self.n_snapshots < RATE_BATCHES {
            return Ok((pooled, f64::NAN));
        }
        let per_snapshot = self.position_samples.len() / self.n_snapshots;
        let mut w1s = Vec::with_capacity(RATE_BATCHES);
        for b in 0..RATE_BATCHES {
            let lo = b * self.n_snapshots / RATE_BATCHES;
            let hi = (b + 1) * self.n_snapshots / RATE_BATCHES;
            let slice = &self.position_samples[lo * per_snapshot..hi * per_snapshot];
            w1s.push(stats::wasserstein1_vs_density(slice, reference)?);
        }
        let mean = w1s.iter().sum::<f64>() / RATE_BATCHES as f64;
        let var = w1s.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>()
            / (RATE_BATCHES as f64 - 1.0);
        Ok((pooled, (var / RATE_BATCHES as f64).sqrt()))
    }
}

/// Draws start states from a position density, with Gibbs momenta for the
/// kinetic process.
pub fn states_from_density(
    density: &GridDensity,
    n: usize,
    kind: ProcessKind,
    beta: f64,
    seed: u64,
    ensemble_id: u32,
) -> Vec<State> {
    let mut rng = stream::derive2(seed, component::SAMPLING, ensemble_id, 0);
    let sd = (1.0 / beta).sqrt();
    (0..n)
        .map(|_| {
            let q = vec![density.sample(&mut rng)];
            let p = match kind {
                ProcessKind::Langevin => {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    vec![sd * z]
                }
                ProcessKind::Overdamped => vec![0.0],
            };
            State { q, p }
        })
        .collect()
}

/// Exit-time statistics for a batch of independent absorbed trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct ExitLawStats {
    /// Trajectories launched.
    pub n: usize,
    /// Mean exit time among the uncensored trajectories.
    pub mean_exit: f64,
    /// Exponential maximum-likelihood rate, `1 / mean_exit`.
    pub rate_mle: f64,
    /// KS statistic of the uncensored exit times against `Exp(rate_mle)`.
    pub ks_stat: f64,
    /// Trajectories still alive at the horizon.
    pub censored: usize,
    pub horizon: f64,
}

impl ExitLawStats {
    pub fn censored_fraction(&self) -> f64 {
        self.censored as f64 / self.n as f64
    }
}

/// Launches one trajectory per start state and summarizes the exit law.
#[allow(clippy::too_many_arguments)]
pub fn exit_law_probe(
    starts: &[State],
    kind: ProcessKind,
    domain: &Domain,
    field: &ForceField,
    params: &PhysParams,
    dt: f64,
    horizon: f64,
    bridge_correction: bool,
    seed: u64,
    ensemble_id: u32,
) -> Result<ExitLawStats, QsdError> {
    if starts.is_empty() {
        return Err(QsdError::InvalidConfig("no start states".into()));
    }
    let clock = match kind {
        ProcessKind::Langevin => ClockMode::Rescaled,
        ProcessKind::Overdamped => ClockMode::Physical,
    };
    let cfg = IntegratorConfig {
        dt,
        clock,
        bridge_correction,
    };
    let outcomes = exec::map_indexed(starts.len(), |i| {
        let mut rng = stream::derive2(seed, component::EXIT_LAW, ensemble_id, i as u32);
        simulate_until_for_probe(&starts[i], kind, domain, field, params, &cfg, horizon, &mut rng)
    });
    let mut times = Vec::with_capacity(starts.len());
    let mut censored = 0usize;
    for out in outcomes {
        match out?.exit_time {
            Some(t) => times.push(t),
            None => censored += 1,
        }
    }
    if times.is_empty() {
        return Err(QsdError::AllCensored);
    }
    let mean_exit = times.iter().sum::<f64>() / times.len() as f64;
    let rate_mle = 1.0 / mean_exit;
    let ks_stat = stats::ks_vs_exponential(&times, rate_mle)?;
    Ok(ExitLawStats {
        n: starts.len(),
        mean_exit,
        rate_mle,
        ks_stat,
        censored,
        horizon,
    })
}

#[allow(clippy::too_many_arguments)]
fn simulate_until_for_probe(
    x0: &State,
    kind: ProcessKind,
    domain: &Domain,
    field: &ForceField,
    params: &PhysParams,
    cfg: &IntegratorConfig,
    horizon: f64,
    rng: &mut Stream,
) -> Result<crate::dynamics::TrajectoryOutcome, QsdError> {
    Ok(crate::dynamics::simulate_until(
        x0, kind, domain, field, params, cfg, horizon, rng,
    )?)
}

/// Moment and W1 summary of a momentum marginal against its Gibbs law
/// `N(0, 1/beta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussReport {
    pub mean: f64,
    pub var: f64,
    pub skew: f64,
    pub exkurt: f64,
    pub w1: f64,
}

pub fn momentum_gaussianity(samples: &[f64], beta: f64) -> Result<GaussReport, QsdError> {
    let m = stats::moments4(samples)?;
    let reference = GridDensity::gaussian(0.0, 1.0 / beta)?;
    let w1 = stats::wasserstein1_vs_density(samples, &reference)?;
    Ok(GaussReport {
        mean: m.mean,
        var: m.var,
        skew: m.skew,
        exkurt: m.exkurt,
        w1,
    })
}

/// Per-friction summary of one sweep leg. The histogram peak and mean |p|
/// are run diagnostics, not part of the CSV schema.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub gamma: f64,
    pub n_particles: usize,
    pub t_final: f64,
    pub dt: f64,
    pub lambda0_rescaled: f64,
    pub lambda0_stderr: f64,
    pub w1_position: f64,
    pub w1_stderr: f64,
    pub p_mean: f64,
    pub p_var: f64,
    pub p_skew: f64,
    pub p_exkurt: f64,
    pub branch_events: u64,
    pub seed: u64,
    pub hist_peak_mass: f64,
    pub mean_abs_p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub n_particles: usize,
    pub t_final: f64,
    pub dt: f64,
    pub burn_in: f64,
    pub snapshot_stride: usize,
    pub oracle_n: usize,
}

const HIST_BINS: usize = 50;
/// Momentum half-width of the sweep histogram, in Gibbs standard deviations.
const HIST_P_SIGMAS: f64 = 5.0;

fn histogram_peak_mass(
    qs: &[f64],
    ps: &[f64],
    q_range: (f64, f64),
    p_range: (f64, f64),
) -> f64 {
    let mut counts = vec![0u64; HIST_BINS * HIST_BINS];
    let mut total = 0u64;
    for (q, p) in qs.iter().zip(ps) {
        let x = (q - q_range.0) / (q_range.1 - q_range.0);
        let y = (p - p_range.0) / (p_range.1 - p_range.0);
        if !(0.0..1.0).contains(&x) || !(0.0..1.0).contains(&y) {
            continue;
        }
        let i = (x * HIST_BINS as f64) as usize;
        let j = (y * HIST_BINS as f64) as usize;
        counts[i * HIST_BINS + j] += 1;
        total += 1;
    }
    if total == 0 {
        return f64::NAN;
    }
    *counts.iter().max().unwrap() as f64 / total as f64
}

/// Runs one kinetic Fleming-Viot leg per friction value against a single
/// overdamped eigen-solution and returns the rows in sweep order together
/// with the reference pair.
pub fn gamma_sweep(
    gammas: &[f64],
    domain: &Domain,
    field: &ForceField,
    beta: f64,
    cfg: &SweepConfig,
    seed: u64,
) -> Result<(Vec<SweepRow>, EigenPair), QsdError> {
    if gammas.is_empty() {
        return Err(QsdError::InvalidConfig("empty gamma list".into()));
    }
    if gammas.windows(2).any(|w| !(w[0] < w[1])) || gammas.iter().any(|g| !(*g > 0.0)) {
        return Err(QsdError::InvalidConfig(
            "gammas must be positive and strictly increasing".into(),
        ));
    }
    let (a, b) = match domain {
        Domain::Interval { a, b } => (*a, *b),
        _ => {
            return Err(QsdError::InvalidConfig(
                "the sweep needs an interval domain for the 1D eigen reference".into(),
            ));
        }
    };
    let reference = oracle::oracle_qsd(
        field,
        beta,
        a,
        b,
        cfg.oracle_n,
        oracle::DEFAULT_ORACLE_TOL,
        oracle::DEFAULT_ORACLE_MAX_ITER,
    )?;
    let density = reference.to_density()?;
    let p_sd = (1.0 / beta).sqrt();
    let mut rows = Vec::with_capacity(gammas.len());
    for (leg, &gamma) in gammas.iter().enumerate() {
        let params = PhysParams::new(beta, gamma)?;
        let fv = FvConfig {
            n_particles: cfg.n_particles,
            t_final: cfg.t_final,
            dt: cfg.dt,
            burn_in: cfg.burn_in,
            snapshot_stride: cfg.snapshot_stride,
            bridge_correction: false,
            seed,
            ensemble_id: leg as u32,
        };
        let est = fleming_viot(ProcessKind::Langevin, domain, field, &params, &fv)?;
        let (w1, w1_stderr) = est.w1_position(&density)?;
        let gauss = momentum_gaussianity(&est.momentum_samples, beta)?;
        let peak = histogram_peak_mass(
            &est.position_samples,
            &est.momentum_samples,
            (a, b),
            (-HIST_P_SIGMAS * p_sd, HIST_P_SIGMAS * p_sd),
        );
        let mean_abs_p = est.momentum_samples.iter().map(|p| p.abs()).sum::<f64>()
            / est.momentum_samples.len() as f64;
        rows.push(SweepRow {
            gamma,
            n_particles: cfg.n_particles,
            t_final: cfg.t_final,
            dt: cfg.dt,
            lambda0_rescaled: est.lambda0_hat,
            lambda0_stderr: est.lambda0_stderr,
            w1_position: w1,
            w1_stderr,
            p_mean: gauss.mean,
            p_var: gauss.var,
            p_skew: gauss.skew,
            p_exkurt: gauss.exkurt,
            branch_events: est.branch_events,
            seed,
            hist_peak_mass: peak,
            mean_abs_p,
        });
    }
    Ok((rows, reference))
}
