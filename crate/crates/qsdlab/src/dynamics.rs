//! Time integration of the kinetic and overdamped dynamics, absorption at a
//! domain boundary, and equilibrium probes.
//!
//! The kinetic process uses a Strang splitting: half a force kick, the exact
//! Gaussian flow of the free dynamics over the substep (drawn through the
//! transition-kernel Cholesky factor from [`crate::kernels`]), then the
//! second half kick. The overdamped process uses Euler-Maruyama. On the
//! rescaled clock a reported step of size `dt` covers physical time
//! `gamma dt`, split into `ceil(gamma)` equal substeps so the physical
//! substep never exceeds `dt`.
//!
//! Absorption is checked after every substep. For the 1D overdamped process
//! on an interval, an optional Brownian-bridge correction also absorbs paths
//! that crossed the boundary inside a step and returned: given distances
//! `d1`, `d2` to the boundary before and after, the crossing probability is
//! `exp(-d1 d2 / (beta^-1 dt))`.

use crate::kernels::{self, CovCholesky, KernelError, MeanCoeffs};
use crate::model::{Domain, ForceField, ModelError, PhysParams, State};
use crate::stream::Stream;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("start point is on or outside the absorbing boundary")]
    StartOutsideDomain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProcessKind {
    Overdamped,
    Langevin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockMode {
    Physical,
    /// Kinetic time divided by `gamma`; exit rates stay order one as the
    /// friction grows.
    Rescaled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    /// Reported step size, in the units of the chosen clock.
    pub dt: f64,
    pub clock: ClockMode,
    /// Brownian-bridge absorption for the overdamped process on an interval.
    pub bridge_correction: bool,
}

/// Outcome of one reported step. `fraction` locates the absorption within
/// the step: substep boundary `j/n_sub` for a grid detection, half a substep
/// earlier for a bridge detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    Survived,
    Exited { fraction: f64 },
}

/// Exact Gaussian flow of the free kinetic dynamics over one physical
/// substep, with `alpha = 1`.
#[derive(Debug, Clone, Copy)]
struct KineticFlow {
    mean: MeanCoeffs,
    chol: CovCholesky,
}

impl KineticFlow {
    fn new(params: &PhysParams, t: f64) -> Result<Self, KernelError> {
        let cov = kernels::kernel_cov(t, params, 1.0)?;
        Ok(Self {
            mean: kernels::mean_coeffs(t, params.gamma()),
            chol: CovCholesky::new(&cov)?,
        })
    }
}

/// Reusable integrator for one `(kind, clock, dt, params)` combination.
/// Construction precomputes the substep layout and, for the kinetic process,
/// the Cholesky factor of the substep kernel.
#[derive(Debug, Clone)]
pub struct Stepper {
    kind: ProcessKind,
    dt: f64,
    n_sub: usize,
    dt_phys: f64,
    bridge: bool,
    inv_beta: f64,
    overdamped_amp: f64,
    kinetic: Option<KineticFlow>,
    noise_scale: f64,
}

impl Stepper {
    pub fn new(
        kind: ProcessKind,
        cfg: &IntegratorConfig,
        params: &PhysParams,
    ) -> Result<Self, DynamicsError> {
        if !(cfg.dt.is_finite() && cfg.dt > 0.0) {
            return Err(DynamicsError::InvalidConfig("dt must be finite and > 0"));
        }
        let (n_sub, dt_phys) = match (kind, cfg.clock) {
            (ProcessKind::Overdamped, ClockMode::Physical) => (1, cfg.dt),
            (ProcessKind::Overdamped, ClockMode::Rescaled) => {
                return Err(DynamicsError::InvalidConfig(
                    "overdamped dynamics run on the physical clock",
                ));
            }
            (ProcessKind::Langevin, ClockMode::Physical) => (1, cfg.dt),
            (ProcessKind::Langevin, ClockMode::Rescaled) => {
                let n = params.gamma().ceil().max(1.0) as usize;
                (n, params.gamma() * cfg.dt / n as f64)
            }
        };
        if cfg.bridge_correction && kind == ProcessKind::Langevin {
            return Err(DynamicsError::InvalidConfig(
                "bridge correction applies to the overdamped process only",
            ));
        }
        let kinetic = match kind {
            ProcessKind::Langevin => Some(KineticFlow::new(params, dt_phys)?),
            ProcessKind::Overdamped => None,
        };
        Ok(Self {
            kind,
            dt: cfg.dt,
            n_sub,
            dt_phys,
            bridge: cfg.bridge_correction,
            inv_beta: params.inv_beta(),
            overdamped_amp: (2.0 * params.inv_beta() * dt_phys).sqrt(),
            kinetic,
            noise_scale: 1.0,
        })
    }

    /// Test hook: scales every Gaussian draw, zero giving the deterministic
    /// mean flow.
    #[cfg(test)]
    pub(crate) fn with_noise_scale(mut self, s: f64) -> Self {
        self.noise_scale = s;
        self
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_substeps(&self) -> usize {
        self.n_sub
    }

    pub fn physical_substep(&self) -> f64 {
        self.dt_phys
    }

    /// Advances one reported step in place. `f` is force scratch of the same
    /// length as `q`. Without a domain the step never exits. The caller
    /// keeps the invariant that `q` is strictly inside the domain on entry.
    pub fn advance(
        &self,
        q: &mut [f64],
        p: &mut [f64],
        f: &mut [f64],
        field: &ForceField,
        domain: Option<&Domain>,
        rng: &mut Stream,
    ) -> StepOutcome {
        match self.kind {
            ProcessKind::Overdamped => self.advance_overdamped(q, f, field, domain, rng),
            ProcessKind::Langevin => self.advance_langevin(q, p, f, field, domain, rng),
        }
    }

    fn advance_overdamped(
        &self,
        q: &mut [f64],
        f: &mut [f64],
        field: &ForceField,
        domain: Option<&Domain>,
        rng: &mut Stream,
    ) -> StepOutcome {
        let bridging = self.bridge && domain.is_some();
        debug_assert!(
            !bridging || matches!(domain, Some(Domain::Interval { .. })),
            "bridge correction requires an interval domain"
        );
        let d1 = if bridging {
            domain.unwrap().dist_to_boundary(q)
        } else {
            0.0
        };
        field.force_into(q, f);
        for (qk, fk) in q.iter_mut().zip(f.iter()) {
            let z: f64 = StandardNormal.sample(rng);
            *qk += self.dt_phys * fk + self.noise_scale * self.overdamped_amp * z;
        }
        if let Some(dom) = domain {
            if !dom.contains(q) {
                return StepOutcome::Exited { fraction: 1.0 };
            }
            if bridging {
                let d2 = dom.dist_to_boundary(q);
                let p_cross = (-(d1 * d2) / (self.inv_beta * self.dt_phys)).exp();
                let u: f64 = rng.gen();
                if u < p_cross {
                    return StepOutcome::Exited { fraction: 0.5 };
                }
            }
        }
        StepOutcome::Survived
    }

    fn advance_langevin(
        &self,
        q: &mut [f64],
        p: &mut [f64],
        f: &mut [f64],
        field: &ForceField,
        domain: Option<&Domain>,
        rng: &mut Stream,
    ) -> StepOutcome {
        let kin = self.kinetic.as_ref().unwrap();
        let half = 0.5 * self.dt_phys;
        let s = self.noise_scale;
        field.force_into(q, f);
        for sub in 1..=self.n_sub {
            for (pk, fk) in p.iter_mut().zip(f.iter()) {
                *pk += half * fk;
            }
            for (qk, pk) in q.iter_mut().zip(p.iter_mut()) {
                let z1: f64 = StandardNormal.sample(rng);
                let z2: f64 = StandardNormal.sample(rng);
                let q_new = *qk + kin.mean.drift_q * *pk + s * kin.chol.l_qq * z1;
                let p_new = kin.mean.decay * *pk + s * kin.chol.l_pq * z1 + s * kin.chol.l_pp * z2;
                *qk = q_new;
                *pk = p_new;
            }
            field.force_into(q, f);
            for (pk, fk) in p.iter_mut().zip(f.iter()) {
                *pk += half * fk;
            }
            if let Some(dom) = domain {
                if !dom.contains(q) {
                    return StepOutcome::Exited {
                        fraction: sub as f64 / self.n_sub as f64,
                    };
                }
            }
        }
        StepOutcome::Survived
    }
}

/// Result of a single absorbed trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryOutcome {
    pub exited: bool,
    /// Absorption time on the reported clock; `None` when censored at the
    /// horizon.
    pub exit_time: Option<f64>,
    pub final_state: State,
    pub steps: u64,
}

/// Number of reported steps covering `horizon`, robust to `horizon/dt`
/// landing a round-off below an integer.
pub fn steps_for(horizon: f64, dt: f64) -> u64 {
    ((horizon / dt - 1e-9).ceil() as u64).max(1)
}

/// Runs one trajectory until absorption or `horizon`. The start must be
/// strictly inside the domain (boundary points count as absorbed).
#[allow(clippy::too_many_arguments)]
pub fn simulate_until(
    x0: &State,
    kind: ProcessKind,
    domain: &Domain,
    field: &ForceField,
    params: &PhysParams,
    cfg: &IntegratorConfig,
    horizon: f64,
    rng: &mut Stream,
) -> Result<TrajectoryOutcome, DynamicsError> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(DynamicsError::InvalidConfig(
            "horizon must be finite and > 0",
        ));
    }
    if x0.dim() != domain.dim() {
        return Err(DynamicsError::Model(ModelError::DimensionMismatch {
            expected: domain.dim(),
            got: x0.dim(),
        }));
    }
    if cfg.bridge_correction && !matches!(domain, Domain::Interval { .. }) {
        return Err(DynamicsError::InvalidConfig(
            "bridge correction requires an interval domain",
        ));
    }
    if !domain.contains(&x0.q) {
        return Err(DynamicsError::StartOutsideDomain);
    }
    let stepper = Stepper::new(kind, cfg, params)?;
    let mut q = x0.q.clone();
    let mut p = x0.p.clone();
    let mut f = vec![0.0; x0.dim()];
    let n_steps = steps_for(horizon, cfg.dt);
    for k in 0..n_steps {
        match stepper.advance(&mut q, &mut p, &mut f, field, Some(domain), rng) {
            StepOutcome::Survived => {}
            StepOutcome::Exited { fraction } => {
                return Ok(TrajectoryOutcome {
                    exited: true,
                    exit_time: Some((k as f64 + fraction) * cfg.dt),
                    final_state: State { q, p },
                    steps: k + 1,
                });
            }
        }
    }
    Ok(TrajectoryOutcome {
        exited: false,
        exit_time: None,
        final_state: State { q, p },
        steps: n_steps,
    })
}

/// First and second moments of the first coordinate pair along an unabsorbed
/// trajectory. Momentum fields are NaN for the overdamped process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentReport {
    pub mean_q: f64,
    pub var_q: f64,
    pub mean_p: f64,
    pub var_p: f64,
    pub corr_qp: f64,
    pub n_samples: u64,
}

/// Long-run moment probe of the unabsorbed dynamics, for checking relaxation
/// to the Gibbs measure. Samples every step after `burn_in_steps`.
#[allow(clippy::too_many_arguments)]
pub fn gibbs_probe(
    x0: &State,
    kind: ProcessKind,
    field: &ForceField,
    params: &PhysParams,
    dt: f64,
    n_steps: u64,
    burn_in_steps: u64,
    rng: &mut Stream,
) -> Result<MomentReport, DynamicsError> {
    if burn_in_steps >= n_steps {
        return Err(DynamicsError::InvalidConfig(
            "burn_in_steps must be below n_steps",
        ));
    }
    let cfg = IntegratorConfig {
        dt,
        clock: ClockMode::Physical,
        bridge_correction: false,
    };
    let stepper = Stepper::new(kind, &cfg, params)?;
    let mut q = x0.q.clone();
    let mut p = x0.p.clone();
    let mut f = vec![0.0; x0.dim()];
    let (mut n, mut mq, mut mp) = (0u64, 0.0f64, 0.0f64);
    let (mut m2q, mut m2p, mut cqp) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..n_steps {
        stepper.advance(&mut q, &mut p, &mut f, field, None, rng);
        if k < burn_in_steps {
            continue;
        }
        n += 1;
        let nf = n as f64;
        let dq = q[0] - mq;
        let dp = p[0] - mp;
        mq += dq / nf;
        mp += dp / nf;
        m2q += dq * (q[0] - mq);
        m2p += dp * (p[0] - mp);
        cqp += dq * (p[0] - mp);
    }
    let nf = n as f64;
    let var_q = m2q / (nf - 1.0);
    let var_p = m2p / (nf - 1.0);
    let (mean_p, var_p, corr_qp) = match kind {
        ProcessKind::Overdamped => (f64::NAN, f64::NAN, f64::NAN),
        ProcessKind::Langevin => (
            mp,
            var_p,
            cqp / (nf - 1.0) / (var_q * var_p).sqrt(),
        ),
    };
    Ok(MomentReport {
        mean_q: mq,
        var_q,
        mean_p,
        var_p,
        corr_qp,
        n_samples: n,
    })
}
