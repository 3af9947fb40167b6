//! Coupled construction linking the kinetic process on the rescaled clock
//! to its overdamped limit through one shared noise path.
//!
//! Per replicate, a single fast-clock Brownian increment sequence drives
//! four processes: the kinetic pair `(q, p)` by Euler-Maruyama in physical
//! time, the slow-clock Brownian motion `b_t = B_{gamma t} / sqrt(gamma)`,
//! the Ornstein-Uhlenbeck integral `Y` with exact decay per step, and the
//! overdamped path `qbar` integrated on the slow grid from the increments
//! of `b`. A fifth, the perturbed path `w`, is built in a second pass: its
//! driver `Z_t = sqrt(2/beta) b_t - h(t) Y_T` involves the terminal value
//! `Y_T`, so `w` is not adapted and cannot be integrated forward alongside
//! the others.
//!
//! The weight `h` is chosen so that `Z` has zero covariance with `Y_T` at
//! every time, making `w` independent of `Y_T`; empirically that shows up
//! as vanishing correlations, as `sup_t |q_t - w_t|` shrinking roughly
//! like `1/gamma`, and as the terminal momentum decoupling from the
//! position path.

use crate::exec;
use crate::model::{ForceField, ModelError, PhysParams, State};
use crate::stats::{self, StatsError};
use crate::stream::{self, component, Stream};
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CouplingError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Hard cap on fast-clock steps per replicate. Runs beyond it need a
/// coarser fast step or a smaller `gamma^2 * t_final`.
pub const MAX_FAST_STEPS: u64 = 100_000_000;

/// Target for `gamma * delta` when the fast substep count is derived
/// automatically; keeps the per-step momentum decay well resolved.
const AUTO_GAMMA_DELTA: f64 = 0.01;

/// Number of interior grid times where `Z` is correlated against `Y_T`.
const CORR_TIMES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingConfig {
    pub gamma: f64,
    /// Horizon in the rescaled clock; physical horizon is `gamma * t_final`.
    pub t_final: f64,
    /// Slow-grid cell count; paths are recorded on `n_grid + 1` nodes.
    pub n_grid: usize,
    /// Fast steps per slow cell; zero selects the count automatically so
    /// that `gamma * delta <= 0.01`.
    pub n_sub: usize,
    pub replicates: usize,
    pub x0: State,
    pub seed: u64,
}

impl CouplingConfig {
    /// Fast substeps per slow cell after resolving the automatic choice.
    pub fn resolved_n_sub(&self) -> usize {
        if self.n_sub > 0 {
            return self.n_sub;
        }
        let cell_phys = self.gamma * self.t_final / self.n_grid as f64;
        let target = AUTO_GAMMA_DELTA / self.gamma;
        ((cell_phys / target).ceil() as usize).max(1)
    }

    fn validate(&self) -> Result<usize, CouplingError> {
        if !(self.gamma > 1.0) {
            return Err(CouplingError::InvalidConfig(format!(
                "gamma must exceed 1, got {}",
                self.gamma
            )));
        }
        if !(self.t_final.is_finite() && self.t_final > 0.0) {
            return Err(CouplingError::InvalidConfig(format!(
                "bad t_final {}",
                self.t_final
            )));
        }
        if self.n_grid < 2 {
            return Err(CouplingError::InvalidConfig(format!(
                "n_grid must be at least 2, got {}",
                self.n_grid
            )));
        }
        if self.replicates < 2 {
            return Err(CouplingError::InvalidConfig(format!(
                "need at least 2 replicates, got {}",
                self.replicates
            )));
        }
        let n_sub = self.resolved_n_sub();
        let fast = self.n_grid as u64 * n_sub as u64;
        if fast > MAX_FAST_STEPS {
            return Err(CouplingError::InvalidConfig(format!(
                "{fast} fast steps exceed the {MAX_FAST_STEPS} cap; coarsen the fast step \
                 or shorten the horizon"
            )));
        }
        Ok(n_sub)
    }
}

/// Weight of the terminal correction inside `Z`, increasing from 0 at
/// `t = 0` and bounded by `2 / gamma`.
pub fn h_weight(t: f64, gamma: f64, t_final: f64) -> Result<f64, CouplingError> {
    if !(gamma > 0.0 && t_final > 0.0) {
        return Err(CouplingError::InvalidConfig(format!(
            "h weight needs gamma > 0 and t_final > 0, got {gamma}, {t_final}"
        )));
    }
    if !(0.0..=t_final).contains(&t) {
        return Err(CouplingError::InvalidConfig(format!(
            "time {t} outside [0, {t_final}]"
        )));
    }
    let g2 = gamma * gamma;
    // e^(-g2 (T-t)) - e^(-g2 T) = e^(-g2 (T-t)) (1 - e^(-g2 t)); both
    // factors are computed without cancellation.
    let num = (-g2 * (t_final - t)).exp() * (-(-g2 * t).exp_m1());
    let den = -(-2.0 * g2 * t_final).exp_m1();
    Ok(2.0 / gamma * num / den)
}

/// One replicate's coupled paths, recorded on the slow grid. Path arrays
/// are flattened `node major, coordinate minor` with `n_grid + 1` nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledPaths {
    pub t_slow: Vec<f64>,
    /// Kinetic position `q_{gamma t}` at the slow nodes.
    pub q: Vec<f64>,
    /// Kinetic momentum `p_{gamma t}` at the slow nodes.
    pub p: Vec<f64>,
    /// Slow-clock Brownian path `B_{gamma t} / sqrt(gamma)`.
    pub b: Vec<f64>,
    /// Ornstein-Uhlenbeck integral, zero at `t = 0`.
    pub y: Vec<f64>,
    /// Overdamped path driven by the increments of `b`.
    pub qbar: Vec<f64>,
    pub dim: usize,
}

impl CoupledPaths {
    pub fn n_nodes(&self) -> usize {
        self.t_slow.len()
    }

    pub fn node<'a>(&self, arr: &'a [f64], i: usize) -> &'a [f64] {
        &arr[i * self.dim..(i + 1) * self.dim]
    }

    pub fn y_terminal(&self) -> &[f64] {
        self.node(&self.y, self.n_nodes() - 1)
    }

    /// `Z_t = sqrt(2/beta) b_t - h(t) Y_T` at slow node `i`.
    pub fn z_at(
        &self,
        i: usize,
        gamma: f64,
        t_final: f64,
        beta: f64,
    ) -> Result<Vec<f64>, CouplingError> {
        let h = h_weight(self.t_slow[i], gamma, t_final)?;
        let amp = (2.0 / beta).sqrt();
        let y_t = self.y_terminal().to_vec();
        Ok(self
            .node(&self.b, i)
            .iter()
            .zip(&y_t)
            .map(|(b, y)| amp * b - h * y)
            .collect())
    }
}

/// How the fast-clock momentum update treats its own decay. The plain
/// Euler form matches the position update's order; the exact-decay form
/// makes the zero-field momentum reproduce the `Y` recursion to round-off
/// and exists for consistency checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentumUpdate {
    Euler,
    MatchedDecay,
}

/// Integrates one replicate. All five recorded processes consume the same
/// fast-clock Gaussian increments; the stream is keyed by
/// `(seed, ensemble_id, replicate)`, so replicates are independent and
/// reproducible in any execution order.
pub fn simulate_coupled(
    cfg: &CouplingConfig,
    field: &ForceField,
    params: &PhysParams,
    ensemble_id: u32,
    replicate: u32,
) -> Result<CoupledPaths, CouplingError> {
    simulate_coupled_with(cfg, field, params, ensemble_id, replicate, MomentumUpdate::Euler)
}

pub fn simulate_coupled_with(
    cfg: &CouplingConfig,
    field: &ForceField,
    params: &PhysParams,
    ensemble_id: u32,
    replicate: u32,
    update: MomentumUpdate,
) -> Result<CoupledPaths, CouplingError> {
    let n_sub = cfg.validate()?;
    if params.gamma() != cfg.gamma {
        return Err(CouplingError::InvalidConfig(format!(
            "config gamma {} disagrees with params gamma {}",
            cfg.gamma,
            params.gamma()
        )));
    }
    let d = cfg.x0.dim();
    let gamma = cfg.gamma;
    let n_fast = cfg.n_grid * n_sub;
    let delta = gamma * cfg.t_final / n_fast as f64;
    let decay = (-gamma * delta).exp();
    // Coefficient of the raw Brownian increment in the momentum and Y
    // updates, sqrt(2 gamma / beta).
    let noise_coef = params.sigma_sq().sqrt();
    let slow_scale = 1.0 / gamma.sqrt();
    let mut rng: Stream = stream::derive2(cfg.seed, component::COUPLING, ensemble_id, replicate);

    let n_nodes = cfg.n_grid + 1;
    let mut t_slow: Vec<f64> = (0..n_nodes)
        .map(|i| i as f64 * cfg.t_final / cfg.n_grid as f64)
        .collect();
    // Pin the endpoint so weight evaluations never see t > t_final from
    // grid round-off.
    t_slow[cfg.n_grid] = cfg.t_final;
    let mut paths = CoupledPaths {
        t_slow,
        q: Vec::with_capacity(n_nodes * d),
        p: Vec::with_capacity(n_nodes * d),
        b: Vec::with_capacity(n_nodes * d),
        y: Vec::with_capacity(n_nodes * d),
        qbar: vec![0.0; n_nodes * d],
        dim: d,
    };

    let mut q = cfg.x0.q.clone();
    let mut p = cfg.x0.p.clone();
    let mut y = vec![0.0; d];
    let mut b_sum = vec![0.0; d];
    let mut f = vec![0.0; d];
    let record = |paths: &mut CoupledPaths, q: &[f64], p: &[f64], b: &[f64], y: &[f64]| {
        paths.q.extend_from_slice(q);
        paths.p.extend_from_slice(p);
        paths.b.extend(b.iter().map(|s| slow_scale * s));
        paths.y.extend_from_slice(y);
    };
    record(&mut paths, &q, &p, &b_sum, &y);
    for k in 0..n_fast {
        field.force_into(&q, &mut f);
        for c in 0..d {
            let db: f64 = {
                let z: f64 = StandardNormal.sample(&mut rng);
                delta.sqrt() * z
            };
            q[c] += p[c] * delta;
            p[c] = match update {
                MomentumUpdate::Euler => p[c] + (f[c] - gamma * p[c]) * delta + noise_coef * db,
                MomentumUpdate::MatchedDecay => decay * p[c] + f[c] * delta + noise_coef * db,
            };
            y[c] = decay * y[c] + noise_coef * db;
            b_sum[c] += db;
        }
        if (k + 1) % n_sub == 0 {
            record(&mut paths, &q, &p, &b_sum, &y);
        }
    }

    // Overdamped leg on the slow grid, driven by the increments of b.
    let dt_slow = cfg.t_final / cfg.n_grid as f64;
    let od_amp = (2.0 * params.inv_beta()).sqrt();
    let mut qbar = cfg.x0.q.clone();
    paths.qbar[0..d].copy_from_slice(&qbar);
    for i in 0..cfg.n_grid {
        field.force_into(&qbar, &mut f);
        for c in 0..d {
            let db = paths.b[(i + 1) * d + c] - paths.b[i * d + c];
            qbar[c] += f[c] * dt_slow + od_amp * db;
        }
        paths.qbar[(i + 1) * d..(i + 2) * d].copy_from_slice(&qbar);
    }
    Ok(paths)
}

/// Second pass: integrates the perturbed path `w` on the slow grid from
/// the already-simulated driver, `w_{i+1} = w_i + F(w_i) dt + dZ_i` with
/// `dZ_i = sqrt(2/beta) db_i - (h(t_{i+1}) - h(t_i)) Y_T`.
pub fn build_w(
    paths: &CoupledPaths,
    cfg: &CouplingConfig,
    field: &ForceField,
    params: &PhysParams,
) -> Result<Vec<f64>, CouplingError> {
    let d = paths.dim;
    let n_nodes = paths.n_nodes();
    let y_t = paths.y_terminal().to_vec();
    let amp = (2.0 * params.inv_beta()).sqrt();
    let dt_slow = cfg.t_final / cfg.n_grid as f64;
    let h: Vec<f64> = paths
        .t_slow
        .iter()
        .map(|&t| h_weight(t, cfg.gamma, cfg.t_final))
        .collect::<Result<_, _>>()?;
    let mut w = vec![0.0; n_nodes * d];
    w[0..d].copy_from_slice(paths.node(&paths.q, 0));
    let mut f = vec![0.0; d];
    for i in 0..n_nodes - 1 {
        let (done, rest) = w.split_at_mut((i + 1) * d);
        let wi = &done[i * d..];
        field.force_into(wi, &mut f);
        let dh = h[i + 1] - h[i];
        for c in 0..d {
            let db = paths.b[(i + 1) * d + c] - paths.b[i * d + c];
            rest[c] = wi[c] + f[c] * dt_slow + amp * db - dh * y_t[c];
        }
    }
    Ok(w)
}

/// Per-friction summary over replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingReport {
    pub gamma: f64,
    pub t_final: f64,
    pub replicates: usize,
    /// Mean and standard error of `sup_t |q_{gamma t} - w_t|`.
    pub sup_qw_mean: f64,
    pub sup_qw_stderr: f64,
    /// Mean and standard error of `sup_t |w_t - qbar_t|`.
    pub sup_wbar_mean: f64,
    pub sup_wbar_stderr: f64,
    /// Correlations `corr(Z_{t_k}, Y_T)` per probe time and coordinate
    /// pair, flattened probe-major.
    pub corr_zy: Vec<f64>,
    pub max_abs_corr_zy: f64,
    /// Terminal-momentum moments, pooled over coordinates.
    pub pt_mean: f64,
    pub pt_var: f64,
    /// Correlation between terminal position and terminal momentum.
    pub qp_terminal_corr: f64,
    /// Moments of `Y_T`, pooled over coordinates.
    pub y_var: f64,
    pub y_skew: f64,
    pub y_exkurt: f64,
    pub seed: u64,
}

fn sup_norm_diff(paths: &CoupledPaths, a: &[f64], b: &[f64]) -> f64 {
    let d = paths.dim;
    let mut sup = 0.0f64;
    for i in 0..paths.n_nodes() {
        let mut s = 0.0;
        for c in 0..d {
            let diff = a[i * d + c] - b[i * d + c];
            s += diff * diff;
        }
        sup = sup.max(s.sqrt());
    }
    sup
}

/// Runs `cfg.replicates` coupled replicates for one friction value and
/// aggregates the independence and rate diagnostics. `ensemble_id` keys
/// the noise streams of this run; sweep legs pass their leg index.
pub fn coupling_experiment(
    cfg: &CouplingConfig,
    field: &ForceField,
    params: &PhysParams,
    ensemble_id: u32,
) -> Result<CouplingReport, CouplingError> {
    cfg.validate()?;
    struct Summary {
        sup_qw: f64,
        sup_wbar: f64,
        z: Vec<f64>,
        y_t: Vec<f64>,
        p_t: Vec<f64>,
        q_t: Vec<f64>,
    }
    let probes: Vec<usize> = (1..=CORR_TIMES)
        .map(|k| k * cfg.n_grid / CORR_TIMES)
        .collect();
    let beta = params.beta();
    let outcomes = exec::map_indexed(cfg.replicates, |r| -> Result<Summary, CouplingError> {
        let paths = simulate_coupled(cfg, field, params, ensemble_id, r as u32)?;
        let w = build_w(&paths, cfg, field, params)?;
        let mut z = Vec::with_capacity(probes.len() * paths.dim);
        for &i in &probes {
            z.extend(paths.z_at(i, cfg.gamma, cfg.t_final, beta)?);
        }
        let last = paths.n_nodes() - 1;
        Ok(Summary {
            sup_qw: sup_norm_diff(&paths, &paths.q, &w),
            sup_wbar: sup_norm_diff(&paths, &w, &paths.qbar),
            z,
            y_t: paths.y_terminal().to_vec(),
            p_t: paths.node(&paths.p, last).to_vec(),
            q_t: paths.node(&paths.q, last).to_vec(),
        })
    });
    let mut rows = Vec::with_capacity(cfg.replicates);
    for out in outcomes {
        rows.push(out?);
    }
    let d = cfg.x0.dim();
    let n = rows.len() as f64;

    let mean_se = |pick: &dyn Fn(&Summary) -> f64| {
        let vals: Vec<f64> = rows.iter().map(pick).collect();
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    };
    let (sup_qw_mean, sup_qw_stderr) = mean_se(&|s: &Summary| s.sup_qw);
    let (sup_wbar_mean, sup_wbar_stderr) = mean_se(&|s: &Summary| s.sup_wbar);

    let mut corr_zy = Vec::with_capacity(probes.len() * d * d);
    let mut max_abs = 0.0f64;
    for k in 0..probes.len() {
        for a in 0..d {
            let z_series: Vec<f64> = rows.iter().map(|s| s.z[k * d + a]).collect();
            for b in 0..d {
                let y_series: Vec<f64> = rows.iter().map(|s| s.y_t[b]).collect();
                let c = stats::pearson_corr(&z_series, &y_series)?;
                max_abs = max_abs.max(c.abs());
                corr_zy.push(c);
            }
        }
    }

    let pooled = |pick: &dyn Fn(&Summary) -> &Vec<f64>| -> Vec<f64> {
        rows.iter().flat_map(|s| pick(s).iter().copied()).collect()
    };
    let p_pool = pooled(&|s: &Summary| &s.p_t);
    let q_pool = pooled(&|s: &Summary| &s.q_t);
    let y_pool = pooled(&|s: &Summary| &s.y_t);
    let p_m = stats::moments4(&p_pool)?;
    let y_m = stats::moments4(&y_pool)?;
    Ok(CouplingReport {
        gamma: cfg.gamma,
        t_final: cfg.t_final,
        replicates: cfg.replicates,
        sup_qw_mean,
        sup_qw_stderr,
        sup_wbar_mean,
        sup_wbar_stderr,
        corr_zy,
        max_abs_corr_zy: max_abs,
        pt_mean: p_m.mean,
        pt_var: p_m.var,
        qp_terminal_corr: stats::pearson_corr(&q_pool, &p_pool)?,
        y_var: y_m.var,
        y_skew: y_m.skew,
        y_exkurt: y_m.exkurt,
        seed: cfg.seed,
    })
}

/// Predicted variance of `Y_T` (and of the zero-field terminal momentum
/// from rest): `beta^{-1} (1 - e^{-2 gamma^2 T})`.
pub fn terminal_momentum_var(gamma: f64, t_final: f64, beta: f64) -> f64 {
    -(1.0 / beta) * (-2.0 * gamma * gamma * t_final).exp_m1()
}
