//! Exact Gaussian transition kernels of the free kinetic process.
//!
//! With force off, the pair `(q_t, p_t)` driven by `dq = p dt`,
//! `dp = -gamma p dt + sigma dB` (`sigma^2 = 2 gamma / beta`) is Gaussian
//! with, per coordinate and writing `rho = gamma t`,
//!
//! ```text
//! m_q = q0 + t p0 Phi1(rho)            c_qq = sigma^2 t^3 Phi2(rho) / (3 alpha)
//! m_p = p0 exp(-rho)                   c_qp = sigma^2 t^2 Phi1(rho)^2 / (2 alpha)
//!                                      c_pp = sigma^2 t  Phi1(2 rho) / alpha
//! ```
//!
//! where `Phi1(r) = (1 - e^-r)/r`, `Phi2(r) = (3/(2 r^3))(2r - 3 + 4e^-r -
//! e^-2r)`, and `alpha > 0` is a mass-like scale factor on the covariance.
//! The per-coordinate covariance determinant factors exactly as
//!
//! ```text
//! det = (sigma^2 t^2)^2 phi(rho) / (12 alpha^2),
//! phi(r) = 4 Phi2(r) Phi1(2r) - 3 Phi1(r)^4
//!        = 6 (1 - e^-r)(r - 2 + (r + 2) e^-r) / r^4 .
//! ```
//!
//! All three shape functions tend to 1 at 0 and are evaluated by a degree-6
//! Taylor branch below `|rho| = 1e-2` and by cancellation-safe `expm1`
//! rearrangements above it; both branches agree to about `1e-11` at the
//! switch point.

use crate::model::{PhysParams, State};
use crate::stream::Stream;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("time must be finite and > 0, got {0}")]
    InvalidTime(f64),
    #[error("alpha must be finite and > 0, got {0}")]
    InvalidAlpha(f64),
    #[error("invalid input {name}: {value}")]
    InvalidInput { name: &'static str, value: f64 },
    #[error("covariance block is numerically indefinite: det = {det}")]
    IndefiniteCovariance { det: f64 },
    #[error("degenerate covariance block: c_qq = {c_qq}, det = {det}")]
    DegenerateCovariance { c_qq: f64, det: f64 },
    #[error("prefactor series did not converge within {0} terms")]
    SeriesNoConvergence(usize),
}

/// Branch switch point for the shape functions. Below it the degree-6 Taylor
/// truncation error is under 1e-15 relative; above it the `expm1` forms lose
/// at most about `3 eps / rho^2 <= 7e-12` to cancellation.
const TAYLOR_CUTOFF: f64 = 1e-2;

const PHI1_TAYLOR: [f64; 7] = [
    1.0,
    -1.0 / 2.0,
    1.0 / 6.0,
    -1.0 / 24.0,
    1.0 / 120.0,
    -1.0 / 720.0,
    1.0 / 5040.0,
];
const PHI2_TAYLOR: [f64; 7] = [
    1.0,
    -3.0 / 4.0,
    7.0 / 20.0,
    -1.0 / 8.0,
    31.0 / 840.0,
    -3.0 / 320.0,
    127.0 / 60480.0,
];
const PHI_FN_TAYLOR: [f64; 7] = [
    1.0,
    -1.0,
    17.0 / 30.0,
    -7.0 / 30.0,
    43.0 / 560.0,
    -107.0 / 5040.0,
    769.0 / 151200.0,
];

fn horner(coeffs: &[f64; 7], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// `Phi1(rho) = (1 - e^-rho)/rho`, continuously extended to 1 at 0.
pub fn phi1(rho: f64) -> f64 {
    if rho.abs() < TAYLOR_CUTOFF {
        horner(&PHI1_TAYLOR, rho)
    } else {
        -(-rho).exp_m1() / rho
    }
}

/// `Phi2(rho) = (3/(2 rho^3))(2 rho - 3 + 4 e^-rho - e^-2rho)`, extended to 1
/// at 0.
pub fn phi2(rho: f64) -> f64 {
    if rho.abs() < TAYLOR_CUTOFF {
        horner(&PHI2_TAYLOR, rho)
    } else {
        // 2r - 3 + 4e^-r - e^-2r = 2(r + u) - u^2 with u = e^-r - 1.
        let u = (-rho).exp_m1();
        1.5 * (2.0 * (rho + u) - u * u) / (rho * rho * rho)
    }
}

/// `phi(rho) = 4 Phi2(rho) Phi1(2 rho) - 3 Phi1(rho)^4`, extended to 1 at 0,
/// evaluated through its factored closed form.
pub fn phi_fn(rho: f64) -> f64 {
    if rho.abs() < TAYLOR_CUTOFF {
        horner(&PHI_FN_TAYLOR, rho)
    } else {
        // r - 2 + (r + 2) e^-r = 2(rho + u) + rho u with u = e^-r - 1.
        let u = (-rho).exp_m1();
        6.0 * (-u) * (2.0 * (rho + u) + rho * u) / (rho * rho * rho * rho)
    }
}

/// Per-coordinate covariance of `(q_t, p_t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelCov {
    pub c_qq: f64,
    pub c_qp: f64,
    pub c_pp: f64,
}

impl KernelCov {
    /// `c_qq c_pp - c_qp^2`, which equals
    /// `(sigma^2 t^2)^2 phi(gamma t) / (12 alpha^2)` analytically.
    pub fn block_det(&self) -> f64 {
        self.c_qq * self.c_pp - self.c_qp * self.c_qp
    }
}

fn check_time_alpha(t: f64, alpha: f64) -> Result<(), KernelError> {
    if !(t.is_finite() && t > 0.0) {
        return Err(KernelError::InvalidTime(t));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(KernelError::InvalidAlpha(alpha));
    }
    Ok(())
}

/// Covariance of the kernel at lag `t`.
pub fn kernel_cov(t: f64, params: &PhysParams, alpha: f64) -> Result<KernelCov, KernelError> {
    check_time_alpha(t, alpha)?;
    let rho = params.gamma() * t;
    let s2 = params.sigma_sq();
    Ok(KernelCov {
        c_qq: s2 * t * t * t * phi2(rho) / (3.0 * alpha),
        c_qp: s2 * t * t * phi1(rho) * phi1(rho) / (2.0 * alpha),
        c_pp: s2 * t * phi1(2.0 * rho) / alpha,
    })
}

/// Per-coordinate block determinant and the full `2d`-dimensional determinant
/// `block^dim`.
pub fn det_cov(
    t: f64,
    params: &PhysParams,
    alpha: f64,
    dim: usize,
) -> Result<(f64, f64), KernelError> {
    let block = kernel_cov(t, params, alpha)?.block_det();
    Ok((block, block.powi(dim as i32)))
}

/// Mean-map coefficients: `q -> q + drift_q * p`, `p -> decay * p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanCoeffs {
    pub drift_q: f64,
    pub decay: f64,
}

pub fn mean_coeffs(t: f64, gamma: f64) -> MeanCoeffs {
    let rho = gamma * t;
    MeanCoeffs {
        drift_q: t * phi1(rho),
        decay: (-rho).exp(),
    }
}

/// Mean and covariance of the kernel started at `x0`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMoments {
    pub m_q: Vec<f64>,
    pub m_p: Vec<f64>,
    pub cov: KernelCov,
}

pub fn kernel_moments(
    x0: &State,
    t: f64,
    params: &PhysParams,
    alpha: f64,
) -> Result<KernelMoments, KernelError> {
    let cov = kernel_cov(t, params, alpha)?;
    let mc = mean_coeffs(t, params.gamma());
    let m_q = x0
        .q
        .iter()
        .zip(&x0.p)
        .map(|(q, p)| q + mc.drift_q * p)
        .collect();
    let m_p = x0.p.iter().map(|p| mc.decay * p).collect();
    Ok(KernelMoments { m_q, m_p, cov })
}

/// Lower Cholesky factor of a per-coordinate covariance block.
///
/// Tolerates round-off determinants down to `-1e-14`, clamping them to zero;
/// anything lower is reported as indefinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovCholesky {
    pub l_qq: f64,
    pub l_pq: f64,
    pub l_pp: f64,
}

const INDEFINITE_TOL: f64 = -1e-14;

impl CovCholesky {
    pub fn new(cov: &KernelCov) -> Result<Self, KernelError> {
        let det = cov.block_det();
        if det < INDEFINITE_TOL {
            return Err(KernelError::IndefiniteCovariance { det });
        }
        if cov.c_qq <= 0.0 {
            return Err(KernelError::DegenerateCovariance {
                c_qq: cov.c_qq,
                det,
            });
        }
        let l_qq = cov.c_qq.sqrt();
        Ok(Self {
            l_qq,
            l_pq: cov.c_qp / l_qq,
            l_pp: (det.max(0.0) / cov.c_qq).sqrt(),
        })
    }
}

/// Draws one kernel transition from `x0` over lag `t`. Consumes exactly two
/// standard normals per coordinate, position draw first.
pub fn kernel_sample(
    x0: &State,
    t: f64,
    params: &PhysParams,
    alpha: f64,
    rng: &mut Stream,
) -> Result<State, KernelError> {
    let m = kernel_moments(x0, t, params, alpha)?;
    let l = CovCholesky::new(&m.cov)?;
    let d = x0.dim();
    let mut q = Vec::with_capacity(d);
    let mut p = Vec::with_capacity(d);
    for k in 0..d {
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        q.push(m.m_q[k] + l.l_qq * z1);
        p.push(m.m_p[k] + l.l_pq * z1 + l.l_pp * z2);
    }
    Ok(State { q, p })
}

/// Log density of the kernel at `x1`, started from `x0`.
pub fn kernel_logdensity(
    x0: &State,
    x1: &State,
    t: f64,
    params: &PhysParams,
    alpha: f64,
) -> Result<f64, KernelError> {
    if x0.dim() != x1.dim() {
        return Err(KernelError::InvalidInput {
            name: "x1 dimension",
            value: x1.dim() as f64,
        });
    }
    let m = kernel_moments(x0, t, params, alpha)?;
    let det = m.cov.block_det();
    if det <= 0.0 {
        return Err(KernelError::DegenerateCovariance {
            c_qq: m.cov.c_qq,
            det,
        });
    }
    let mut ld = 0.0;
    for k in 0..x0.dim() {
        let dq = x1.q[k] - m.m_q[k];
        let dp = x1.p[k] - m.m_p[k];
        let quad = (m.cov.c_pp * dq * dq - 2.0 * m.cov.c_qp * dq * dp + m.cov.c_qq * dp * dp) / det;
        ld += -(2.0 * PI).ln() - 0.5 * det.ln() - 0.5 * quad;
    }
    Ok(ld)
}

const SERIES_MAX_TERMS: usize = 500;
const SERIES_RELATIVE_TOL: f64 = 1e-14;

/// `sum_j x^j / Gamma((j+1)/2)` via a ratio recurrence; no term over- or
/// underflows on the way.
fn gamma_series(x: f64) -> Result<f64, KernelError> {
    // ratio_j = Gamma((j+1)/2) / Gamma((j+2)/2); term_j = x^j / Gamma((j+1)/2).
    let sqrt_pi = PI.sqrt();
    let mut ratio = sqrt_pi;
    let mut term = 1.0 / sqrt_pi;
    let mut sum = term;
    for j in 0..SERIES_MAX_TERMS {
        term *= x * ratio;
        sum += term;
        if term <= SERIES_RELATIVE_TOL * sum {
            return Ok(sum);
        }
        ratio = 2.0 / ((j + 1) as f64 * ratio);
    }
    Err(KernelError::SeriesNoConvergence(SERIES_MAX_TERMS))
}

fn check_prefactor_inputs(f_sup: f64, c_alpha: f64) -> Result<(), KernelError> {
    if !(f_sup.is_finite() && f_sup >= 0.0) {
        return Err(KernelError::InvalidInput {
            name: "f_sup",
            value: f_sup,
        });
    }
    if !(c_alpha.is_finite() && c_alpha >= 0.0) {
        return Err(KernelError::InvalidInput {
            name: "c_alpha",
            value: c_alpha,
        });
    }
    Ok(())
}

/// Density-ratio prefactor bound
/// `alpha^-dim * sum_j (f_sup c_alpha sqrt(pi t))^j / ((2 gamma/beta)^{j/2}
/// Gamma((j+1)/2))`, summed until terms fall below `1e-14` of the partial
/// sum.
pub fn ub_series_prefactor(
    t: f64,
    params: &PhysParams,
    f_sup: f64,
    c_alpha: f64,
    alpha: f64,
    dim: usize,
) -> Result<f64, KernelError> {
    check_time_alpha(t, alpha)?;
    check_prefactor_inputs(f_sup, c_alpha)?;
    let x = f_sup * c_alpha * (PI * t).sqrt() / params.sigma_sq().sqrt();
    Ok(alpha.powi(-(dim as i32)) * gamma_series(x)?)
}

/// Rescaled-clock variant of [`ub_series_prefactor`]: substituting the
/// physical lag `gamma t` removes every `gamma`, leaving
/// `(2/beta)^{j/2}` in the denominator.
pub fn ub_series_prefactor_rescaled(
    t: f64,
    beta: f64,
    f_sup: f64,
    c_alpha: f64,
    alpha: f64,
    dim: usize,
) -> Result<f64, KernelError> {
    check_time_alpha(t, alpha)?;
    check_prefactor_inputs(f_sup, c_alpha)?;
    if !(beta.is_finite() && beta > 0.0) {
        return Err(KernelError::InvalidInput {
            name: "beta",
            value: beta,
        });
    }
    let x = f_sup * c_alpha * (PI * t).sqrt() / (2.0 / beta).sqrt();
    Ok(alpha.powi(-(dim as i32)) * gamma_series(x)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::{self, component};

    // Reference values computed with 60-digit arithmetic, rounded to f64.
    const PHI1_AT_1: f64 = 0.6321205588285577;
    const PHI1_AT_NEG_1: f64 = 1.7182818284590453;
    const PHI2_AT_1: f64 = 0.5042737221737349;
    const PHI2_AT_100: f64 = 0.0002955;
    const PHI_FN_AT_1: f64 = 0.39307148985558726;
    const DET_AT_CANONICAL: f64 = 0.13102382995186243;
    const TWO_OVER_SQRT_PI: f64 = 1.1283791670955126;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    fn canonical() -> (State, f64, PhysParams, f64) {
        let x0 = State::new(vec![0.0], vec![1.0]).unwrap();
        (x0, 1.0, PhysParams::new(1.0, 1.0).unwrap(), 1.0)
    }

    #[test]
    fn shape_functions_match_reference_points() {
        assert!(rel(phi1(1.0), PHI1_AT_1) < 1e-14);
        assert!(rel(phi1(-1.0), PHI1_AT_NEG_1) < 1e-14);
        assert!(rel(phi2(1.0), PHI2_AT_1) < 1e-13);
        assert!(rel(phi2(100.0), PHI2_AT_100) < 1e-13);
        assert!(rel(phi_fn(1.0), PHI_FN_AT_1) < 1e-13);
    }

    #[test]
    fn taylor_branch_matches_reference_near_zero() {
        let cases = [
            (1e-8, 0.999999995, 0.9999999925, 0.9999999900000001),
            (1e-6, 0.9999995000001667, 0.99999925000035, 0.9999990000005667),
            (1e-4, 0.999950001666625, 0.999925003499875, 0.9999000056664333),
        ];
        for (rho, p1, p2, pf) in cases {
            assert!(rel(phi1(rho), p1) < 1e-14, "phi1({rho})");
            assert!(rel(phi2(rho), p2) < 1e-14, "phi2({rho})");
            assert!(rel(phi_fn(rho), pf) < 1e-14, "phi_fn({rho})");
        }
    }

    #[test]
    fn both_branches_agree_at_the_cutoff() {
        // Reference values at rho = 1e-2, where the branch switches.
        let refs = [
            (phi1(1e-2), 0.9950166250831946, 1e-12),
            (phi2(1e-2), 0.9925348753681122, 2e-11),
            (phi_fn(1e-2), 0.9900564340990725, 2e-11),
        ];
        for (got, expected, tol) in refs {
            assert!(rel(got, expected) < tol, "{got} vs {expected}");
        }
        // Both branches evaluated at the switch point itself; the Taylor
        // truncations are exact to the ulp there, the expm1 forms lose at
        // most ~6e-12 to cancellation.
        let rho = TAYLOR_CUTOFF;
        let u = (-rho).exp_m1();
        let closed = [
            -u / rho,
            1.5 * (2.0 * (rho + u) - u * u) / (rho * rho * rho),
            6.0 * (-u) * (2.0 * (rho + u) + rho * u) / rho.powi(4),
        ];
        let taylor = [
            horner(&PHI1_TAYLOR, rho),
            horner(&PHI2_TAYLOR, rho),
            horner(&PHI_FN_TAYLOR, rho),
        ];
        for (t, c) in taylor.iter().zip(&closed) {
            assert!(rel(*t, *c) < 1e-11, "branch gap {t} vs {c}");
        }
    }

    #[test]
    fn determinant_identity_holds_across_the_range() {
        let mut worst = 0.0f64;
        for i in 0..1000 {
            let rho = 10f64.powf(-6.0 + 9.0 * i as f64 / 999.0);
            let lhs = 4.0 * phi2(rho) * phi1(2.0 * rho) - 3.0 * phi1(rho).powi(4);
            let err = (lhs - phi_fn(rho)).abs() / phi_fn(rho).abs().max(1e-300);
            worst = worst.max(err);
        }
        assert!(worst < 1e-10, "worst identity residual {worst}");
    }

    #[test]
    fn moments_match_reference_at_canonical_point() {
        let (x0, t, params, alpha) = canonical();
        let m = kernel_moments(&x0, t, &params, alpha).unwrap();
        assert!(rel(m.m_q[0], 0.6321205588285577) < 1e-14);
        assert!(rel(m.m_p[0], 0.36787944117144233) < 1e-14);
        assert!(rel(m.cov.c_qq, 0.3361824814491566) < 1e-13);
        assert!(rel(m.cov.c_qp, 0.39957640089372803) < 1e-13);
        assert!(rel(m.cov.c_pp, 0.8646647167633873) < 1e-13);
        assert!(rel(m.cov.block_det(), DET_AT_CANONICAL) < 1e-12);
    }

    #[test]
    fn det_cov_factors_through_phi() {
        for (t, gamma, beta, alpha) in [
            (0.3, 2.0, 1.0, 1.0),
            (1.0, 1.0, 1.0, 1.0),
            (5.0, 0.5, 2.0, 0.7),
            (0.004, 12.0, 0.3, 1.9),
        ] {
            let params = PhysParams::new(beta, gamma).unwrap();
            let (block, full) = det_cov(t, &params, alpha, 3).unwrap();
            let s2t2 = params.sigma_sq() * t * t;
            let expected = s2t2 * s2t2 * phi_fn(gamma * t) / (12.0 * alpha * alpha);
            assert!(rel(block, expected) < 1e-12, "t={t} gamma={gamma}");
            assert!(rel(full, block.powi(3)) < 1e-14);
        }
    }

    #[test]
    fn momentum_variance_saturates_at_equilibrium() {
        let params = PhysParams::new(3.0, 2.0).unwrap();
        let alpha = 1.5;
        let cov = kernel_cov(1e6, &params, alpha).unwrap();
        let expected = params.inv_beta() / alpha;
        assert!(rel(cov.c_pp, expected) < 1e-9);
    }

    #[test]
    fn asymptotic_normalizations_hold_at_large_gamma() {
        let (gamma, t) = (1000.0f64, 1.0f64);
        let e1 = gamma.powi(6) * t.powi(4) * phi_fn(gamma * gamma * t);
        assert!(rel(e1, 6.0 * t) < 1e-4, "phi normalization {e1}");
        let e2 = t.powi(3) * gamma.powi(4) * phi2(gamma * gamma * t);
        assert!(rel(e2, 3.0 * t) < 1e-5, "phi2 normalization {e2}");
    }

    #[test]
    fn logdensity_peaks_at_the_mean() {
        let (x0, t, params, alpha) = canonical();
        let m = kernel_moments(&x0, t, &params, alpha).unwrap();
        let mean = State::new(m.m_q.clone(), m.m_p.clone()).unwrap();
        let ld = kernel_logdensity(&x0, &mean, t, &params, alpha).unwrap();
        let expected = -(2.0 * PI * DET_AT_CANONICAL.sqrt()).ln();
        assert!((ld - expected).abs() < 1e-12, "{ld} vs {expected}");
        assert!((expected - (-0.8216890342619651)).abs() < 1e-14);
    }

    #[test]
    fn logdensity_integrates_to_one() {
        let (x0, t, params, alpha) = canonical();
        let m = kernel_moments(&x0, t, &params, alpha).unwrap();
        let (sq, sp) = (m.cov.c_qq.sqrt(), m.cov.c_pp.sqrt());
        let n = 400;
        let (q_lo, q_hi) = (m.m_q[0] - 8.0 * sq, m.m_q[0] + 8.0 * sq);
        let (p_lo, p_hi) = (m.m_p[0] - 8.0 * sp, m.m_p[0] + 8.0 * sp);
        let (hq, hp) = ((q_hi - q_lo) / n as f64, (p_hi - p_lo) / n as f64);
        let simpson_w = |i: usize| -> f64 {
            if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            }
        };
        let mut integral = 0.0;
        for i in 0..=n {
            let q = q_lo + hq * i as f64;
            let mut row = 0.0;
            for j in 0..=n {
                let p = p_lo + hp * j as f64;
                let x1 = State::new(vec![q], vec![p]).unwrap();
                row += simpson_w(j)
                    * kernel_logdensity(&x0, &x1, t, &params, alpha).unwrap().exp();
            }
            integral += simpson_w(i) * row;
        }
        integral *= hq * hp / 9.0;
        assert!((integral - 1.0).abs() < 1e-6, "integral {integral}");
    }

    #[test]
    fn sampler_matches_kernel_moments() {
        let (x0, t, params, alpha) = canonical();
        let m = kernel_moments(&x0, t, &params, alpha).unwrap();
        let mut rng = stream::derive(11, component::KERNEL, 0);
        let n = 20_000usize;
        let (mut sq, mut sp, mut sqq, mut spp, mut sqp) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let x = kernel_sample(&x0, t, &params, alpha, &mut rng).unwrap();
            sq += x.q[0];
            sp += x.p[0];
            sqq += x.q[0] * x.q[0];
            spp += x.p[0] * x.p[0];
            sqp += x.q[0] * x.p[0];
        }
        let nf = n as f64;
        let (mq, mp) = (sq / nf, sp / nf);
        let se_q = (m.cov.c_qq / nf).sqrt();
        let se_p = (m.cov.c_pp / nf).sqrt();
        assert!((mq - m.m_q[0]).abs() < 5.0 * se_q);
        assert!((mp - m.m_p[0]).abs() < 5.0 * se_p);
        let vq = sqq / nf - mq * mq;
        let vp = spp / nf - mp * mp;
        let cqp = sqp / nf - mq * mp;
        assert!(rel(vq, m.cov.c_qq) < 0.05);
        assert!(rel(vp, m.cov.c_pp) < 0.05);
        assert!(rel(cqp, m.cov.c_qp) < 0.08);
    }

    #[test]
    fn sampler_is_reproducible() {
        let (x0, t, params, alpha) = canonical();
        let mut a = stream::derive(5, component::KERNEL, 7);
        let mut b = stream::derive(5, component::KERNEL, 7);
        for _ in 0..8 {
            let xa = kernel_sample(&x0, t, &params, alpha, &mut a).unwrap();
            let xb = kernel_sample(&x0, t, &params, alpha, &mut b).unwrap();
            assert_eq!(xa, xb);
        }
    }

    #[test]
    fn prefactor_with_zero_force_is_closed_form() {
        let params = PhysParams::new(1.0, 1.0).unwrap();
        let got = ub_series_prefactor(1.0, &params, 0.0, 1.0, 0.5, 1).unwrap();
        assert!(rel(got, TWO_OVER_SQRT_PI) < 1e-14, "{got}");
    }

    #[test]
    fn prefactor_matches_direct_summation() {
        let params = PhysParams::new(2.0, 3.0).unwrap();
        let (t, f_sup, c_alpha, alpha) = (0.9, 1.1, 0.8, 1.0);
        let got = ub_series_prefactor(t, &params, f_sup, c_alpha, alpha, 1).unwrap();
        let x = f_sup * c_alpha * (PI * t).sqrt() / params.sigma_sq().sqrt();
        // Explicit Gamma((j+1)/2) by recurrence, safe for j <= 170.
        let mut g = [0.0f64; 171];
        g[0] = PI.sqrt();
        g[1] = 1.0;
        for j in 0..169 {
            g[j + 2] = (j as f64 + 1.0) / 2.0 * g[j];
        }
        let direct: f64 = (0..=170).map(|j| x.powi(j as i32) / g[j]).sum();
        assert!(rel(got, direct) < 1e-12, "{got} vs {direct}");
    }

    #[test]
    fn prefactor_is_monotone_in_c_alpha() {
        let params = PhysParams::new(1.0, 1.0).unwrap();
        let mut prev = 0.0;
        for i in 0..20 {
            let c = 0.1 * (i + 1) as f64;
            let v = ub_series_prefactor(1.0, &params, 1.0, c, 1.0, 1).unwrap();
            assert!(v > prev, "c_alpha {c}");
            prev = v;
        }
    }

    #[test]
    fn rescaled_prefactor_equals_physical_at_rescaled_lag() {
        let (beta, gamma) = (2.0, 8.0);
        let params = PhysParams::new(beta, gamma).unwrap();
        let (t, f_sup, c_alpha, alpha) = (0.7, 1.3, 0.9, 1.1);
        let physical = ub_series_prefactor(gamma * t, &params, f_sup, c_alpha, alpha, 2).unwrap();
        let rescaled = ub_series_prefactor_rescaled(t, beta, f_sup, c_alpha, alpha, 2).unwrap();
        assert!(rel(physical, rescaled) < 1e-12);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let (x0, _, params, _) = canonical();
        assert!(matches!(
            kernel_cov(0.0, &params, 1.0),
            Err(KernelError::InvalidTime(_))
        ));
        assert!(matches!(
            kernel_cov(-1.0, &params, 1.0),
            Err(KernelError::InvalidTime(_))
        ));
        assert!(matches!(
            kernel_cov(f64::NAN, &params, 1.0),
            Err(KernelError::InvalidTime(_))
        ));
        assert!(matches!(
            kernel_cov(1.0, &params, 0.0),
            Err(KernelError::InvalidAlpha(_))
        ));
        assert!(matches!(
            ub_series_prefactor(1.0, &params, -1.0, 1.0, 1.0, 1),
            Err(KernelError::InvalidInput { .. })
        ));
        let x1 = State::new(vec![0.0, 0.0], vec![0.0, 0.0]).unwrap();
        assert!(kernel_logdensity(&x0, &x1, 1.0, &params, 1.0).is_err());
    }

    #[test]
    fn cholesky_reconstructs_the_covariance() {
        let params = PhysParams::new(0.7, 3.0).unwrap();
        let cov = kernel_cov(0.4, &params, 1.2).unwrap();
        let l = CovCholesky::new(&cov).unwrap();
        assert!(rel(l.l_qq * l.l_qq, cov.c_qq) < 1e-14);
        assert!(rel(l.l_qq * l.l_pq, cov.c_qp) < 1e-14);
        assert!(rel(l.l_pq * l.l_pq + l.l_pp * l.l_pp, cov.c_pp) < 1e-12);
    }
}
