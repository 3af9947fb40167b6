//! Deterministic 1D eigenvalue solver for the absorbed overdamped dynamics.
//!
//! On an interval `(a, b)` with absorption at both ends, the density of the
//! overdamped process conditioned on survival converges to the principal
//! eigenfunction `psi` of the (formal adjoint) generator
//!
//! ```text
//! A psi = beta^-1 psi'' - (F psi)',    psi(a) = psi(b) = 0,
//! A psi = -lambda0 psi,
//! ```
//!
//! and the exit rate converges to `lambda0 > 0`. Central second-order
//! differences on a uniform interior grid turn `A` into a tridiagonal
//! matrix; its principal pair comes from unshifted inverse power iteration
//! (the spectrum is strictly negative, so the eigenvalue of smallest
//! magnitude is the principal one, and the iteration contracts at the ratio
//! `lambda0 / lambda1`).

use crate::model::ForceField;
use crate::stats::GridDensity;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("grid needs n >= {min} interior nodes, got {got}")]
    GridTooCoarse { min: usize, got: usize },
    #[error("grid endpoints must satisfy a < b, got [{a}, {b}]")]
    BadEndpoints { a: f64, b: f64 },
    #[error("tolerance must be finite and > 0, got {0}")]
    BadTolerance(f64),
    #[error("tridiagonal solve hit a zero pivot at row {row}")]
    SingularMatrix { row: usize },
    #[error("power iteration did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("principal eigenvalue {0} is not a decay rate")]
    NotDecaying(f64),
    #[error("principal eigenvector changes sign (min/max ratio {0})")]
    SignChange(f64),
    #[error("dimension mismatch: matrix has {rows} rows, vector {len}")]
    DimensionMismatch { rows: usize, len: usize },
}

const MIN_INTERIOR_NODES: usize = 16;

/// Uniform interior grid on `(a, b)`: `n` nodes at `a + (i+1) h`,
/// `h = (b - a)/(n + 1)`. Boundary points are not nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    a: f64,
    b: f64,
    n: usize,
}

impl Grid1D {
    pub fn new(a: f64, b: f64, n: usize) -> Result<Self, OracleError> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(OracleError::BadEndpoints { a, b });
        }
        if n < MIN_INTERIOR_NODES {
            return Err(OracleError::GridTooCoarse {
                min: MIN_INTERIOR_NODES,
                got: n,
            });
        }
        Ok(Self { a, b, n })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        (self.b - self.a) / (self.n as f64 + 1.0)
    }

    pub fn node(&self, i: usize) -> f64 {
        debug_assert!(i < self.n);
        self.a + self.h() * (i as f64 + 1.0)
    }
}

/// Tridiagonal matrix in three diagonals of equal length `n`;
/// `sub[0]` and `sup[n-1]` are unused and kept at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiag {
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
}

impl Tridiag {
    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn matvec(&self, v: &[f64], out: &mut [f64]) {
        let n = self.n();
        debug_assert_eq!(v.len(), n);
        debug_assert_eq!(out.len(), n);
        for i in 0..n {
            let mut acc = self.diag[i] * v[i];
            if i > 0 {
                acc += self.sub[i] * v[i - 1];
            }
            if i + 1 < n {
                acc += self.sup[i] * v[i + 1];
            }
            out[i] = acc;
        }
    }

    pub fn inf_norm(&self) -> f64 {
        (0..self.n())
            .map(|i| self.sub[i].abs() + self.diag[i].abs() + self.sup[i].abs())
            .fold(0.0, f64::max)
    }

    pub fn transpose(&self) -> Tridiag {
        let n = self.n();
        let mut sub = vec![0.0; n];
        let mut sup = vec![0.0; n];
        for i in 0..n - 1 {
            sup[i] = self.sub[i + 1];
            sub[i + 1] = self.sup[i];
        }
        Tridiag {
            sub,
            diag: self.diag.clone(),
            sup,
        }
    }
}

/// Central-difference discretization of `A psi = beta^-1 psi'' - (F psi)'`
/// with homogeneous Dirichlet rows.
pub fn adjoint_generator(grid: &Grid1D, field: &ForceField, beta: f64) -> Tridiag {
    let n = grid.n();
    let h = grid.h();
    let ib = 1.0 / beta;
    let mut sub = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut sup = vec![0.0; n];
    let mut f = [0.0];
    for i in 0..n {
        diag[i] = -2.0 * ib / (h * h);
        if i > 0 {
            field.force_into(&[grid.node(i - 1)], &mut f);
            sub[i] = ib / (h * h) + f[0] / (2.0 * h);
        }
        if i + 1 < n {
            field.force_into(&[grid.node(i + 1)], &mut f);
            sup[i] = ib / (h * h) - f[0] / (2.0 * h);
        }
    }
    Tridiag { sub, diag, sup }
}

/// Central-difference discretization of the generator acting on observables,
/// `L u = beta^-1 u'' + F u'`; the exact transpose of [`adjoint_generator`]
/// on the same grid.
pub fn forward_generator(grid: &Grid1D, field: &ForceField, beta: f64) -> Tridiag {
    let n = grid.n();
    let h = grid.h();
    let ib = 1.0 / beta;
    let mut sub = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut sup = vec![0.0; n];
    let mut f = [0.0];
    for i in 0..n {
        field.force_into(&[grid.node(i)], &mut f);
        diag[i] = -2.0 * ib / (h * h);
        if i > 0 {
            sub[i] = ib / (h * h) - f[0] / (2.0 * h);
        }
        if i + 1 < n {
            sup[i] = ib / (h * h) + f[0] / (2.0 * h);
        }
    }
    Tridiag { sub, diag, sup }
}

/// Thomas algorithm without pivoting. The generator matrices here are
/// strictly diagonally dominant for the step sizes this crate uses.
pub fn thomas_solve(m: &Tridiag, rhs: &[f64]) -> Result<Vec<f64>, OracleError> {
    let n = m.n();
    if rhs.len() != n {
        return Err(OracleError::DimensionMismatch {
            rows: n,
            len: rhs.len(),
        });
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut piv = m.diag[0];
    if piv == 0.0 {
        return Err(OracleError::SingularMatrix { row: 0 });
    }
    c[0] = m.sup[0] / piv;
    d[0] = rhs[0] / piv;
    for i in 1..n {
        piv = m.diag[i] - m.sub[i] * c[i - 1];
        if piv == 0.0 {
            return Err(OracleError::SingularMatrix { row: i });
        }
        c[i] = m.sup[i] / piv;
        d[i] = (rhs[i] - m.sub[i] * d[i - 1]) / piv;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Ok(x)
}

/// Principal eigenpair of a discretized generator: decay rate `lambda0`,
/// nonnegative eigenvector normalized to unit mass `h * sum(psi) = 1`,
/// the infinity-norm residual of `A psi + lambda0 psi`, and the iteration
/// count.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub lambda0: f64,
    pub psi: Vec<f64>,
    pub grid: Grid1D,
    pub residual: f64,
    pub iterations: usize,
}

impl EigenPair {
    /// Linear interpolation of `psi`, zero at and beyond the boundary.
    pub fn interp_psi(&self, x: f64) -> f64 {
        let (a, b, h) = (self.grid.a(), self.grid.b(), self.grid.h());
        if x <= a || x >= b {
            return 0.0;
        }
        // Nodes at a + (i+1) h together with zero values at a and b.
        let s = (x - a) / h;
        let cell = (s.floor() as usize).min(self.grid.n());
        let w = s - cell as f64;
        let left = if cell == 0 { 0.0 } else { self.psi[cell - 1] };
        let right = if cell >= self.grid.n() {
            0.0
        } else {
            self.psi[cell]
        };
        left + w * (right - left)
    }

    /// Density on the closed grid with zeros appended at the endpoints.
    pub fn to_density(&self) -> Result<GridDensity, crate::stats::StatsError> {
        let n = self.grid.n();
        let mut xs = Vec::with_capacity(n + 2);
        let mut pdf = Vec::with_capacity(n + 2);
        xs.push(self.grid.a());
        pdf.push(0.0);
        for i in 0..n {
            xs.push(self.grid.node(i));
            pdf.push(self.psi[i]);
        }
        xs.push(self.grid.b());
        pdf.push(0.0);
        GridDensity::new(xs, pdf)
    }
}

/// Ratio below which eigenvector entries may dip negative from round-off
/// before the sign check fails, relative to the maximum entry.
const SIGN_TOL: f64 = 1e-12;

/// Extra inverse-iteration sweeps applied after the Rayleigh quotient has
/// stabilized. The quotient converges at twice the rate of the vector, so
/// these push the eigenvector residual down to its round-off floor.
const POLISH_SWEEPS: usize = 4;

pub fn principal_eigenpair(
    m: &Tridiag,
    grid: &Grid1D,
    tol: f64,
    max_iter: usize,
) -> Result<EigenPair, OracleError> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(OracleError::BadTolerance(tol));
    }
    let n = m.n();
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut av = vec![0.0; n];
    let mut mu_prev = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let w = thomas_solve(m, &v)?;
        let nrm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(nrm.is_finite() && nrm > 0.0) {
            return Err(OracleError::SingularMatrix { row: 0 });
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / nrm;
        }
        m.matvec(&v, &mut av);
        let mu = v.iter().zip(&av).map(|(a, b)| a * b).sum::<f64>();
        if (mu - mu_prev).abs() <= tol * mu.abs().max(1.0) {
            converged = true;
            break;
        }
        mu_prev = mu;
    }
    if !converged {
        return Err(OracleError::NoConvergence(max_iter));
    }
    for _ in 0..POLISH_SWEEPS {
        iterations += 1;
        let w = thomas_solve(m, &v)?;
        let nrm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(nrm.is_finite() && nrm > 0.0) {
            return Err(OracleError::SingularMatrix { row: 0 });
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / nrm;
        }
    }
    m.matvec(&v, &mut av);
    let mu = v.iter().zip(&av).map(|(a, b)| a * b).sum::<f64>();
    let lambda0 = -mu;
    if !(lambda0.is_finite() && lambda0 > 0.0) {
        return Err(OracleError::NotDecaying(lambda0));
    }
    // Orient nonnegative, tolerate round-off dips, then normalize mass.
    if v.iter().sum::<f64>() < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
    let max = v.iter().fold(0.0f64, |a, b| a.max(*b));
    let min = v.iter().fold(0.0f64, |a, b| a.min(*b));
    if min < -SIGN_TOL * max {
        return Err(OracleError::SignChange(min / max));
    }
    for x in v.iter_mut() {
        *x = x.max(0.0);
    }
    let mass = grid.h() * v.iter().sum::<f64>();
    for x in v.iter_mut() {
        *x /= mass;
    }
    m.matvec(&v, &mut av);
    let residual = av
        .iter()
        .zip(&v)
        .map(|(a, p)| (a + lambda0 * p).abs())
        .fold(0.0, f64::max);
    Ok(EigenPair {
        lambda0,
        psi: v,
        grid: *grid,
        residual,
        iterations,
    })
}

/// Principal eigenpair of the absorbed overdamped generator on `(a, b)`.
pub fn oracle_qsd(
    field: &ForceField,
    beta: f64,
    a: f64,
    b: f64,
    n: usize,
    tol: f64,
    max_iter: usize,
) -> Result<EigenPair, OracleError> {
    let grid = Grid1D::new(a, b, n)?;
    let m = adjoint_generator(&grid, field, beta);
    principal_eigenpair(&m, &grid, tol, max_iter)
}

/// Defaults used by the command-line driver and the acceptance checks.
pub const DEFAULT_ORACLE_N: usize = 4000;
pub const DEFAULT_ORACLE_TOL: f64 = 1e-12;
pub const DEFAULT_ORACLE_MAX_ITER: usize = 10_000;

pub fn oracle_qsd_default(
    field: &ForceField,
    beta: f64,
    a: f64,
    b: f64,
) -> Result<EigenPair, OracleError> {
    oracle_qsd(
        field,
        beta,
        a,
        b,
        DEFAULT_ORACLE_N,
        DEFAULT_ORACLE_TOL,
        DEFAULT_ORACLE_MAX_ITER,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    // pi^2/4 and the flat-field eigenfunction peak pi/4.
    const LAMBDA_FLAT: f64 = 2.4674011002723395;

    fn flat() -> ForceField {
        ForceField::zero()
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(Grid1D::new(1.0, -1.0, 100).is_err());
        assert!(Grid1D::new(-1.0, 1.0, 8).is_err());
        let g = Grid1D::new(-1.0, 1.0, 99).unwrap();
        assert!((g.h() - 0.02).abs() < 1e-15);
        assert!((g.node(49) - 0.0).abs() < 1e-14);
    }

    #[test]
    fn thomas_solves_against_matvec() {
        let grid = Grid1D::new(-1.0, 1.0, 64).unwrap();
        let m = adjoint_generator(&grid, &flat(), 1.0);
        let rhs: Vec<f64> = (0..64).map(|i| ((i * 7 + 3) % 11) as f64 - 5.0).collect();
        let x = thomas_solve(&m, &rhs).unwrap();
        let mut back = vec![0.0; 64];
        m.matvec(&x, &mut back);
        for (b, r) in back.iter().zip(&rhs) {
            assert!((b - r).abs() < 1e-9 * m.inf_norm().max(1.0));
        }
    }

    #[test]
    fn forward_matrix_is_the_exact_transpose() {
        let grid = Grid1D::new(-0.5, 1.5, 33).unwrap();
        let field = ForceField::harmonic(0.8, 4.0).unwrap();
        let a = adjoint_generator(&grid, &field, 2.0);
        let f = forward_generator(&grid, &field, 2.0);
        assert_eq!(a.transpose(), f);
    }

    #[test]
    fn flat_field_reference_solution() {
        let pair = oracle_qsd_default(&flat(), 1.0, -1.0, 1.0).unwrap();
        assert!(
            (pair.lambda0 - LAMBDA_FLAT).abs() < 1e-5,
            "lambda0 {}",
            pair.lambda0
        );
        // psi_bar(q) = (pi/4) cos(pi q / 2).
        let mut worst = 0.0f64;
        for i in 0..pair.grid.n() {
            let x = pair.grid.node(i);
            let expected = PI / 4.0 * (PI * x / 2.0).cos();
            worst = worst.max((pair.psi[i] - expected).abs());
        }
        assert!(worst < 1e-3, "worst node error {worst}");
        assert!(pair.iterations < 100);
    }

    #[test]
    fn residual_is_at_round_off_scale() {
        let pair = oracle_qsd_default(&flat(), 1.0, -1.0, 1.0).unwrap();
        assert!(pair.residual < 1e-8, "residual {}", pair.residual);
    }

    #[test]
    fn mass_normalization_is_exact() {
        let pair = oracle_qsd(&flat(), 1.0, -1.0, 1.0, 500, 1e-12, 10_000).unwrap();
        let mass = pair.grid.h() * pair.psi.iter().sum::<f64>();
        assert!((mass - 1.0).abs() < 1e-12);
        assert!(pair.psi.iter().all(|p| *p >= 0.0));
    }

    #[test]
    fn duality_of_forward_and_adjoint_rates() {
        let grid = Grid1D::new(-1.0, 1.0, 2000).unwrap();
        let field = ForceField::harmonic(1.0, 4.0).unwrap();
        let a = adjoint_generator(&grid, &field, 1.0);
        let f = forward_generator(&grid, &field, 1.0);
        let pa = principal_eigenpair(&a, &grid, 1e-12, 10_000).unwrap();
        let pf = principal_eigenpair(&f, &grid, 1e-12, 10_000).unwrap();
        assert!(
            (pa.lambda0 - pf.lambda0).abs() < 1e-8,
            "adjoint {} vs forward {}",
            pa.lambda0,
            pf.lambda0
        );
    }

    #[test]
    fn harmonic_field_has_closed_form_pair() {
        // With F = -q and beta = 1 on (-1, 1), psi = (1 - q^2) e^{-q^2/2}
        // satisfies A psi = -2 psi exactly.
        let field = ForceField::harmonic(1.0, 4.0).unwrap();
        let pair = oracle_qsd_default(&field, 1.0, -1.0, 1.0).unwrap();
        assert!(
            (pair.lambda0 - 2.0).abs() < 1e-8,
            "lambda0 {}",
            pair.lambda0
        );
        // Bracket between the flat-field rates at the two interval scales.
        assert!(pair.lambda0 > PI * PI / 8.0 && pair.lambda0 < PI * PI / 4.0);
        let norm = 1.2130613194252668;
        let mut worst = 0.0f64;
        for i in 0..pair.grid.n() {
            let x = pair.grid.node(i);
            let expected = (1.0 - x * x) * (-x * x / 2.0).exp() / norm;
            worst = worst.max((pair.psi[i] - expected).abs());
        }
        assert!(worst < 1e-4, "worst node error {worst}");
    }

    #[test]
    fn interp_psi_is_zero_outside_and_linear_inside() {
        let pair = oracle_qsd(&flat(), 1.0, -1.0, 1.0, 100, 1e-12, 10_000).unwrap();
        assert_eq!(pair.interp_psi(-1.0), 0.0);
        assert_eq!(pair.interp_psi(1.7), 0.0);
        let x = pair.grid.node(30);
        assert!((pair.interp_psi(x) - pair.psi[30]).abs() < 1e-14);
        let mid = 0.5 * (pair.grid.node(30) + pair.grid.node(31));
        let expected = 0.5 * (pair.psi[30] + pair.psi[31]);
        assert!((pair.interp_psi(mid) - expected).abs() < 1e-14);
    }

    #[test]
    fn to_density_integrates_to_one() {
        let pair = oracle_qsd(&flat(), 1.0, -1.0, 1.0, 200, 1e-12, 10_000).unwrap();
        let d = pair.to_density().unwrap();
        assert_eq!(d.cdf_at(1.0), 1.0);
        // Symmetric density: median at the center.
        assert!((d.quantile(0.5) - 0.0).abs() < 1e-6);
    }

    #[test]
    fn iteration_reports_nonconvergence() {
        let grid = Grid1D::new(-1.0, 1.0, 64).unwrap();
        let m = adjoint_generator(&grid, &flat(), 1.0);
        let err = principal_eigenpair(&m, &grid, 1e-15, 2).unwrap_err();
        assert!(matches!(err, OracleError::NoConvergence(2)));
    }
}
