//! Physical parameters, absorbing domains, phase-space states, and force
//! fields shared by every integrator in the crate.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("parameter {name} = {value} violates: {constraint}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("state vectors must be non-empty and finite")]
    InvalidState,
}

/// Inverse temperature and friction of the kinetic process.
///
/// The momentum noise has intensity `sigma^2 = 2 gamma / beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysParams {
    beta: f64,
    gamma: f64,
}

impl PhysParams {
    pub fn new(beta: f64, gamma: f64) -> Result<Self, ModelError> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(ModelError::InvalidParameter {
                name: "beta",
                value: beta,
                constraint: "finite and > 0",
            });
        }
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(ModelError::InvalidParameter {
                name: "gamma",
                value: gamma,
                constraint: "finite and > 0",
            });
        }
        Ok(Self { beta, gamma })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn inv_beta(&self) -> f64 {
        1.0 / self.beta
    }

    /// Momentum noise intensity `2 gamma / beta`, formed directly from the
    /// parameters so no intermediate rounding enters downstream covariance
    /// formulas.
    pub fn sigma_sq(&self) -> f64 {
        2.0 * self.gamma / self.beta
    }
}

/// Open spatial domain whose boundary absorbs the process.
///
/// `contains` is strict: boundary points count as absorbed.
#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Interval { a: f64, b: f64 },
    Ball { center: Vec<f64>, radius: f64 },
}

impl Domain {
    pub fn interval(a: f64, b: f64) -> Result<Self, ModelError> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(ModelError::InvalidParameter {
                name: "interval",
                value: b - a,
                constraint: "a < b, both finite",
            });
        }
        Ok(Domain::Interval { a, b })
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self, ModelError> {
        if center.is_empty() || center.iter().any(|c| !c.is_finite()) {
            return Err(ModelError::InvalidState);
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(ModelError::InvalidParameter {
                name: "radius",
                value: radius,
                constraint: "finite and > 0",
            });
        }
        Ok(Domain::Ball { center, radius })
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Interval { .. } => 1,
            Domain::Ball { center, .. } => center.len(),
        }
    }

    pub fn contains(&self, q: &[f64]) -> bool {
        match self {
            Domain::Interval { a, b } => {
                debug_assert_eq!(q.len(), 1);
                *a < q[0] && q[0] < *b
            }
            Domain::Ball { center, radius } => {
                debug_assert_eq!(q.len(), center.len());
                let r2: f64 = q
                    .iter()
                    .zip(center)
                    .map(|(x, c)| (x - c) * (x - c))
                    .sum();
                r2 < radius * radius
            }
        }
    }

    /// Euclidean distance to the boundary, zero on or outside it.
    /// Positive exactly when `contains` holds.
    pub fn dist_to_boundary(&self, q: &[f64]) -> f64 {
        match self {
            Domain::Interval { a, b } => {
                debug_assert_eq!(q.len(), 1);
                (q[0] - a).min(b - q[0]).max(0.0)
            }
            Domain::Ball { center, radius } => {
                debug_assert_eq!(q.len(), center.len());
                let r2: f64 = q
                    .iter()
                    .zip(center)
                    .map(|(x, c)| (x - c) * (x - c))
                    .sum();
                (radius - r2.sqrt()).max(0.0)
            }
        }
    }
}

/// Phase-space point. `q` and `p` always have equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl State {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Result<Self, ModelError> {
        if q.is_empty() || q.iter().chain(p.iter()).any(|x| !x.is_finite()) {
            return Err(ModelError::InvalidState);
        }
        if q.len() != p.len() {
            return Err(ModelError::DimensionMismatch {
                expected: q.len(),
                got: p.len(),
            });
        }
        Ok(Self { q, p })
    }

    /// Position-only state with zero momentum.
    pub fn point(q: Vec<f64>) -> Result<Self, ModelError> {
        let p = vec![0.0; q.len()];
        Self::new(q, p)
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum FieldKind {
    Zero,
    Harmonic { kappa: f64 },
    DoubleWell { height: f64 },
}

/// Smooth conservative force field, tapered to zero outside a clamp radius so
/// that the global supremum `f_sup` and a global Lipschitz bound exist.
///
/// Inside radius `R` the force is the raw `-grad V`; on `[R, 2R]` it is
/// multiplied by the C^1 ramp `s(x) = 2x^3 - 3x^2 + 1`, `x = (r - R)/R`;
/// beyond `2R` it vanishes. `potential` returns the raw `V`, consistent with
/// `force` only at radii below `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForceField {
    kind: FieldKind,
    clamp_radius: f64,
    f_sup: f64,
    lipschitz: f64,
}

/// Grid resolution for the radial scan that bounds `f_sup` and the Lipschitz
/// constant at construction.
const FIELD_SCAN_POINTS: usize = 4001;
/// Multiplicative safety margin on the scanned bounds.
const FIELD_SCAN_MARGIN: f64 = 1.0 + 1e-3;

impl ForceField {
    pub fn zero() -> Self {
        Self {
            kind: FieldKind::Zero,
            clamp_radius: f64::INFINITY,
            f_sup: 0.0,
            lipschitz: 0.0,
        }
    }

    /// `F(q) = -kappa q` inside the clamp radius.
    pub fn harmonic(kappa: f64, clamp_radius: f64) -> Result<Self, ModelError> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(ModelError::InvalidParameter {
                name: "kappa",
                value: kappa,
                constraint: "finite and > 0",
            });
        }
        Self::tapered(FieldKind::Harmonic { kappa }, clamp_radius)
    }

    /// `V(q) = height (|q|^2 - 1)^2`, `F = -grad V`, inside the clamp radius.
    pub fn double_well(height: f64, clamp_radius: f64) -> Result<Self, ModelError> {
        if !(height.is_finite() && height > 0.0) {
            return Err(ModelError::InvalidParameter {
                name: "height",
                value: height,
                constraint: "finite and > 0",
            });
        }
        Self::tapered(FieldKind::DoubleWell { height }, clamp_radius)
    }

    fn tapered(kind: FieldKind, clamp_radius: f64) -> Result<Self, ModelError> {
        if !(clamp_radius.is_finite() && clamp_radius > 0.0) {
            return Err(ModelError::InvalidParameter {
                name: "clamp_radius",
                value: clamp_radius,
                constraint: "finite and > 0",
            });
        }
        let (f_sup, lipschitz) = scan_bounds(kind, clamp_radius);
        Ok(Self {
            kind,
            clamp_radius,
            f_sup,
            lipschitz,
        })
    }

    /// Global supremum of `|F|` (upper bound from the construction scan).
    pub fn f_sup(&self) -> f64 {
        self.f_sup
    }

    /// Global Lipschitz constant of `F` (upper bound from the scan).
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn clamp_radius(&self) -> f64 {
        self.clamp_radius
    }

    /// Raw potential, untapered.
    pub fn potential(&self, q: &[f64]) -> f64 {
        let r2: f64 = q.iter().map(|x| x * x).sum();
        match self.kind {
            FieldKind::Zero => 0.0,
            FieldKind::Harmonic { kappa } => 0.5 * kappa * r2,
            FieldKind::DoubleWell { height } => {
                let s = r2 - 1.0;
                height * s * s
            }
        }
    }

    /// Writes `F(q)` into `out`. Lengths must match.
    pub fn force_into(&self, q: &[f64], out: &mut [f64]) {
        debug_assert_eq!(q.len(), out.len());
        match self.kind {
            FieldKind::Zero => out.fill(0.0),
            FieldKind::Harmonic { kappa } => {
                for (o, x) in out.iter_mut().zip(q) {
                    *o = -kappa * x;
                }
            }
            FieldKind::DoubleWell { height } => {
                let r2: f64 = q.iter().map(|x| x * x).sum();
                let c = -4.0 * height * (r2 - 1.0);
                for (o, x) in out.iter_mut().zip(q) {
                    *o = c * x;
                }
            }
        }
        if !matches!(self.kind, FieldKind::Zero) {
            let r2: f64 = q.iter().map(|x| x * x).sum();
            let s = self.taper(r2.sqrt());
            if s < 1.0 {
                for o in out.iter_mut() {
                    *o *= s;
                }
            }
        }
    }

    /// Taper factor at radius `r`: 1 below `R`, smoothstep on `[R, 2R]`,
    /// 0 beyond.
    fn taper(&self, r: f64) -> f64 {
        let rc = self.clamp_radius;
        if r <= rc {
            1.0
        } else if r >= 2.0 * rc {
            0.0
        } else {
            let x = (r - rc) / rc;
            (2.0 * x - 3.0) * x * x + 1.0
        }
    }
}

/// Radial magnitude of the raw force and an upper bound on its Jacobian norm.
fn radial_profiles(kind: FieldKind, r: f64) -> (f64, f64) {
    match kind {
        FieldKind::Zero => (0.0, 0.0),
        FieldKind::Harmonic { kappa } => (kappa * r, kappa),
        FieldKind::DoubleWell { height } => {
            let g = 4.0 * height * r * (r * r - 1.0).abs();
            // Jacobian -4h((r^2-1)I + 2 q q^T) has norm at most 4h(|r^2-1| + 2r^2).
            let j = 4.0 * height * ((r * r - 1.0).abs() + 2.0 * r * r);
            (g, j)
        }
    }
}

fn scan_bounds(kind: FieldKind, clamp_radius: f64) -> (f64, f64) {
    let rc = clamp_radius;
    let mut f_sup: f64 = 0.0;
    let mut lip: f64 = 0.0;
    for i in 0..FIELD_SCAN_POINTS {
        let r = 2.0 * rc * i as f64 / (FIELD_SCAN_POINTS - 1) as f64;
        let (g, j) = radial_profiles(kind, r);
        let (s, ds_dr) = if r <= rc {
            (1.0, 0.0)
        } else {
            let x = (r - rc) / rc;
            ((2.0 * x - 3.0) * x * x + 1.0, 6.0 * x * (x - 1.0) / rc)
        };
        f_sup = f_sup.max(g * s);
        // d(F s)/dq bounded by |dF| s + |F| |grad s|.
        lip = lip.max(j * s + g * ds_dr.abs());
    }
    (f_sup * FIELD_SCAN_MARGIN, lip * FIELD_SCAN_MARGIN)
}
