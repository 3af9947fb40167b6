//! Distributional diagnostics: exact order-one Wasserstein distances,
//! grid densities with inverse-CDF sampling, moment summaries, simple
//! correlation, and a Kolmogorov-Smirnov statistic against an exponential.

use crate::stream::Stream;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("samples must be finite")]
    NonFiniteSample,
    #[error("grid must be strictly increasing with at least 2 nodes")]
    BadGrid,
    #[error("density mass {mass} is not within 1e-6 of 1")]
    Unnormalized { mass: f64 },
    #[error("density values must be finite and nonnegative")]
    BadDensity,
    #[error("degenerate sample variance")]
    DegenerateVariance,
    #[error("rate must be finite and > 0, got {0}")]
    BadRate(f64),
}

/// Probability density tabulated on a strictly increasing grid.
///
/// The CDF is the trapezoid cumulative of the node values, renormalized to
/// end exactly at 1; between nodes it is treated as linear (both for
/// Wasserstein integration and for inverse-CDF sampling), so the effective
/// density is piecewise constant at the cell averages. The mass outside the
/// grid is zero.
#[derive(Debug, Clone)]
pub struct GridDensity {
    xs: Vec<f64>,
    pdf: Vec<f64>,
    cdf: Vec<f64>,
}

/// Half-width in standard deviations of the grid used for Gaussian
/// references; the clipped tail mass is below 1e-15.
const GAUSSIAN_GRID_SIGMAS: f64 = 8.0;
const GAUSSIAN_GRID_NODES: usize = 2001;

impl GridDensity {
    /// `pdf` holds nonnegative density values at `xs`; the trapezoid mass
    /// must already be within `1e-6` of one and is renormalized exactly.
    pub fn new(xs: Vec<f64>, pdf: Vec<f64>) -> Result<Self, StatsError> {
        if xs.len() < 2 || xs.len() != pdf.len() {
            return Err(StatsError::BadGrid);
        }
        if xs.windows(2).any(|w| !(w[0] < w[1])) || xs.iter().any(|x| !x.is_finite()) {
            return Err(StatsError::BadGrid);
        }
        if pdf.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(StatsError::BadDensity);
        }
        let mut cdf = Vec::with_capacity(xs.len());
        cdf.push(0.0);
        let mut acc = 0.0;
        for i in 0..xs.len() - 1 {
            acc += 0.5 * (pdf[i] + pdf[i + 1]) * (xs[i + 1] - xs[i]);
            cdf.push(acc);
        }
        let mass = acc;
        if (mass - 1.0).abs() > 1e-6 {
            return Err(StatsError::Unnormalized { mass });
        }
        let mut pdf = pdf;
        for c in cdf.iter_mut() {
            *c /= mass;
        }
        for p in pdf.iter_mut() {
            *p /= mass;
        }
        *cdf.last_mut().unwrap() = 1.0;
        Ok(Self { xs, pdf, cdf })
    }

    /// Gaussian reference truncated at eight standard deviations.
    pub fn gaussian(mean: f64, var: f64) -> Result<Self, StatsError> {
        if !(var.is_finite() && var > 0.0) {
            return Err(StatsError::BadDensity);
        }
        let sd = var.sqrt();
        let lo = mean - GAUSSIAN_GRID_SIGMAS * sd;
        let hi = mean + GAUSSIAN_GRID_SIGMAS * sd;
        let n = GAUSSIAN_GRID_NODES;
        let norm = 1.0 / (sd * (2.0 * std::f64::consts::PI).sqrt());
        let mut xs = Vec::with_capacity(n);
        let mut pdf = Vec::with_capacity(n);
        for i in 0..n {
            let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            let z = (x - mean) / sd;
            xs.push(x);
            pdf.push(norm * (-0.5 * z * z).exp());
        }
        Self::new(xs, pdf)
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn pdf(&self) -> &[f64] {
        &self.pdf
    }

    pub fn support(&self) -> (f64, f64) {
        (self.xs[0], *self.xs.last().unwrap())
    }

    /// CDF value, linear between nodes, clamped to 0 and 1 outside the grid.
    pub fn cdf_at(&self, x: f64) -> f64 {
        if x <= self.xs[0] {
            return 0.0;
        }
        if x >= *self.xs.last().unwrap() {
            return 1.0;
        }
        let i = self.xs.partition_point(|v| *v <= x) - 1;
        let w = (x - self.xs[i]) / (self.xs[i + 1] - self.xs[i]);
        self.cdf[i] + w * (self.cdf[i + 1] - self.cdf[i])
    }

    /// Generalized inverse of the CDF. Zero-mass cells collapse to their
    /// left edge.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let i = match self.cdf.partition_point(|c| *c < u) {
            0 => return self.xs[0],
            k if k == self.cdf.len() => self.cdf.len() - 1,
            k => k,
        };
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        if c1 <= c0 {
            return self.xs[i - 1];
        }
        let w = (u - c0) / (c1 - c0);
        self.xs[i - 1] + w * (self.xs[i] - self.xs[i - 1])
    }

    /// Inverse-CDF draw.
    pub fn sample(&self, rng: &mut Stream) -> f64 {
        self.quantile(rng.gen::<f64>())
    }
}

/// Area of `|v(x)|` over an interval of width `w` where `v` is linear with
/// endpoint values `v1`, `v2`.
fn abs_linear_area(v1: f64, v2: f64, w: f64) -> f64 {
    if v1 == 0.0 && v2 == 0.0 {
        0.0
    } else if v1 * v2 >= 0.0 {
        0.5 * (v1.abs() + v2.abs()) * w
    } else {
        // Sign change inside: two triangles.
        0.5 * (v1 * v1 + v2 * v2) / (v1.abs() + v2.abs()) * w
    }
}

/// Exact `W1` between the empirical measure of `samples` and a grid density:
/// the integral of `|F_n - G|` over the real line, evaluated interval by
/// interval on the merge of sample points and grid nodes.
pub fn wasserstein1_vs_density(
    samples: &[f64],
    density: &GridDensity,
) -> Result<f64, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::TooFewSamples {
            need: 1,
            got: 0,
        });
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::NonFiniteSample);
    }
    let mut s = samples.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    let n = s.len() as f64;
    // Merge sorted samples with the grid nodes.
    let xs = density.xs();
    let mut pts = Vec::with_capacity(s.len() + xs.len());
    let (mut i, mut j) = (0usize, 0usize);
    while i < s.len() || j < xs.len() {
        let v = match (s.get(i), xs.get(j)) {
            (Some(a), Some(b)) if a <= b => {
                i += 1;
                *a
            }
            (Some(_), Some(b)) => {
                j += 1;
                *b
            }
            (Some(a), None) => {
                i += 1;
                *a
            }
            (None, Some(b)) => {
                j += 1;
                *b
            }
            (None, None) => unreachable!(),
        };
        if pts.last() != Some(&v) {
            pts.push(v);
        }
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for w in pts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        while count < s.len() && s[count] <= lo {
            count += 1;
        }
        let f = count as f64 / n;
        let v1 = density.cdf_at(lo) - f;
        let v2 = density.cdf_at(hi) - f;
        total += abs_linear_area(v1, v2, hi - lo);
    }
    Ok(total)
}

/// Exact `W1` between two empirical measures.
pub fn wasserstein1_two_sample(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::TooFewSamples {
            need: 1,
            got: 0,
        });
    }
    if a.iter().chain(b.iter()).any(|x| !x.is_finite()) {
        return Err(StatsError::NonFiniteSample);
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_unstable_by(f64::total_cmp);
    sb.sort_unstable_by(f64::total_cmp);
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut total = 0.0;
    let mut prev = f64::NAN;
    while i < sa.len() || j < sb.len() {
        let x = match (sa.get(i), sb.get(j)) {
            (Some(u), Some(v)) => u.min(*v),
            (Some(u), None) => *u,
            (None, Some(v)) => *v,
            (None, None) => unreachable!(),
        };
        if prev.is_finite() && x > prev {
            total += (i as f64 / na - j as f64 / nb).abs() * (x - prev);
        }
        while i < sa.len() && sa[i] <= x {
            i += 1;
        }
        while j < sb.len() && sb[j] <= x {
            j += 1;
        }
        prev = x;
    }
    Ok(total)
}

/// First four standardized moments. `var` uses the unbiased denominator;
/// skewness and excess kurtosis use biased central moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments4 {
    pub n: usize,
    pub mean: f64,
    pub var: f64,
    pub skew: f64,
    pub exkurt: f64,
}

pub fn moments4(samples: &[f64]) -> Result<Moments4, StatsError> {
    let n = samples.len();
    if n < 4 {
        return Err(StatsError::TooFewSamples { need: 4, got: n });
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::NonFiniteSample);
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in samples {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    if m2 <= 0.0 {
        return Err(StatsError::DegenerateVariance);
    }
    Ok(Moments4 {
        n,
        mean,
        var: m2 * nf / (nf - 1.0),
        skew: m3 / m2.powf(1.5),
        exkurt: m4 / (m2 * m2) - 3.0,
    })
}

pub fn pearson_corr(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(StatsError::TooFewSamples {
            need: 2,
            got: a.len().min(b.len()),
        });
    }
    if a.iter().chain(b.iter()).any(|x| !x.is_finite()) {
        return Err(StatsError::NonFiniteSample);
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        saa += dx * dx;
        sbb += dy * dy;
        sab += dx * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Err(StatsError::DegenerateVariance);
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Kolmogorov-Smirnov statistic of `times` against `Exp(rate)`.
pub fn ks_vs_exponential(times: &[f64], rate: f64) -> Result<f64, StatsError> {
    if times.is_empty() {
        return Err(StatsError::TooFewSamples { need: 1, got: 0 });
    }
    if !(rate.is_finite() && rate > 0.0) {
        return Err(StatsError::BadRate(rate));
    }
    if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(StatsError::NonFiniteSample);
    }
    let mut s = times.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, t) in s.iter().enumerate() {
        let cdf = -(-rate * t).exp_m1();
        let lo = i as f64 / n;
        let hi = (i as f64 + 1.0) / n;
        d = d.max((cdf - lo).abs()).max((cdf - hi).abs());
    }
    Ok(d)
}
