//! Simulation toolkit for Langevin and overdamped Langevin dynamics absorbed
//! at the boundary of a domain.
//!
//! The crate estimates quasi-stationary distributions (QSD) and exit rates
//! with a Fleming-Viot particle system, checks the kinetic process against
//! exact Gaussian transition kernels of the free dynamics, couples the
//! position process to its overdamped limit through a shared Brownian path,
//! and anchors every Monte Carlo estimate to a deterministic one-dimensional
//! Fokker-Planck eigenvalue solver.
//!
//! Conventions used throughout:
//!
//! * kinetic (Langevin) dynamics: `dq = p dt`, `dp = F(q) dt - gamma p dt +
//!   sqrt(2 gamma / beta) dB`;
//! * overdamped dynamics: `dq = F(q) dt + sqrt(2 / beta) dB`;
//! * the rescaled clock for the kinetic process is `t = physical time / gamma`,
//!   under which exit rates stay order one as `gamma` grows;
//! * all randomness flows through [`stream`] so every result is reproducible
//!   bit for bit at any thread count.

pub mod config;
pub mod coupling;
pub mod driver;
pub mod dynamics;
pub mod exec;
pub mod kernels;
pub mod model;
pub mod oracle;
pub mod qsd;
pub mod stats;
pub mod stream;
