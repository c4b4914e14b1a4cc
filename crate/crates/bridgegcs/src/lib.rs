//! Brownian-bridge-augmented surrogate simulation and injection planning
//! for a self-contained toy CO2 storage reservoir.
//!
//! The pipeline has three learned stages on top of a deterministic toy
//! physics environment:
//!
//! 1. [`bridge`]: deep Brownian bridges embedding reservoir-state and
//!    storage-utility sequences into a latent space where trajectories
//!    interpolate linearly between endpoints.
//! 2. [`surrogate`]: a learned simulator predicting storage utility and
//!    the next state's bridge embedding, with the latent term as
//!    auxiliary supervision.
//! 3. [`planner`]: a goal-conditioned injection planner tracking a
//!    bridge-interpolated desired-utility trajectory through the frozen
//!    surrogate.
//!
//! [`env`] provides ground truth and datasets, [`eval`] the SPI metric,
//! baselines, sweeps, and ablations, and [`io`]/[`config`]/[`pipeline`]
//! the CLI plumbing.

pub mod bridge;
pub mod config;
pub mod env;
pub mod error;
pub mod eval;
pub mod io;
pub mod nn;
pub mod pipeline;
pub mod planner;
pub mod surrogate;

pub use error::{Error, Result};
