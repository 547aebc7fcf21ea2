//! Rough Bergomi Monte Carlo, Markovian-projection local volatility and the
//! short-maturity asymptotics linking implied and local volatility skews.
//!
//! The crate is organized bottom-up:
//!
//! * [`fbm`]: exact joint simulation of `(W, Ŵ)` on a grid by Cholesky factorization.
//! * [`rbergomi`]: variance paths and Euler log-price samples.
//! * [`black_scholes`]: pricing, implied volatility and the implied-skew estimator.
//! * [`markov_projection`]: kernel and ratio estimators of `E[V_t | X_t = k]` and its skew.
//! * [`rate_function`]: Ritz minimization of the large-deviations rate function.
//! * [`asymptotics`]: skew ratios, harmonic means, Dupire and LDP diagnostics.

pub mod asymptotics;
pub mod black_scholes;
pub mod error;
pub mod fbm;
pub mod markov_projection;
pub mod optimize;
pub mod quadrature;
pub mod rate_function;
pub mod rbergomi;
pub mod stats;

pub use error::{Error, Result};
pub use fbm::{Hurst, SimulationGrid};
pub use rbergomi::{simulate_batch, ModelParams, PathBatch, PathSample};
