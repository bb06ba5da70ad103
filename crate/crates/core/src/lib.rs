//! Secure covariance design for the two-user MIMO-NOMA downlink.
//!
//! The base station splits its power between two single- or multi-antenna
//! users and must keep each user's message confidential from the other.
//! This crate provides:
//!
//! - [`matcore`]: small dense symmetric kernels (Jacobi eigensolver,
//!   log-determinants, PSD projections).
//! - [`channels`]: seeded N(0, 1) channel realizations.
//! - [`secrecy_rates`]: the achievable secrecy rate pair for given transmit
//!   covariances, and the whitening transform.
//! - [`wiretap`]: wiretap covariance solvers (projected gradient ascent and an
//!   exhaustive grid oracle) plus water-filling.
//! - [`pipeline`]: the power-splitting decomposition that labels data.
//! - [`gsvd`]: the analytical GSVD precoder baseline.
//! - [`features`]: network inputs, label packing and dataset files.
//! - [`mlp`]: the multilayer perceptron that predicts covariance pairs.
//! - [`eval`]: rate regions, capacity fractions and latency benchmarks.

// `!(x > 0.0)` is deliberate: it also rejects NaN. Index loops mirror the
// matrix formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod channels;
pub mod error;
pub mod eval;
pub mod features;
pub mod gsvd;
pub mod matcore;
pub mod mlp;
pub mod pipeline;
pub mod secrecy_rates;
pub mod wiretap;

mod par;

pub use channels::{sample_channel_pair, ChannelDims, ChannelPair};
pub use error::{Error, Result};
pub use matcore::{Mat, SymMatrix};
pub use secrecy_rates::{CovariancePair, RatePair};
