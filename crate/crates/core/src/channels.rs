//! Seeded Gaussian channel realizations.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::Mat;

/// Antenna counts: transmitter, user 1, user 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelDims {
    pub n_t: usize,
    pub n1: usize,
    pub n2: usize,
}

impl ChannelDims {
    pub fn new(n_t: usize, n1: usize, n2: usize) -> Result<Self> {
        if n_t == 0 || n1 == 0 || n2 == 0 {
            return Err(Error::InvalidInput(format!(
                "antenna counts must be positive, got n_t={n_t}, n1={n1}, n2={n2}"
            )));
        }
        Ok(ChannelDims { n_t, n1, n2 })
    }
}

/// Real channel matrices `H1` (n1 × n_t) and `H2` (n2 × n_t).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawChannelPair")]
pub struct ChannelPair {
    h1: Mat,
    h2: Mat,
}

#[derive(Deserialize)]
struct RawChannelPair {
    h1: Mat,
    h2: Mat,
}

impl TryFrom<RawChannelPair> for ChannelPair {
    type Error = Error;

    fn try_from(raw: RawChannelPair) -> Result<Self> {
        ChannelPair::new(raw.h1, raw.h2)
    }
}

impl ChannelPair {
    pub fn new(h1: Mat, h2: Mat) -> Result<Self> {
        if h1.cols() != h2.cols() {
            return Err(Error::Shape(format!(
                "H1 has {} transmit columns, H2 has {}",
                h1.cols(),
                h2.cols()
            )));
        }
        if h1.cols() == 0 || h1.rows() == 0 || h2.rows() == 0 {
            return Err(Error::InvalidInput("empty channel matrix".into()));
        }
        if !h1.is_finite() || !h2.is_finite() {
            return Err(Error::NonFinite);
        }
        Ok(ChannelPair { h1, h2 })
    }

    pub fn h1(&self) -> &Mat {
        &self.h1
    }

    pub fn h2(&self) -> &Mat {
        &self.h2
    }

    pub fn dims(&self) -> ChannelDims {
        ChannelDims {
            n_t: self.h1.cols(),
            n1: self.h1.rows(),
            n2: self.h2.rows(),
        }
    }

    pub fn n_t(&self) -> usize {
        self.h1.cols()
    }
}

/// Standard normal variates by the Box–Muller transform.
///
/// Backed by a ChaCha stream, so `(seed, stream)` pairs give independent,
/// reproducible sequences regardless of how work is scheduled.
pub struct NormalSource {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl NormalSource {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        NormalSource { rng, spare: None }
    }

    /// Uniform on the open interval (0, 1).
    fn uniform_open(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform_open();
        let u2 = self.uniform_open();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }

    pub fn matrix(&mut self, rows: usize, cols: usize) -> Mat {
        let data = (0..rows * cols).map(|_| self.next_normal()).collect();
        Mat::from_vec(rows, cols, data).expect("length matches shape")
    }
}

/// One channel pair with i.i.d. N(0, 1) entries.
pub fn sample_channel_pair(n_t: usize, n1: usize, n2: usize, seed: u64) -> Result<ChannelPair> {
    sample_indexed(ChannelDims::new(n_t, n1, n2)?, seed, 0)
}

/// The `index`-th channel pair of the set identified by `seed`.
///
/// Each index draws from its own generator stream, so element `i` of a set
/// does not depend on how many other elements were generated.
pub fn sample_indexed(dims: ChannelDims, seed: u64, index: u64) -> Result<ChannelPair> {
    let dims = ChannelDims::new(dims.n_t, dims.n1, dims.n2)?;
    let mut src = NormalSource::new(seed, index);
    let h1 = src.matrix(dims.n1, dims.n_t);
    let h2 = src.matrix(dims.n2, dims.n_t);
    ChannelPair::new(h1, h2)
}

/// `count` channel pairs, indices `0..count` of the set `seed`.
pub fn sample_set(dims: ChannelDims, seed: u64, count: usize) -> Result<Vec<ChannelPair>> {
    (0..count as u64).map(|i| sample_indexed(dims, seed, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_under_seed() {
        let a = sample_channel_pair(2, 1, 1, 7).unwrap();
        let b = sample_channel_pair(2, 1, 1, 7).unwrap();
        assert_eq!(a, b);
        let c = sample_channel_pair(2, 1, 1, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn shapes_follow_dims() {
        let ch = sample_channel_pair(3, 1, 1, 0).unwrap();
        assert_eq!((ch.h1().rows(), ch.h1().cols()), (1, 3));
        assert_eq!((ch.h2().rows(), ch.h2().cols()), (1, 3));
        let ch = sample_channel_pair(2, 3, 4, 0).unwrap();
        assert_eq!(ch.dims(), ChannelDims { n_t: 2, n1: 3, n2: 4 });
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(sample_channel_pair(0, 1, 1, 0).is_err());
        assert!(sample_channel_pair(2, 0, 1, 0).is_err());
        assert!(sample_channel_pair(2, 1, 0, 0).is_err());
    }

    #[test]
    fn streams_are_independent_of_order() {
        let dims = ChannelDims::new(2, 1, 1).unwrap();
        let set = sample_set(dims, 11, 5).unwrap();
        assert_eq!(set[3], sample_indexed(dims, 11, 3).unwrap());
        assert_ne!(set[3], set[4]);
    }

    #[test]
    fn mismatched_columns_rejected() {
        let r = ChannelPair::new(Mat::zeros(1, 2), Mat::zeros(1, 3));
        assert!(matches!(r, Err(Error::Shape(_))));
    }
}
