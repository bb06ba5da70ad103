//! Secrecy rate expressions for the two-user confidential broadcast and the
//! whitening transform that turns user 2's problem into a plain wiretap one.
//!
//! All rates are in bits per real channel use (base-2 logarithms, factor ½).

use serde::{Deserialize, Serialize};

use crate::channels::ChannelPair;
use crate::error::{Error, Result};
use crate::matcore::{congruence, logdet_pd, sym_eig, Mat, SymMatrix};

/// Eigenvalue slack tolerated when checking positive semidefiniteness.
pub const PSD_TOLERANCE: f64 = 1e-9;
/// Relative slack on the summed trace.
pub const TRACE_TOLERANCE: f64 = 1e-9;

/// Transmit covariances of the two users under a shared trace budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariancePair {
    pub q1: SymMatrix,
    pub q2: SymMatrix,
    pub power: f64,
}

impl CovariancePair {
    /// Validates PSD-ness and the joint trace constraint.
    pub fn new(q1: SymMatrix, q2: SymMatrix, power: f64) -> Result<Self> {
        let pair = CovariancePair { q1, q2, power };
        pair.check_feasible()?;
        Ok(pair)
    }

    pub fn zeros(n_t: usize, power: f64) -> Self {
        CovariancePair {
            q1: SymMatrix::zeros(n_t),
            q2: SymMatrix::zeros(n_t),
            power,
        }
    }

    pub fn n_t(&self) -> usize {
        self.q1.dim()
    }

    pub fn total_trace(&self) -> f64 {
        self.q1.trace() + self.q2.trace()
    }

    pub fn check_feasible(&self) -> Result<()> {
        if !(self.power >= 0.0) || !self.power.is_finite() {
            return Err(Error::InvalidInput(format!(
                "power budget must be finite and nonnegative, got {}",
                self.power
            )));
        }
        if self.q1.dim() != self.q2.dim() {
            return Err(Error::Shape(format!(
                "Q1 is {0}x{0}, Q2 is {1}x{1}",
                self.q1.dim(),
                self.q2.dim()
            )));
        }
        check_psd(&self.q1)?;
        check_psd(&self.q2)?;
        let tr = self.total_trace();
        if tr > self.power * (1.0 + TRACE_TOLERANCE) {
            return Err(Error::InvalidInput(format!(
                "tr(Q1) + tr(Q2) = {tr} exceeds budget {}",
                self.power
            )));
        }
        Ok(())
    }
}

/// Achieved secrecy rates of both users.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RatePair {
    pub r1: f64,
    pub r2: f64,
}

impl RatePair {
    pub fn sum(&self) -> f64 {
        self.r1 + self.r2
    }
}

pub(crate) fn check_psd(q: &SymMatrix) -> Result<()> {
    let min_eigenvalue = q.min_eigenvalue()?;
    if min_eigenvalue < -PSD_TOLERANCE {
        return Err(Error::NotPsd { min_eigenvalue });
    }
    Ok(())
}

pub(crate) fn congruence_plus_identity(h: &Mat, q: &SymMatrix) -> Result<SymMatrix> {
    Ok(congruence(h, q)?.plus_identity())
}

/// `½ log₂ |I + H Q Hᵀ|`.
pub fn half_logdet(h: &Mat, q: &SymMatrix) -> Result<f64> {
    Ok(0.5 * logdet_pd(&congruence_plus_identity(h, q)?)?)
}

/// Unclamped wiretap objective `½log₂|I+Hm Q Hmᵀ| − ½log₂|I+He Q Heᵀ|`.
pub fn secrecy_gap(hm: &Mat, he: &Mat, q: &SymMatrix) -> Result<f64> {
    Ok(half_logdet(hm, q)? - half_logdet(he, q)?)
}

/// Secrecy rate of user 1 with user 2 as eavesdropper, clamped at zero.
pub fn rate_user1(q1: &SymMatrix, ch: &ChannelPair) -> Result<f64> {
    check_psd(q1)?;
    Ok(secrecy_gap(ch.h1(), ch.h2(), q1)?.max(0.0))
}

/// Secrecy rate of user 2 treating user 1's signal as known interference at
/// user 2 and as extra noise at user 1, clamped at zero.
///
/// Evaluated as four log-determinants, no matrix inverse.
pub fn rate_user2(q: &CovariancePair, ch: &ChannelPair) -> Result<f64> {
    check_psd(&q.q1)?;
    check_psd(&q.q2)?;
    Ok(rate_user2_unclamped(&q.q1, &q.q2, ch)?.max(0.0))
}

pub(crate) fn rate_user2_unclamped(q1: &SymMatrix, q2: &SymMatrix, ch: &ChannelPair) -> Result<f64> {
    let total = q1.add(q2)?;
    let legit = half_logdet(ch.h2(), &total)? - half_logdet(ch.h2(), q1)?;
    let leak = half_logdet(ch.h1(), &total)? - half_logdet(ch.h1(), q1)?;
    Ok(legit - leak)
}

/// Both users' rates for a covariance pair on the given channels.
pub fn evaluate_rates(q: &CovariancePair, ch: &ChannelPair) -> Result<RatePair> {
    if q.n_t() != ch.n_t() {
        return Err(Error::Shape(format!(
            "covariances are {0}x{0} but the channel has {1} transmit antennas",
            q.n_t(),
            ch.n_t()
        )));
    }
    Ok(RatePair {
        r1: rate_user1(&q.q1, ch)?,
        r2: rate_user2(q, ch)?,
    })
}

/// `H′ = Λ^{-1/2} Vᵀ H` where `V Λ Vᵀ = I + H Q1 Hᵀ`.
///
/// Afterwards `H′ᵀH′ = Hᵀ(I + H Q1 Hᵀ)⁻¹H`, which turns user 1's signal into
/// white noise from user 2's point of view.
pub fn whiten(h: &Mat, q1: &SymMatrix) -> Result<Mat> {
    let cov = congruence(h, q1)?.plus_identity();
    let eig = sym_eig(&cov)?;
    let min = eig.values.last().copied().unwrap_or(1.0);
    if !(min > 0.0) {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
    }
    let n = h.rows();
    let mut out = Mat::zeros(n, h.cols());
    for k in 0..n {
        let w = eig.values[k].sqrt().recip();
        for j in 0..h.cols() {
            let mut s = 0.0;
            for i in 0..n {
                s += eig.vectors[(i, k)] * h[(i, j)];
            }
            out[(k, j)] = w * s;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::gram;

    fn scalar(x: f64) -> Mat {
        Mat::from_rows(&[[x]]).unwrap()
    }

    fn ch(h1: f64, h2: f64) -> ChannelPair {
        ChannelPair::new(scalar(h1), scalar(h2)).unwrap()
    }

    #[test]
    fn zero_eavesdropper_is_point_to_point() {
        let r = rate_user1(&SymMatrix::from_diag(&[10.0]), &ch(1.0, 0.0)).unwrap();
        assert!((r - 0.5 * 11f64.log2()).abs() < 1e-14);
        assert!((r - 1.72972).abs() < 1e-5);
    }

    #[test]
    fn identical_channels_cancel() {
        for q in [0.0, 0.3, 7.0] {
            assert_eq!(rate_user1(&SymMatrix::from_diag(&[q]), &ch(1.0, 1.0)).unwrap(), 0.0);
        }
    }

    #[test]
    fn user2_without_signal_is_zero() {
        let pair = CovariancePair::new(SymMatrix::from_diag(&[4.0]), SymMatrix::zeros(1), 10.0).unwrap();
        assert_eq!(rate_user2(&pair, &ch(0.7, 1.3)).unwrap(), 0.0);
    }

    #[test]
    fn user2_mirror_case() {
        let pair = CovariancePair::new(SymMatrix::zeros(1), SymMatrix::from_diag(&[10.0]), 10.0).unwrap();
        let r = rate_user2(&pair, &ch(0.0, 1.0)).unwrap();
        assert!((r - 0.5 * 11f64.log2()).abs() < 1e-14);
    }

    #[test]
    fn non_psd_rejected() {
        let q = SymMatrix::from_diag(&[1.0, -0.1]);
        let c = ChannelPair::new(Mat::zeros(1, 2), Mat::zeros(1, 2)).unwrap();
        assert!(matches!(rate_user1(&q, &c), Err(Error::NotPsd { .. })));
        assert!(CovariancePair::new(q, SymMatrix::zeros(2), 10.0).is_err());
    }

    #[test]
    fn over_budget_rejected() {
        let q = SymMatrix::from_diag(&[6.0, 5.0]);
        assert!(CovariancePair::new(q, SymMatrix::zeros(2), 10.0).is_err());
    }

    #[test]
    fn whitening_scalar_and_orthogonal_cases() {
        let hp = whiten(&scalar(1.0), &SymMatrix::from_diag(&[3.0])).unwrap();
        assert!((hp[(0, 0)].abs() - 0.5).abs() < 1e-15);

        let h = Mat::from_rows(&[[0.3, -1.2], [2.0, 0.5]]).unwrap();
        let hp = whiten(&h, &SymMatrix::zeros(2)).unwrap();
        let d = gram(&hp).as_mat().sub(gram(&h).as_mat()).unwrap();
        assert!(d.frobenius_norm() < 1e-14);
    }
}
