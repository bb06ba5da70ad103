//! Generalized SVD of the channel pair and the analytical precoder built on
//! it.
//!
//! `H1 = U1 diag(σ₁) Xᵀ`, `H2 = U2 diag(σ₂) Xᵀ` with `σ₁ₖ² + σ₂ₖ² = 1`. The
//! columns of `U1`, `U2` belonging to nonzero generalized values are
//! orthonormal, and transmitting along a direction `w` with `Xᵀw = eₖ` reaches
//! user 1 with amplitude `σ₁ₖ` and user 2 with `σ₂ₖ` and nowhere else, so
//! covariances built on these directions decouple into scalar channels.

use serde::{Deserialize, Serialize};

use crate::channels::ChannelPair;
use crate::error::{Error, Result};
use crate::matcore::{gram, sym_eig, Mat, SymMatrix};
use crate::secrecy_rates::CovariancePair;

/// Relative threshold below which a singular value of `[H1; H2]` is zero.
const RANK_TOLERANCE: f64 = 1e-10;
/// A direction favors a user only if its generalized value wins by this much.
const FAVOR_MARGIN: f64 = 1e-9;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GsvdFactors {
    /// Generalized values seen by user 1, one per direction.
    pub sigma1: Vec<f64>,
    /// Generalized values seen by user 2.
    pub sigma2: Vec<f64>,
    /// `n1 × r` left factor of user 1.
    pub u1: Mat,
    /// `n2 × r` left factor of user 2.
    pub u2: Mat,
    /// `n_t × r` common right factor.
    pub x: Mat,
    /// `n_t × r` transmit directions, `Xᵀ · directions = I`.
    pub directions: Mat,
}

impl GsvdFactors {
    pub fn rank(&self) -> usize {
        self.sigma1.len()
    }

    /// `(U1 diag(σ₁) Xᵀ, U2 diag(σ₂) Xᵀ)`.
    pub fn reconstruct(&self) -> Result<(Mat, Mat)> {
        let xt = self.x.transpose();
        let scale_cols = |u: &Mat, s: &[f64]| {
            let mut out = u.clone();
            for i in 0..u.rows() {
                for (k, &sk) in s.iter().enumerate() {
                    out[(i, k)] *= sk;
                }
            }
            out
        };
        let h1 = scale_cols(&self.u1, &self.sigma1).matmul(&xt)?;
        let h2 = scale_cols(&self.u2, &self.sigma2).matmul(&xt)?;
        Ok((h1, h2))
    }
}

/// GSVD of `(H1, H2)` through the stacked matrix `A = [H1; H2]`.
///
/// A thin SVD `A = Y diag(ρ) Wᵀ` gives an orthonormal basis `Y` of the range
/// of `A`, then the CS decomposition of the two blocks of `Y` comes from the
/// eigenvectors of `Y1ᵀY1`. Directions in the null space of `A` reach neither
/// user and are dropped.
pub fn gsvd(h1: &Mat, h2: &Mat) -> Result<GsvdFactors> {
    if h1.cols() != h2.cols() {
        return Err(Error::Shape(format!(
            "H1 has {} columns, H2 has {}",
            h1.cols(),
            h2.cols()
        )));
    }
    let n_t = h1.cols();
    let n1 = h1.rows();
    let stacked = h1.vcat(h2)?;
    if !stacked.is_finite() {
        return Err(Error::NonFinite);
    }
    let (y, rho, w) = thin_svd(&stacked);
    let rank = rho.len();
    let mut basis = Mat::zeros(n_t, rank);
    for i in 0..n_t {
        for k in 0..rank {
            basis[(i, k)] = w[(i, k)] / rho[k];
        }
    }
    let mut y1 = Mat::zeros(n1, rank);
    for i in 0..n1 {
        for k in 0..rank {
            y1[(i, k)] = y[(i, k)];
        }
    }
    let cs = sym_eig(&gram(&y1))?;
    let z = &cs.vectors;

    let yz = y.matmul(z)?;
    let mut sigma1 = Vec::with_capacity(rank);
    let mut sigma2 = Vec::with_capacity(rank);
    let mut u1 = Mat::zeros(n1, rank);
    let mut u2 = Mat::zeros(h2.rows(), rank);
    for k in 0..rank {
        let col = yz.column(k);
        let (top, bottom) = col.split_at(n1);
        let c = top.iter().map(|v| v * v).sum::<f64>().sqrt();
        let s = bottom.iter().map(|v| v * v).sum::<f64>().sqrt();
        if c > 0.0 {
            for (i, v) in top.iter().enumerate() {
                u1[(i, k)] = v / c;
            }
        }
        if s > 0.0 {
            for (i, v) in bottom.iter().enumerate() {
                u2[(i, k)] = v / s;
            }
        }
        sigma1.push(c);
        sigma2.push(s);
    }

    // X = W_r diag(ρ) Z, directions = W_r diag(1/ρ) Z.
    let mut w_rho = Mat::zeros(n_t, rank);
    for i in 0..n_t {
        for k in 0..rank {
            w_rho[(i, k)] = w[(i, k)] * rho[k];
        }
    }
    let x = w_rho.matmul(z)?;
    let directions = basis.matmul(z)?;

    Ok(GsvdFactors {
        sigma1,
        sigma2,
        u1,
        u2,
        x,
        directions,
    })
}

/// One-sided Jacobi SVD keeping singular values above [`RANK_TOLERANCE`]
/// relative to the largest. Returns `(U, ρ, W)` with `A ≈ U diag(ρ) Wᵀ`,
/// `ρ` descending.
fn thin_svd(a: &Mat) -> (Mat, Vec<f64>, Mat) {
    let (m, n) = (a.rows(), a.cols());
    let mut u = a.clone();
    let mut v = Mat::identity(n);
    for _ in 0..64 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..m {
                    alpha += u[(i, p)] * u[(i, p)];
                    beta += u[(i, q)] * u[(i, q)];
                    gamma += u[(i, p)] * u[(i, q)];
                }
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut u, &mut v] {
                    for i in 0..mat.rows() {
                        let (x, y) = (mat[(i, p)], mat[(i, q)]);
                        mat[(i, p)] = c * x - s * y;
                        mat[(i, q)] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..n)
        .map(|k| (0..m).map(|i| u[(i, k)] * u[(i, k)]).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let top = norms.get(order[0]).copied().unwrap_or(0.0);
    order.retain(|&k| norms[k] > 0.0 && norms[k] > RANK_TOLERANCE * top);
    let r = order.len();
    let mut uo = Mat::zeros(m, r);
    let mut wo = Mat::zeros(n, r);
    let rho: Vec<f64> = order.iter().map(|&k| norms[k]).collect();
    for (c, &k) in order.iter().enumerate() {
        for i in 0..m {
            uo[(i, c)] = u[(i, k)] / rho[c];
        }
        for i in 0..n {
            wo[(i, c)] = v[(i, k)];
        }
    }
    (uo, rho, wo)
}

/// Optimal power on decoupled scalar wiretap links with gains `(aₖ, bₖ)`,
/// `aₖ > bₖ`: maximizes `Σ log((1 + aₖpₖ)/(1 + bₖpₖ))` under `Σ pₖ ≤ budget`.
///
/// With all `bₖ = 0` this is classical water-filling.
pub fn secrecy_waterfill(gains: &[(f64, f64)], budget: f64) -> Vec<f64> {
    let mut out = vec![0.0; gains.len()];
    if budget <= 0.0 || gains.iter().all(|(a, b)| a <= b) {
        return out;
    }
    // Marginal gain a/(1+ap) − b/(1+bp) = μ, per link.
    let power_at = |mu: f64, a: f64, b: f64| -> f64 {
        if a - b <= mu {
            return 0.0;
        }
        if b <= 0.0 {
            return 1.0 / mu - 1.0 / a;
        }
        let qa = mu * a * b;
        let qb = mu * (a + b);
        let qc = mu - (a - b);
        let disc = (qb * qb - 4.0 * qa * qc).max(0.0);
        // qc < 0, so the larger root is positive; this form avoids cancellation.
        (-2.0 * qc) / (qb + disc.sqrt())
    };
    let total = |mu: f64| gains.iter().map(|&(a, b)| power_at(mu, a, b)).sum::<f64>();

    let mut hi = gains.iter().map(|(a, b)| a - b).fold(0.0_f64, f64::max);
    let mut lo = hi;
    while total(lo) < budget {
        lo *= 0.5;
        if lo < 1e-300 {
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if total(mid) > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    for (o, &(a, b)) in out.iter_mut().zip(gains) {
        *o = power_at(hi, a, b);
    }
    // Bisection leaves a tiny shortfall; hand it out proportionally.
    let used: f64 = out.iter().sum();
    if used > 0.0 {
        let s = budget / used;
        out.iter_mut().for_each(|p| *p *= s);
    }
    out
}

/// The analytical GSVD precoder: user 1 transmits on the directions where
/// `σ₁ₖ > σ₂ₖ` with budget `αP`, user 2 on those where `σ₂ₖ > σ₁ₖ` with
/// `(1 − α)P`, each with secrecy water-filling across its directions.
pub fn gsvd_precode(ch: &ChannelPair, power: f64, alpha: f64) -> Result<CovariancePair> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!(
            "split factor must lie in [0, 1], got {alpha}"
        )));
    }
    if !(power >= 0.0) || !power.is_finite() {
        return Err(Error::InvalidInput(format!("bad power budget {power}")));
    }
    let f = gsvd(ch.h1(), ch.h2())?;
    let n_t = ch.n_t();
    let norms: Vec<f64> = (0..f.rank())
        .map(|k| f.directions.column(k).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();

    let build = |favored: &dyn Fn(usize) -> bool, gain: &dyn Fn(usize) -> (f64, f64), budget: f64| {
        let ks: Vec<usize> = (0..f.rank()).filter(|&k| favored(k)).collect();
        let gains: Vec<(f64, f64)> = ks.iter().map(|&k| gain(k)).collect();
        let powers = secrecy_waterfill(&gains, budget);
        let mut q = Mat::zeros(n_t, n_t);
        for (&k, &p) in ks.iter().zip(&powers) {
            if p <= 0.0 {
                continue;
            }
            let w = f.directions.column(k);
            let scale = p / (norms[k] * norms[k]);
            for i in 0..n_t {
                for j in 0..n_t {
                    q[(i, j)] += scale * w[i] * w[j];
                }
            }
        }
        SymMatrix::new(q)
    };

    let g1 = |k: usize| {
        let n2 = norms[k] * norms[k];
        (f.sigma1[k].powi(2) / n2, f.sigma2[k].powi(2) / n2)
    };
    let g2 = |k: usize| {
        let (a, b) = g1(k);
        (b, a)
    };
    let q1 = build(&|k| f.sigma1[k] > f.sigma2[k] + FAVOR_MARGIN, &g1, alpha * power)?;
    let q2 = build(
        &|k| f.sigma2[k] > f.sigma1[k] + FAVOR_MARGIN,
        &g2,
        (1.0 - alpha) * power,
    )?;
    let mut pair = CovariancePair { q1, q2, power };
    // Rounding in Σp can exceed the budget by an ulp.
    let tr = pair.total_trace();
    if tr > power {
        let s = power / tr;
        pair.q1 = pair.q1.scaled(s);
        pair.q2 = pair.q2.scaled(s);
    }
    Ok(pair)
}
