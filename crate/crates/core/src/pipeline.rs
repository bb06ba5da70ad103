//! Power-splitting decomposition of the confidential two-user broadcast.
//!
//! For a split factor `α`, user 1 gets `αP` and is solved as a wiretap
//! channel against user 2. Both channels are then whitened by user 1's
//! covariance and user 2 is solved as a wiretap channel against user 1 with
//! the remaining `(1 − α)P`. The split is a hard partition: power stage 1
//! leaves unused is not handed to stage 2.

use serde::{Deserialize, Serialize};

use crate::channels::ChannelPair;
use crate::error::{Error, Result};
use crate::par;
use crate::secrecy_rates::{evaluate_rates, whiten, CovariancePair, RatePair};
use crate::wiretap::{solve_wiretap_pga, PgaOptions, SolverReport, WiretapProblem};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub alpha: f64,
    pub power: f64,
    #[serde(default)]
    pub solver: PgaOptions,
}

impl SplitConfig {
    pub fn new(alpha: f64, power: f64) -> Result<Self> {
        let cfg = SplitConfig {
            alpha,
            power,
            solver: PgaOptions::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidInput(format!(
                "split factor must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.power >= 0.0) || !self.power.is_finite() {
            return Err(Error::InvalidInput(format!(
                "power must be finite and nonnegative, got {}",
                self.power
            )));
        }
        Ok(())
    }

    pub fn user1_budget(&self) -> f64 {
        self.alpha * self.power
    }

    pub fn user2_budget(&self) -> f64 {
        (1.0 - self.alpha) * self.power
    }
}

/// Result of one decomposition run.
#[derive(Clone, Debug)]
pub struct SplitSolution {
    pub covariances: CovariancePair,
    /// Rates on the original channels.
    pub rates: RatePair,
    pub stage1: SolverReport,
    pub stage2: SolverReport,
}

/// Solves both wiretap stages for one channel and split factor.
pub fn split_solve(ch: &ChannelPair, cfg: &SplitConfig) -> Result<SplitSolution> {
    cfg.validate()?;
    let stage1 = solve_wiretap_pga(
        &WiretapProblem::new(ch.h1().clone(), ch.h2().clone(), cfg.user1_budget())?,
        &cfg.solver,
    )?;
    let h1w = whiten(ch.h1(), &stage1.q)?;
    let h2w = whiten(ch.h2(), &stage1.q)?;
    let stage2 = solve_wiretap_pga(&WiretapProblem::new(h2w, h1w, cfg.user2_budget())?, &cfg.solver)?;
    let covariances = CovariancePair {
        q1: stage1.q.clone(),
        q2: stage2.q.clone(),
        power: cfg.power,
    };
    covariances.check_feasible()?;
    let rates = evaluate_rates(&covariances, ch)?;
    Ok(SplitSolution {
        covariances,
        rates,
        stage1,
        stage2,
    })
}

#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub alpha: f64,
    pub rates: RatePair,
    pub covariances: CovariancePair,
}

/// One [`split_solve`] per split factor, in the given order.
pub fn sweep_alpha(ch: &ChannelPair, power: f64, alphas: &[f64], solver: &PgaOptions) -> Result<Vec<SweepPoint>> {
    alphas
        .iter()
        .map(|&alpha| {
            let cfg = SplitConfig {
                alpha,
                power,
                solver: *solver,
            };
            let sol = split_solve(ch, &cfg)?;
            Ok(SweepPoint {
                alpha,
                rates: sol.rates,
                covariances: sol.covariances,
            })
        })
        .collect()
}

/// [`split_solve`] over many channels; output order follows the input.
pub fn split_solve_many(channels: &[ChannelPair], cfg: &SplitConfig) -> Result<Vec<SplitSolution>> {
    par::map_indexed(channels.len(), |i| split_solve(&channels[i], cfg))
        .into_iter()
        .collect()
}

/// `start:step:end` inclusive grid, e.g. `0:0.1:1` gives 11 points.
pub fn alpha_grid(start: f64, step: f64, end: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || end < start {
        return Err(Error::InvalidInput(format!("bad alpha grid {start}:{step}:{end}")));
    }
    let count = ((end - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count)
        .map(|k| {
            // Round to 12 decimals so 0.1·3 prints as 0.3.
            let a = start + step * k as f64;
            (a * 1e12).round() / 1e12
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::sample_channel_pair;
    use crate::matcore::gram;

    #[test]
    fn alpha_zero_silences_user1() {
        let ch = sample_channel_pair(2, 1, 1, 3).unwrap();
        let sol = split_solve(&ch, &SplitConfig::new(0.0, 10.0).unwrap()).unwrap();
        assert!(sol.covariances.q1.is_zero());
        assert_eq!(sol.rates.r1, 0.0);
        for h in [ch.h1(), ch.h2()] {
            let hw = whiten(h, &sol.covariances.q1).unwrap();
            let d = gram(&hw).as_mat().sub(gram(h).as_mat()).unwrap();
            assert!(d.frobenius_norm() < 1e-12);
        }
    }

    #[test]
    fn alpha_one_silences_user2() {
        let ch = sample_channel_pair(2, 1, 1, 4).unwrap();
        let sol = split_solve(&ch, &SplitConfig::new(1.0, 10.0).unwrap()).unwrap();
        assert!(sol.covariances.q2.is_zero());
        assert_eq!(sol.rates.r2, 0.0);
    }

    #[test]
    fn invalid_alpha_rejected() {
        assert!(SplitConfig::new(1.5, 10.0).is_err());
        assert!(SplitConfig::new(-0.1, 10.0).is_err());
        assert!(SplitConfig::new(0.5, -1.0).is_err());
    }

    #[test]
    fn alpha_grid_has_eleven_points() {
        let g = alpha_grid(0.0, 0.1, 1.0).unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(g[3], 0.3);
        assert_eq!(g[10], 1.0);
        assert!(alpha_grid(0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn sweep_endpoints_degenerate() {
        let ch = sample_channel_pair(2, 1, 1, 9).unwrap();
        let alphas = alpha_grid(0.0, 0.1, 1.0).unwrap();
        let pts = sweep_alpha(&ch, 10.0, &alphas, &PgaOptions::default()).unwrap();
        assert_eq!(pts.len(), 11);
        assert_eq!(pts[0].rates.r1, 0.0);
        assert_eq!(pts[10].rates.r2, 0.0);
        for (p, a) in pts.iter().zip(&alphas) {
            assert_eq!(p.alpha, *a);
        }
    }
}
