//! MIMO wiretap covariance design.
//!
//! Maximizes `½log₂|I + Hm Q Hmᵀ| − ½log₂|I + He Q Heᵀ|` over
//! `Q ⪰ 0, tr Q ≤ budget`. [`solve_wiretap_pga`] is the production solver
//! (projected gradient ascent); [`solve_wiretap_grid`] is an exhaustive
//! search used to validate it on two transmit antennas.

use std::f64::consts::{FRAC_PI_2, LN_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{congruence_t, gram, inverse_pd, project_psd_trace_ball, sym_eig, Mat, SymMatrix};
use crate::secrecy_rates::{congruence_plus_identity, secrecy_gap};

/// One wiretap instance: legitimate channel, eavesdropper channel, budget.
#[derive(Clone, Debug)]
pub struct WiretapProblem {
    hm: Mat,
    he: Mat,
    budget: f64,
}

impl WiretapProblem {
    pub fn new(hm: Mat, he: Mat, budget: f64) -> Result<Self> {
        if hm.cols() != he.cols() {
            return Err(Error::Shape(format!(
                "legitimate channel has {} columns, eavesdropper {}",
                hm.cols(),
                he.cols()
            )));
        }
        if hm.cols() == 0 {
            return Err(Error::InvalidInput("channels have no transmit antennas".into()));
        }
        if !(budget >= 0.0) || !budget.is_finite() {
            return Err(Error::InvalidInput(format!(
                "budget must be finite and nonnegative, got {budget}"
            )));
        }
        if !hm.is_finite() || !he.is_finite() {
            return Err(Error::NonFinite);
        }
        Ok(WiretapProblem { hm, he, budget })
    }

    pub fn n_t(&self) -> usize {
        self.hm.cols()
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn legitimate(&self) -> &Mat {
        &self.hm
    }

    pub fn eavesdropper(&self) -> &Mat {
        &self.he
    }

    /// Unclamped objective in bits.
    pub fn objective(&self, q: &SymMatrix) -> Result<f64> {
        secrecy_gap(&self.hm, &self.he, q)
    }

    /// Euclidean gradient of [`Self::objective`] with respect to `Q`.
    pub fn gradient(&self, q: &SymMatrix) -> Result<SymMatrix> {
        let half_inv_ln2 = 0.5 / LN_2;
        let term = |h: &Mat| -> Result<SymMatrix> {
            let inv = inverse_pd(&congruence_plus_identity(h, q)?)?;
            congruence_t(h, &inv)
        };
        let gm = term(&self.hm)?;
        let ge = term(&self.he)?;
        Ok(SymMatrix::symmetrize(
            gm.as_mat().sub(ge.as_mat())?.scaled(half_inv_ln2),
        ))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverReport {
    pub q: SymMatrix,
    pub rate: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every accepted step, when requested.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<f64>,
}

impl SolverReport {
    fn zero(n_t: usize, iterations: usize) -> Self {
        SolverReport {
            q: SymMatrix::zeros(n_t),
            rate: 0.0,
            iterations,
            converged: true,
            history: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PgaOptions {
    pub max_iters: usize,
    /// Initial step; `None` means `0.1 · budget`.
    pub step0: Option<f64>,
    /// Stop once an accepted step gains less than this many bits.
    pub tol: f64,
    pub record_history: bool,
}

impl Default for PgaOptions {
    fn default() -> Self {
        PgaOptions {
            max_iters: 500,
            step0: None,
            tol: 1e-8,
            record_history: false,
        }
    }
}

/// Capacity-achieving covariance without an eavesdropper: water-filling over
/// the eigenmodes of `HᵀH`.
pub fn waterfill(h: &Mat, budget: f64) -> Result<SymMatrix> {
    let eig = sym_eig(&gram(h))?;
    let levels = waterfill_levels(&eig.values, budget.max(0.0));
    Ok(eig.recompose(&levels))
}

/// Power per mode `pᵢ = max(0, μ − 1/λᵢ)` with `Σ pᵢ = budget`; `gains` sorted
/// descending. Modes with non-positive gain get nothing.
pub fn waterfill_levels(gains: &[f64], budget: f64) -> Vec<f64> {
    let positive: Vec<f64> = gains.iter().copied().take_while(|&g| g > 1e-15).collect();
    let mut levels = vec![0.0; gains.len()];
    if positive.is_empty() || budget <= 0.0 {
        return levels;
    }
    let mut active = positive.len();
    let mut mu = 0.0;
    while active > 0 {
        let inv_sum: f64 = positive[..active].iter().map(|g| 1.0 / g).sum();
        mu = (budget + inv_sum) / active as f64;
        if mu - 1.0 / positive[active - 1] > 0.0 {
            break;
        }
        active -= 1;
    }
    for (lvl, g) in levels.iter_mut().zip(&positive[..active]) {
        *lvl = (mu - 1.0 / g).max(0.0);
    }
    levels
}

/// Projected gradient ascent on the wiretap objective.
///
/// Starts from the isotropic `(budget/n_t)·I`, takes gradient steps with a
/// halving line search (accepting only non-decreasing objective), and
/// projects each trial point onto `{Q ⪰ 0, tr Q ≤ budget}`. The step doubles
/// after every accepted move, so slow rotations along the trace boundary
/// still converge within the iteration cap. When the best
/// objective found is not positive the report carries `Q = 0`, rate 0.
pub fn solve_wiretap_pga(p: &WiretapProblem, opts: &PgaOptions) -> Result<SolverReport> {
    let n = p.n_t();
    if p.budget == 0.0 {
        return Ok(SolverReport::zero(n, 0));
    }
    let step0 = opts.step0.unwrap_or(0.1 * p.budget);
    if !(step0 > 0.0) {
        return Err(Error::InvalidInput(format!(
            "initial step must be positive, got {step0}"
        )));
    }
    let min_step = step0 * 1e-18;
    let max_step = step0 * 1e6;

    let mut q = SymMatrix::identity(n).scaled(p.budget / n as f64);
    let mut f = p.objective(&q)?;
    let mut history = Vec::new();
    if opts.record_history {
        history.push(f);
    }
    let mut step = step0;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iters {
        iterations += 1;
        let g = p.gradient(&q)?;
        let mut accepted = None;
        while step >= min_step {
            let trial = SymMatrix::symmetrize(q.as_mat().add(&g.as_mat().scaled(step))?);
            let trial = project_psd_trace_ball(&trial, p.budget)?;
            let ft = p.objective(&trial)?;
            if ft >= f {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((next, fn_)) = accepted else {
            converged = true;
            break;
        };
        let gain = fn_ - f;
        q = next;
        f = fn_;
        if opts.record_history {
            history.push(f);
        }
        if gain < opts.tol {
            converged = true;
            break;
        }
        step = (2.0 * step).min(max_step);
    }

    if f <= 0.0 {
        let mut r = SolverReport::zero(n, iterations);
        r.converged = converged;
        r.history = history;
        return Ok(r);
    }
    Ok(SolverReport {
        q,
        rate: f,
        iterations,
        converged,
        history,
    })
}

/// Exhaustive search for `n_t ≤ 2`.
///
/// For two antennas `Q = R(θ) diag(p₁, p₂) R(θ)ᵀ` with `(p₁, p₂)` on the grid
/// `budget·(i, j)/resolution, i + j ≤ resolution` and
/// `θ = (π/2)·k/resolution`, `k < resolution`. Since `(p₁, p₂)` are unordered,
/// `θ ∈ [0, π/2)` already reaches every 2×2 PSD matrix. Returns the best grid
/// point; zero secrecy yields `Q = 0`.
pub fn solve_wiretap_grid(p: &WiretapProblem, resolution: usize) -> Result<SolverReport> {
    let n = p.n_t();
    if n > 2 {
        return Err(Error::UnsupportedDimension(format!(
            "grid search supports at most 2 transmit antennas, got {n}"
        )));
    }
    if resolution == 0 {
        return Err(Error::InvalidInput("grid resolution must be positive".into()));
    }
    let mut best = SolverReport::zero(n, 0);
    let mut evaluated = 0;
    let step = p.budget / resolution as f64;

    if n == 1 {
        for i in 0..=resolution {
            let q = SymMatrix::from_diag(&[step * i as f64]);
            let f = p.objective(&q)?;
            evaluated += 1;
            if f > best.rate {
                best.q = q;
                best.rate = f;
            }
        }
    } else {
        for t in 0..resolution {
            let theta = FRAC_PI_2 * t as f64 / resolution as f64;
            let (s, c) = theta.sin_cos();
            for i in 0..=resolution {
                for j in 0..=(resolution - i) {
                    if i == 0 && j == 0 {
                        continue;
                    }
                    let p1 = step * i as f64;
                    let p2 = step * j as f64;
                    let q = SymMatrix::from_rows(&[
                        [p1 * c * c + p2 * s * s, (p1 - p2) * c * s],
                        [(p1 - p2) * c * s, p1 * s * s + p2 * c * c],
                    ])?;
                    let f = p.objective(&q)?;
                    evaluated += 1;
                    if f > best.rate {
                        best.q = q;
                        best.rate = f;
                    }
                }
            }
        }
    }
    best.iterations = evaluated;
    Ok(best)
}
