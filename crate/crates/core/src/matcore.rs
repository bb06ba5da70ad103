//! Small dense real-matrix kernels.
//!
//! Everything here works on row-major `f64` storage and is sized for the
//! handful of antennas a base station or handset carries (dimension ≤ 16).
//! The symmetric eigensolver is a cyclic Jacobi iteration; log-determinants
//! go through a Cholesky factorization and are reported in bits.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest dimension accepted by [`sym_eig`].
pub const MAX_EIG_DIM: usize = 16;

const JACOBI_MAX_SWEEPS: usize = 64;

/// Dense row-major real matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} entries cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    /// Builds a matrix from nested rows; all rows must have the same length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Mat {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Mat::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols.max(1)).map(<[f64]>::to_vec).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, rhs: &Mat) -> Result<Mat> {
        if self.cols != rhs.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Mat::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += a * rhs.data[k * rhs.cols + j];
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · rhs` without materializing the transpose.
    pub fn t_matmul(&self, rhs: &Mat) -> Result<Mat> {
        if self.rows != rhs.rows {
            return Err(Error::Shape(format!(
                "cannot multiply ({}x{})ᵀ by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Mat::zeros(self.cols, rhs.cols);
        for k in 0..self.rows {
            for i in 0..self.cols {
                let a = self[(k, i)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += a * rhs.data[k * rhs.cols + j];
                }
            }
        }
        Ok(out)
    }

    pub fn scaled(&self, s: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn add(&self, rhs: &Mat) -> Result<Mat> {
        self.zip_with(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Mat) -> Result<Mat> {
        self.zip_with(rhs, |a, b| a - b)
    }

    fn zip_with(&self, rhs: &Mat, f: impl Fn(f64, f64) -> f64) -> Result<Mat> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        Ok(Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    /// Column-major vectorization.
    pub fn vec_col_major(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                v.push(self[(i, j)]);
            }
        }
        v
    }

    /// `[self rhs]` horizontal concatenation.
    pub fn hcat(&self, rhs: &Mat) -> Result<Mat> {
        if self.rows != rhs.rows {
            return Err(Error::Shape(format!("hcat of {} and {} rows", self.rows, rhs.rows)));
        }
        let cols = self.cols + rhs.cols;
        let mut out = Mat::zeros(self.rows, cols);
        for i in 0..self.rows {
            out.data[i * cols..i * cols + self.cols].copy_from_slice(&self.data[i * self.cols..(i + 1) * self.cols]);
            out.data[i * cols + self.cols..(i + 1) * cols].copy_from_slice(&rhs.data[i * rhs.cols..(i + 1) * rhs.cols]);
        }
        Ok(out)
    }

    /// `[self; rhs]` vertical concatenation.
    pub fn vcat(&self, rhs: &Mat) -> Result<Mat> {
        if self.cols != rhs.cols {
            return Err(Error::Shape(format!("vcat of {} and {} columns", self.cols, rhs.cols)));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&rhs.data);
        Ok(Mat {
            rows: self.rows + rhs.rows,
            cols: self.cols,
            data,
        })
    }
}

impl TryFrom<Vec<Vec<f64>>> for Mat {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Mat::from_rows(&rows)
    }
}

impl From<Mat> for Vec<Vec<f64>> {
    fn from(m: Mat) -> Self {
        m.to_rows()
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Mat{}x{}", self.rows, self.cols)?;
        f.debug_list().entries(self.to_rows()).finish()
    }
}

/// Square matrix whose entries are exactly symmetric.
///
/// Construction from an arbitrary square matrix averages `a[i][j]` and
/// `a[j][i]`, so the invariant holds bit-for-bit afterwards.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Mat", into = "Mat")]
pub struct SymMatrix(Mat);

impl SymMatrix {
    pub fn new(m: Mat) -> Result<Self> {
        if m.rows != m.cols {
            return Err(Error::Shape(format!(
                "symmetric matrix must be square, got {}x{}",
                m.rows, m.cols
            )));
        }
        if !m.is_finite() {
            return Err(Error::NonFinite);
        }
        Ok(Self::symmetrize(m))
    }

    /// Averages the off-diagonal pairs without validating finiteness.
    pub(crate) fn symmetrize(mut m: Mat) -> Self {
        let n = m.rows;
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = avg;
                m[(j, i)] = avg;
            }
        }
        SymMatrix(m)
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Mat::from_rows(rows)?)
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(Mat::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(Mat::identity(n))
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        SymMatrix(Mat::from_diag(diag))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.rows
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_mat(self) -> Mat {
        self.0
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.0[(i, i)]).sum()
    }

    pub fn scaled(&self, s: f64) -> SymMatrix {
        SymMatrix(self.0.scaled(s))
    }

    pub fn add(&self, rhs: &SymMatrix) -> Result<SymMatrix> {
        Ok(SymMatrix(self.0.add(&rhs.0)?))
    }

    pub fn is_zero(&self) -> bool {
        self.0.data.iter().all(|&x| x == 0.0)
    }

    /// `I + self`.
    pub fn plus_identity(&self) -> SymMatrix {
        let mut m = self.0.clone();
        for i in 0..self.dim() {
            m[(i, i)] += 1.0;
        }
        SymMatrix(m)
    }

    /// Smallest eigenvalue, via [`sym_eig`].
    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(sym_eig(self)?.values.last().copied().unwrap_or(0.0))
    }
}

impl Index<(usize, usize)> for SymMatrix {
    type Output = f64;

    #[inline]
    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

impl TryFrom<Mat> for SymMatrix {
    type Error = Error;

    fn try_from(m: Mat) -> Result<Self> {
        SymMatrix::new(m)
    }
}

impl From<SymMatrix> for Mat {
    fn from(s: SymMatrix) -> Mat {
        s.0
    }
}

impl fmt::Debug for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Sym")?;
        self.0.fmt(f)
    }
}

/// Eigenvalues (descending) with the matching orthonormal eigenvectors
/// stored as the columns of `vectors`.
#[derive(Clone, Debug)]
pub struct EigPair {
    pub values: Vec<f64>,
    pub vectors: Mat,
}

impl EigPair {
    /// `V diag(f(λ)) Vᵀ`.
    pub fn recompose_with(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let mapped: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        self.recompose(&mapped)
    }

    /// `V diag(d) Vᵀ` for an explicit diagonal `d`.
    pub fn recompose(&self, mapped: &[f64]) -> SymMatrix {
        let n = self.values.len();
        assert_eq!(mapped.len(), n, "diagonal length must match the basis");
        let v = &self.vectors;
        let mut out = Mat::zeros(n, n);
        for (k, &lam) in mapped.iter().enumerate() {
            if lam == 0.0 {
                continue;
            }
            for i in 0..n {
                let vik = v[(i, k)] * lam;
                if vik == 0.0 {
                    continue;
                }
                for j in i..n {
                    out[(i, j)] += vik * v[(j, k)];
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                out[(i, j)] = out[(j, i)];
            }
        }
        SymMatrix(out)
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.recompose_with(|l| l)
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
pub fn sym_eig(a: &SymMatrix) -> Result<EigPair> {
    let n = a.dim();
    if n > MAX_EIG_DIM {
        return Err(Error::UnsupportedDimension(format!(
            "eigendecomposition limited to {MAX_EIG_DIM}x{MAX_EIG_DIM}, got {n}x{n}"
        )));
    }
    if !a.0.is_finite() {
        return Err(Error::NonFinite);
    }
    let mut m = a.0.clone();
    let mut v = Mat::identity(n);
    let scale = m.frobenius_norm();

    if scale > 0.0 {
        for _ in 0..JACOBI_MAX_SWEEPS {
            let off: f64 = (0..n)
                .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
                .map(|(i, j)| m[(i, j)] * m[(i, j)])
                .sum();
            if off.sqrt() <= f64::EPSILON * scale {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = m[(p, q)];
                    if apq == 0.0 {
                        continue;
                    }
                    let app = m[(p, p)];
                    let aqq = m[(q, q)];
                    let theta = (aqq - app) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;

                    for k in 0..n {
                        let mkp = m[(k, p)];
                        let mkq = m[(k, q)];
                        m[(k, p)] = c * mkp - s * mkq;
                        m[(k, q)] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let mpk = m[(p, k)];
                        let mqk = m[(q, k)];
                        m[(p, k)] = c * mpk - s * mqk;
                        m[(q, k)] = s * mpk + c * mqk;
                    }
                    m[(p, q)] = 0.0;
                    m[(q, p)] = 0.0;
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, dst)] = v[(k, src)];
        }
    }
    Ok(EigPair { values, vectors })
}

/// Lower-triangular Cholesky factor, or `None` when a pivot is not positive.
pub(crate) fn cholesky(a: &SymMatrix) -> Option<Mat> {
    let n = a.dim();
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

fn pd_error(a: &SymMatrix) -> Error {
    match a.min_eigenvalue() {
        Ok(min_eigenvalue) => Error::NotPositiveDefinite { min_eigenvalue },
        Err(e) => e,
    }
}

/// Base-2 log-determinant of a positive definite matrix.
pub fn logdet_pd(a: &SymMatrix) -> Result<f64> {
    if !a.0.is_finite() {
        return Err(Error::NonFinite);
    }
    let l = cholesky(a).ok_or_else(|| pd_error(a))?;
    let mut acc = 0.0;
    for i in 0..a.dim() {
        let d = l[(i, i)];
        if d * d <= 1e-12 {
            return Err(pd_error(a));
        }
        acc += d.log2();
    }
    Ok(2.0 * acc)
}

/// Inverse of a positive definite matrix via its Cholesky factor.
pub fn inverse_pd(a: &SymMatrix) -> Result<SymMatrix> {
    let n = a.dim();
    let l = cholesky(a).ok_or_else(|| pd_error(a))?;
    // Columns of L⁻¹ by forward substitution, then A⁻¹ = L⁻ᵀ L⁻¹.
    let mut linv = Mat::zeros(n, n);
    for c in 0..n {
        for i in c..n {
            let mut s = if i == c { 1.0 } else { 0.0 };
            for k in c..i {
                s -= l[(i, k)] * linv[(k, c)];
            }
            linv[(i, c)] = s / l[(i, i)];
        }
    }
    let mut out = Mat::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut s = 0.0;
            for k in j..n {
                s += linv[(k, i)] * linv[(k, j)];
            }
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    Ok(SymMatrix(out))
}

/// Feasibility repair: clip negative eigenvalues to zero, then scale
/// uniformly when the trace exceeds `trace_budget`.
///
/// A PSD input already within budget is returned unchanged.
pub fn project_psd(a: &SymMatrix, trace_budget: f64) -> SymMatrix {
    let budget = trace_budget.max(0.0);
    let eig = match sym_eig(a) {
        Ok(e) => e,
        Err(_) => return SymMatrix::zeros(a.dim()),
    };
    let min = eig.values.last().copied().unwrap_or(0.0);
    if min >= 0.0 && a.trace() <= budget {
        return a.clone();
    }
    let clipped = if min >= 0.0 {
        a.clone()
    } else {
        eig.recompose_with(|l| l.max(0.0))
    };
    let tr = clipped.trace();
    if tr > budget {
        if tr <= 0.0 {
            return SymMatrix::zeros(a.dim());
        }
        clipped.scaled(budget / tr)
    } else {
        clipped
    }
}

/// Euclidean (Frobenius) projection onto `{Q ⪰ 0, tr Q ≤ trace_budget}`.
///
/// The eigenvalues are projected onto the capped simplex
/// `{λ ≥ 0, Σλ ≤ budget}` and the eigenvectors are kept.
pub fn project_psd_trace_ball(a: &SymMatrix, trace_budget: f64) -> Result<SymMatrix> {
    let budget = trace_budget.max(0.0);
    let eig = sym_eig(a)?;
    let clipped_sum: f64 = eig.values.iter().map(|l| l.max(0.0)).sum();
    let shift = if clipped_sum <= budget {
        0.0
    } else {
        simplex_shift(&eig.values, budget)
    };
    Ok(eig.recompose_with(|l| (l - shift).max(0.0)))
}

/// Threshold `τ` with `Σ max(λᵢ − τ, 0) = budget`; `values` sorted descending.
fn simplex_shift(values: &[f64], budget: f64) -> f64 {
    let mut cumulative = 0.0;
    let mut tau = 0.0;
    for (k, &v) in values.iter().enumerate() {
        cumulative += v;
        let candidate = (cumulative - budget) / (k + 1) as f64;
        if v - candidate > 0.0 {
            tau = candidate;
        } else {
            break;
        }
    }
    tau
}

/// `H Q Hᵀ`.
pub fn congruence(h: &Mat, q: &SymMatrix) -> Result<SymMatrix> {
    if h.cols() != q.dim() {
        return Err(Error::Shape(format!(
            "H has {} columns but Q is {}x{}",
            h.cols(),
            q.dim(),
            q.dim()
        )));
    }
    let hq = h.matmul(q.as_mat())?;
    let n = h.rows();
    let mut out = Mat::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut s = 0.0;
            for k in 0..h.cols() {
                s += hq[(i, k)] * h[(j, k)];
            }
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    Ok(SymMatrix(out))
}

/// `Hᵀ H`.
pub fn gram(h: &Mat) -> SymMatrix {
    let n = h.cols();
    let mut out = Mat::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut s = 0.0;
            for k in 0..h.rows() {
                s += h[(k, i)] * h[(k, j)];
            }
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    SymMatrix(out)
}

/// `Hᵀ A H` for symmetric `A`.
pub fn congruence_t(h: &Mat, a: &SymMatrix) -> Result<SymMatrix> {
    let ah = a.as_mat().matmul(h)?;
    let n = h.cols();
    let mut out = Mat::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut s = 0.0;
            for k in 0..h.rows() {
                s += h[(k, i)] * ah[(k, j)];
            }
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    Ok(SymMatrix(out))
}
