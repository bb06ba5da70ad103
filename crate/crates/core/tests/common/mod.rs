#![allow(dead_code, clippy::needless_range_loop)]

use noma_secrecy::{Mat, SymMatrix};
use proptest::prelude::*;

/// Determinant by Gaussian elimination with partial pivoting.
pub fn det(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut d = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        if m[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            m.swap(p, c);
            d = -d;
        }
        d *= m[c][c];
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    d
}

/// 2×2 determinant by cofactor expansion.
pub fn det2(a: &[Vec<f64>]) -> f64 {
    a[0][0] * a[1][1] - a[0][1] * a[1][0]
}

/// Inverse by Gauss-Jordan elimination.
pub fn inv(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.clone();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        m.swap(p, c);
        let piv = m[c][c];
        for v in m[c].iter_mut() {
            *v /= piv;
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                for k in 0..2 * n {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

pub fn mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    (0..n)
        .map(|i| (0..m).map(|j| (0..k).map(|l| a[i][l] * b[l][j]).sum()).collect())
        .collect()
}

pub fn transpose(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn eye(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

pub fn add(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + v).collect())
        .collect()
}

pub fn frob_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn rows(m: &Mat) -> Vec<Vec<f64>> {
    m.to_rows()
}

/// `½ log₂ |I + H Q Hᵀ|` through the elimination determinant.
pub fn half_logdet_oracle(h: &Mat, q: &SymMatrix) -> f64 {
    let hr = rows(h);
    let inner = mul(&mul(&hr, &rows(q.as_mat())), &transpose(&hr));
    0.5 * det(&add(&eye(h.rows()), &inner)).log2()
}

pub fn mat(r: usize, c: usize) -> impl Strategy<Value = Mat> {
    prop::collection::vec(-3.0f64..3.0, r * c).prop_map(move |v| Mat::from_vec(r, c, v).unwrap())
}

/// `B Bᵀ` scaled to the given trace.
pub fn psd(n: usize, trace: f64) -> impl Strategy<Value = SymMatrix> {
    prop::collection::vec(-1.0f64..1.0, n * n).prop_map(move |v| {
        let b = Mat::from_vec(n, n, v).unwrap();
        let q = SymMatrix::new(b.matmul(&b.transpose()).unwrap()).unwrap();
        let t = q.trace();
        if t > 0.0 {
            q.scaled(trace / t)
        } else {
            q
        }
    })
}

pub fn sym(n: usize) -> impl Strategy<Value = SymMatrix> {
    prop::collection::vec(-4.0f64..4.0, n * n)
        .prop_map(move |v| SymMatrix::new(Mat::from_vec(n, n, v).unwrap()).unwrap())
}
