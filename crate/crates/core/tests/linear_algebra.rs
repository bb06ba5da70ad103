mod common;

use common::*;
use noma_secrecy::matcore::{gram, inverse_pd, logdet_pd, project_psd, project_psd_trace_ball, sym_eig};
use noma_secrecy::secrecy_rates::{evaluate_rates, half_logdet, rate_user1, rate_user2, secrecy_gap, whiten};
use noma_secrecy::{ChannelPair, CovariancePair, Mat, SymMatrix};
use proptest::prelude::*;

fn dims() -> impl Strategy<Value = usize> {
    1usize..=4
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn eigen_reconstruction_and_orthonormality(a in dims().prop_flat_map(sym)) {
        let e = sym_eig(&a).unwrap();
        let n = a.dim();
        let rec = e.reconstruct();
        let err = rec.as_mat().sub(a.as_mat()).unwrap().frobenius_norm();
        prop_assert!(err <= 1e-9 * a.as_mat().frobenius_norm().max(1e-300));
        let vtv = e.vectors.t_matmul(&e.vectors).unwrap();
        prop_assert!(vtv.sub(&Mat::identity(n)).unwrap().frobenius_norm() <= 1e-10);
        prop_assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn symmetric_construction_is_exact(n in dims(), v in prop::collection::vec(-5.0f64..5.0, 16)) {
        let m = Mat::from_vec(n, n, v[..n * n].to_vec()).unwrap();
        let s = SymMatrix::new(m).unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(s[(i, j)].to_bits(), s[(j, i)].to_bits());
            }
        }
    }

    #[test]
    fn project_psd_feasible_and_idempotent(a in dims().prop_flat_map(sym), budget in 0.0f64..20.0) {
        let p = project_psd(&a, budget);
        prop_assert!(p.min_eigenvalue().unwrap() >= -1e-12);
        prop_assert!(p.trace() <= budget * (1.0 + 1e-12) + 1e-12);
        let pp = project_psd(&p, budget);
        for (x, y) in pp.as_mat().as_slice().iter().zip(p.as_mat().as_slice()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn trace_ball_projection_is_euclidean(
        a in (1usize..=3).prop_flat_map(sym),
        budget in 0.1f64..10.0,
        seeds in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 9), 8),
    ) {
        // Variational inequality ⟨A − P, X − P⟩ ≤ 0 for feasible X.
        let n = a.dim();
        let p = project_psd_trace_ball(&a, budget).unwrap();
        prop_assert!(p.min_eigenvalue().unwrap() >= -1e-10);
        prop_assert!(p.trace() <= budget * (1.0 + 1e-9));
        let diff = a.as_mat().sub(p.as_mat()).unwrap();
        for s in seeds {
            let b = Mat::from_vec(n, n, s[..n * n].to_vec()).unwrap();
            let x = SymMatrix::new(b.matmul(&b.transpose()).unwrap()).unwrap();
            let x = if x.trace() > budget { x.scaled(budget / x.trace()) } else { x };
            let dx = x.as_mat().sub(p.as_mat()).unwrap();
            let inner: f64 = diff.as_slice().iter().zip(dx.as_slice()).map(|(u, v)| u * v).sum();
            prop_assert!(inner <= 1e-9 * (1.0 + a.as_mat().frobenius_norm()));
        }
    }

    #[test]
    fn logdet_matches_eigenvalue_product_and_inverse(q in dims().prop_flat_map(|n| psd(n, 5.0))) {
        let a = q.plus_identity();
        let ld = logdet_pd(&a).unwrap();
        let prod: f64 = sym_eig(&a).unwrap().values.iter().product();
        prop_assert!((2f64.powf(ld) - prod).abs() <= 1e-9 * prod);
        let inv = inverse_pd(&a).unwrap();
        prop_assert!((ld + logdet_pd(&inv).unwrap()).abs() <= 1e-8);
    }

    #[test]
    fn determinant_commutation(
        (h, q) in (1usize..=3, 1usize..=3).prop_flat_map(|(n_t, r)| (mat(r, n_t), psd(n_t, 10.0)))
    ) {
        // |I + H Q Hᵀ| = |I + HᵀH Q|
        let lhs = 2f64.powf(2.0 * half_logdet(&h, &q).unwrap());
        let hth = rows(gram(&h).as_mat());
        let rhs = det(&add(&eye(h.cols()), &mul(&hth, &rows(q.as_mat()))));
        prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(rhs.abs()));
    }

    #[test]
    fn whitening_identity(
        (h, q1) in (1usize..=3, 1usize..=3).prop_flat_map(|(n_t, r)| (mat(r, n_t), psd(n_t, 8.0)))
    ) {
        // H′ᵀH′ = Hᵀ(I + H Q1 Hᵀ)⁻¹H
        let hp = whiten(&h, &q1).unwrap();
        prop_assert_eq!((hp.rows(), hp.cols()), (h.rows(), h.cols()));
        let hr = rows(&h);
        let inner = add(&eye(h.rows()), &mul(&mul(&hr, &rows(q1.as_mat())), &transpose(&hr)));
        let oracle = mul(&mul(&transpose(&hr), &inv(&inner)), &hr);
        prop_assert!(frob_diff(&rows(gram(&hp).as_mat()), &oracle) <= 1e-9 * (1.0 + h.frobenius_norm().powi(2)));
    }

    #[test]
    fn whitening_equivalence(
        (h1, h2, q1, q2) in (1usize..=3, 1usize..=3, 1usize..=3).prop_flat_map(|(n_t, n1, n2)| {
            (mat(n1, n_t), mat(n2, n_t), psd(n_t, 4.0), psd(n_t, 6.0))
        })
    ) {
        let ch = ChannelPair::new(h1, h2).unwrap();
        let pair = CovariancePair::new(q1.clone(), q2.clone(), 10.0).unwrap();
        let direct = rate_user2(&pair, &ch).unwrap();
        let h1w = whiten(ch.h1(), &q1).unwrap();
        let h2w = whiten(ch.h2(), &q1).unwrap();
        let whitened = secrecy_gap(&h2w, &h1w, &q2).unwrap().max(0.0);
        prop_assert!((direct - whitened).abs() <= 1e-8 * (1.0 + direct.abs()));
    }

    #[test]
    fn rates_nonnegative_and_finite(
        (h1, h2, q1, q2) in (1usize..=3, 1usize..=3, 1usize..=3).prop_flat_map(|(n_t, n1, n2)| {
            (mat(n1, n_t), mat(n2, n_t), psd(n_t, 3.0), psd(n_t, 7.0))
        })
    ) {
        let ch = ChannelPair::new(h1, h2).unwrap();
        let r = evaluate_rates(&CovariancePair::new(q1, q2, 10.0).unwrap(), &ch).unwrap();
        prop_assert!(r.r1 >= 0.0 && r.r1.is_finite());
        prop_assert!(r.r2 >= 0.0 && r.r2.is_finite());
    }

    #[test]
    fn user1_rate_against_cofactor_oracle(
        (h1, h2, q) in (mat(2, 2), mat(2, 2), psd(2, 10.0))
    ) {
        let ch = ChannelPair::new(h1.clone(), h2.clone()).unwrap();
        let term = |h: &Mat| {
            let hr = rows(h);
            let m = add(&eye(2), &mul(&mul(&hr, &rows(q.as_mat())), &transpose(&hr)));
            0.5 * det2(&m).log2()
        };
        let oracle = (term(&h1) - term(&h2)).max(0.0);
        let r = rate_user1(&q, &ch).unwrap();
        prop_assert!((r - oracle).abs() <= 1e-10 * (1.0 + oracle));
    }

    #[test]
    fn user1_rate_invariant_under_common_symmetry(
        d in prop::collection::vec(0.1f64..3.0, 4),
        q in psd(2, 10.0),
    ) {
        // V = diag(1, −1) commutes with both diagonal Gram matrices.
        let ch = ChannelPair::new(Mat::from_diag(&d[..2]), Mat::from_diag(&d[2..])).unwrap();
        let v = Mat::from_diag(&[1.0, -1.0]);
        let vq = SymMatrix::new(v.matmul(q.as_mat()).unwrap().matmul(&v).unwrap()).unwrap();
        let a = rate_user1(&q, &ch).unwrap();
        let b = rate_user1(&vq, &ch).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn half_logdet_against_elimination_oracle() {
    let h = Mat::from_rows(&[[0.4, -1.1, 2.0], [1.5, 0.3, -0.7]]).unwrap();
    let q = SymMatrix::from_rows(&[[2.0, 0.3, -0.1], [0.3, 1.0, 0.2], [-0.1, 0.2, 0.5]]).unwrap();
    let a = half_logdet(&h, &q).unwrap();
    assert!((a - half_logdet_oracle(&h, &q)).abs() < 1e-12);
}
