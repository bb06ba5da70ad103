mod common;

use common::*;
use noma_secrecy::channels::{sample_set, ChannelDims};
use noma_secrecy::gsvd::{gsvd, gsvd_precode};
use noma_secrecy::pipeline::{alpha_grid, split_solve, SplitConfig};
use noma_secrecy::secrecy_rates::{evaluate_rates, half_logdet, secrecy_gap};
use noma_secrecy::{ChannelPair, Mat};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn factors_reconstruct_and_normalize(
        (h1, h2) in (1usize..=3, 1usize..=3, 1usize..=3).prop_flat_map(|(n_t, n1, n2)| (mat(n1, n_t), mat(n2, n_t)))
    ) {
        let f = gsvd(&h1, &h2).unwrap();
        for (a, b) in f.sigma1.iter().zip(&f.sigma2) {
            prop_assert!((a * a + b * b - 1.0).abs() <= 1e-9);
        }
        let (r1, r2) = f.reconstruct().unwrap();
        prop_assert!(r1.sub(&h1).unwrap().frobenius_norm() <= 1e-8);
        prop_assert!(r2.sub(&h2).unwrap().frobenius_norm() <= 1e-8);
    }

    #[test]
    fn precoder_uses_disjoint_directions(
        (h1, h2) in (2usize..=3, 1usize..=3, 1usize..=3).prop_flat_map(|(n_t, n1, n2)| (mat(n1, n_t), mat(n2, n_t))),
        alpha in 0.0f64..=1.0,
    ) {
        let ch = ChannelPair::new(h1.clone(), h2.clone()).unwrap();
        let q = gsvd_precode(&ch, 10.0, alpha).unwrap();
        prop_assert!(q.check_feasible().is_ok());
        prop_assert!(q.q1.trace() <= alpha * 10.0 + 1e-9);
        prop_assert!(q.q2.trace() <= (1.0 - alpha) * 10.0 + 1e-9);

        // In the generalized basis, Xᵀ Q X is diagonal on each user's own directions.
        let f = gsvd(&h1, &h2).unwrap();
        let power_on = |m: &Mat| {
            let d = f.x.t_matmul(m).unwrap().matmul(&f.x).unwrap();
            (0..f.rank()).map(|k| d[(k, k)]).collect::<Vec<_>>()
        };
        let p1 = power_on(q.q1.as_mat());
        let p2 = power_on(q.q2.as_mat());
        for (a, b) in p1.iter().zip(&p2) {
            prop_assert!(a.abs() <= 1e-8 || b.abs() <= 1e-8, "{p1:?} {p2:?}");
        }

        // Favourable directions only: neither secrecy term goes negative.
        prop_assert!(secrecy_gap(ch.h1(), ch.h2(), &q.q1).unwrap() >= -1e-9);
        let total = q.q1.add(&q.q2).unwrap();
        let r2 = half_logdet(ch.h2(), &total).unwrap() - half_logdet(ch.h2(), &q.q1).unwrap()
            - half_logdet(ch.h1(), &total).unwrap() + half_logdet(ch.h1(), &q.q1).unwrap();
        prop_assert!(r2 >= -1e-9);
    }
}

#[test]
fn identical_channels_split_evenly() {
    let h = Mat::from_rows(&[[0.7, -1.3, 0.2], [0.1, 0.4, 2.0]]).unwrap();
    let f = gsvd(&h, &h).unwrap();
    for (a, b) in f.sigma1.iter().zip(&f.sigma2) {
        assert!((a - 0.5f64.sqrt()).abs() < 1e-9 && (b - 0.5f64.sqrt()).abs() < 1e-9);
    }
}

#[test]
fn region_inside_solver_region() {
    let chs = sample_set(ChannelDims::new(2, 1, 1).unwrap(), 31, 1000).unwrap();
    for &alpha in &alpha_grid(0.1, 0.1, 0.9).unwrap() {
        let cfg = SplitConfig::new(alpha, 10.0).unwrap();
        let (mut g, mut s) = (0.0, 0.0);
        for ch in &chs {
            g += evaluate_rates(&gsvd_precode(ch, 10.0, alpha).unwrap(), ch)
                .unwrap()
                .sum();
            s += split_solve(ch, &cfg).unwrap().rates.sum();
        }
        assert!(g < s, "alpha {alpha}: gsvd {g} vs solver {s}");
    }
}
