mod common;

use noma_secrecy::channels::{sample_indexed, sample_set, ChannelDims};
use noma_secrecy::features::{
    build_input, feature_len, generate_dataset, pack_labels, read_dataset, unpack_labels, write_dataset,
    write_dataset_csv,
};
use noma_secrecy::secrecy_rates::evaluate_rates;
use noma_secrecy::wiretap::PgaOptions;
use noma_secrecy::{sample_channel_pair, CovariancePair};
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

fn pooled_entries(count: usize, seed: u64) -> Vec<f64> {
    sample_set(ChannelDims::new(3, 2, 2).unwrap(), seed, count)
        .unwrap()
        .iter()
        .flat_map(|c| {
            c.h1()
                .as_slice()
                .iter()
                .chain(c.h2().as_slice())
                .copied()
                .collect::<Vec<_>>()
        })
        .collect()
}

#[test]
fn channel_moments() {
    let x = pooled_entries(100_000 / 12 + 1, 11);
    let n = x.len() as f64;
    assert!(n >= 1e5);
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    assert!(mean.abs() <= 0.02, "mean {mean}");
    assert!((var - 1.0).abs() <= 0.03, "variance {var}");
}

#[test]
fn channel_entries_pass_ks() {
    let mut x = pooled_entries(10_000 / 12 + 1, 12);
    x.truncate(10_000);
    x.sort_by(f64::total_cmp);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let n = x.len() as f64;
    let d = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = normal.cdf(v);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    // Asymptotic 1% critical value.
    assert!(d < 1.628 / n.sqrt(), "D = {d}");
}

#[test]
fn channel_determinism_and_shapes() {
    let a = sample_channel_pair(2, 1, 1, 7).unwrap();
    let b = sample_channel_pair(2, 1, 1, 7).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, sample_channel_pair(2, 1, 1, 8).unwrap());
    let c = sample_channel_pair(3, 1, 1, 7).unwrap();
    assert_eq!(
        (c.h1().rows(), c.h1().cols(), c.h2().rows(), c.h2().cols()),
        (1, 3, 1, 3)
    );
    assert!(sample_channel_pair(0, 1, 1, 7).is_err());
}

#[test]
fn feature_range_property() {
    for n_t in [2, 3] {
        let chs = sample_set(ChannelDims::new(n_t, 1, 1).unwrap(), 99, 1000).unwrap();
        let (mut inside, mut total) = (0usize, 0usize);
        for ch in &chs {
            let v = build_input(ch);
            assert_eq!(v.len(), feature_len(n_t));
            inside += v.iter().filter(|x| x.abs() <= 1.0).count();
            total += v.len();
        }
        assert!(inside as f64 >= 0.99 * total as f64, "n_t={n_t}: {inside}/{total}");
    }
}

proptest! {
    #[test]
    fn packing_round_trip_is_exact(
        (q1, q2) in (1usize..=3).prop_flat_map(|n| (common::psd(n, 3.0), common::psd(n, 4.0)))
    ) {
        let pair = CovariancePair::new(q1, q2, 10.0).unwrap();
        let l = pack_labels(&pair);
        let back = unpack_labels(&l, 10.0).unwrap();
        prop_assert_eq!(&back, &pair);
        prop_assert_eq!(pack_labels(&back), l);
    }

    #[test]
    fn unpacked_labels_always_feasible(
        l in prop::collection::vec(-20.0f64..20.0, 12),
        power in 0.0f64..20.0,
    ) {
        let q = unpack_labels(&l, power).unwrap();
        prop_assert!(q.q1.min_eigenvalue().unwrap() >= -1e-9);
        prop_assert!(q.q2.min_eigenvalue().unwrap() >= -1e-9);
        prop_assert!(q.total_trace() <= power * (1.0 + 1e-9));
    }
}

#[test]
fn dataset_determinism_and_self_consistency() {
    let dims = ChannelDims::new(2, 1, 1).unwrap();
    let opts = PgaOptions::default();
    let a = generate_dataset(1000, 0.5, 10.0, dims, 7, &opts).unwrap();
    let b = generate_dataset(1000, 0.5, 10.0, dims, 7, &opts).unwrap();
    let (mut ba, mut bb) = (Vec::new(), Vec::new());
    write_dataset(&a, &mut ba).unwrap();
    write_dataset(&b, &mut bb).unwrap();
    assert_eq!(ba, bb);
    assert_eq!(read_dataset(&ba[..]).unwrap(), a);

    let mut stored = 0.0;
    let mut recomputed = 0.0;
    for (i, s) in a.samples.iter().enumerate() {
        let ch = sample_indexed(dims, 7, i as u64).unwrap();
        assert_eq!(s.features, build_input(&ch));
        let q = unpack_labels(&s.labels, 10.0).unwrap();
        assert!(q.check_feasible().is_ok());
        stored += s.rates.sum();
        recomputed += evaluate_rates(&q, &ch).unwrap().sum();
    }
    assert!((stored - recomputed).abs() / 1000.0 <= 1e-6);
}

#[cfg(feature = "parallel")]
#[test]
fn dataset_independent_of_worker_count() {
    let dims = ChannelDims::new(2, 1, 1).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| generate_dataset(64, 0.3, 10.0, dims, 3, &PgaOptions::default()).unwrap())
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn csv_export_has_header_and_rows() {
    let ds = generate_dataset(
        5,
        0.5,
        10.0,
        ChannelDims::new(2, 1, 1).unwrap(),
        1,
        &PgaOptions::default(),
    )
    .unwrap();
    let mut out = Vec::new();
    write_dataset_csv(&ds, &mut out).unwrap();
    let mut rdr = csv::Reader::from_reader(&out[..]);
    let header = rdr.headers().unwrap().clone();
    assert_eq!(header.len(), 24 + 6 + 2);
    let rows: Vec<_> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 5);
    let first: f64 = rows[0][0].parse().unwrap();
    assert_eq!(first, ds.samples[0].features[0]);
}
