use noma_secrecy::channels::{sample_set, ChannelDims, NormalSource};
use noma_secrecy::eval::label_mse;
use noma_secrecy::features::{generate_dataset, Dataset};
use noma_secrecy::mlp::{
    dataset_mse, load_model, read_model, save_model, train, write_model, ModelContext, PrecoderModel, TrainConfig,
};
use noma_secrecy::wiretap::PgaOptions;
use noma_secrecy::Error;
use proptest::prelude::*;

fn dataset(count: usize, alpha: f64, seed: u64) -> Dataset {
    generate_dataset(
        count,
        alpha,
        10.0,
        ChannelDims::new(2, 1, 1).unwrap(),
        seed,
        &PgaOptions::default(),
    )
    .unwrap()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        hidden_widths: vec![32, 32],
        batch_size: 32,
        validation_frequency: 10,
        max_epochs: 12,
        seed: 5,
        keep_checkpoints: true,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_deterministic_and_returns_best_model() {
    let tr = dataset(400, 0.5, 1);
    let va = dataset(100, 0.5, 2);
    let cfg = small_config();
    let (m1, log1) = train(&cfg, &tr, &va).unwrap();
    let (m2, log2) = train(&cfg, &tr, &va).unwrap();
    assert_eq!(m1, m2);
    let v1: Vec<f64> = log1.records.iter().map(|r| r.val_mse).collect();
    let v2: Vec<f64> = log2.records.iter().map(|r| r.val_mse).collect();
    assert_eq!(v1, v2);

    // Early stopping returns the minimum of the log.
    assert_eq!(dataset_mse(&m1, &va).unwrap(), log1.best_val_mse());
    assert!(log1.records.windows(2).all(|w| w[1].best_val_mse <= w[0].best_val_mse));
    for r in &log1.records {
        assert_eq!(r.learning_rate, cfg.learning_rate_at(r.epoch));
    }

    // Every saved checkpoint improves on the previous one.
    let mses: Vec<f64> = log1
        .checkpoints
        .iter()
        .map(|(_, m)| label_mse(m, &va).unwrap())
        .collect();
    assert!(mses.len() >= 2);
    assert!(mses.windows(2).all(|w| w[1] < w[0]), "{mses:?}");
}

#[test]
fn toy_dataset_is_memorized() {
    let ds = dataset(64, 0.5, 3);
    // One iteration per epoch here, so the default 5-epoch drop period would
    // shrink the learning rate to nothing long before 2000 epochs.
    let cfg = TrainConfig {
        batch_size: 64,
        validation_frequency: 100,
        validation_patience: 1000,
        drop_period: 500,
        max_epochs: 2000,
        seed: 1,
        ..TrainConfig::default()
    };
    let (m, _) = train(&cfg, &ds, &ds).unwrap();
    let mse = label_mse(&m, &ds).unwrap();
    assert!(mse < 1e-4, "train MSE {mse}");
}

#[test]
fn training_rejects_bad_inputs() {
    let tr = dataset(16, 0.5, 1);
    let other = dataset(16, 0.3, 1);
    let cfg = small_config();
    assert!(matches!(train(&cfg, &tr, &other), Err(Error::ContextMismatch(_))));
    let mut empty = tr.clone();
    empty.samples.clear();
    assert!(matches!(train(&cfg, &empty, &tr), Err(Error::InvalidInput(_))));
    let bad = TrainConfig {
        batch_size: 0,
        ..small_config()
    };
    assert!(train(&bad, &tr, &tr).is_err());
}

#[test]
fn model_file_round_trip() {
    let m = PrecoderModel::new(ModelContext::new(2, 0.7, 10.0), 17);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    save_model(&m, &path).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back.context, m.context);
    let mut src = NormalSource::new(4, 0);
    for _ in 0..100 {
        let x: Vec<f64> = (0..24).map(|_| src.next_normal()).collect();
        let (a, b) = (m.forward(&x).unwrap(), back.forward(&x).unwrap());
        assert!(a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits()));
    }

    let bytes = std::fs::read(&path).unwrap();
    for cut in [0, 10, bytes.len() / 2, bytes.len() - 1] {
        assert!(
            matches!(read_model(&bytes[..cut]), Err(Error::Format { .. })),
            "cut at {cut}"
        );
    }
    let text = String::from_utf8_lossy(&bytes[..bytes.iter().position(|&b| b == b'\n').unwrap()]).to_string();
    let bumped = text.replace("\"version\":1", "\"version\":2");
    let mut v2 = bumped.into_bytes();
    v2.extend_from_slice(&bytes[v2.len()..]);
    let err = read_model(&v2[..]).unwrap_err();
    assert!(err.to_string().contains("version"), "{err}");
}

#[test]
fn predictions_on_wrong_dimensions_rejected() {
    let m = PrecoderModel::new(ModelContext::new(2, 0.5, 10.0), 0);
    let ch = sample_set(ChannelDims::new(3, 1, 1).unwrap(), 1, 1).unwrap().remove(0);
    assert!(matches!(m.predict_covariances(&ch), Err(Error::ContextMismatch(_))));
    let mut bytes = Vec::new();
    write_model(&m, &mut bytes).unwrap();
    assert_eq!(read_model(&bytes[..]).unwrap(), m);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn any_model_predicts_feasible_pairs(model_seed in 0u64..1000, ch_seed in 0u64..1000, n_t in 2usize..=3, scale in 0.1f64..50.0) {
        let mut m = PrecoderModel::new(ModelContext::new(n_t, 0.5, 10.0), model_seed);
        for l in &mut m.layers {
            l.weights.iter_mut().for_each(|w| *w *= scale.powf(1.0 / 12.0));
        }
        let ch = sample_set(ChannelDims::new(n_t, 1, 1).unwrap(), ch_seed, 1).unwrap().remove(0);
        let q = m.predict_covariances(&ch).unwrap();
        prop_assert!(q.q1.min_eigenvalue().unwrap() >= -1e-9);
        prop_assert!(q.q2.min_eigenvalue().unwrap() >= -1e-9);
        prop_assert!(q.total_trace() <= 10.0 * (1.0 + 1e-9));
    }
}
