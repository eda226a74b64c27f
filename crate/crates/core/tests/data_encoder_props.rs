use ndarray::Array2;
use pmlfs::data::{
    inject_candidate_noise, kfold_split, load_dataset, save_dataset, standardize_features, DataFormat, Dataset,
};
use pmlfs::encoder::{encode, init_parameters, EncoderConfig, EncoderVariant, OptimizerKind, ParameterStore};
use pmlfs::eval::metrics::epsilon_pseudo;
use pmlfs::seed;
use pmlfs::stage2::{Stage2Config, Stage2Trainer};
use pmlfs::verify::{make_synthetic, SyntheticSpec};
use proptest::prelude::*;
use rand::Rng as _;

fn labelled() -> impl Strategy<Value = Dataset> {
    (1usize..15, 1usize..6, 1usize..6).prop_flat_map(|(n, d, l)| {
        (
            prop::collection::vec(-1e3f64..1e3, n * d),
            prop::collection::vec(0u8..2, n * l),
        )
            .prop_map(move |(x, y)| {
                let mut y = Array2::from_shape_vec((n, l), y).unwrap();
                for mut row in y.rows_mut() {
                    row[0] = 1;
                }
                Dataset::from_truth(Array2::from_shape_vec((n, d), x).unwrap(), y).unwrap()
            })
    })
}

fn encoder_cfg(variant: EncoderVariant, seed: u64) -> EncoderConfig {
    EncoderConfig {
        model_width: 8,
        head_count: 2,
        layer_count: 2,
        feedforward_width: 6,
        variant,
        seed,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn save_then_load_is_identity(ds in labelled(), rate in 0.0f64..1.0, s in 0u64..100, sparse in any::<bool>()) {
        let noisy = inject_candidate_noise(&ds, rate, s).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.txt");
        let format = if sparse { DataFormat::SparseLibfmt } else { DataFormat::Csv };
        save_dataset(&noisy, &path, format).unwrap();
        let back = load_dataset(&path, format).unwrap();
        prop_assert_eq!(back.features(), noisy.features());
        prop_assert_eq!(back.truth(), noisy.truth());
        prop_assert_eq!(back.candidates(), noisy.candidates());
    }

    #[test]
    fn noise_keeps_truth_inside_candidates(ds in labelled(), rate in 0.0f64..=1.0, s in 0u64..100) {
        let noisy = inject_candidate_noise(&ds, rate, s).unwrap();
        let truth = ds.truth().unwrap();
        for (i, cand) in noisy.candidates().iter().enumerate() {
            for j in 0..ds.n_labels() {
                if truth[[i, j]] == 1 {
                    prop_assert!(cand.contains(&j));
                }
            }
        }
        let again = inject_candidate_noise(&ds, rate, s).unwrap();
        prop_assert_eq!(noisy.candidates(), again.candidates());
        if rate == 0.0 {
            prop_assert_eq!(noisy.candidates(), ds.candidates());
        }
    }

    #[test]
    fn folds_partition_the_instances(n in 2usize..200, k in 2usize..10, s in 0u64..100) {
        prop_assume!(k <= n);
        let split = kfold_split(n, k, s).unwrap();
        prop_assert_eq!(&split, &kfold_split(n, k, s).unwrap());
        let sizes = split.fold_sizes();
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for f in 0..k {
            let mut all = split.train_indices(f);
            all.extend(split.test_indices(f));
            all.sort();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn checkpoint_round_trip(s in 0u64..1000, d in 1usize..6, l in 1usize..4, mlp in any::<bool>()) {
        let variant = if mlp { EncoderVariant::Mlp } else { EncoderVariant::Transformer };
        let store = init_parameters(&encoder_cfg(variant, s), d, l).unwrap();
        let mut bytes = Vec::new();
        store.write_checkpoint(&mut bytes, "fold0").unwrap();
        let (back, stamp) = ParameterStore::read_checkpoint(bytes.as_slice()).unwrap();
        prop_assert_eq!(stamp, "fold0");
        prop_assert_eq!(back.config(), store.config());
        for id in store.ids() {
            prop_assert_eq!(back.value(id), store.value(id));
        }
        let x = ndarray::Array1::from_shape_fn(d + l, |i| i as f64 * 0.1 - 0.2);
        prop_assert_eq!(encode(&back, x.view()).unwrap(), encode(&store, x.view()).unwrap());
    }
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let store = init_parameters(&encoder_cfg(EncoderVariant::Mlp, 1), 3, 2).unwrap();
    let mut bytes = Vec::new();
    store.write_checkpoint(&mut bytes, "x").unwrap();
    bytes.truncate(bytes.len() - 5);
    assert!(ParameterStore::read_checkpoint(bytes.as_slice()).is_err());
}

#[test]
fn initialization_is_seeded() {
    for variant in [EncoderVariant::Mlp, EncoderVariant::Transformer] {
        let a = init_parameters(&encoder_cfg(variant, 4), 5, 3).unwrap();
        let b = init_parameters(&encoder_cfg(variant, 4), 5, 3).unwrap();
        let c = init_parameters(&encoder_cfg(variant, 5), 5, 3).unwrap();
        assert!(a.ids().all(|i| a.value(i) == b.value(i)));
        assert!(a.ids().any(|i| a.value(i) != c.value(i)));
    }
}

#[test]
fn aggressive_training_stays_finite() {
    let mut rng = seed::rng(3);
    let x = Array2::from_shape_fn((24, 4), |_| 4.0 * rng.random::<f64>() - 2.0);
    let y = Array2::from_shape_fn((24, 3), |(i, j)| f64::from(u8::from((i * 7 + j) % 3 == 0)));
    for kind in [OptimizerKind::Adam, OptimizerKind::Sgd] {
        for variant in [EncoderVariant::Mlp, EncoderVariant::Transformer] {
            let store = init_parameters(&encoder_cfg(variant, 2), 4, 3).unwrap();
            let cfg = Stage2Config { budget: 2, epochs: 25, batch_size: 6, lr_fs: 0.05, optimizer: kind, ..Stage2Config::default() };
            let mut t = Stage2Trainer::new(store, cfg).unwrap();
            t.train(x.view(), y.view()).unwrap();
            assert!(t.store.all_finite());
            assert!(t.history.iter().all(|h| h.sup_loss.is_finite()));
            let obs = ndarray::Array1::from(vec![1.0, -2.0, 0.5, 3.0, 0.0, 0.0, 0.0]);
            assert!(encode(&t.store, obs.view()).unwrap().iter().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn standardized_columns_have_zero_mean_unit_scale() {
    let ds = make_synthetic(&SyntheticSpec { n: 200, d: 7, labels: 3, informative: 4, seed: 3, ..SyntheticSpec::default() })
        .unwrap();
    let shifted = ds.with_features(ds.features().mapv(|v| 3.0 * v + 10.0)).unwrap();
    let (z, _) = standardize_features(&shifted).unwrap();
    for col in z.features().columns() {
        let m = col.mean().unwrap();
        let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64;
        assert!(m.abs() < 1e-12);
        assert!((var.sqrt() - 1.0).abs() < 1e-2);
    }
}

#[test]
fn synthetic_candidate_noise_matches_rate() {
    let spec = SyntheticSpec { n: 2000, d: 10, labels: 6, informative: 5, candidate_noise: 0.2, seed: 1, ..SyntheticSpec::default() };
    let ds = make_synthetic(&spec).unwrap();
    let truth = ds.truth().unwrap();
    let negatives = truth.iter().filter(|&&v| v == 0).count() as f64;
    let added = epsilon_pseudo(ds.candidate_matrix().view(), truth.view()).unwrap() * truth.len() as f64;
    let rate = added / negatives;
    let se = (0.16 / negatives).sqrt();
    assert!((rate - 0.2).abs() < 4.0 * se, "observed {rate}");
}
