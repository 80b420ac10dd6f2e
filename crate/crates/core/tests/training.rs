use proptest::prelude::*;
use spatial_mil::synthetic::{generate_cohort, CohortSpec};
use spatial_mil::tensor::Tensor;
use spatial_mil::train::{
    clip_gradients, global_norm, lr_at, stream_rng, subsample_indices, subsample_tiles, train_fold,
    write_trace_csv, Stream,
};
use spatial_mil::{Aggregator, Cohort, ModelConfig, TrainConfig};

fn small_cohort(n: usize, seed: u64) -> Cohort {
    let spec = CohortSpec {
        n_slides: n,
        msi_fraction: 0.4,
        tiles_min: 20,
        tiles_max: 40,
        feature_dim: 12,
        seed,
        ..CohortSpec::default()
    };
    generate_cohort(&spec, "train").unwrap().labeled()
}

fn small_model(agg: Aggregator, d: usize) -> ModelConfig {
    let mut m = ModelConfig::new(agg, d);
    m.hidden_dim = 8;
    m.n_heads = 2;
    m.clam_k = 4;
    m
}

#[test]
fn loss_decreases_for_every_aggregator() {
    let cohort = small_cohort(10, 1);
    for agg in [Aggregator::Abmil, Aggregator::ClamSb, Aggregator::TransMil] {
        let cfg = TrainConfig::for_aggregator(agg);
        let r = train_fold(&cohort, &cohort, &small_model(agg, 12), &cfg, 0).unwrap();
        assert_eq!(r.trace.len(), 30);
        let first = r.trace[0].mean_train_loss;
        let last = r.trace[29].mean_train_loss;
        assert!(last < first, "{agg}: {first} -> {last}");
    }
}

#[test]
fn selection_and_determinism() {
    let cohort = small_cohort(16, 2);
    let (pos, neg): (Cohort, Cohort) = cohort.into_iter().partition(|s| s.labels.msi);
    let val: Cohort = pos[..2].iter().chain(&neg[..3]).cloned().collect();
    let train: Cohort = pos[2..].iter().chain(&neg[3..]).cloned().collect();
    let (train, val) = (&train[..], &val[..]);
    let cfg = TrainConfig {
        epochs: 6,
        warmup_epochs: 1,
        lr_base: 1e-3,
        max_tiles: Some(16),
        ..TrainConfig::default()
    };
    let m = small_model(Aggregator::TransMil, 12);
    let a = train_fold(train, val, &m, &cfg, 3).unwrap();
    let b = train_fold(train, val, &m, &cfg, 3).unwrap();
    let bits = |r: &spatial_mil::train::EpochRecord| {
        [r.lr, r.mean_train_loss, r.val_msi_auc, r.val_mss_spec, r.val_hyper_auc].map(f64::to_bits)
    };
    assert_eq!(a.trace.iter().map(bits).collect::<Vec<_>>(), b.trace.iter().map(bits).collect::<Vec<_>>());
    assert!(a.trace.iter().all(|r| r.val_msi_auc.is_finite()));
    assert_eq!(a.best, b.best);

    let best = a.best_record().val_msi_auc;
    let max = a.trace.iter().map(|r| r.val_msi_auc).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(best, max);
    let first_max = a.trace.iter().position(|r| r.val_msi_auc == max).unwrap();
    assert_eq!(a.best_epoch, first_max + 1);

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("trace.csv");
    write_trace_csv(&p, &a.trace).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.starts_with("epoch,lr,mean_train_loss,val_msi_auc,val_mss_spec,val_hyper_auc\n"));
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn single_class_training_split_is_config_error() {
    let cohort: Cohort = small_cohort(10, 3).into_iter().filter(|s| !s.labels.msi).collect();
    let r = train_fold(&cohort, &cohort, &small_model(Aggregator::Abmil, 12), &TrainConfig::default(), 0);
    assert!(matches!(r, Err(spatial_mil::Error::Config(_))));
}

#[test]
fn schedule_examples() {
    let cfg = TrainConfig { lr_base: 1e-3, epochs: 10, warmup_epochs: 2, ..TrainConfig::default() };
    let spe = 5;
    assert_eq!(lr_at(9, spe, &cfg).unwrap(), 1e-3);
    // Anneal spans steps 10..50; t = 0.5 at step 30.
    assert!((lr_at(30, spe, &cfg).unwrap() - 5e-4).abs() < 1e-18);
    assert!(lr_at(50, spe, &cfg).unwrap().abs() < 1e-15);
    assert!(lr_at(0, 0, &cfg).is_err());
}

#[test]
fn subsampling_contract() {
    let mut rng = stream_rng(1, Stream::Epoch, 0, 0);
    assert!(subsample_indices(800, 4000, &mut rng).is_none());
    let idx = subsample_indices(6000, 4000, &mut rng).unwrap();
    assert_eq!(idx.len(), 4000);
    assert!(idx.windows(2).all(|w| w[0] < w[1]));
    let again = subsample_indices(6000, 4000, &mut stream_rng(1, Stream::Epoch, 0, 0));
    let first = subsample_indices(6000, 4000, &mut stream_rng(1, Stream::Epoch, 0, 0));
    assert_eq!(again, first);
    let other = subsample_indices(6000, 4000, &mut stream_rng(1, Stream::Epoch, 0, 1));
    assert_ne!(first, other);

    let bag = &small_cohort(4, 0)[0].bag;
    let sub = subsample_tiles(bag, 10, &mut stream_rng(0, Stream::Epoch, 0, 0));
    assert_eq!(sub.n_tiles(), 10);
    let same = subsample_tiles(bag, 1000, &mut rng);
    assert_eq!(&same, bag);
}

proptest! {
    #[test]
    fn schedule_is_monotone_by_phase(epochs in 1usize..12, warm in 0usize..4, spe in 1usize..9) {
        let warm = warm.min(epochs);
        let cfg = TrainConfig { lr_base: 2e-4, epochs, warmup_epochs: warm, ..TrainConfig::default() };
        let ws = warm * spe;
        let lrs: Vec<f64> = (0..=epochs * spe).map(|s| lr_at(s, spe, &cfg).unwrap()).collect();
        for s in 1..lrs.len() {
            if s < ws {
                prop_assert!(lrs[s] >= lrs[s - 1]);
            } else if s > ws {
                prop_assert!(lrs[s] <= lrs[s - 1]);
            }
        }
        prop_assert!(lrs.iter().all(|&l| (0.0..=2e-4).contains(&l)));
    }

    #[test]
    fn clipping_bounds_global_norm(vals in prop::collection::vec(-100.0f64..100.0, 1..40), max in 0.01f64..10.0) {
        let split = vals.len() / 2;
        let mut grads = vec![
            Tensor::new(vec![split.max(1)], vals[..split.max(1)].to_vec()).unwrap(),
        ];
        if split + 1 < vals.len() {
            grads.push(Tensor::new(vec![vals.len() - split - 1], vals[split + 1..].to_vec()).unwrap());
        }
        let before = global_norm(&grads);
        let reported = clip_gradients(&mut grads, max);
        prop_assert_eq!(reported, before);
        let after = global_norm(&grads);
        prop_assert!(after <= max + 1e-9);
        if before <= max {
            prop_assert_eq!(after, before);
        }
    }
}
