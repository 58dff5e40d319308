mod common;

use moefuse::data::{generate_synthetic, Dataset, SynthSpec};
use moefuse::metrics::eer;
use moefuse::pipeline::score_dataset;
use moefuse::train::{train, train_with, TrainConfig};
use moefuse::{Error, MoeConfig, MoeFusionModel};

fn dataset(n: usize, t: usize, s: usize, seed: u64, delta: f64) -> Dataset {
    let spec = SynthSpec {
        n_per_class: n,
        frames: t,
        feature_dim: s,
        seed,
        delta,
        ..SynthSpec::default()
    };
    Dataset::new(generate_synthetic(&spec).unwrap()).unwrap()
}

fn small_model(t: usize, s: usize, seed: u64) -> MoeFusionModel {
    MoeFusionModel::init(MoeConfig::new(2, 2, 8).with_geometry(t, s), 8, seed).unwrap()
}

fn cfg(max_epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        lr_base: lr,
        max_epochs,
        warmup_epochs: 1,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn same_seed_gives_identical_runs() {
    let ds = dataset(12, 4, 4, 1, 4.0);
    let a = train(small_model(4, 4, 9), &ds, &cfg(4, 1e-3)).unwrap();
    let b = train(small_model(4, 4, 9), &ds, &cfg(4, 1e-3)).unwrap();
    assert_eq!(a.loss_log(), b.loss_log());
    assert_eq!(a.best.to_bytes(), b.best.to_bytes());
    let c = train(
        small_model(4, 4, 9),
        &ds,
        &TrainConfig {
            seed: 4,
            ..cfg(4, 1e-3)
        },
    )
    .unwrap();
    assert_ne!(a.loss_log(), c.loss_log());
}

#[test]
fn training_never_touches_features() {
    let ds = dataset(6, 3, 4, 2, 4.0);
    let before = ds.clone();
    train(small_model(3, 4, 1), &ds, &cfg(2, 1e-3)).unwrap();
    assert_eq!(ds, before);
}

#[test]
fn flat_loss_stops_after_patience() {
    // two utterances, one per batch: the epoch sum is order-independent
    let ds = dataset(1, 2, 3, 5, 4.0);
    // steps far below one ulp of any parameter leave the loss unchanged
    let flat = TrainConfig {
        batch_size: 1,
        ..cfg(20, 1e-300)
    };
    let mut seen = Vec::new();
    let out = train_with(small_model(2, 3, 2), &ds, &flat, |s| seen.push(s.improved)).unwrap();
    assert_eq!(out.epochs_run, 4);
    assert!(out.stopped_early);
    assert_eq!(seen, vec![true, false, false, false]);
    assert_eq!(out.best.best_epoch, 0);
}

#[test]
fn checkpoint_keeps_best_epoch_parameters() {
    let ds = dataset(8, 3, 4, 6, 4.0);
    let out = train(small_model(3, 4, 3), &ds, &cfg(5, 1e-3)).unwrap();
    let log = out.loss_log();
    let best = out.best.best_epoch;
    assert!(log.iter().all(|&l| l >= log[best]));
}

#[test]
fn non_finite_loss_aborts_with_position() {
    let ds = dataset(4, 2, 3, 7, 4.0);
    let mut model = small_model(2, 3, 4);
    model.head.params_mut()[1].data_mut().fill(1.0);
    model.head.params_mut()[2].data_mut().fill(f64::MAX);
    match train(model, &ds, &cfg(3, 1e-3)) {
        Err(Error::NonFiniteLoss { epoch, batch }) => assert_eq!((epoch, batch), (1, 1)),
        other => panic!("expected non-finite loss, got {other:?}"),
    }
}

#[test]
fn geometry_mismatch_is_refused() {
    let ds = dataset(4, 2, 3, 8, 4.0);
    let err = train(small_model(2, 4, 1), &ds, &cfg(2, 1e-3)).unwrap_err();
    assert!(matches!(err, Error::Mismatch(_)), "{err}");
}

#[test]
fn no_signal_data_scores_at_chance() {
    let train_ds = dataset(60, 6, 6, 10, 0.0);
    let eval_ds = dataset(200, 6, 6, 11, 0.0);
    let out = train(small_model(6, 6, 5), &train_ds, &cfg(5, 1e-3)).unwrap();
    let trials = score_dataset(&out.best.model, &eval_ds).unwrap();
    let e = eer(&trials).unwrap().eer;
    assert!((e - 0.5).abs() <= 0.1, "{e}");
}

#[test]
fn scores_do_not_depend_on_batching() {
    let ds = dataset(10, 3, 4, 12, 4.0);
    let model = small_model(3, 4, 6);
    let together = score_dataset(&model, &ds).unwrap();
    for (i, t) in together.iter().enumerate() {
        let single = ds.batch(&[i]).unwrap();
        assert_eq!(
            model.scores(&single.features).unwrap()[0].to_bits(),
            t.score.to_bits()
        );
    }
}
