use alphanet::data::{synthetic_dataset, Dataset, ToySpec};
use alphanet::encode::Normalization;
use alphanet::layers::{HeadKind, Param};
use alphanet::losses::{LossConfig, LossKind};
use alphanet::net::{NetOptions, Network, NetworkSpec, Structure};
use alphanet::train::{
    evaluate_top1, load_checkpoint, lr_schedule_update, multi_scale_scores, network_from_bytes, checkpoint_bytes,
    save_checkpoint, sgd_step, train, EvalMode, InputPipeline, TrainConfig, TrainOptions, TrainState,
};
use alphanet::{Error, Tensor};
use proptest::prelude::*;

fn param(v: f64, g: f64, decay: bool) -> Param<f64> {
    let mut p = Param::new("w", Tensor::from_f64([1], &[v]).unwrap(), decay);
    p.grad = Tensor::from_f64([1], &[g]).unwrap();
    p
}

fn plain_cfg(lr: f64, momentum: f64, wd: f64) -> TrainConfig {
    TrainConfig {
        lr0: lr,
        momentum,
        weight_decay: wd,
        ..TrainConfig::default()
    }
}

#[test]
fn decay_only_step() {
    let cfg = TrainConfig::default();
    let mut state = TrainState::new(&cfg);
    let mut p = param(1.0, 0.0, true);
    sgd_step(&mut [&mut p], &mut state, &cfg).unwrap();
    assert!((p.value.data()[0] - 0.999999).abs() < 1e-15);
}

#[test]
fn momentum_accumulates() {
    let cfg = plain_cfg(0.1, 0.9, 0.0);
    let mut state = TrainState::new(&cfg);
    let mut p = param(0.0, 1.0, true);
    for _ in 0..2 {
        sgd_step(&mut [&mut p], &mut state, &cfg).unwrap();
    }
    assert!((p.value.data()[0] + 0.29).abs() < 1e-15);
}

#[test]
fn decay_skipped_for_flagged_params() {
    let cfg = TrainConfig::default();
    let mut state = TrainState::new(&cfg);
    let mut p = param(1.0, 0.0, false);
    sgd_step(&mut [&mut p], &mut state, &cfg).unwrap();
    assert_eq!(p.value.data()[0], 1.0);
}

#[test]
fn non_finite_gradient_names_the_parameter() {
    let cfg = TrainConfig::default();
    let mut state = TrainState::new(&cfg);
    let mut p = param(1.0, 0.0, true);
    // from_f64 refuses NaN, so plant it directly
    p.grad = Tensor::full([1], f64::NAN);
    p.name = "block3/conv1/kernel".into();
    let err = sgd_step(&mut [&mut p], &mut state, &cfg).unwrap_err();
    assert!(err.to_string().contains("block3/conv1/kernel"), "{err}");
    assert_eq!(p.value.data()[0], 1.0);
}

proptest! {
    #[test]
    fn plain_sgd_is_gradient_descent(v in -10.0f64..10.0, g in -10.0f64..10.0, lr in 0.0f64..1.0) {
        let cfg = plain_cfg(lr, 0.0, 0.0);
        let mut state = TrainState::new(&cfg);
        let mut p = param(v, g, true);
        sgd_step(&mut [&mut p], &mut state, &cfg).unwrap();
        prop_assert_eq!(p.value.data()[0], v - lr * g);
    }

    #[test]
    fn lr_tracks_reductions(errors in proptest::collection::vec(0.0f64..1.0, 0..60)) {
        let cfg = TrainConfig::default();
        let mut state = TrainState::<f64>::new(&cfg);
        for e in errors {
            lr_schedule_update(&mut state, e, &cfg);
            prop_assert!(state.reductions_done <= 3);
            prop_assert_eq!(state.lr, cfg.lr0 / 10f64.powi(state.reductions_done as i32));
        }
    }
}

#[test]
fn plateau_schedule() {
    let cfg = TrainConfig::default();
    let mut state = TrainState::<f64>::new(&cfg);
    for k in 0..10 {
        lr_schedule_update(&mut state, 0.9 - 0.05 * k as f64, &cfg);
    }
    assert_eq!(state.lr, 0.01);
    for _ in 0..cfg.plateau.patience {
        lr_schedule_update(&mut state, 0.9, &cfg);
    }
    assert_eq!(state.lr, 0.001);
    for _ in 0..100 {
        lr_schedule_update(&mut state, 0.9, &cfg);
    }
    assert_eq!(state.reductions_done, 3);
    assert_eq!(state.lr, 0.01 / 1000.0);
}

fn toy(classes: usize, per_class: usize) -> Dataset {
    synthetic_dataset(
        ToySpec {
            classes,
            per_class,
            channels: 3,
            size: 8,
            noise: 8.0,
        },
        4,
    )
    .unwrap()
}

fn micro_net(classes: usize, loss: LossKind) -> Network<f64> {
    let opts = NetOptions {
        width: 4,
        head: if loss.uses_cosine() { HeadKind::Cosine } else { HeadKind::Affine },
        ..NetOptions::default()
    };
    Network::build(NetworkSpec::micro(Structure::Alpha, &[1, 1], classes, 3, opts).unwrap()).unwrap()
}

fn quick_cfg(loss: LossKind, epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        max_epochs: epochs,
        loss: LossConfig::new(loss),
        precision: alphanet::Precision::F64,
        ..TrainConfig::default()
    }
}

fn values(net: &mut Network<f64>) -> Vec<(String, Vec<f64>)> {
    net.named_params_mut().into_iter().map(|(n, p)| (n, p.value.to_f64_vec())).collect()
}

#[test]
fn zero_rate_leaves_parameters_alone() {
    let ds = toy(2, 4);
    let pipe = InputPipeline::fit(Normalization::Zscore, &ds).unwrap();
    let mut net = micro_net(2, LossKind::Softmax);
    let before = values(&mut net);
    let cfg = TrainConfig {
        lr0: 0.0,
        ..quick_cfg(LossKind::Softmax, 1)
    };
    train(&mut net, &ds, None, &pipe, &cfg, &TrainOptions::default()).unwrap();
    assert_eq!(values(&mut net), before);
}

#[test]
fn single_class_is_always_right() {
    let ds = toy(1, 1);
    let pipe = InputPipeline::fit(Normalization::Alpha, &ds).unwrap();
    let mut net = micro_net(1, LossKind::AmSoftmaxLinear);
    let out = train(&mut net, &ds, None, &pipe, &quick_cfg(LossKind::AmSoftmaxLinear, 2), &TrainOptions::default()).unwrap();
    assert_eq!(out.train_top1, Some(1.0));
}

#[test]
fn loss_decreases_on_tiny_set() {
    let ds = toy(2, 4);
    let pipe = InputPipeline::fit(Normalization::Zscore, &ds).unwrap();
    let mut net = micro_net(2, LossKind::AmSoftmaxLinear);
    let out = train(&mut net, &ds, None, &pipe, &quick_cfg(LossKind::AmSoftmaxLinear, 20), &TrainOptions::default()).unwrap();
    let losses: Vec<f64> = out.state.history.iter().map(|r| r.train_loss).collect();
    assert_eq!(losses.len(), 20);
    // noisy per epoch; compare the first and last quarters
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    assert!(mean(&losses[15..]) < 0.5 * mean(&losses[..5]), "{losses:?}");
    assert!(losses[19] < losses[0], "{losses:?}");
}

#[test]
fn runs_are_reproducible_and_history_is_written() {
    let ds = toy(3, 4);
    let pipe = InputPipeline::fit(Normalization::Log, &ds).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let mut net = micro_net(3, LossKind::AmSoftmax);
        let opts = TrainOptions {
            history_csv: Some(dir.path().join(name)),
            augment: Some(alphanet::data::AugmentConfig {
                resize_range: (8, 10),
                crop_size: 8,
                hflip_prob: 0.5,
                jitter: 0.05,
                pca: None,
            }),
            ..TrainOptions::default()
        };
        train(&mut net, &ds, None, &pipe, &quick_cfg(LossKind::AmSoftmax, 3), &opts).unwrap();
        std::fs::read_to_string(dir.path().join(name)).unwrap()
    };
    let a = run("a.csv");
    assert_eq!(a, run("b.csv"));
    assert!(a.starts_with("epoch,train_loss,val_error,lr\n"));
    assert_eq!(a.lines().count(), 4);
}

#[test]
fn accumulation_must_divide_batch() {
    let ds = toy(2, 4);
    let pipe = InputPipeline::fit(Normalization::Alpha, &ds).unwrap();
    let mut net = micro_net(2, LossKind::Softmax);
    let mut cfg = quick_cfg(LossKind::Softmax, 1);
    cfg.accumulation = 3;
    assert!(matches!(
        train(&mut net, &ds, None, &pipe, &cfg, &TrainOptions::default()),
        Err(Error::Config(_))
    ));
    cfg.accumulation = 2;
    assert!(train(&mut net, &ds, None, &pipe, &cfg, &TrainOptions::default()).is_ok());
}

#[test]
fn nan_aborts_and_keeps_last_good_checkpoint() {
    let ds = toy(2, 4);
    let pipe = InputPipeline::fit(Normalization::Zscore, &ds).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("net.ckpt");
    let opts = TrainOptions {
        checkpoint: Some(ckpt.clone()),
        ..TrainOptions::default()
    };
    let mut net = micro_net(2, LossKind::Softmax);
    let cfg = quick_cfg(LossKind::Softmax, 2);
    train(&mut net, &ds, None, &pipe, &cfg, &opts).unwrap();
    let good = std::fs::read(&ckpt).unwrap();

    let mut poisoned = ds.clone();
    poisoned.samples[0].image.data_mut()[0] = f32::NAN;
    let before = values(&mut net);
    let err = train(&mut net, &poisoned, None, &pipe, &cfg, &opts).unwrap_err();
    assert!(err.is_numeric(), "{err}");
    assert_eq!(values(&mut net), before);
    assert_eq!(std::fs::read(&ckpt).unwrap(), good);
}

#[test]
fn checkpoint_round_trip() {
    let ds = toy(3, 2);
    let pipe = InputPipeline::fit(Normalization::Zscore, &ds).unwrap();
    let mut net = micro_net(3, LossKind::AmSoftmaxLinear);
    train(&mut net, &ds, None, &pipe, &quick_cfg(LossKind::AmSoftmaxLinear, 2), &TrainOptions::default()).unwrap();
    let mut back: Network<f64> = network_from_bytes(&checkpoint_bytes(&net)).unwrap();
    let loss = LossConfig::new(LossKind::AmSoftmaxLinear);
    let single = EvalMode::Single;
    let img = &ds.samples[0].image;
    assert_eq!(
        multi_scale_scores(&mut net, img, &[8], &pipe, &loss).unwrap(),
        multi_scale_scores(&mut back, img, &[8], &pipe, &loss).unwrap()
    );
    assert_eq!(
        evaluate_top1(&mut net, &ds, &pipe, &single, &loss).unwrap(),
        evaluate_top1(&mut back, &ds, &pipe, &single, &loss).unwrap()
    );

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f32.ckpt");
    let small: Network<f32> = network_from_bytes(&checkpoint_bytes(&net)).unwrap();
    save_checkpoint(&small, &path).unwrap();
    let again: Network<f32> = load_checkpoint(&path).unwrap();
    assert_eq!(checkpoint_bytes(&again), checkpoint_bytes(&small));

    let mut bytes = checkpoint_bytes(&net);
    bytes.pop();
    assert!(network_from_bytes::<f64>(&bytes).is_err());
}

#[test]
fn evaluation_modes_agree_where_they_should() {
    let ds = toy(2, 3);
    let pipe = InputPipeline::fit(Normalization::Zscore, &ds).unwrap();
    let mut net = warmed(&ds, &pipe);
    let loss = LossConfig::new(LossKind::Softmax);
    let img = &ds.samples[1].image;
    let once = multi_scale_scores(&mut net, img, &[12], &pipe, &loss).unwrap();
    let twice = multi_scale_scores(&mut net, img, &[12, 12], &pipe, &loss).unwrap();
    for (a, b) in once.iter().zip(&twice) {
        assert!((a - b).abs() < 1e-15);
    }
    let native = multi_scale_scores(&mut net, img, &[8], &pipe, &loss).unwrap();
    let batch = alphanet::train::predict(&mut net, std::slice::from_ref(img), &pipe, &EvalMode::Single, &loss).unwrap();
    assert_eq!(native, batch[0]);
    assert!(multi_scale_scores(&mut net, img, &[1], &pipe, &loss).is_err());
    for m in [EvalMode::Single, EvalMode::TenCrop(6), EvalMode::MultiScale(vec![8, 16])] {
        let t = evaluate_top1(&mut net, &ds, &pipe, &m, &loss).unwrap();
        assert!((0.0..=1.0).contains(&t));
    }
    let empty = Dataset { samples: vec![], ..ds.clone() };
    assert!(evaluate_top1(&mut net, &empty, &pipe, &EvalMode::Single, &loss).is_err());
}

#[test]
fn ten_crop_average_is_mean_of_crops() {
    let ds = toy(2, 1);
    let pipe = InputPipeline::fit(Normalization::Zscore, &ds).unwrap();
    let mut net = warmed(&ds, &pipe);
    let loss = LossConfig::new(LossKind::Softmax);
    let img = ds.samples[0].image.clone();
    let avg = alphanet::train::predict(&mut net, std::slice::from_ref(&img), &pipe, &EvalMode::TenCrop(6), &loss).unwrap();
    let crops = alphanet::data::ten_crop(&img, 6).unwrap();
    let each = alphanet::train::predict(&mut net, &crops, &pipe, &EvalMode::Single, &loss).unwrap();
    for k in 0..2 {
        let mean: f64 = each.iter().map(|p| p[k]).sum::<f64>() / 10.0;
        assert!((mean - avg[0][k]).abs() < 1e-12);
    }
}

/// One epoch so batch-norm running statistics exist.
fn warmed(ds: &Dataset, pipe: &InputPipeline) -> Network<f64> {
    let mut net = micro_net(2, LossKind::Softmax);
    train(&mut net, ds, None, pipe, &quick_cfg(LossKind::Softmax, 1), &TrainOptions::default()).unwrap();
    net
}
