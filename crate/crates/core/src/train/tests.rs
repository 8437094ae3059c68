use super::*;
use crate::data::{generate_synthetic, MultimodalSample, Preprocessor, SyntheticSpec};
use crate::embed::StopWords;
use crate::error::EtmaError;

fn tiny_config() -> TrainConfig {
    TrainConfig {
        image_size: (8, 8, 3),
        patch: 4,
        dim: 8,
        heads: 2,
        visual_layers: 1,
        text_layers: 1,
        mlp_ratio: 2,
        joint_dim: 8,
        n_max: 6,
        batch_size: 8,
        eval_batch_size: 16,
        learning_rate: 0.01,
        epochs: 6,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn tiny_data() -> Vec<MultimodalSample> {
    let spec = SyntheticSpec {
        n_samples: 48,
        image_size: [8, 8, 3],
        distractors: 2,
        ..SyntheticSpec::default()
    };
    generate_synthetic(&spec).unwrap()
}

fn setup(data: &[MultimodalSample]) -> (Vec<&MultimodalSample>, Vec<&MultimodalSample>, Preprocessor) {
    let train: Vec<&MultimodalSample> = data[..40].iter().collect();
    let val: Vec<&MultimodalSample> = data[40..].iter().collect();
    let pre = Preprocessor::fit(&train, 6, 1, StopWords::default()).unwrap();
    (train, val, pre)
}

#[test]
fn zero_epochs_returns_the_initial_model() {
    let data = tiny_data();
    let (train, val, pre) = setup(&data);
    let mut cfg = tiny_config();
    cfg.epochs = 0;
    let out = fit(&cfg, &pre, &train, &val, &mut |_| {}).unwrap();
    assert!(out.report.epochs.is_empty());
    assert_eq!(out.report.selected_epoch, None);
    assert_eq!(out.best.header.epoch, 0);
    let init = init_model(&cfg, &pre).unwrap();
    assert_eq!(out.best.model.params().flatten(), init.params().flatten());
}

#[test]
fn training_loss_drops_below_the_first_epoch() {
    let data = tiny_data();
    let (train, val, pre) = setup(&data);
    let mut seen = 0;
    let out = fit(&tiny_config(), &pre, &train, &val, &mut |_| seen += 1).unwrap();
    assert_eq!(seen, 6);
    let first = out.report.epochs[0].train_loss;
    let last = out.report.epochs.last().unwrap().train_loss;
    assert!(last < first, "{first} -> {last}");
    let sel = out.report.selected().unwrap();
    assert!(out.report.epochs.iter().all(|r| r.val_acc <= sel.val_acc));
    assert_eq!(out.best.header.val_accuracy, Some(sel.val_acc));
}

#[test]
fn fitting_is_deterministic_in_the_seed() {
    let data = tiny_data();
    let (train, val, pre) = setup(&data);
    let cfg = tiny_config();
    let a = fit(&cfg, &pre, &train, &val, &mut |_| {}).unwrap();
    let b = fit(&cfg, &pre, &train, &val, &mut |_| {}).unwrap();
    assert_eq!(a.best.to_bytes().unwrap(), b.best.to_bytes().unwrap());
    assert_eq!(a.report.without_timing(), b.report.without_timing());
    let mut other = cfg.clone();
    other.seed += 1;
    let c = fit(&other, &pre, &train, &val, &mut |_| {}).unwrap();
    assert_ne!(a.best.model.params().flatten(), c.best.model.params().flatten());
}

#[test]
fn checkpoint_roundtrip_is_bitwise() {
    let data = tiny_data();
    let (train, val, pre) = setup(&data);
    let mut cfg = tiny_config();
    cfg.epochs = 1;
    let ck = fit(&cfg, &pre, &train, &val, &mut |_| {}).unwrap().best;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.etma");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.to_bytes().unwrap(), ck.to_bytes().unwrap());
    assert_eq!(back.header.config_hash, cfg.hash());
    assert_eq!(back.header.preprocess_hash, preprocess_hash(&pre));
    assert_eq!(back.config, cfg);
    let before = evaluate_samples(&ck.model, &ck.preprocessor, &val, 4).unwrap();
    let after = evaluate_samples(&back.model, &back.preprocessor, &val, 4).unwrap();
    assert_eq!(before.probs, after.probs);
}

#[test]
fn damaged_checkpoints_are_format_errors() {
    let data = tiny_data();
    let (_, _, pre) = setup(&data);
    let cfg = tiny_config();
    let ck = Checkpoint::new(init_model(&cfg, &pre).unwrap(), cfg, pre, 0, None);
    let bytes = ck.to_bytes().unwrap();
    for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
        assert!(
            matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(EtmaError::Format { .. })),
            "cut at {cut}"
        );
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(Checkpoint::from_bytes(&extra), Err(EtmaError::Format { .. })));
    let mut wrong_magic = bytes;
    wrong_magic[0] = b'X';
    assert!(matches!(
        Checkpoint::from_bytes(&wrong_magic),
        Err(EtmaError::Format { .. })
    ));
}

#[test]
fn non_finite_loss_names_the_epoch_and_batch() {
    let data = tiny_data();
    let (train, val, pre) = setup(&data);
    let cfg = tiny_config();
    let mut model = init_model(&cfg, &pre).unwrap();
    let id = model.head.linear.weight;
    model.params_mut().value_mut(id).data_mut()[0] = f64::NAN;
    match fit_model(model, &cfg, &pre, &train, &val, &mut |_| {}) {
        Err(EtmaError::Numeric(msg)) => assert!(msg.contains("epoch 1, batch 1"), "{msg}"),
        other => panic!("{:?}", other.map(|o| o.report)),
    }
}

#[test]
fn evaluation_is_independent_of_chunking_and_threads() {
    let data = tiny_data();
    let (train, _, pre) = setup(&data);
    let model = init_model(&tiny_config(), &pre).unwrap();
    let a = evaluate_samples(&model, &pre, &train, 40).unwrap();
    let b = evaluate_samples(&model, &pre, &train, 3).unwrap();
    assert_eq!(a.probs, b.probs);
    assert_eq!(a.vs_weights, b.vs_weights);
    assert_eq!(a.predicted().len(), 40);
}
