use super::*;
use crate::data::{generate_synthetic, Preprocessor, SyntheticSpec};
use crate::embed::StopWords;
use crate::error::EtmaError;
use crate::model::{AblationVariant, Batch, EtmaModel, ModelConfig};
use crate::tensor::Rng;
use crate::train::TrainConfig;

fn single_batches(n: usize) -> (EtmaModel, Vec<Batch>) {
    let spec = SyntheticSpec {
        n_samples: 8,
        image_size: [8, 8, 3],
        distractors: 2,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic(&spec).unwrap();
    let refs: Vec<_> = data.iter().collect();
    let pre = Preprocessor::fit(&refs, 6, 1, StopWords::default()).unwrap();
    let cfg = ModelConfig::toy(pre.vocab.size());
    let model = EtmaModel::build(&cfg, AblationVariant::Full, &mut Rng::new(1)).unwrap();
    let batches = refs.iter().take(n).map(|s| pre.batch(&[s], None)).collect();
    (model, batches)
}

#[test]
fn percentiles_use_nearest_rank() {
    let xs: Vec<f64> = (1..=100).map(f64::from).collect();
    let s = LatencyStats::from_samples(&xs).unwrap();
    assert_eq!((s.p50, s.p95), (50.0, 95.0));
    assert!((s.mean - 50.5).abs() < 1e-12);
    let one = LatencyStats::from_samples(&[3.0]).unwrap();
    assert_eq!((one.mean, one.p50, one.p95), (3.0, 3.0, 3.0));
    assert!(LatencyStats::from_samples(&[]).is_none());
}

#[test]
fn timing_report_structure() {
    let (model, batches) = single_batches(3);
    let r = time_model(&model, &batches, MIN_TRIALS, 5).unwrap();
    assert_eq!((r.trials, r.warmup), (MIN_TRIALS, 5));
    for s in [r.feature_formulation_ms_per_sample, r.testing_ms_per_sample] {
        assert!(s.mean > 0.0 && s.p50 <= s.p95);
    }
    // per-trial containment carries over to every order statistic
    assert!(r.testing_ms_per_sample.p50 >= r.feature_formulation_ms_per_sample.p50);
    assert!(r.testing_ms_per_sample.mean >= r.feature_formulation_ms_per_sample.mean);
    assert!(r.machine_note.contains("preprocessing"));
    let csv = r.to_csv();
    assert_eq!(csv.lines().count(), 2);
    assert_eq!(
        csv.lines().nth(1).unwrap().split(',').count(),
        TimingReport::CSV_HEADER.split(',').count()
    );
    let back: TimingReport = serde_json::from_str(&r.to_json_line().unwrap()).unwrap();
    assert_eq!(back, r);
}

#[test]
fn timing_rejects_bad_requests() {
    let (model, batches) = single_batches(2);
    assert!(matches!(time_model(&model, &[], 30, 0), Err(EtmaError::Contract(_))));
    assert!(matches!(time_model(&model, &batches, 29, 0), Err(EtmaError::Config(_))));
}

#[test]
fn ablation_table_layout() {
    let mut t = AblationTable::default();
    let col: Vec<_> = AblationVariant::ALL
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, i as f64 / 10.0))
        .collect();
    t.add_column("synthetic", &col).unwrap();
    t.add_column("other", &col).unwrap();
    let csv = t.to_csv();
    let labels: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(
        labels,
        [
            "full",
            "no_self_attn",
            "no_vs_attn",
            "no_visual_encoder",
            "no_text_encoder",
            "text_only",
            "image_only"
        ]
    );
    assert_eq!(csv.lines().next(), Some("variant,synthetic,other"));
    assert_eq!(t.to_json_lines().unwrap().lines().count(), 14);
    assert_eq!(t.accuracy(AblationVariant::NoVsAttn, 1), Some(0.2));
    assert!(t.add_column("short", &col[..3]).is_err());
}

#[test]
fn ablation_suite_runs_every_variant_on_one_split() {
    let spec = SyntheticSpec {
        n_samples: 48,
        image_size: [8, 8, 3],
        distractors: 2,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic(&spec).unwrap();
    let cfg = TrainConfig {
        image_size: (8, 8, 3),
        patch: 4,
        dim: 8,
        heads: 2,
        visual_layers: 1,
        text_layers: 1,
        mlp_ratio: 2,
        joint_dim: 8,
        n_max: 6,
        epochs: 1,
        ..TrainConfig::default()
    };
    let mut seen = Vec::new();
    let t = run_ablation_suite(&cfg, "toy", &data, &mut |v, r| seen.push((v, r.epoch))).unwrap();
    assert_eq!(t.rows.len(), 7);
    assert_eq!(seen.len(), 7);
    assert!(t
        .rows
        .iter()
        .all(|r| r.accuracy.len() == 1 && (0.0..=1.0).contains(&r.accuracy[0])));
    let again = run_ablation_suite(&cfg, "toy", &data, &mut |_, _| {}).unwrap();
    assert_eq!(t, again);
}
