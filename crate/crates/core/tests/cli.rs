use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use etma::data::{generate_synthetic, write_dataset, Label, SyntheticSpec};

const TINY_CONFIG: &str = "\
image_size = 8x8x3
patch = 4
dim = 8
heads = 2
visual_layers = 1
text_layers = 1
mlp_ratio = 2
joint_dim = 8
n_max = 6
batch_size = 8
learning_rate = 0.01
epochs = 3
";

fn etma(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_etma"))
        .args(args.iter().map(|a| a.as_ref()))
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        fs::write(
            root.join("spec.json"),
            r#"{"n_samples": 48, "image_size": [8, 8, 3], "distractors": 2}"#,
        )
        .unwrap();
        fs::write(root.join("tiny.txt"), TINY_CONFIG).unwrap();
        Fixture { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn data(&self) -> PathBuf {
        let d = self.path("data");
        if !d.exists() {
            let out = etma(&[&"gen-data", &"--spec", &self.path("spec.json"), &"--out", &d]);
            assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        }
        d
    }

    fn trained(&self) -> PathBuf {
        let t = self.path("train");
        if !t.exists() {
            let out = etma(&[
                &"train",
                &"--config",
                &self.path("tiny.txt"),
                &"--data",
                &self.data(),
                &"--out",
                &t,
            ]);
            assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        }
        t.join("checkpoint.etma")
    }
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    for sub in [dir.to_path_buf(), dir.join("images")] {
        for e in fs::read_dir(&sub).unwrap() {
            let p = e.unwrap().path();
            if p.is_file() {
                files.push((
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn gen_data_is_reproducible_and_guards_its_output() {
    let f = Fixture::new();
    let a = f.data();
    let b = f.path("again");
    assert_eq!(
        code(&etma(&[&"gen-data", &"--spec", &f.path("spec.json"), &"--out", &b])),
        0
    );
    let files = read_dir_bytes(&a);
    assert_eq!(files, read_dir_bytes(&b));
    assert!(files.iter().any(|(n, _)| n == "manifest.csv"));
    assert!(files.iter().any(|(n, _)| n == "spec.json-lines"));
    assert_eq!(files.iter().filter(|(n, _)| n.ends_with(".ppm")).count(), 48);

    let refused = etma(&[&"gen-data", &"--spec", &f.path("spec.json"), &"--out", &a]);
    assert_eq!(code(&refused), 2);
    assert!(String::from_utf8_lossy(&refused.stderr).contains("--force"));
    let forced = etma(&[
        &"gen-data",
        &"--spec",
        &f.path("spec.json"),
        &"--out",
        &a,
        &"--force",
        &"--seed",
        &"9",
    ]);
    assert_eq!(code(&forced), 0);
    assert!(stdout(&forced).contains("seed: 9"));
    assert_ne!(read_dir_bytes(&a), files);
}

#[test]
fn bad_inputs_exit_with_usage_code() {
    let f = Fixture::new();
    assert_eq!(code(&etma(&[&"gen-data", &"--out", &f.path("x")])), 2);
    assert_eq!(
        code(&etma(&[
            &"gen-data",
            &"--spec",
            &f.path("missing.json"),
            &"--out",
            &f.path("x")
        ])),
        2
    );
    fs::write(f.path("broken.json"), "{not json").unwrap();
    assert_eq!(
        code(&etma(&[
            &"gen-data",
            &"--spec",
            &f.path("broken.json"),
            &"--out",
            &f.path("x")
        ])),
        2
    );
    fs::write(f.path("odd.json"), r#"{"n_samples": 10, "quadrants": 3}"#).unwrap();
    assert_eq!(
        code(&etma(&[
            &"gen-data",
            &"--spec",
            &f.path("odd.json"),
            &"--out",
            &f.path("x")
        ])),
        2
    );
    assert_eq!(
        code(&etma(&[
            &"train",
            &"--data",
            &f.data(),
            &"--out",
            &f.path("t"),
            &"--variant",
            &"nope"
        ])),
        2
    );
    // desk preset expects 32x32 images
    assert_eq!(
        code(&etma(&[&"train", &"--data", &f.data(), &"--out", &f.path("t")])),
        2
    );
}

#[test]
fn train_writes_artifacts_and_eval_reproduces_val_accuracy() {
    let f = Fixture::new();
    let ck = f.trained();
    let dir = ck.parent().unwrap();
    for name in [
        "checkpoint.etma",
        "report.json-lines",
        "curves.csv",
        "config.txt",
        "vocab.txt",
    ] {
        assert!(dir.join(name).is_file(), "{name}");
    }
    let report = fs::read_to_string(dir.join("report.json-lines")).unwrap();
    let epochs: Vec<serde_json::Value> = report.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(epochs.len(), 3);
    let best = epochs
        .iter()
        .map(|e| e["val_acc"].as_f64().unwrap())
        .fold(f64::MIN, f64::max);

    let out = etma(&[
        &"eval",
        &"--checkpoint",
        &ck,
        &"--data",
        &f.data(),
        &"--split",
        &"val",
        &"--out",
        &f.path("ev"),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("seed: 0"));
    let metrics = fs::read_to_string(f.path("ev/metrics.json-lines")).unwrap();
    let rec: serde_json::Value = serde_json::from_str(metrics.lines().next().unwrap()).unwrap();
    assert_eq!(rec["accuracy"].as_f64().unwrap(), best);
    for name in ["metrics.csv", "roc.csv", "pr.csv"] {
        assert!(f.path("ev").join(name).is_file(), "{name}");
    }
}

#[test]
fn eval_rejects_incompatible_data() {
    let f = Fixture::new();
    let ck = f.trained();
    fs::write(f.path("big.json"), r#"{"n_samples": 48, "image_size": [16, 16, 3]}"#).unwrap();
    assert_eq!(
        code(&etma(&[
            &"gen-data",
            &"--spec",
            &f.path("big.json"),
            &"--out",
            &f.path("big")
        ])),
        0
    );
    let out = etma(&[
        &"eval",
        &"--checkpoint",
        &ck,
        &"--data",
        &f.path("big"),
        &"--out",
        &f.path("ev"),
    ]);
    assert_eq!(code(&out), 4);

    fs::write(f.path("garbage.etma"), b"not a checkpoint").unwrap();
    let out = etma(&[
        &"eval",
        &"--checkpoint",
        &f.path("garbage.etma"),
        &"--data",
        &f.data(),
        &"--out",
        &f.path("ev2"),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn single_class_eval_warns_and_omits_auc() {
    let f = Fixture::new();
    let ck = f.trained();
    let spec = SyntheticSpec {
        n_samples: 48,
        image_size: [8, 8, 3],
        distractors: 2,
        ..SyntheticSpec::default()
    };
    let mut samples = generate_synthetic(&spec).unwrap();
    for s in &mut samples {
        s.label = Label::Real;
    }
    write_dataset(&f.path("onesided"), &samples, None).unwrap();
    let out = etma(&[
        &"eval",
        &"--checkpoint",
        &ck,
        &"--data",
        &f.path("onesided"),
        &"--out",
        &f.path("ev"),
    ]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("warning"));
    let metrics = fs::read_to_string(f.path("ev/metrics.json-lines")).unwrap();
    assert!(metrics.contains("\"warning\""));
    assert!(!metrics.lines().next().unwrap().contains("\"roc_auc\":0"));
    assert!(!f.path("ev/roc.csv").exists());
}

#[test]
fn bench_reports_both_latencies() {
    let f = Fixture::new();
    let out = etma(&[
        &"bench",
        &"--config",
        &f.path("tiny.txt"),
        &"--data",
        &f.data(),
        &"--out",
        &f.path("b"),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let json = fs::read_to_string(f.path("b/timing.json-lines")).unwrap();
    let rec: serde_json::Value = serde_json::from_str(json.trim()).unwrap();
    for key in ["feature_formulation_ms_per_sample", "testing_ms_per_sample"] {
        assert!(rec[key]["mean"].as_f64().unwrap() > 0.0, "{key}");
    }
    assert_eq!(rec["trials"], 30);
    assert!(stdout(&out).contains(etma::bench::TimingReport::CSV_HEADER));

    let ck = f.trained();
    let few = etma(&[&"bench", &"--checkpoint", &ck, &"--data", &f.data(), &"--trials", &"5"]);
    assert_eq!(code(&few), 2);
}

#[test]
fn viz_attn_writes_heatmap_tokens_and_prediction() {
    let f = Fixture::new();
    let ck = f.trained();
    let out = etma(&[
        &"viz-attn",
        &"--checkpoint",
        &ck,
        &"--data",
        &f.data(),
        &"--sample-id",
        &"s00003",
        &"--out",
        &f.path("v"),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("predicted"));
    let pgm = fs::read(f.path("v/heatmap.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n8 8\n255\n"));
    assert_eq!(pgm.len(), b"P5\n8 8\n255\n".len() + 64);
    assert!(pgm.contains(&255));
    let alpha = fs::read_to_string(f.path("v/alpha.csv")).unwrap();
    let sum: f64 = alpha
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((sum - 1.0).abs() < 1e-12);
    let tokens = fs::read_to_string(f.path("v/tokens.csv")).unwrap();
    assert!(tokens.starts_with("position,word,token,saliency\n0,[CLS],[CLS],"));

    let missing = etma(&[
        &"viz-attn",
        &"--checkpoint",
        &ck,
        &"--data",
        &f.data(),
        &"--sample-id",
        &"nope",
        &"--out",
        &f.path("v2"),
    ]);
    assert_eq!(code(&missing), 2);
}

#[test]
fn ablate_covers_every_variant() {
    let f = Fixture::new();
    let cfg = f.path("one_epoch.txt");
    fs::write(&cfg, TINY_CONFIG.replace("epochs = 3", "epochs = 1")).unwrap();
    let out = etma(&[
        &"ablate",
        &"--config",
        &cfg,
        &"--data",
        &f.data(),
        &"--out",
        &f.path("ab"),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(f.path("ab/ablation.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("variant,data"));
    assert_eq!(csv.lines().count(), 8);
    assert_eq!(
        fs::read_to_string(f.path("ab/ablation.json-lines"))
            .unwrap()
            .lines()
            .count(),
        7
    );
}
