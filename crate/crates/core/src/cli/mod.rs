//! Command-line front end. `main.rs` only parses arguments and maps the
//! returned error to an exit code; everything else lives here so it can be
//! driven from tests.

mod viz;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bench::{run_ablation_suite, time_model};
use crate::data::{
    generate_synthetic, load_dataset, write_dataset, MultimodalSample, Preprocessor, SyntheticSpec, IMAGE_DIR,
    MANIFEST_FILE, SPEC_FILE,
};
use crate::error::{EtmaError, Result};
use crate::fsutil;
use crate::metrics::{evaluate, pr_curve, roc_curve};
use crate::model::AblationVariant;
use crate::train::{evaluate_samples, fit, init_model, preprocess_hash, Checkpoint, TrainConfig};

pub use viz::{attention_map, AttentionMap};

pub const CHECKPOINT_FILE: &str = "checkpoint.etma";

#[derive(Debug, Parser)]
#[command(
    name = "etma",
    version,
    about = "Multilevel attention transformer for image/text consistency"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic cross-modal dataset.
    GenData(GenDataArgs),
    /// Train one variant and save the best checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on one split of a dataset.
    Eval(EvalArgs),
    /// Train and test every ablation variant on one split.
    Ablate(AblateArgs),
    /// Measure per-sample inference latency.
    Bench(BenchArgs),
    /// Dump region attention and token saliency for one sample.
    VizAttn(VizArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Generator spec as a JSON object.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `key = value` config file; the desk preset when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub variant: Option<AblationVariant>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// `train`, `val` or `test`.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Trained model to time.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    pub checkpoint: Option<PathBuf>,
    /// Time a freshly initialized model built from this config instead.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = crate::bench::MIN_TRIALS)]
    pub trials: usize,
    #[arg(long, default_value_t = 5)]
    pub warmup: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub variant: Option<AblationVariant>,
    /// Also write timing.json-lines and timing.csv here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct VizArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub sample_id: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

/// Runs one parsed command, logging progress to `log`.
pub fn run(cli: Cli, log: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(&a, log),
        Command::Train(a) => train(&a, log),
        Command::Eval(a) => eval(&a, log),
        Command::Ablate(a) => ablate(&a, log),
        Command::Bench(a) => bench(&a, log),
        Command::VizAttn(a) => viz::viz_attn(&a, log),
    }
}

macro_rules! say {
    ($log:expr, $($arg:tt)*) => {
        writeln!($log, $($arg)*).map_err(|e| EtmaError::io("<stdout>", e))?
    };
}
pub(crate) use say;

/// Creates `out`, refusing a non-empty directory unless `force` is set.
pub(crate) fn prepare_out(out: &Path, force: bool) -> Result<()> {
    if out.exists() {
        if !out.is_dir() {
            return Err(EtmaError::Config(format!(
                "{} exists and is not a directory",
                out.display()
            )));
        }
        let mut entries = std::fs::read_dir(out).map_err(|e| EtmaError::io(out, e))?;
        if entries.next().is_some() && !force {
            return Err(EtmaError::Config(format!(
                "output directory {} is not empty; pass --force to write into it",
                out.display()
            )));
        }
    }
    fsutil::create_dir_all(out)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fsutil::write_atomic(path, text.as_bytes())
}

fn resolve_config(path: Option<&Path>, seed: Option<u64>, variant: Option<AblationVariant>) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(v) = variant {
        cfg.variant = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn echo_config(log: &mut dyn Write, cfg: &TrainConfig) -> Result<()> {
    say!(log, "# resolved config");
    for line in cfg.to_text().lines() {
        say!(log, "  {line}");
    }
    say!(log, "seed: {}", cfg.seed);
    Ok(())
}

/// Fails with `make` unless every image has the configured shape.
fn check_images(
    samples: &[MultimodalSample],
    size: (usize, usize, usize),
    make: fn(String) -> EtmaError,
) -> Result<()> {
    let want = [size.0, size.1, size.2];
    match samples.iter().find(|s| s.image.shape() != want) {
        Some(s) => Err(make(format!(
            "image of sample {:?} has shape {:?}, the model expects {:?}",
            s.id,
            s.image.shape(),
            want
        ))),
        None => Ok(()),
    }
}

fn load_nonempty(dir: &Path) -> Result<Vec<MultimodalSample>> {
    let samples = load_dataset(dir)?;
    if samples.is_empty() {
        return Err(EtmaError::Config(format!("dataset {} has no samples", dir.display())));
    }
    Ok(samples)
}

pub fn gen_data(a: &GenDataArgs, log: &mut dyn Write) -> Result<()> {
    let text = fsutil::read_to_string(&a.spec)?;
    let mut spec: SyntheticSpec = serde_json::from_str(text.trim()).map_err(|e| EtmaError::Parse {
        source_name: a.spec.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    spec.validate()?;
    prepare_out(&a.out, a.force)?;
    say!(
        log,
        "spec: {}",
        serde_json::to_string(&spec).map_err(|e| EtmaError::Contract(e.to_string()))?
    );
    say!(log, "seed: {}", spec.seed);
    let samples = generate_synthetic(&spec)?;
    clear_dataset(&a.out)?;
    write_dataset(&a.out, &samples, Some(&spec))?;
    say!(log, "wrote {} samples to {}", samples.len(), a.out.display());
    Ok(())
}

/// Removes a previous dataset's files so a rerun leaves no stale images.
fn clear_dataset(dir: &Path) -> Result<()> {
    for f in [MANIFEST_FILE, SPEC_FILE] {
        let p = dir.join(f);
        if p.exists() {
            std::fs::remove_file(&p).map_err(|e| EtmaError::io(&p, e))?;
        }
    }
    let images = dir.join(IMAGE_DIR);
    if images.is_dir() {
        for entry in std::fs::read_dir(&images).map_err(|e| EtmaError::io(&images, e))? {
            let p = entry.map_err(|e| EtmaError::io(&images, e))?.path();
            if p.extension().is_some_and(|x| x == "ppm") {
                std::fs::remove_file(&p).map_err(|e| EtmaError::io(&p, e))?;
            }
        }
    }
    Ok(())
}

pub fn train(a: &TrainArgs, log: &mut dyn Write) -> Result<()> {
    let cfg = resolve_config(a.config.as_deref(), a.seed, a.variant)?;
    let samples = load_nonempty(&a.data)?;
    check_images(&samples, cfg.image_size, EtmaError::Config)?;
    prepare_out(&a.out, a.force)?;
    echo_config(log, &cfg)?;

    let split = cfg.split.split(samples.len())?;
    let (train, val, test) = split.select(&samples);
    say!(
        log,
        "split: {} train, {} val, {} test",
        train.len(),
        val.len(),
        test.len()
    );
    let pre = Preprocessor::fit(&train, cfg.n_max, cfg.min_freq, cfg.stopword_list()?)?;
    say!(log, "vocabulary: {} tokens", pre.vocab.size());

    let mut log_err = None;
    let outcome = fit(&cfg, &pre, &train, &val, &mut |r| {
        let line = format!(
            "epoch {:>3}  train_loss {:.4}  train_acc {:.4}  val_loss {:.4}  val_acc {:.4}  {:.0} ms",
            r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.ms
        );
        if let Err(e) = writeln!(log, "{line}") {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(EtmaError::io("<stdout>", e));
    }

    outcome.best.save(&a.out.join(CHECKPOINT_FILE))?;
    write(&a.out.join("report.json-lines"), &outcome.report.to_json_lines()?)?;
    write(&a.out.join("curves.csv"), &outcome.report.curves_csv())?;
    write(&a.out.join("config.txt"), &cfg.to_text())?;
    write(&a.out.join("vocab.txt"), &pre.vocab.to_text())?;
    match outcome.report.selected() {
        Some(r) => say!(log, "selected epoch {} (val_acc {:.4})", r.epoch, r.val_acc),
        None => say!(log, "no epochs run; saved the initial model"),
    }
    say!(log, "wrote {}", a.out.join(CHECKPOINT_FILE).display());
    Ok(())
}

/// Loads a checkpoint and checks that `samples` fit it.
fn load_compatible(path: &Path, samples: &[MultimodalSample]) -> Result<Checkpoint> {
    let ck = Checkpoint::load(path)?;
    let hash = preprocess_hash(&ck.preprocessor);
    if hash != ck.header.preprocess_hash {
        return Err(EtmaError::Compatibility(format!(
            "checkpoint preprocessing hash {} does not match its stored preprocessing ({hash})",
            ck.header.preprocess_hash
        )));
    }
    check_images(samples, ck.config.image_size, EtmaError::Compatibility)?;
    Ok(ck)
}

#[derive(serde::Serialize)]
struct Warning<'a> {
    warning: &'a str,
}

pub fn eval(a: &EvalArgs, log: &mut dyn Write) -> Result<()> {
    let samples = load_nonempty(&a.data)?;
    let ck = load_compatible(&a.checkpoint, &samples)?;
    let split = ck.config.split.split(samples.len())?;
    let part: Vec<&MultimodalSample> = split.part(&a.split)?.iter().map(|&i| &samples[i]).collect();
    if part.is_empty() {
        return Err(EtmaError::Config(format!("split {:?} is empty", a.split)));
    }
    prepare_out(&a.out, a.force)?;
    echo_config(log, &ck.config)?;

    let out = evaluate_samples(&ck.model, &ck.preprocessor, &part, ck.config.eval_batch_size)?;
    let scored: Vec<_> = out.probs.iter().zip(&part).map(|(p, s)| (p[1], s.label)).collect();
    let report = evaluate(&scored)?;
    let mut json = report.to_json_line();
    if report.roc_auc.is_none() {
        let msg = "only one class present; AUC and curves omitted";
        say!(log, "warning: {msg}");
        json.push_str(
            &serde_json::to_string(&Warning { warning: msg }).map_err(|e| EtmaError::Contract(e.to_string()))?,
        );
        json.push('\n');
    } else {
        let scores: Vec<f64> = scored.iter().map(|s| s.0).collect();
        let fake: Vec<bool> = part.iter().map(|s| s.label.index() == 1).collect();
        write(&a.out.join("roc.csv"), &roc_curve(&scores, &fake)?.to_csv())?;
        write(&a.out.join("pr.csv"), &pr_curve(&scores, &fake)?.to_csv())?;
    }
    write(&a.out.join("metrics.json-lines"), &json)?;
    write(&a.out.join("metrics.csv"), &report.to_csv())?;
    say!(
        log,
        "{} split: n {}  accuracy {:.4}",
        a.split,
        report.n,
        report.accuracy
    );
    if let (Some(roc), Some(pr)) = (report.roc_auc, report.pr_auc) {
        say!(log, "roc_auc {roc:.4}  pr_auc {pr:.4}");
    }
    Ok(())
}

pub fn ablate(a: &AblateArgs, log: &mut dyn Write) -> Result<()> {
    let cfg = resolve_config(a.config.as_deref(), a.seed, None)?;
    let samples = load_nonempty(&a.data)?;
    check_images(&samples, cfg.image_size, EtmaError::Config)?;
    prepare_out(&a.out, a.force)?;
    echo_config(log, &cfg)?;
    let name = a
        .data
        .file_name()
        .map_or_else(|| "data".to_string(), |n| n.to_string_lossy().into_owned());
    let mut log_err = None;
    let table = run_ablation_suite(&cfg, &name, &samples, &mut |v, r| {
        if r.epoch == cfg.epochs || r.epoch % 10 == 0 {
            if let Err(e) = writeln!(log, "{:<18} epoch {:>3}  val_acc {:.4}", v.label(), r.epoch, r.val_acc) {
                log_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = log_err {
        return Err(EtmaError::io("<stdout>", e));
    }
    write(&a.out.join("ablation.csv"), &table.to_csv())?;
    write(&a.out.join("ablation.json-lines"), &table.to_json_lines()?)?;
    for row in &table.rows {
        say!(log, "{:<18} test_acc {:.4}", row.variant.label(), row.accuracy[0]);
    }
    Ok(())
}

pub fn bench(a: &BenchArgs, log: &mut dyn Write) -> Result<()> {
    let samples = load_nonempty(&a.data)?;
    let (model, pre) = match (&a.checkpoint, &a.config) {
        (Some(path), _) => {
            let ck = load_compatible(path, &samples)?;
            echo_config(log, &ck.config)?;
            (ck.model, ck.preprocessor)
        }
        (None, cfg_path) => {
            let cfg = resolve_config(cfg_path.as_deref(), a.seed, a.variant)?;
            check_images(&samples, cfg.image_size, EtmaError::Config)?;
            echo_config(log, &cfg)?;
            let split = cfg.split.split(samples.len())?;
            let (train, _, _) = split.select(&samples);
            let pre = Preprocessor::fit(&train, cfg.n_max, cfg.min_freq, cfg.stopword_list()?)?;
            (init_model(&cfg, &pre)?, pre)
        }
    };
    if let Some(out) = &a.out {
        prepare_out(out, a.force)?;
    }
    let take = (a.trials + a.warmup).min(samples.len());
    let batches: Vec<_> = samples[..take].iter().map(|s| pre.batch(&[s], None)).collect();
    let report = time_model(&model, &batches, a.trials, a.warmup)?;
    let json = report.to_json_line()?;
    let csv = report.to_csv();
    say!(log, "{json}");
    write!(log, "{csv}").map_err(|e| EtmaError::io("<stdout>", e))?;
    if let Some(out) = &a.out {
        write(&out.join("timing.json-lines"), &format!("{json}\n"))?;
        write(&out.join("timing.csv"), &csv)?;
    }
    Ok(())
}
