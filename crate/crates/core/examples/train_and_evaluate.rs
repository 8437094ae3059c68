//! Trains a small model on a small synthetic set, then reports test metrics.
//!
//! `cargo run --release --example train_and_evaluate [epochs]`

use etma::data::{generate_synthetic, Preprocessor, SyntheticSpec};
use etma::metrics::{evaluate, Scored};
use etma::train::{evaluate_samples, fit, TrainConfig};

fn main() -> etma::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let spec = SyntheticSpec {
        n_samples: 400,
        image_size: [16, 16, 3],
        ..SyntheticSpec::default()
    };
    let samples = generate_synthetic(&spec)?;

    let cfg = TrainConfig {
        image_size: (16, 16, 3),
        patch: 4,
        dim: 32,
        joint_dim: 32,
        n_max: 8,
        epochs,
        ..TrainConfig::default()
    };

    let split = cfg.split.split(samples.len())?;
    let (train, val, test) = split.select(&samples);
    let pre = Preprocessor::fit(&train, cfg.n_max, cfg.min_freq, cfg.stopword_list()?)?;
    let out = fit(&cfg, &pre, &train, &val, &mut |r| {
        println!(
            "epoch {:>3} loss {:.4} train {:.3} val {:.3}",
            r.epoch, r.train_loss, r.train_acc, r.val_acc
        )
    })?;
    println!("selected epoch {:?}", out.report.selected_epoch);

    let eval = evaluate_samples(&out.best.model, &pre, &test, cfg.eval_batch_size)?;
    let scored: Vec<Scored> = eval.probs.iter().zip(&test).map(|(p, s)| (p[1], s.label)).collect();
    let report = evaluate(&scored)?;
    print!("{}", report.to_json_line());
    Ok(())
}
