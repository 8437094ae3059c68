//! Trains briefly, then shows where the visual-semantic attention looks for
//! one sample and which words drove the prediction.

use etma::cli::attention_map;
use etma::data::{generate_synthetic, Preprocessor, SyntheticSpec};
use etma::train::{fit, TrainConfig};

fn main() -> etma::Result<()> {
    let spec = SyntheticSpec {
        n_samples: 160,
        image_size: [16, 16, 3],
        ..SyntheticSpec::default()
    };
    let samples = generate_synthetic(&spec)?;
    let cfg = TrainConfig {
        image_size: (16, 16, 3),
        patch: 4,
        dim: 16,
        joint_dim: 16,
        n_max: 8,
        epochs: 3,
        ..TrainConfig::default()
    };

    let split = cfg.split.split(samples.len())?;
    let (train, val, test) = split.select(&samples);
    let pre = Preprocessor::fit(&train, cfg.n_max, cfg.min_freq, cfg.stopword_list()?)?;
    let ck = fit(&cfg, &pre, &train, &val, &mut |_| {})?.best;

    let map = attention_map(&ck, test[0])?;
    println!(
        "{} label {:?} predicted {:?} p_fake {:.3}",
        map.id, map.label, map.predicted, map.p_fake
    );
    let (gh, gw) = map.grid;
    for r in 0..gh {
        let row: Vec<String> = (0..gw).map(|c| format!("{:.3}", map.alpha[r * gw + c])).collect();
        println!("  {}", row.join(" "));
    }
    println!("argmax region {}", map.argmax());
    for (word, token, saliency) in &map.tokens {
        println!("  {word:<10} {token:<10} {saliency:.2e}");
    }
    Ok(())
}
