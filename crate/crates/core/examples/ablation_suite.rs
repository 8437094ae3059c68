//! Fits every ablation variant on one split and prints the accuracy table.

use etma::bench::run_ablation_suite;
use etma::data::{generate_synthetic, SyntheticSpec};
use etma::train::TrainConfig;

fn main() -> etma::Result<()> {
    let spec = SyntheticSpec {
        n_samples: 160,
        image_size: [8, 8, 3],
        ..SyntheticSpec::default()
    };
    let samples = generate_synthetic(&spec)?;
    let cfg = TrainConfig {
        image_size: (8, 8, 3),
        patch: 4,
        dim: 16,
        joint_dim: 16,
        heads: 2,
        n_max: 8,
        epochs: 3,
        ..TrainConfig::default()
    };

    let table = run_ablation_suite(&cfg, "synthetic", &samples, &mut |v, r| {
        println!("{:<14} epoch {} val {:.3}", v.label(), r.epoch, r.val_acc)
    })?;
    print!("{}", table.to_csv());
    Ok(())
}
