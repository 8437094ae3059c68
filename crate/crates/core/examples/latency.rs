//! Per-sample latency of feature formulation and classification for an
//! untrained desk-size model.

use etma::bench::time_model;
use etma::data::{generate_synthetic, Preprocessor, SyntheticSpec};
use etma::train::{init_model, TrainConfig};

fn main() -> etma::Result<()> {
    let cfg = TrainConfig::default();
    let samples = generate_synthetic(&SyntheticSpec {
        n_samples: 40,
        ..SyntheticSpec::default()
    })?;
    let refs: Vec<_> = samples.iter().collect();
    let pre = Preprocessor::fit(&refs, cfg.n_max, cfg.min_freq, cfg.stopword_list()?)?;
    let model = init_model(&cfg, &pre)?;
    let batches: Vec<_> = refs.chunks(1).map(|s| pre.batch(s, None)).collect();

    let report = time_model(&model, &batches, 30, 5)?;
    print!("{}", report.to_csv());
    Ok(())
}
