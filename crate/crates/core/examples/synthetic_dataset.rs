//! Generates the synthetic image/text benchmark, writes it to disk and
//! reads it back.

use etma::data::{generate_synthetic, load_dataset, synthetic_design, write_dataset, Label, SyntheticSpec};

fn main() -> etma::Result<()> {
    let spec = SyntheticSpec {
        n_samples: 16,
        ..SyntheticSpec::default()
    };
    let samples = generate_synthetic(&spec)?;
    let design = synthetic_design(&spec)?;
    for (s, d) in samples.iter().zip(&design).take(6) {
        println!(
            "{} {:?} named={} bright={} text={:?}",
            s.id, s.label, spec.quadrant_names[d.named], spec.quadrant_names[d.bright], s.text
        );
    }
    let real = samples.iter().filter(|s| s.label == Label::Real).count();
    println!("{real} real / {} fake", samples.len() - real);

    let dir = std::env::temp_dir().join("etma-synthetic-example");
    write_dataset(&dir, &samples, Some(&spec))?;
    let back = load_dataset(&dir)?;
    println!(
        "wrote {} samples to {}, reload equal: {}",
        back.len(),
        dir.display(),
        back == samples
    );
    Ok(())
}
