use serde::{Deserialize, Serialize};

use super::image::from_byte;
use super::{Label, MultimodalSample};
use crate::embed::{normalize_text, StopWords};
use crate::error::{EtmaError, Result};
use crate::tensor::{Rng, Tensor};

const QUADRANT_NAMES: [&str; 4] = ["topleft", "topright", "bottomleft", "bottomright"];

const DISTRACTORS: [&str; 16] = [
    "breaking", "photo", "report", "today", "viral", "people", "city", "claim", "shared", "official", "video",
    "update", "scene", "local", "story", "watch",
];

/// Parameters of the cross-modal benchmark.
///
/// Each image is split into a `g × g` grid of cells (`k = g²`, the
/// "quadrants" when `k = 4`); exactly one cell holds a bright disc. The text
/// names one cell plus `distractors` filler words. The label is real when
/// the named cell is the bright one, so neither modality alone says anything
/// about the label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    /// `[height, width, channels]`
    pub image_size: [usize; 3],
    pub quadrants: usize,
    pub distractors: usize,
    pub quadrant_names: Vec<String>,
    pub distractor_words: Vec<String>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_samples: 2000,
            image_size: [32, 32, 3],
            quadrants: 4,
            distractors: 4,
            quadrant_names: QUADRANT_NAMES.iter().map(|s| s.to_string()).collect(),
            distractor_words: DISTRACTORS.iter().map(|s| s.to_string()).collect(),
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    /// Cells per side.
    pub fn grid(&self) -> usize {
        (self.quadrants as f64).sqrt().round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EtmaError::Config(m));
        let k = self.quadrants;
        let g = self.grid();
        let [h, w, c] = self.image_size;
        if k < 4 || g * g != k {
            return bad(format!("quadrant count {k} must be a square of at least 4"));
        }
        if h == 0 || w == 0 || h % g != 0 || w % g != 0 {
            return bad(format!("image {h}x{w} does not split into a {g}x{g} grid"));
        }
        if c != 3 {
            return bad(format!("images need 3 channels, got {c}"));
        }
        if self.n_samples == 0 || !self.n_samples.is_multiple_of(2 * k) {
            return bad(format!(
                "n_samples {} must be a positive multiple of 2k = {}",
                self.n_samples,
                2 * k
            ));
        }
        if self.quadrant_names.len() != k {
            return bad(format!(
                "{} quadrant names for {k} quadrants",
                self.quadrant_names.len()
            ));
        }
        if self.distractors > 0 && self.distractor_words.is_empty() {
            return bad("distractors requested but no distractor words given".into());
        }
        let stop = StopWords::default();
        let mut seen = std::collections::HashSet::new();
        for word in self.quadrant_names.iter().chain(&self.distractor_words) {
            if normalize_text(word, &stop) != [word.clone()] {
                return bad(format!("{word:?} is not a single lowercase non-stopword token"));
            }
            if self.quadrant_names.contains(word) && !seen.insert(word.clone()) {
                return bad(format!("quadrant name {word:?} repeated"));
            }
        }
        if self.distractor_words.iter().any(|d| self.quadrant_names.contains(d)) {
            return bad("distractor words overlap quadrant names".into());
        }
        Ok(())
    }
}

/// Where the bright disc is and which cell the text names.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Design {
    pub named: usize,
    pub bright: usize,
    pub label: Label,
}

/// The balanced assignment before shuffling: half real, half fake, every
/// name used equally often within each label. Fake samples cycle through
/// the `k − 1` wrong cells so the bright cell is balanced as well.
fn balanced_design(n: usize, k: usize) -> Vec<Design> {
    let half = n / 2;
    let mut out = Vec::with_capacity(n);
    for t in 0..half {
        let named = t % k;
        out.push(Design {
            named,
            bright: named,
            label: Label::Real,
        });
        let shift = 1 + (t / k) % (k - 1);
        out.push(Design {
            named,
            bright: (named + shift) % k,
            label: Label::Fake,
        });
    }
    out
}

/// Generates the shuffled design. Sample `i` draws its pixels and filler
/// words from stream `i` of the seed, so samples do not depend on each
/// other's draws.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<MultimodalSample>> {
    spec.validate()?;
    let mut design = balanced_design(spec.n_samples, spec.quadrants);
    let base = Rng::new(spec.seed);
    base.fork(u64::MAX).shuffle(&mut design);
    Ok(design
        .iter()
        .enumerate()
        .map(|(i, d)| render(spec, i, *d, &mut base.fork(i as u64)))
        .collect())
}

/// The design of each generated sample, in output order.
pub fn synthetic_design(spec: &SyntheticSpec) -> Result<Vec<Design>> {
    spec.validate()?;
    let mut design = balanced_design(spec.n_samples, spec.quadrants);
    Rng::new(spec.seed).fork(u64::MAX).shuffle(&mut design);
    Ok(design)
}

fn render(spec: &SyntheticSpec, index: usize, d: Design, rng: &mut Rng) -> MultimodalSample {
    let [h, w, c] = spec.image_size;
    let g = spec.grid();
    let (cell_h, cell_w) = (h / g, w / g);
    let side = cell_h.min(cell_w) as f64;
    let radius = side / 4.0 + rng.uniform() * side / 8.0;
    let (row0, col0) = ((d.bright / g) * cell_h, (d.bright % g) * cell_w);
    let cy = row0 as f64 + radius + rng.uniform() * (cell_h as f64 - 2.0 * radius);
    let cx = col0 as f64 + radius + rng.uniform() * (cell_w as f64 - 2.0 * radius);

    let mut data = Vec::with_capacity(h * w * c);
    for r in 0..h {
        for col in 0..w {
            let (dy, dx) = (r as f64 + 0.5 - cy, col as f64 + 0.5 - cx);
            let inside = dy * dy + dx * dx <= radius * radius;
            for _ in 0..c {
                let level = if inside { 191 + rng.below(65) } else { rng.below(64) };
                data.push(from_byte(level as u8));
            }
        }
    }
    let image = Tensor::from_parts(vec![h, w, c], data);

    let mut words = vec![spec.quadrant_names[d.named].clone()];
    for _ in 0..spec.distractors {
        words.push(spec.distractor_words[rng.below(spec.distractor_words.len())].clone());
    }
    rng.shuffle(&mut words);
    MultimodalSample {
        id: format!("s{index:05}"),
        text: words.join(" "),
        image,
        label: d.label,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn spec(n: usize, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_samples: n,
            seed,
            ..SyntheticSpec::default()
        }
    }

    fn named(spec: &SyntheticSpec, s: &MultimodalSample) -> usize {
        spec.quadrant_names
            .iter()
            .position(|q| s.text.split(' ').any(|w| w == q))
            .unwrap()
    }

    #[test]
    fn labels_are_exactly_balanced() {
        let sp = spec(1000, 7);
        let data = generate_synthetic(&sp).unwrap();
        let fake = data.iter().filter(|s| s.label == Label::Fake).count();
        assert_eq!((data.len() - fake, fake), (500, 500));
    }

    #[test]
    fn quadrant_names_carry_no_label_information() {
        let sp = spec(1000, 7);
        let data = generate_synthetic(&sp).unwrap();
        let mut counts: HashMap<(usize, Label), usize> = HashMap::new();
        for s in &data {
            *counts.entry((named(&sp, s), s.label)).or_default() += 1;
        }
        for q in 0..4 {
            assert_eq!(counts[&(q, Label::Real)], 125);
            assert_eq!(counts[&(q, Label::Fake)], 125);
        }
        // empirical mutual information between name and label
        let n = data.len() as f64;
        let mi: f64 = counts
            .values()
            .map(|&c| {
                let p = c as f64 / n;
                p * (p / (0.25 * 0.5)).ln()
            })
            .sum();
        assert_eq!(mi, 0.0);
    }

    #[test]
    fn bright_cell_is_nearly_balanced_within_each_label() {
        let sp = spec(2000, 1);
        let design = synthetic_design(&sp).unwrap();
        for label in [Label::Real, Label::Fake] {
            let mut c = [0usize; 4];
            for d in design.iter().filter(|d| d.label == label) {
                c[d.bright] += 1;
            }
            let (lo, hi) = (c.iter().min().unwrap(), c.iter().max().unwrap());
            assert!(hi - lo <= 4, "{label:?}: {c:?}");
        }
    }

    #[test]
    fn real_means_the_named_cell_is_bright() {
        let sp = spec(80, 3);
        let data = generate_synthetic(&sp).unwrap();
        let design = synthetic_design(&sp).unwrap();
        for (s, d) in data.iter().zip(&design) {
            assert_eq!(named(&sp, s), d.named);
            assert_eq!(s.label == Label::Real, d.named == d.bright);
            let brightest = (0..4)
                .max_by(|&a, &b| cell_mean(&s.image, a).total_cmp(&cell_mean(&s.image, b)))
                .unwrap();
            assert_eq!(brightest, d.bright);
        }
    }

    fn cell_mean(img: &Tensor, cell: usize) -> f64 {
        let (r0, c0) = ((cell / 2) * 16, (cell % 2) * 16);
        let mut s = 0.0;
        for r in r0..r0 + 16 {
            for c in c0..c0 + 16 {
                s += img.get(&[r, c, 0]);
            }
        }
        s
    }

    #[test]
    fn same_seed_same_data() {
        let a = generate_synthetic(&spec(48, 11)).unwrap();
        let b = generate_synthetic(&spec(48, 11)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&spec(48, 12)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_specs_are_configuration_errors() {
        for sp in [
            SyntheticSpec {
                quadrants: 3,
                ..spec(48, 0)
            },
            SyntheticSpec {
                n_samples: 50,
                ..spec(48, 0)
            },
            SyntheticSpec {
                image_size: [31, 32, 3],
                ..spec(48, 0)
            },
            SyntheticSpec {
                distractor_words: vec!["topleft".into()],
                ..spec(48, 0)
            },
        ] {
            assert!(matches!(generate_synthetic(&sp), Err(EtmaError::Config(_))), "{sp:?}");
        }
    }

    #[test]
    fn pixel_values_stay_in_unit_range() {
        for s in generate_synthetic(&spec(16, 5)).unwrap() {
            assert!(s.image.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }
}
