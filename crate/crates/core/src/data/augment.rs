//! Label-preserving image transforms applied during training.

use crate::tensor::{Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Augmentation {
    Identity,
    /// Counter-clockwise quarter turns, 1 to 3.
    Rotate(u8),
    FlipHorizontal,
    /// Centre crop to this fraction of the side, then nearest-neighbour
    /// resize back.
    Zoom(f64),
}

impl Augmentation {
    /// Uniform over identity, the three rotations, the flip and a zoom with
    /// crop fraction drawn from `[0.8, 1.0]`.
    pub fn sample(rng: &mut Rng) -> Self {
        match rng.below(6) {
            0 => Augmentation::Identity,
            k @ 1..=3 => Augmentation::Rotate(k as u8),
            4 => Augmentation::FlipHorizontal,
            _ => Augmentation::Zoom(0.8 + 0.2 * rng.uniform()),
        }
    }

    /// `image` is `h × w × c`; rotations require `h == w`.
    pub fn apply(self, image: &Tensor) -> Tensor {
        match self {
            Augmentation::Identity => image.clone(),
            Augmentation::Rotate(k) => (0..k).fold(image.clone(), |img, _| rotate90(&img)),
            Augmentation::FlipHorizontal => remap(image, |r, c, _, w| (r, w - 1 - c)),
            Augmentation::Zoom(frac) => zoom(image, frac),
        }
    }
}

pub fn augment(image: &Tensor, rng: &mut Rng) -> Tensor {
    Augmentation::sample(rng).apply(image)
}

fn rotate90(image: &Tensor) -> Tensor {
    let &[h, w, _] = image.shape() else {
        panic!("rotate90 expects h x w x c");
    };
    assert_eq!(h, w, "rotation needs a square image");
    remap(image, |r, c, _, w| (c, w - 1 - r))
}

/// Output pixel `(r, c)` takes input pixel `src(r, c, h, w)`.
fn remap(image: &Tensor, src: impl Fn(usize, usize, usize, usize) -> (usize, usize)) -> Tensor {
    let &[h, w, ch] = image.shape() else {
        panic!("expected h x w x c");
    };
    let d = image.data();
    let mut out = Vec::with_capacity(d.len());
    for r in 0..h {
        for c in 0..w {
            let (sr, sc) = src(r, c, h, w);
            let base = (sr * w + sc) * ch;
            out.extend_from_slice(&d[base..base + ch]);
        }
    }
    Tensor::from_parts(vec![h, w, ch], out)
}

fn zoom(image: &Tensor, frac: f64) -> Tensor {
    let &[h, w, _] = image.shape() else {
        panic!("expected h x w x c");
    };
    let ch = ((h as f64 * frac).round() as usize).clamp(1, h);
    let cw = ((w as f64 * frac).round() as usize).clamp(1, w);
    let (top, left) = ((h - ch) / 2, (w - cw) / 2);
    remap(image, |r, c, h, w| (top + (r * ch) / h, left + (c * cw) / w))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(h: usize, w: usize, seed: u64) -> Tensor {
        Tensor::uniform(&[h, w, 3], 0.0, 1.0, &mut Rng::new(seed))
    }

    #[test]
    fn identity_is_a_copy() {
        let img = image(5, 5, 1);
        assert_eq!(Augmentation::Identity.apply(&img), img);
    }

    #[test]
    fn four_quarter_turns_and_two_flips_are_identity() {
        let img = image(6, 6, 2);
        let r = Augmentation::Rotate(1);
        assert_eq!(r.apply(&r.apply(&r.apply(&r.apply(&img)))), img);
        assert_eq!(Augmentation::Rotate(3).apply(&r.apply(&img)), img);
        let f = Augmentation::FlipHorizontal;
        assert_eq!(f.apply(&f.apply(&img)), img);
        assert_ne!(f.apply(&img), img);
    }

    #[test]
    fn rotation_moves_the_top_right_corner_to_top_left() {
        let mut img = Tensor::zeros(&[4, 4, 1]);
        img.data_mut()[3] = 1.0;
        let rot = Augmentation::Rotate(1).apply(&img);
        assert_eq!(rot.data()[0], 1.0);
    }

    #[test]
    fn full_zoom_is_identity_and_zoom_keeps_shape_and_range() {
        let img = image(10, 10, 3);
        assert_eq!(Augmentation::Zoom(1.0).apply(&img), img);
        let z = Augmentation::Zoom(0.8).apply(&img);
        assert_eq!(z.shape(), img.shape());
        assert!(z.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
        // every output value is copied from the centre crop
        assert!(z.data().iter().all(|x| img.data().contains(x)));
    }

    #[test]
    fn sampled_augmentations_preserve_shape_and_range() {
        let img = image(8, 8, 4);
        let mut rng = Rng::new(5);
        for _ in 0..60 {
            let out = augment(&img, &mut rng);
            assert_eq!(out.shape(), img.shape());
            assert!(out.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }
}
