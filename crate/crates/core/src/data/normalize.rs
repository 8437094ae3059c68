use serde::{Deserialize, Serialize};

use crate::error::{EtmaError, Result};
use crate::tensor::Tensor;

pub const STD_FLOOR: f64 = 1e-6;

/// Per-channel mean and standard deviation of a set of `h × w × c` images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Population statistics over every pixel of every image; `std` is
    /// floored at [`STD_FLOOR`].
    pub fn compute<'a>(images: impl IntoIterator<Item = &'a Tensor>) -> Result<Self> {
        let mut sums: Vec<f64> = Vec::new();
        let mut squares: Vec<f64> = Vec::new();
        let mut origin: Vec<f64> = Vec::new();
        let mut count = 0usize;
        let mut channels = None;
        let images: Vec<&Tensor> = images.into_iter().collect();
        for img in &images {
            let c = *img.shape().last().unwrap_or(&0);
            if *channels.get_or_insert(c) != c || c == 0 {
                return Err(EtmaError::dim("channel stats", img.shape(), &[channels.unwrap_or(0)]));
            }
            if sums.is_empty() {
                sums = vec![0.0; c];
                origin = img.data()[..c].to_vec();
            }
            for px in img.data().chunks(c) {
                for ((s, &v), &o) in sums.iter_mut().zip(px).zip(&origin) {
                    *s += v - o;
                }
            }
            count += img.len() / c;
        }
        let c = channels.ok_or_else(|| EtmaError::Contract("no images for channel stats".into()))?;
        // shifted by the first pixel so a constant channel has an exact mean
        let mean: Vec<f64> = sums.iter().zip(&origin).map(|(s, o)| o + s / count as f64).collect();
        squares.resize(c, 0.0);
        for img in &images {
            for px in img.data().chunks(c) {
                for ((s, &v), &m) in squares.iter_mut().zip(px).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        let std = squares
            .iter()
            .map(|s| (s / count as f64).sqrt().max(STD_FLOOR))
            .collect();
        Ok(ChannelStats { mean, std })
    }

    pub fn identity(channels: usize) -> Self {
        ChannelStats {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn normalize(&self, image: &Tensor) -> Tensor {
        self.map(image, |x, m, s| (x - m) / s)
    }

    pub fn denormalize(&self, image: &Tensor) -> Tensor {
        self.map(image, |x, m, s| x * s + m)
    }

    fn map(&self, image: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Tensor {
        let c = self.mean.len();
        assert_eq!(image.shape().last(), Some(&c), "channel count mismatch");
        let data = image
            .data()
            .chunks(c)
            .flat_map(|px| {
                px.iter()
                    .zip(&self.mean)
                    .zip(&self.std)
                    .map(|((&x, &m), &s)| f(x, m, s))
                    .collect::<Vec<_>>()
            })
            .collect();
        Tensor::from_parts(image.shape().to_vec(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    #[test]
    fn training_stats_standardize_their_own_split() {
        let mut rng = Rng::new(3);
        let imgs: Vec<Tensor> = (0..5)
            .map(|_| Tensor::uniform(&[4, 4, 3], 0.0, 1.0, &mut rng))
            .collect();
        let stats = ChannelStats::compute(&imgs).unwrap();
        let normed: Vec<Tensor> = imgs.iter().map(|i| stats.normalize(i)).collect();
        let again = ChannelStats::compute(&normed).unwrap();
        for c in 0..3 {
            assert!(again.mean[c].abs() < 1e-6);
            assert!((again.std[c] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let img = Tensor::full(&[3, 3, 1], 0.4);
        let stats = ChannelStats::compute([&img]).unwrap();
        assert_eq!(stats.std, vec![STD_FLOOR]);
        assert!(stats.normalize(&img).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn denormalize_inverts_normalize() {
        let mut rng = Rng::new(4);
        let img = Tensor::uniform(&[5, 5, 3], 0.0, 1.0, &mut rng);
        let stats = ChannelStats {
            mean: vec![0.3, 0.5, 0.1],
            std: vec![0.2, 0.05, 1.3],
        };
        let back = stats.denormalize(&stats.normalize(&img));
        assert!(back.max_abs_diff(&img) < 1e-12);
    }

    #[test]
    fn empty_input_is_a_contract_error() {
        assert!(ChannelStats::compute(std::iter::empty::<&Tensor>()).is_err());
    }
}
