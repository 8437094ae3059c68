use serde::{Deserialize, Serialize};

use crate::error::{EtmaError, Result};
use crate::tensor::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.8,
            val: 0.1,
            test: 0.1,
            seed: 0,
        }
    }
}

/// Index sets of the three partitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn part(&self, name: &str) -> Result<&[usize]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(EtmaError::Config(format!("unknown split {other:?}"))),
        }
    }

    /// `(train, val, test)` views into `items`.
    pub fn select<'a, T>(&self, items: &'a [T]) -> (Vec<&'a T>, Vec<&'a T>, Vec<&'a T>) {
        let pick = |idx: &[usize]| idx.iter().map(|&i| &items[i]).collect();
        (pick(&self.train), pick(&self.val), pick(&self.test))
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let f = [self.train, self.val, self.test];
        if f.iter().any(|x| !(0.0..=1.0).contains(x)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(EtmaError::Config(format!(
                "split fractions {f:?} must lie in [0, 1] and sum to 1"
            )));
        }
        Ok(())
    }

    /// Seeded shuffle of `0..n`, then contiguous train/val/test runs. The
    /// val and test sizes are rounded; train takes the remainder.
    pub fn split(&self, n: usize) -> Result<Split> {
        self.validate()?;
        let mut idx: Vec<usize> = (0..n).collect();
        Rng::new(self.seed).shuffle(&mut idx);
        let n_val = (n as f64 * self.val).round() as usize;
        let n_test = ((n as f64 * self.test).round() as usize).min(n - n_val.min(n));
        let n_train = n - n_val - n_test;
        let test = idx.split_off(n_train + n_val);
        let val = idx.split_off(n_train);
        Ok(Split { train: idx, val, test })
    }
}
