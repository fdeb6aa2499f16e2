//! Deterministic 80/10/10 index splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub split_seed: u64,
}

impl DatasetSplit {
    pub fn total(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }
}

/// Seeded shuffle of 0..n, then contiguous floor(0.8n) / floor(0.1n) / rest.
pub fn make_split(n: usize, seed: u64) -> Result<DatasetSplit> {
    if n < 10 {
        return Err(Error::config(format!("split needs n >= 10, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_train = (n as f64 * 0.8).floor() as usize;
    let n_val = (n as f64 * 0.1).floor() as usize;
    let val_end = n_train + n_val;
    Ok(DatasetSplit {
        train: idx[..n_train].to_vec(),
        val: idx[n_train..val_end].to_vec(),
        test: idx[val_end..].to_vec(),
        split_seed: seed,
    })
}
