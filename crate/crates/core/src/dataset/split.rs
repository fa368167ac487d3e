use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub seed: u64,
}

impl DatasetSplit {
    /// Which split `id` belongs to, if any.
    pub fn assignment(&self, id: &str) -> Option<&'static str> {
        if self.train_ids.iter().any(|i| i == id) {
            Some("train")
        } else if self.val_ids.iter().any(|i| i == id) {
            Some("val")
        } else if self.test_ids.iter().any(|i| i == id) {
            Some("test")
        } else {
            None
        }
    }
}

/// Seeded shuffle, then consecutive slices of `counts = (train, val, test)`.
pub fn split_dataset(ids: &[String], counts: (usize, usize, usize), seed: u64) -> Result<DatasetSplit> {
    let (a, b, c) = counts;
    if a + b + c > ids.len() {
        return Err(invalid(format!(
            "requested {} + {} + {} ids but only {} exist",
            a,
            b,
            c,
            ids.len()
        )));
    }
    let mut order = ids.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut it = order.into_iter();
    Ok(DatasetSplit {
        train_ids: it.by_ref().take(a).collect(),
        val_ids: it.by_ref().take(b).collect(),
        test_ids: it.take(c).collect(),
        seed,
    })
}
