//! Object-wise cross-validation folds.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl Fold {
    pub fn split_of(&self, object_id: &str) -> Option<&'static str> {
        let has = |v: &[String]| v.iter().any(|s| s == object_id);
        if has(&self.train) {
            Some("train")
        } else if has(&self.validation) {
            Some("validation")
        } else if has(&self.test) {
            Some("test")
        } else {
            None
        }
    }
}

/// Shuffles the distinct ids with `seed` and cuts them into `k` chunks.
/// Fold `i` holds out chunk `i`, its first half for validation and the rest
/// for testing, and trains on the remaining chunks.
pub fn kfold_split<S: AsRef<str>>(object_ids: &[S], k: usize, seed: u64) -> Result<Vec<Fold>> {
    let mut ids: Vec<String> = object_ids.iter().map(|s| s.as_ref().to_string()).collect();
    ids.sort();
    ids.dedup();
    if k < 2 || ids.len() < k {
        return Err(Error::Config(format!(
            "{k} folds need at least {k} distinct objects, found {}",
            ids.len()
        )));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let bound = |i: usize| ids.len() * i / k;
    Ok((0..k)
        .map(|i| {
            let held = &ids[bound(i)..bound(i + 1)];
            let half = held.len() / 2;
            let train = ids[..bound(i)]
                .iter()
                .chain(&ids[bound(i + 1)..])
                .cloned()
                .collect();
            Fold {
                index: i,
                train,
                validation: held[..half].to_vec(),
                test: held[half..].to_vec(),
            }
        })
        .collect())
}
