//! Seeded, treatment-stratified fold assignment and RNG stream derivation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type Rng = ChaCha8Rng;

/// Independent stream for `(master, stream, index)`, stable across platforms
/// and scheduling order.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut z = master
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03).rotate_left(17);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream tags for [`derive_seed`].
pub(crate) mod stream {
    pub const OUTER_FOLDS: u64 = 1;
    pub const SUPER_LEARNER: u64 = 2;
    pub const BOOTSTRAP: u64 = 3;
    pub const FOLD_FIT: u64 = 4;
    pub const BOOTSTRAP_FIT: u64 = 5;
}

/// Fold label per row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Folds {
    assignment: Vec<usize>,
    k: usize,
}

impl Folds {
    /// Shuffles each treatment arm with a seeded permutation and deals rows
    /// round-robin, continuing the deal across arms so fold sizes differ by at
    /// most one.
    pub fn stratified(treatments: &[u8], k: usize, seed: u64) -> Result<Self> {
        let n = treatments.len();
        if k < 2 {
            return Err(Error::invalid("folds", format!("need at least 2 folds, got {k}")));
        }
        if n < k {
            return Err(Error::invalid("folds", format!("{k} folds but only {n} rows")));
        }
        let mut rng = rng(seed);
        let mut assignment = vec![0; n];
        let mut next = 0;
        for arm in [0u8, 1] {
            let mut idx: Vec<usize> = (0..n).filter(|&i| treatments[i] == arm).collect();
            idx.shuffle(&mut rng);
            for i in idx {
                assignment[i] = next % k;
                next += 1;
            }
        }
        Ok(Self { assignment, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fold_of(&self, row: usize) -> usize {
        self.assignment[row]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// (training rows, validation rows) for fold `v`.
    pub fn split(&self, v: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::with_capacity(self.assignment.len());
        let mut valid = Vec::new();
        for (i, &f) in self.assignment.iter().enumerate() {
            if f == v {
                valid.push(i);
            } else {
                train.push(i);
            }
        }
        (train, valid)
    }
}
