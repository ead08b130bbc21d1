//! Path-addressed deterministic random streams.
//!
//! Every consumer of randomness derives its own stream from the master seed and
//! a label path such as `augment/subject=3/class=attended`. The stream key is a
//! SHA-256 digest of the seed and the path, fed to a ChaCha12 generator, so a
//! stream's draws depend only on `(master_seed, path)` and never on the order in
//! which other streams were used.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    path: String,
    rng: ChaCha12Rng,
}

impl RngStream {
    pub fn derive(master_seed: u64, path: &str) -> Result<Self> {
        if path.is_empty() {
            return Err(Error::invalid("rng stream path must be non-empty"));
        }
        let mut h = Sha256::new();
        h.update(b"wordaad-rng-v1");
        h.update(master_seed.to_le_bytes());
        h.update(path.as_bytes());
        let seed: [u8; 32] = h.finalize().into();
        Ok(Self {
            master_seed,
            path: path.to_string(),
            rng: ChaCha12Rng::from_seed(seed),
        })
    }

    /// Fresh stream at `self.path/label`; independent of how much of `self` was consumed.
    pub fn child(&self, label: impl AsRef<str>) -> Self {
        let path = format!("{}/{}", self.path, label.as_ref());
        Self::derive(self.master_seed, &path).expect("non-empty path")
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn path(&self) -> &str {
        &self.path
    }

    /// Uniform draw on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform draw on `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        self.rng.random_range(lo..=hi)
    }

    /// `k` distinct indices in `[0, n)`, in draw order.
    pub fn choice(&mut self, n: usize, k: usize) -> Result<Vec<usize>> {
        if k > n {
            return Err(Error::ChoiceTooLarge { n, k });
        }
        Ok(rand::seq::index::sample(&mut self.rng, n, k).into_vec())
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.rng);
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_and_path_repeat() {
        let mut a = RngStream::derive(7, "augment/subject=3").unwrap();
        let mut b = RngStream::derive(7, "augment/subject=3").unwrap();
        for _ in 0..1000 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }

    #[test]
    fn distinct_paths_diverge() {
        let mut a = RngStream::derive(7, "a").unwrap();
        let mut b = RngStream::derive(7, "b").unwrap();
        let same = (0..10_000).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn child_ignores_parent_consumption() {
        let root = RngStream::derive(1, "root").unwrap();
        let mut used = root.clone();
        for _ in 0..17 {
            used.next_u64();
        }
        assert_eq!(root.child("x").next_u64(), used.child("x").next_u64());
        assert_eq!(root.child("x").path(), "root/x");
    }

    #[test]
    fn empty_path_rejected() {
        assert!(RngStream::derive(0, "").is_err());
    }

    #[test]
    fn choice_full_is_permutation() {
        let mut r = RngStream::derive(3, "c").unwrap();
        let mut idx = r.choice(5, 5).unwrap();
        idx.sort_unstable();
        assert_eq!(idx, vec![0, 1, 2, 3, 4]);
        assert!(matches!(r.choice(3, 4), Err(Error::ChoiceTooLarge { n: 3, k: 4 })));
    }

    #[test]
    fn uniform_mean_converges() {
        let mut r = RngStream::derive(11, "lln").unwrap();
        let n = 1_000_000;
        let mean = (0..n).map(|_| r.uniform()).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }
}
