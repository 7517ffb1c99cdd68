use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Seeded random stream.
///
/// Streams are identified by a seed plus an optional path of tags, so
/// independent consumers (data sampling, parameter init, per-step batches)
/// each derive their own stream instead of sharing one mutable generator.
#[derive(Clone, Debug)]
pub struct Rng {
    key: u64,
    inner: ChaCha8Rng,
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn combine(key: u64, tag: u64) -> u64 {
    mix64(key ^ mix64(tag.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::from_key(mix64(seed))
    }

    /// Stream for `seed` at the given tag path; same inputs always give the same stream.
    pub fn derive(seed: u64, path: &[u64]) -> Self {
        let key = path.iter().fold(mix64(seed), |k, &t| combine(k, t));
        Self::from_key(key)
    }

    fn from_key(key: u64) -> Self {
        Self { key, inner: ChaCha8Rng::seed_from_u64(key) }
    }

    /// Child stream; does not advance `self`.
    pub fn fork(&self, tag: u64) -> Self {
        Self::from_key(combine(self.key, tag))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn sign(&mut self) -> f64 {
        if self.next_u64() & 1 == 0 { 1.0 } else { -1.0 }
    }

    pub fn uniform_vec(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| self.uniform_range(lo, hi)).collect()
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    /// Uniformly distributed direction scaled to norm `r`.
    pub fn sphere(&mut self, n: usize, r: f64) -> Vec<f64> {
        loop {
            let v = self.normal_vec(n);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return v.into_iter().map(|x| x * r / norm).collect();
            }
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
