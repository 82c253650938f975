//! Seeded, per-model random streams.
//!
//! Every atomic model and every coupled model owns its own stream, derived
//! from the master seed and a [`StreamId`]. Draws made by one model never
//! shift the sequence seen by another.

use rand::{Rng, RngCore};
use rand_pcg::Pcg32;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RngError {
    #[error("invalid distribution parameter: {0}")]
    Parameter(String),
    #[error("cannot draw {requested} distinct items from a pool of {available} with positive weight")]
    Sampling { requested: usize, available: usize },
}

/// One step of the SplitMix64 sequence, used only to derive stream seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes an ordered list of words into a single seed.
pub fn derive_seed(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x5eed_u64, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

/// Identifies a stream: the owning model plus a lane, so one model can hold
/// several independent streams (a coupled model keeps one for its global
/// transition and one for downward queries).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StreamId {
    pub model: u64,
    pub lane: u64,
}

impl StreamId {
    pub const fn new(model: u64, lane: u64) -> Self {
        Self { model, lane }
    }
}

#[derive(Debug, Clone)]
pub struct RngStream {
    id: StreamId,
    inner: Pcg32,
}

impl RngStream {
    pub fn new(seed: u64, id: StreamId) -> Self {
        let state = derive_seed(&[seed, id.model, id.lane]);
        let stream = derive_seed(&[state, 0x57ea_u64]);
        Self {
            id,
            inner: Pcg32::new(state, stream),
        }
    }

    /// A stream not tied to any model; handy for model set-up and tests.
    pub fn from_seed(seed: u64) -> Self {
        Self::new(seed, StreamId::new(u64::MAX, u64::MAX))
    }

    pub fn id(&self) -> StreamId {
        self.id
    }

    /// Uniform real in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform real in `[low, high]`.
    pub fn uniform_range(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    /// Uniform integer with both endpoints included.
    pub fn int_inclusive(&mut self, low: i64, high: i64) -> i64 {
        self.inner.random_range(low..=high)
    }

    /// Uniform index in `0..len`. Panics when `len == 0`.
    pub fn index(&mut self, len: usize) -> usize {
        self.inner.random_range(0..len)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn choose<'a, T>(&mut self, items: &'a [T]) -> Option<&'a T> {
        if items.is_empty() {
            None
        } else {
            Some(&items[self.index(items.len())])
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }

    /// Exponential variate with the given mean, by inverse CDF.
    pub fn exponential(&mut self, mean: f64) -> Result<f64, RngError> {
        check_positive("mean", mean)?;
        Ok(exponential_from_uniform(self.uniform(), mean))
    }

    /// Poisson variate by Knuth's multiplicative method. Large means are split
    /// into chunks so `exp(-lambda)` never underflows.
    pub fn poisson(&mut self, lambda: f64) -> Result<u64, RngError> {
        check_positive("lambda", lambda)?;
        const CHUNK: f64 = 30.0;
        let mut remaining = lambda;
        let mut total = 0;
        while remaining > 0.0 {
            let part = remaining.min(CHUNK);
            remaining -= part;
            let limit = (-part).exp();
            let mut product = self.uniform();
            while product > limit {
                total += 1;
                product *= self.uniform();
            }
        }
        Ok(total)
    }

    /// Draws `count` distinct keys; each draw picks a remaining key with
    /// probability proportional to its weight and removes it from the pool.
    pub fn weighted_sample_without_replacement<K: Clone>(
        &mut self,
        weights: &[(K, f64)],
        count: usize,
    ) -> Result<Vec<K>, RngError> {
        if let Some((_, w)) = weights.iter().find(|(_, w)| !(*w >= 0.0) || !w.is_finite()) {
            return Err(RngError::Parameter(format!("weight {w} is not a finite non-negative number")));
        }
        let mut pool: Vec<(usize, f64)> = weights
            .iter()
            .enumerate()
            .filter(|(_, (_, w))| *w > 0.0)
            .map(|(i, (_, w))| (i, *w))
            .collect();
        if count > pool.len() {
            return Err(RngError::Sampling {
                requested: count,
                available: pool.len(),
            });
        }
        let mut total: f64 = pool.iter().map(|(_, w)| w).sum();
        let mut picked = Vec::with_capacity(count);
        for _ in 0..count {
            let target = self.uniform() * total;
            let mut acc = 0.0;
            // Falls back to the last entry if rounding leaves `target` past the sum.
            let mut slot = pool.len() - 1;
            for (pos, (_, w)) in pool.iter().enumerate() {
                acc += w;
                if target < acc {
                    slot = pos;
                    break;
                }
            }
            let (index, w) = pool.swap_remove(slot);
            total -= w;
            if pool.is_empty() {
                total = 0.0;
            } else if total <= 0.0 {
                total = pool.iter().map(|(_, w)| w).sum();
            }
            picked.push(weights[index].0.clone());
        }
        Ok(picked)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Inverse CDF of the exponential distribution: `-mean * ln(1 - u)`.
pub fn exponential_from_uniform(u: f64, mean: f64) -> f64 {
    -mean * (1.0 - u).ln()
}

fn check_positive(name: &str, value: f64) -> Result<(), RngError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(RngError::Parameter(format!("{name} must be positive, got {value}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let id = StreamId::new(3, 0);
        let mut a = RngStream::new(42, id);
        let mut b = RngStream::new(42, id);
        for _ in 0..100 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }

    #[test]
    fn distinct_streams_differ() {
        let mut a = RngStream::new(42, StreamId::new(1, 0));
        let mut b = RngStream::new(42, StreamId::new(2, 0));
        let mut c = RngStream::new(42, StreamId::new(1, 1));
        let (x, y, z) = (a.uniform(), b.uniform(), c.uniform());
        assert_ne!(x, y);
        assert_ne!(x, z);
    }

    #[test]
    fn uniform_mean_within_clt_bound() {
        let mut s = RngStream::from_seed(7);
        let n = 100_000;
        let mean = (0..n).map(|_| s.uniform()).sum::<f64>() / n as f64;
        assert!((0.497..=0.503).contains(&mean), "{mean}");
    }

    #[test]
    fn exponential_at_zero_and_mean() {
        assert_eq!(exponential_from_uniform(0.0, 0.5), 0.0);
        let mut s = RngStream::from_seed(11);
        let n = 100_000;
        let mean = (0..n).map(|_| s.exponential(0.5).unwrap()).sum::<f64>() / n as f64;
        assert!((0.49..=0.51).contains(&mean), "{mean}");
    }

    #[test]
    fn exponential_race_mean() {
        // two susceptible neighbours, beta 3, gamma 1
        let rate = 2.0 * 3.0 + 1.0;
        let mut s = RngStream::from_seed(12);
        let n = 100_000;
        let mean = (0..n).map(|_| s.exponential(1.0 / rate).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 1.0 / 7.0).abs() < 0.003, "{mean}");
    }

    #[test]
    fn rejects_bad_parameters() {
        let mut s = RngStream::from_seed(1);
        assert!(matches!(s.exponential(0.0), Err(RngError::Parameter(_))));
        assert!(matches!(s.exponential(-1.0), Err(RngError::Parameter(_))));
        assert!(matches!(s.poisson(0.0), Err(RngError::Parameter(_))));
        assert!(matches!(
            s.weighted_sample_without_replacement(&[("a", 1.0), ("b", 0.0)], 2),
            Err(RngError::Sampling { requested: 2, available: 1 })
        ));
    }

    #[test]
    fn poisson_moments() {
        let mut s = RngStream::from_seed(5);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| s.poisson(8.0).unwrap() as f64).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((7.9..=8.1).contains(&mean), "{mean}");
        assert!((7.7..=8.3).contains(&var), "{var}");
    }

    #[test]
    fn poisson_tiny_lambda_mostly_zero() {
        let mut s = RngStream::from_seed(6);
        let zeros = (0..10_000).filter(|_| s.poisson(1e-4).unwrap() == 0).count();
        assert!(zeros >= 9980, "{zeros}");
    }

    #[test]
    fn poisson_large_lambda_mean() {
        let mut s = RngStream::from_seed(8);
        let n = 20_000;
        let mean = (0..n).map(|_| s.poisson(100.0).unwrap() as f64).sum::<f64>() / n as f64;
        assert!((mean - 100.0).abs() < 0.5, "{mean}");
    }

    #[test]
    fn weighted_sample_full_pool_is_permutation() {
        let mut s = RngStream::from_seed(9);
        let mut got = s
            .weighted_sample_without_replacement(&[('a', 1.0), ('b', 1.0), ('c', 1.0)], 3)
            .unwrap();
        got.sort();
        assert_eq!(got, vec!['a', 'b', 'c']);
    }

    #[test]
    fn weighted_sample_single_draw_frequency() {
        let mut s = RngStream::from_seed(10);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| s.weighted_sample_without_replacement(&[('a', 1.0), ('b', 3.0)], 1).unwrap()[0] == 'b')
            .count();
        assert!((hits as f64 / n as f64 - 0.75).abs() < 0.01);
    }

    #[test]
    fn zero_weight_never_drawn() {
        let mut s = RngStream::from_seed(13);
        for _ in 0..1000 {
            let got = s
                .weighted_sample_without_replacement(&[(0, 0.0), (1, 2.0), (2, 5.0)], 2)
                .unwrap();
            assert!(!got.contains(&0));
        }
    }
}
