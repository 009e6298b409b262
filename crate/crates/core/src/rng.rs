//! Counter-based random streams.
//!
//! A stream is addressed by `(seed, round, sequence, step, purpose)`. The
//! address is written verbatim into the 256-bit ChaCha key, so distinct
//! addresses never share a stream and the draws for a sequence do not depend
//! on which worker (or which batch row) processes it.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::Tensor;

/// What a stream is used for; part of the stream address.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u32)]
pub enum Purpose {
    Init = 1,
    Shuffle = 2,
    Posterior = 3,
    Transition = 4,
    Emission = 5,
    Dropout = 6,
    ActionNoise = 7,
    Glyph = 8,
    Action = 9,
    Square = 10,
    BitFlip = 11,
    Cohort = 12,
    Proposal = 13,
    Check = 14,
}

/// Full address of a random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub round: u64,
    pub sequence: u64,
    pub step: u32,
    pub purpose: Purpose,
}

impl StreamKey {
    pub fn new(seed: u64, purpose: Purpose) -> Self {
        StreamKey { seed, round: 0, sequence: 0, step: 0, purpose }
    }

    pub fn round(mut self, round: u64) -> Self {
        self.round = round;
        self
    }

    pub fn sequence(mut self, sequence: u64) -> Self {
        self.sequence = sequence;
        self
    }

    pub fn step(mut self, step: u32) -> Self {
        self.step = step;
        self
    }

    pub fn purpose(mut self, purpose: Purpose) -> Self {
        self.purpose = purpose;
        self
    }

    pub fn rng(&self) -> Rng {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.round.to_le_bytes());
        key[16..24].copy_from_slice(&self.sequence.to_le_bytes());
        key[24..28].copy_from_slice(&self.step.to_le_bytes());
        key[28..32].copy_from_slice(&(self.purpose as u32).to_le_bytes());
        Rng(ChaCha8Rng::from_seed(key))
    }

    /// `[ids.len(), width]` standard normals; row `i` comes from the stream
    /// of sequence `ids[i]` at `step`, so a row's draws do not depend on its
    /// position in the batch.
    pub fn normal_rows(&self, ids: &[u64], step: u32, width: usize) -> Tensor {
        let data = ids.iter().flat_map(|&id| self.sequence(id).step(step).rng().normals(width)).collect();
        Tensor::from_parts(vec![ids.len(), width], data)
    }

    /// As [`StreamKey::normal_rows`] with uniforms on `[0, 1)`.
    pub fn uniform_rows(&self, ids: &[u64], step: u32, width: usize) -> Tensor {
        let data = ids
            .iter()
            .flat_map(|&id| {
                let mut r = self.sequence(id).step(step).rng();
                (0..width).map(move |_| r.uniform())
            })
            .collect();
        Tensor::from_parts(vec![ids.len(), width], data)
    }
}

/// Deterministic generator bound to one stream.
#[derive(Clone, Debug)]
pub struct Rng(ChaCha8Rng);

impl Rng {
    pub fn from_seed(seed: u64) -> Self {
        StreamKey::new(seed, Purpose::Init).rng()
    }

    pub fn normal(&mut self) -> f64 {
        self.0.sample(StandardNormal)
    }

    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.0.random::<f64>()
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.0.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Fisher-Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            p.swap(i, j);
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_keys_identical_draws() {
        let k = StreamKey::new(7, Purpose::Posterior).sequence(3).step(2);
        assert_eq!(k.rng().normals(5), k.rng().normals(5));
    }

    #[test]
    fn distinct_fields_give_distinct_streams() {
        let base = StreamKey::new(7, Purpose::Posterior);
        let draws = |k: StreamKey| k.rng().normals(4);
        let a = draws(base);
        assert_ne!(a, draws(base.sequence(1)));
        assert_ne!(a, draws(base.step(1)));
        assert_ne!(a, draws(base.round(1)));
        assert_ne!(a, draws(base.purpose(Purpose::Dropout)));
        assert_ne!(a, draws(StreamKey::new(8, Purpose::Posterior)));
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut p = Rng::from_seed(1).permutation(50);
        p.sort();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }
}
