//! Counter-based random streams.
//!
//! Every draw the solver makes is addressed by a key (global seed plus a
//! tuple of indices and a purpose tag). A stream is a pure function of its
//! key and an internal counter, so the same key yields the same sequence no
//! matter which thread asks or in which order cells are visited.
//!
//! The mixing function is the SplitMix64 finalizer. It is not suitable for
//! anything security related.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// What a draw is used for. Distinct purposes at the same indices never
/// share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    /// Opponent `j`'s action inside a solver cell.
    OpponentAction(usize),
    /// Next-state draw from the nominal kernel.
    Transition,
    /// Random game generation.
    GameGeneration,
    /// Gilbert-Varshamov packing draws.
    Packing,
    /// Random choice of a hard-instance index vector.
    Theta,
    /// Free-form tag for tests and tools.
    Other(u64),
}

impl Purpose {
    fn code(self) -> u64 {
        match self {
            Purpose::OpponentAction(j) => 0x100 + j as u64,
            Purpose::Transition => 1,
            Purpose::GameGeneration => 2,
            Purpose::Packing => 3,
            Purpose::Theta => 4,
            Purpose::Other(x) => mix64(x ^ 0xA5A5_A5A5_0000_0000),
        }
    }
}

/// Position-independent key for one solver draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    pub seed: u64,
    pub step: usize,
    pub round: usize,
    pub agent: usize,
    pub state: usize,
    pub action: usize,
    pub purpose: Purpose,
}

impl StreamKey {
    pub fn stream(&self) -> RandomStream {
        RandomStream::from_words(
            self.seed,
            &[
                self.step as u64,
                self.round as u64,
                self.agent as u64,
                self.state as u64,
                self.action as u64,
                self.purpose.code(),
            ],
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RandomStream {
    key: u64,
    counter: u64,
}

impl RandomStream {
    /// Stream keyed by a seed and an arbitrary list of words. Word order
    /// matters.
    pub fn from_words(seed: u64, words: &[u64]) -> Self {
        let mut key = mix64(seed ^ GOLDEN);
        for (pos, &w) in words.iter().enumerate() {
            key = mix64(key ^ mix64(w.wrapping_add((pos as u64 + 1).wrapping_mul(GOLDEN))));
        }
        Self { key, counter: 0 }
    }

    pub fn new(seed: u64, purpose: Purpose) -> Self {
        Self::from_words(seed, &[purpose.code()])
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Inverse-CDF draw from a probability vector. Returns the first index
    /// whose cumulative mass exceeds the uniform draw; floating-point
    /// shortfall at the top falls back to the last index with positive mass.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.next_f64();
        sample_index(probs, u)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }
}

pub(crate) fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (idx, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = idx;
        }
        cum += p;
        if u < cum {
            return idx;
        }
    }
    last_positive
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_sequence() {
        let key = StreamKey {
            seed: 7,
            step: 3,
            round: 11,
            agent: 1,
            state: 2,
            action: 0,
            purpose: Purpose::Transition,
        };
        let a: Vec<u64> = {
            let mut s = key.stream();
            (0..5).map(|_| s.next_u64()).collect()
        };
        let b: Vec<u64> = std::thread::spawn(move || {
            let mut s = key.stream();
            (0..5).map(|_| s.next_u64()).collect()
        })
        .join()
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn keys_differ_by_purpose_and_index() {
        let base = StreamKey {
            seed: 1,
            step: 0,
            round: 0,
            agent: 0,
            state: 0,
            action: 0,
            purpose: Purpose::Transition,
        };
        let other = StreamKey {
            purpose: Purpose::OpponentAction(0),
            ..base
        };
        let shifted = StreamKey { action: 1, ..base };
        let first = |k: StreamKey| k.stream().next_u64();
        assert_ne!(first(base), first(other));
        assert_ne!(first(base), first(shifted));
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut s = RandomStream::new(42, Purpose::Other(0));
        for _ in 0..10_000 {
            let u = s.next_f64();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn categorical_handles_degenerate_rows() {
        assert_eq!(sample_index(&[0.0, 1.0, 0.0], 0.999_999), 1);
        assert_eq!(sample_index(&[0.0, 1.0, 0.0], 0.0), 1);
        // Row summing to slightly under one.
        assert_eq!(sample_index(&[0.5, 0.5 - 1e-15, 0.0], 1.0 - 1e-17), 1);
    }
}
