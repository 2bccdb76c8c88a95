//! Fixed-seed synthetic corpora.
//!
//! [`ZipfMarkov`] produces text-like token streams whose last-token sharing makes
//! the integer-multiple collision spike visible. [`FiveGramLanguage`] is a toy
//! language where the next token is a fixed function of the previous four.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::TokenId;

/// Inverse-CDF sampler for `p(r) ∝ (r + 1 + offset)^(-exponent)`, `r = 0..n`.
#[derive(Debug, Clone)]
pub struct ZipfSampler {
    cdf: Vec<f64>,
}

impl ZipfSampler {
    pub fn new(n: usize, exponent: f64, offset: f64) -> Self {
        assert!(n > 0, "zipf support must be non-empty");
        let mut cdf = Vec::with_capacity(n);
        let mut acc = 0.0;
        for r in 0..n {
            acc += (r as f64 + 1.0 + offset).powf(-exponent);
            cdf.push(acc);
        }
        for c in &mut cdf {
            *c /= acc;
        }
        Self { cdf }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1)
    }

    pub fn probability(&self, r: usize) -> f64 {
        if r == 0 {
            self.cdf[0]
        } else {
            self.cdf[r] - self.cdf[r - 1]
        }
    }
}

/// First-order Markov corpus over a Zipfian vocabulary.
///
/// Token 0 is reserved for padding and never emitted; rank `r` maps to id `r + 1`.
/// Every token owns `successors` follow-up tokens drawn from a Zipf–Mandelbrot law
/// with offset `successor_offset`; within that list the next slot is Zipfian.
/// Sequence starts (and the `1 - follow_prob` fraction of fresh draws) come from
/// the plain Zipf law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZipfMarkov {
    pub vocab: u64,
    pub exponent: f64,
    pub successors: usize,
    pub successor_offset: f64,
    pub follow_prob: f64,
    pub seq_len: usize,
    pub total_tokens: usize,
    pub seed: u64,
}

/// Seed of the bundled analysis corpus.
pub const BUNDLED_SEED: u64 = 0x6e67_7261_6d5f_3031;

impl ZipfMarkov {
    /// The bundled analysis corpus: 10^6 tokens over `V0 = 1000`, sequences of 8192.
    pub fn bundled() -> Self {
        Self {
            vocab: 1000,
            exponent: 1.1,
            successors: 4,
            successor_offset: 10.0,
            follow_prob: 1.0,
            seq_len: 8192,
            total_tokens: 1_000_000,
            seed: BUNDLED_SEED,
        }
    }

    pub fn generate(&self) -> Corpus {
        assert!(self.vocab >= 2 && self.successors >= 1 && self.seq_len >= 1);
        let real = (self.vocab - 1) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let global = ZipfSampler::new(real, self.exponent, 0.0);
        let succ_law = ZipfSampler::new(real, self.exponent, self.successor_offset);
        let slot_law = ZipfSampler::new(self.successors, self.exponent, 0.0);

        let table: Vec<TokenId> = (0..real * self.successors)
            .map(|_| succ_law.sample(&mut rng) as TokenId + 1)
            .collect();

        let mut sequences = Vec::with_capacity(self.total_tokens.div_ceil(self.seq_len));
        let mut remaining = self.total_tokens;
        while remaining > 0 {
            let len = remaining.min(self.seq_len);
            let mut seq = Vec::with_capacity(len);
            let mut prev = global.sample(&mut rng) as TokenId + 1;
            seq.push(prev);
            for _ in 1..len {
                prev = if rng.random::<f64>() < self.follow_prob {
                    let slot = slot_law.sample(&mut rng);
                    table[(prev as usize - 1) * self.successors + slot]
                } else {
                    global.sample(&mut rng) as TokenId + 1
                };
                seq.push(prev);
            }
            sequences.push(seq);
            remaining -= len;
        }
        Corpus::new(sequences)
    }
}

/// The bundled 10^6-token analysis corpus.
pub fn bundled_corpus() -> Corpus {
    ZipfMarkov::bundled().generate()
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Toy language whose next token is a fixed pseudo-random function of the
/// previous `context` tokens.
///
/// With probability `noise` the rule is replaced by a uniform draw. Sequences
/// begin with one of `start_pool` fixed prefixes, so contexts recur across the
/// corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiveGramLanguage {
    pub alphabet: u32,
    pub context: usize,
    pub noise: f64,
    pub start_pool: usize,
    pub seed: u64,
}

impl FiveGramLanguage {
    pub fn new(seed: u64) -> Self {
        Self { alphabet: 64, context: 4, noise: 0.05, start_pool: 16, seed }
    }

    pub fn next_token(&self, window: &[TokenId]) -> TokenId {
        debug_assert_eq!(window.len(), self.context);
        let mut h = self.seed;
        for &t in window {
            h = splitmix64(h ^ u64::from(t));
        }
        (h % u64::from(self.alphabet)) as TokenId
    }

    fn start(&self, index: usize) -> Vec<TokenId> {
        let mut h = splitmix64(self.seed ^ 0x5354_4152_5400_0000 ^ index as u64);
        (0..self.context)
            .map(|_| {
                h = splitmix64(h);
                (h % u64::from(self.alphabet)) as TokenId
            })
            .collect()
    }

    pub fn generate(&self, sequences: usize, seq_len: usize, sample_seed: u64) -> Corpus {
        assert!(seq_len >= self.context && self.start_pool >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
        let seqs = (0..sequences)
            .map(|_| {
                let mut seq = self.start(rng.random_range(0..self.start_pool));
                while seq.len() < seq_len {
                    let t = if rng.random::<f64>() < self.noise {
                        rng.random_range(0..self.alphabet)
                    } else {
                        self.next_token(&seq[seq.len() - self.context..])
                    };
                    seq.push(t);
                }
                seq
            })
            .collect();
        Corpus::new(seqs)
    }
}

/// One random sequence repeated `copies` times, for memorization runs.
pub fn repeated_sequence(len: usize, alphabet: u32, copies: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seq: Vec<TokenId> = (0..len).map(|_| rng.random_range(0..alphabet)).collect();
    Corpus::new(vec![seq; copies])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zipf_sampler_matches_law() {
        let z = ZipfSampler::new(50, 1.1, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = 200_000;
        let mut counts = vec![0usize; 50];
        for _ in 0..draws {
            counts[z.sample(&mut rng)] += 1;
        }
        for r in [0, 1, 5, 20] {
            let p = z.probability(r);
            let freq = counts[r] as f64 / draws as f64;
            let sd = (p * (1.0 - p) / draws as f64).sqrt();
            assert!((freq - p).abs() < 5.0 * sd, "rank {r}: {freq} vs {p}");
        }
        let ratio = z.probability(0) / z.probability(1);
        assert!((ratio - 2f64.powf(1.1)).abs() < 1e-12);
    }

    #[test]
    fn zipf_markov_is_deterministic_and_in_range() {
        let g = ZipfMarkov { total_tokens: 20_000, seq_len: 3000, ..ZipfMarkov::bundled() };
        let a = g.generate();
        let b = g.generate();
        assert_eq!(a, b);
        assert_eq!(a.num_tokens(), 20_000);
        assert_eq!(a.sequences.len(), 7);
        assert_eq!(a.sequences.last().unwrap().len(), 2000);
        assert!(a.sequences.iter().flatten().all(|&t| (1..1000).contains(&t)));
    }

    #[test]
    fn five_gram_language_follows_its_rule() {
        let lang = FiveGramLanguage { noise: 0.0, ..FiveGramLanguage::new(9) };
        let c = lang.generate(4, 40, 1);
        for seq in &c.sequences {
            for i in 4..seq.len() {
                assert_eq!(seq[i], lang.next_token(&seq[i - 4..i]));
            }
        }
    }

    #[test]
    fn repeated_sequence_copies() {
        let c = repeated_sequence(10, 64, 3, 5);
        assert_eq!(c.sequences.len(), 3);
        assert!(c.sequences.windows(2).all(|w| w[0] == w[1]));
    }
}
