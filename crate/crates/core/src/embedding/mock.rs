use serde::{Deserialize, Serialize};

use super::{l2_norm, tokenize_with_offsets, BundleEntry, Encoder, Token, TokenEmbeddings};
use crate::error::{Error, Result};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Vigna's splitmix64 generator.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Top 53 bits mapped onto `[-1, 1)`.
    pub fn next_signed_unit(&mut self) -> f64 {
        let unit = (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        2.0 * unit - 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockEncoderConfig {
    pub dimension: usize,
    pub hash_seed: u64,
}

impl Default for MockEncoderConfig {
    fn default() -> Self {
        MockEncoderConfig {
            dimension: 64,
            hash_seed: 0,
        }
    }
}

/// Deterministic stand-in for a contextual encoder: every token maps to a
/// fixed hashed unit vector and the sentence vector is their normalized mean.
#[derive(Debug, Clone)]
pub struct MockEncoder {
    config: MockEncoderConfig,
}

impl MockEncoder {
    pub fn new(config: MockEncoderConfig) -> Result<Self> {
        if config.dimension < 2 {
            return Err(Error::Config(format!(
                "mock encoder dimension must be at least 2, got {}",
                config.dimension
            )));
        }
        Ok(MockEncoder { config })
    }

    pub fn config(&self) -> MockEncoderConfig {
        self.config
    }

    pub fn token_vector(&self, token: &str) -> Vec<f32> {
        let mut rng = SplitMix64::new(self.config.hash_seed ^ fnv1a64(token.as_bytes()));
        let raw: Vec<f64> = (0..self.config.dimension)
            .map(|_| rng.next_signed_unit())
            .collect();
        normalize_or_basis(&raw)
    }

    pub fn encode_tokens(&self, tokens: &[Token]) -> BundleEntry {
        let dim = self.config.dimension;
        let mut data = Vec::with_capacity(tokens.len() * dim);
        for token in tokens {
            data.extend(self.token_vector(&token.text));
        }
        let (sentence, degenerate) = if tokens.is_empty() {
            (basis(dim), true)
        } else {
            let mut mean = vec![0.0f64; dim];
            for row in data.chunks_exact(dim) {
                for (m, &x) in mean.iter_mut().zip(row) {
                    *m += x as f64;
                }
            }
            let n = tokens.len() as f64;
            mean.iter_mut().for_each(|m| *m /= n);
            (normalize_or_basis(&mean), false)
        };
        let embeddings = TokenEmbeddings {
            dim,
            tokens: tokens.iter().map(|t| t.text.clone()).collect(),
            offsets: tokens.iter().map(|t| t.span).collect(),
            data,
        };
        BundleEntry {
            tokens: embeddings,
            sentence,
            degenerate,
        }
    }

    pub fn encode_text(&self, text: &str) -> BundleEntry {
        self.encode_tokens(&tokenize_with_offsets(text))
    }
}

impl Encoder for MockEncoder {
    fn dim(&self) -> usize {
        self.config.dimension
    }

    fn encode(&self, _id: &str, text: &str) -> Result<BundleEntry> {
        Ok(self.encode_text(text))
    }
}

fn basis(dim: usize) -> Vec<f32> {
    let mut v = vec![0.0f32; dim];
    v[0] = 1.0;
    v
}

fn normalize_or_basis(v: &[f64]) -> Vec<f32> {
    let norm = l2_norm(v);
    if norm == 0.0 || !norm.is_finite() {
        return basis(v.len());
    }
    v.iter().map(|x| (x / norm) as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encoder() -> MockEncoder {
        MockEncoder::new(MockEncoderConfig::default()).unwrap()
    }

    #[test]
    fn reference_constants() {
        // Published FNV-1a test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x8594_4171_f739_67e8);
        // splitmix64 seeded with 0, first outputs of the reference C code.
        let mut rng = SplitMix64::new(0);
        assert_eq!(rng.next_u64(), 0xe220_a839_7b1d_cdaf);
        assert_eq!(rng.next_u64(), 0x6e78_9e6a_a1b9_65f4);
    }

    #[test]
    fn same_token_same_vector() {
        let enc = encoder();
        let a = enc.encode_text("the patient passed away");
        let b = enc.encode_text("Grandpa passed, sadly");
        assert_eq!(a.tokens.row(2), b.tokens.row(1));
        assert_eq!(enc.token_vector("passed"), a.tokens.row(2));
    }

    #[test]
    fn vectors_are_unit_norm() {
        let enc = encoder();
        let entry = enc.encode_text("Can it be disabled? Yes it can.");
        for row in entry.tokens.rows() {
            assert!((l2_norm(row) - 1.0).abs() < 1e-6);
        }
        assert!((l2_norm(&entry.sentence) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn single_token_sentence_is_token_vector() {
        let entry = encoder().encode_text("Disabled!");
        for (a, b) in entry.sentence.iter().zip(entry.tokens.row(0)) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(!entry.degenerate);
    }

    #[test]
    fn empty_text_is_flagged() {
        let entry = encoder().encode_text("  ?! ");
        assert!(entry.degenerate);
        assert!(entry.tokens.is_empty());
        assert_eq!(entry.sentence[0], 1.0);
        assert!(entry.sentence[1..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn hash_seed_changes_vectors() {
        let other = MockEncoder::new(MockEncoderConfig {
            dimension: 64,
            hash_seed: 7,
        })
        .unwrap();
        assert_ne!(encoder().token_vector("slim"), other.token_vector("slim"));
    }

    #[test]
    fn rejects_tiny_dimension() {
        assert!(MockEncoder::new(MockEncoderConfig {
            dimension: 1,
            hash_seed: 0
        })
        .is_err());
    }
}
