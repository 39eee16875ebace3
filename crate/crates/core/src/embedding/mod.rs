//! Token- and sentence-level embeddings shared by every downstream stage.

mod bundle;
mod mock;
mod tokenize;

pub use bundle::{load_bundle, write_bundle, BUNDLE_FORMAT, MANIFEST_FILE, VECTORS_FILE};
pub use mock::{fnv1a64, MockEncoder, MockEncoderConfig, SplitMix64};
pub use tokenize::{tokenize, tokenize_with_offsets, Token};

use indexmap::IndexMap;

use crate::corpus::CharSpan;
use crate::error::{Error, Result};

/// Per-token vectors of one sentence, stored row-major as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddings {
    dim: usize,
    tokens: Vec<String>,
    offsets: Vec<CharSpan>,
    data: Vec<f32>,
}

impl TokenEmbeddings {
    pub fn new(
        dim: usize,
        tokens: Vec<String>,
        offsets: Vec<CharSpan>,
        data: Vec<f32>,
    ) -> Result<Self> {
        if offsets.len() != tokens.len() {
            return Err(Error::Shape(format!(
                "{} tokens but {} offsets",
                tokens.len(),
                offsets.len()
            )));
        }
        if data.len() != tokens.len() * dim {
            return Err(Error::Shape(format!(
                "{} tokens of dimension {dim} need {} values, got {}",
                tokens.len(),
                tokens.len() * dim,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Range("non-finite token embedding".into()));
        }
        Ok(TokenEmbeddings {
            dim,
            tokens,
            offsets,
            data,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn offsets(&self) -> &[CharSpan] {
        &self.offsets
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> + '_ {
        // chunks_exact panics on a zero chunk size; dim >= 1 for any real bundle
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

/// Token embeddings plus the sentence-level vector of one example.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleEntry {
    pub tokens: TokenEmbeddings,
    pub sentence: Vec<f32>,
    /// Set when the encoder had nothing to embed and emitted a placeholder.
    pub degenerate: bool,
}

/// Embeddings for a set of examples keyed by example id, in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBundle {
    dim: usize,
    entries: IndexMap<String, BundleEntry>,
}

impl EmbeddingBundle {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        Ok(EmbeddingBundle {
            dim,
            entries: IndexMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Inserts or replaces an entry after checking its dimension.
    pub fn insert(&mut self, id: impl Into<String>, entry: BundleEntry) -> Result<()> {
        if entry.tokens.dim() != self.dim && !entry.tokens.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: entry.tokens.dim(),
            });
        }
        if entry.sentence.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: entry.sentence.len(),
            });
        }
        self.entries.insert(id.into(), entry);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&BundleEntry> {
        self.entries.get(id)
    }

    pub fn entry(&self, id: &str) -> Result<&BundleEntry> {
        self.get(id)
            .ok_or_else(|| Error::MissingEmbedding(id.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BundleEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Adds every entry of `other`; ids already present must carry
    /// identical embeddings.
    pub fn merge(&mut self, other: EmbeddingBundle) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        for (id, entry) in other.entries {
            match self.entries.get(&id) {
                Some(existing) if *existing != entry => {
                    return Err(Error::Shape(format!(
                        "conflicting embeddings for id {id:?} while merging bundles"
                    )))
                }
                Some(_) => {}
                None => {
                    self.entries.insert(id, entry);
                }
            }
        }
        Ok(())
    }
}

/// Anything that can produce embeddings for a sentence on demand.
pub trait Encoder {
    fn dim(&self) -> usize;
    fn encode(&self, id: &str, text: &str) -> Result<BundleEntry>;
}

/// A precomputed bundle answers by id; the text is ignored.
impl Encoder for EmbeddingBundle {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, id: &str, _text: &str) -> Result<BundleEntry> {
        self.entry(id).cloned()
    }
}

/// `1 - cos(u, v)`, clamped to `[0, 2]`.
pub fn cosine_distance<T: Copy + Into<f64>>(u: &[T], v: &[T]) -> Result<f64> {
    Ok(1.0 - cosine_similarity(u, v)?)
}

pub fn cosine_similarity<T: Copy + Into<f64>>(u: &[T], v: &[T]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b): (f64, f64) = (a.into(), b.into());
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

pub fn l2_norm<T: Copy + Into<f64>>(v: &[T]) -> f64 {
    v.iter()
        .map(|&x| {
            let x: f64 = x.into();
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_distance_landmarks() {
        let u = [1.0f64, 2.0, -3.0];
        let neg: Vec<f64> = u.iter().map(|x| -x).collect();
        assert!(cosine_distance(&u, &u).unwrap().abs() < 1e-12);
        assert!((cosine_distance(&u, &neg).unwrap() - 2.0).abs() < 1e-12);
        assert!((cosine_distance(&[1.0f64, 0.0], &[0.0, 5.0]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_distance_errors() {
        assert!(matches!(
            cosine_distance(&[0.0f64, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroVector)
        ));
        assert!(matches!(
            cosine_distance(&[1.0f64], &[1.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn bundle_rejects_wrong_dimension() {
        let mut bundle = EmbeddingBundle::new(3).unwrap();
        let tokens = TokenEmbeddings::new(2, vec!["a".into()], vec![CharSpan::new(0, 1)], vec![1.0, 0.0])
            .unwrap();
        let entry = BundleEntry {
            tokens,
            sentence: vec![1.0, 0.0],
            degenerate: false,
        };
        assert!(matches!(
            bundle.insert("x", entry),
            Err(Error::DimensionMismatch { expected: 3, found: 2 })
        ));
    }

    fn nonzero_vec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, 5).prop_filter("nonzero", |v| l2_norm(v) > 1e-3)
    }

    proptest! {
        #[test]
        fn symmetric_and_scale_invariant(u in nonzero_vec(), v in nonzero_vec(), a in 0.01f64..100.0, b in 0.01f64..100.0) {
            let d = cosine_distance(&u, &v).unwrap();
            prop_assert!((d - cosine_distance(&v, &u).unwrap()).abs() < 1e-12);
            let su: Vec<f64> = u.iter().map(|x| x * a).collect();
            let sv: Vec<f64> = v.iter().map(|x| x * b).collect();
            prop_assert!((d - cosine_distance(&su, &sv).unwrap()).abs() < 1e-9);
            prop_assert!((0.0..=2.0).contains(&d));
        }
    }
}
