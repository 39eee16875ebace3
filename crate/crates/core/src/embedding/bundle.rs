//! On-disk bundle: `manifest.json` plus `vectors.bin`.
//!
//! `vectors.bin` holds, for each manifest entry in order, the token matrix
//! rows followed by the sentence vector, all little-endian `f32`. Every
//! manifest entry records its token strings, their character offsets into
//! the undelimited sentence and the byte offset of its first value.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BundleEntry, EmbeddingBundle, TokenEmbeddings};
use crate::corpus::CharSpan;
use crate::error::{Error, Result};

pub const BUNDLE_FORMAT: &str = "euph-embedding-bundle";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const VECTORS_FILE: &str = "vectors.bin";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    dimension: usize,
    entry_count: usize,
    entries: Vec<ManifestEntry>,
    /// Ids an external exporter skipped; carried for information only.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    rejects: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    token_count: usize,
    byte_offset: u64,
    tokens: Vec<String>,
    offsets: Vec<(usize, usize)>,
    #[serde(default)]
    degenerate: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    truncated: bool,
}

pub fn write_bundle(bundle: &EmbeddingBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let dim = bundle.dim();
    let mut vectors: Vec<u8> = Vec::new();
    let mut entries = Vec::with_capacity(bundle.len());
    for (id, entry) in bundle.iter() {
        entries.push(ManifestEntry {
            id: id.to_string(),
            token_count: entry.tokens.len(),
            byte_offset: vectors.len() as u64,
            tokens: entry.tokens.tokens().to_vec(),
            offsets: entry
                .tokens
                .offsets()
                .iter()
                .map(|s| (s.start, s.end))
                .collect(),
            degenerate: entry.degenerate,
            truncated: false,
        });
        for value in entry.tokens.as_slice().iter().chain(&entry.sentence) {
            vectors.extend_from_slice(&value.to_le_bytes());
        }
        debug_assert_eq!(entry.sentence.len(), dim);
    }
    let manifest = Manifest {
        format: BUNDLE_FORMAT.to_string(),
        version: 1,
        dimension: dim,
        entry_count: entries.len(),
        entries,
        rejects: Vec::new(),
    };

    let manifest_path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(&manifest)?;
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
    let vectors_path = dir.join(VECTORS_FILE);
    fs::write(&vectors_path, vectors).map_err(|e| Error::io(&vectors_path, e))?;
    Ok(())
}

fn json_byte_offset(text: &str, err: &serde_json::Error) -> u64 {
    let line = err.line().max(1);
    let column = err.column();
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)) as u64
}

pub fn load_bundle(dir: impl AsRef<Path>) -> Result<EmbeddingBundle> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|err| {
        Error::format(
            json_byte_offset(&text, &err),
            format!("{}: {err}", MANIFEST_FILE),
        )
    })?;
    let vectors_path = dir.join(VECTORS_FILE);
    let bytes = fs::read(&vectors_path).map_err(|e| Error::io(&vectors_path, e))?;
    decode(manifest, &bytes)
}

fn decode(manifest: Manifest, bytes: &[u8]) -> Result<EmbeddingBundle> {
    if manifest.format != BUNDLE_FORMAT {
        return Err(Error::format(
            0,
            format!("unexpected format tag {:?}", manifest.format),
        ));
    }
    if manifest.version != 1 {
        return Err(Error::format(
            0,
            format!("unsupported bundle version {}", manifest.version),
        ));
    }
    let dim = manifest.dimension;
    if dim == 0 {
        return Err(Error::format(0, "dimension must be positive"));
    }
    if manifest.entry_count != manifest.entries.len() {
        return Err(Error::format(
            0,
            format!(
                "entry_count {} but {} entries listed",
                manifest.entry_count,
                manifest.entries.len()
            ),
        ));
    }

    let mut bundle = EmbeddingBundle::new(dim)?;
    let mut cursor: u64 = 0;
    for entry in manifest.entries {
        if entry.byte_offset != cursor {
            return Err(Error::format(
                cursor,
                format!(
                    "entry {:?} declares byte offset {} but data continues at {cursor}",
                    entry.id, entry.byte_offset
                ),
            ));
        }
        if entry.tokens.len() != entry.token_count || entry.offsets.len() != entry.token_count
        {
            return Err(Error::format(
                cursor,
                format!(
                    "entry {:?}: token_count {} but {} tokens and {} offsets",
                    entry.id,
                    entry.token_count,
                    entry.tokens.len(),
                    entry.offsets.len()
                ),
            ));
        }
        let n_values = (entry.token_count + 1) * dim;
        let end = cursor + 4 * n_values as u64;
        if end > bytes.len() as u64 {
            return Err(Error::format(
                bytes.len() as u64,
                format!(
                    "truncated {VECTORS_FILE}: entry {:?} needs bytes up to {end}",
                    entry.id
                ),
            ));
        }
        let mut values = Vec::with_capacity(n_values);
        for (i, chunk) in bytes[cursor as usize..end as usize]
            .chunks_exact(4)
            .enumerate()
        {
            let value = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
            if !value.is_finite() {
                return Err(Error::format(
                    cursor + 4 * i as u64,
                    format!("non-finite value in entry {:?}", entry.id),
                ));
            }
            values.push(value);
        }
        let sentence = values.split_off(entry.token_count * dim);
        let offsets = entry
            .offsets
            .iter()
            .map(|&(s, e)| CharSpan::new(s, e))
            .collect();
        let tokens = TokenEmbeddings::new(dim, entry.tokens, offsets, values)
            .map_err(|e| Error::format(cursor, e.to_string()))?;
        if bundle.get(&entry.id).is_some() {
            return Err(Error::format(cursor, format!("duplicate id {:?}", entry.id)));
        }
        bundle.insert(
            entry.id,
            BundleEntry {
                tokens,
                sentence,
                degenerate: entry.degenerate,
            },
        )?;
        cursor = end;
    }
    if cursor != bytes.len() as u64 {
        return Err(Error::format(
            cursor,
            format!(
                "{} trailing bytes after last entry",
                bytes.len() as u64 - cursor
            ),
        ));
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{MockEncoder, MockEncoderConfig};

    fn sample() -> EmbeddingBundle {
        let enc = MockEncoder::new(MockEncoderConfig {
            dimension: 8,
            hash_seed: 3,
        })
        .unwrap();
        let mut bundle = EmbeddingBundle::new(8).unwrap();
        bundle.insert("s1", enc.encode_text("Can it be disabled?")).unwrap();
        bundle.insert("s2", enc.encode_text("")).unwrap();
        bundle.insert("s3", enc.encode_text("a slim lead")).unwrap();
        bundle
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = sample();
        write_bundle(&bundle, dir.path()).unwrap();
        let loaded = load_bundle(dir.path()).unwrap();
        assert_eq!(loaded, bundle);
        for ((_, a), (_, b)) in loaded.iter().zip(bundle.iter()) {
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a.tokens.as_slice()), bits(b.tokens.as_slice()));
            assert_eq!(bits(&a.sentence), bits(&b.sentence));
        }
    }

    #[test]
    fn truncated_vectors_report_offset() {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&sample(), dir.path()).unwrap();
        let path = dir.path().join(VECTORS_FILE);
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 6);
        let len = bytes.len() as u64;
        fs::write(&path, bytes).unwrap();
        match load_bundle(dir.path()) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, len),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&sample(), dir.path()).unwrap();
        let path = dir.path().join(VECTORS_FILE);
        let mut bytes = fs::read(&path).unwrap();
        bytes.extend_from_slice(&[0, 0, 0, 0]);
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_bundle(dir.path()), Err(Error::Format { .. })));
    }

    #[test]
    fn malformed_manifest_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&sample(), dir.path()).unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), "{\n  \"format\": oops }").unwrap();
        match load_bundle(dir.path()) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 14),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn inconsistent_token_count_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&sample(), dir.path()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).unwrap();
        let patched = text.replacen("\"token_count\": 4", "\"token_count\": 3", 1);
        assert_ne!(text, patched);
        fs::write(&path, patched).unwrap();
        assert!(matches!(load_bundle(dir.path()), Err(Error::Format { .. })));
    }
}
