//! Labeled PET corpus: parsing of delimited sentences, CSV I/O, the
//! 80/10/10 split and per-PET statistics.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::Label;

/// Half-open range of character (not byte) offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
}

impl CharSpan {
    pub fn new(start: usize, end: usize) -> Self {
        CharSpan { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &CharSpan) -> bool {
        self.start < other.end && other.start < self.end
    }

    /// Converts to a byte range of `text`, checking bounds.
    pub fn byte_range(&self, text: &str) -> Result<std::ops::Range<usize>> {
        let len = text.chars().count();
        if self.start > self.end || self.end > len {
            return Err(Error::Span {
                start: self.start,
                end: self.end,
                len,
            });
        }
        let mut indices = text.char_indices().map(|(b, _)| b).chain([text.len()]);
        let start = indices.nth(self.start).unwrap_or(text.len());
        let end = if self.end == self.start {
            start
        } else {
            indices.nth(self.end - self.start - 1).unwrap_or(text.len())
        };
        Ok(start..end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delimiters {
    open: String,
    close: String,
}

impl Delimiters {
    pub fn new(open: impl Into<String>, close: impl Into<String>) -> Result<Self> {
        let (open, close) = (open.into(), close.into());
        if open.is_empty() || close.is_empty() {
            return Err(Error::InvalidDelimiters("delimiters must be nonempty".into()));
        }
        if open == close {
            return Err(Error::InvalidDelimiters(
                "open and close delimiters must differ".into(),
            ));
        }
        Ok(Delimiters { open, close })
    }

    pub fn open(&self) -> &str {
        &self.open
    }

    pub fn close(&self) -> &str {
        &self.close
    }

    pub fn wrap(&self, text: &str, span: CharSpan) -> Result<String> {
        let range = span.byte_range(text)?;
        let mut out = String::with_capacity(text.len() + self.open.len() + self.close.len());
        out.push_str(&text[..range.start]);
        out.push_str(&self.open);
        out.push_str(&text[range.clone()]);
        out.push_str(&self.close);
        out.push_str(&text[range.end..]);
        Ok(out)
    }
}

impl Default for Delimiters {
    fn default() -> Self {
        Delimiters {
            open: "<".into(),
            close: ">".into(),
        }
    }
}

/// Lowercased, whitespace-normalized PET identity.
pub fn canonical_pet(surface: &str) -> String {
    surface
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Result of stripping the delimiters from a raw sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delimited {
    pub text: String,
    pub pet: String,
    pub span: CharSpan,
}

/// Strips the single delimited PET span out of `raw`.
///
/// The recorded span covers the whole delimited substring, so wrapping
/// it again reproduces `raw` exactly.
pub fn parse_delimited(raw: &str, delimiters: &Delimiters) -> Result<Delimited> {
    let open_at = raw.find(delimiters.open()).ok_or(Error::MissingPet)?;
    let inner_start = open_at + delimiters.open().len();
    let inner_len = raw[inner_start..]
        .find(delimiters.close())
        .ok_or(Error::MissingPet)?;
    let inner_end = inner_start + inner_len;
    let rest_start = inner_end + delimiters.close().len();
    if raw[rest_start..].contains(delimiters.open()) {
        return Err(Error::MultiplePets);
    }
    let inner = &raw[inner_start..inner_end];
    let pet = canonical_pet(inner);
    if pet.is_empty() {
        return Err(Error::EmptyPet);
    }

    let mut text = String::with_capacity(raw.len());
    text.push_str(&raw[..open_at]);
    text.push_str(inner);
    text.push_str(&raw[rest_start..]);
    let start = raw[..open_at].chars().count();
    let span = CharSpan::new(start, start + inner.chars().count());
    Ok(Delimited { text, pet, span })
}

/// One sentence with its potentially euphemistic term and label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PetExample {
    pub id: String,
    /// Undelimited sentence, original casing.
    pub text: String,
    /// Canonical PET form, see [`canonical_pet`].
    pub pet: String,
    pub span: CharSpan,
    pub label: Label,
}

impl PetExample {
    pub fn parse(
        id: impl Into<String>,
        raw: &str,
        label: Label,
        delimiters: &Delimiters,
    ) -> Result<Self> {
        let Delimited { text, pet, span } = parse_delimited(raw, delimiters)?;
        Ok(PetExample {
            id: id.into(),
            text,
            pet,
            span,
            label,
        })
    }

    /// Surface form of the PET as it appears in `text`.
    pub fn surface(&self) -> Result<&str> {
        Ok(&self.text[self.span.byte_range(&self.text)?])
    }

    pub fn delimited_text(&self, delimiters: &Delimiters) -> Result<String> {
        delimiters.wrap(&self.text, self.span)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusRecord {
    id: String,
    text: String,
    label: String,
}

/// Reads an `id,text,label` CSV. Additional columns are ignored.
pub fn read_corpus<R: Read>(reader: R, delimiters: &Delimiters) -> Result<Vec<PetExample>> {
    let mut csv = csv::Reader::from_reader(reader);
    let mut examples = Vec::new();
    for (row, record) in csv.deserialize::<CorpusRecord>().enumerate() {
        let record = record?;
        let label = record.label.parse()?;
        let example = PetExample::parse(&record.id, &record.text, label, delimiters).map_err(
            |err| match err {
                Error::MissingPet | Error::MultiplePets | Error::EmptyPet => Error::Shape(
                    format!("row {} (id {:?}): {err}", row + 1, record.id),
                ),
                other => other,
            },
        )?;
        examples.push(example);
    }
    Ok(examples)
}

pub fn load_corpus(path: impl AsRef<Path>, delimiters: &Delimiters) -> Result<Vec<PetExample>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(file, delimiters)
}

pub fn write_corpus<W: Write>(
    writer: W,
    examples: &[PetExample],
    delimiters: &Delimiters,
) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    for example in examples {
        csv.serialize(CorpusRecord {
            id: example.id.clone(),
            text: example.delimited_text(delimiters)?,
            label: example.label.to_string(),
        })?;
    }
    csv.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Train/validation/test partition of a corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<PetExample>,
    pub validation: Vec<PetExample>,
    pub test: Vec<PetExample>,
    pub seed: u64,
}

/// Partition sizes for `n` examples: floor(0.8n), floor(0.1n), remainder.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 8 / 10;
    let validation = n / 10;
    (train, validation, n - train - validation)
}

/// Shuffles with a seeded ChaCha8 stream and cuts 80/10/10. Unstratified.
pub fn split_dataset(examples: &[PetExample], seed: u64) -> Result<DatasetSplit> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let (n_train, n_val, _) = split_sizes(examples.len());
    let pick = |idx: &[usize]| idx.iter().map(|&i| examples[i].clone()).collect::<Vec<_>>();
    Ok(DatasetSplit {
        train: pick(&order[..n_train]),
        validation: pick(&order[n_train..n_train + n_val]),
        test: pick(&order[n_train + n_val..]),
        seed,
    })
}

/// JSON record of a split, used later to keep augmented rows away from
/// held-out ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub train_size: usize,
    pub validation_size: usize,
    pub test_size: usize,
    pub validation_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl SplitManifest {
    pub fn from_split(split: &DatasetSplit) -> Self {
        let ids = |xs: &[PetExample]| xs.iter().map(|e| e.id.clone()).collect();
        SplitManifest {
            seed: split.seed,
            train_size: split.train.len(),
            validation_size: split.validation.len(),
            test_size: split.test.len(),
            validation_ids: ids(&split.validation),
            test_ids: ids(&split.test),
        }
    }

    pub fn held_out(&self, id: &str) -> bool {
        self.validation_ids.iter().any(|v| v == id) || self.test_ids.iter().any(|t| t == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PetStats {
    pub pet: String,
    pub count: usize,
    pub positives: usize,
}

impl PetStats {
    pub fn positive_fraction(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.positives as f64 / self.count as f64
        }
    }
}

/// One entry per distinct PET, sorted by PET.
pub fn compute_pet_stats(examples: &[PetExample]) -> Vec<PetStats> {
    let mut by_pet: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for example in examples {
        let entry = by_pet.entry(&example.pet).or_default();
        entry.0 += 1;
        if example.label == Label::Euphemistic {
            entry.1 += 1;
        }
    }
    by_pet
        .into_iter()
        .map(|(pet, (count, positives))| PetStats {
            pet: pet.to_string(),
            count,
            positives,
        })
        .collect()
}

/// `pet,count,positives` CSV.
pub fn write_pet_stats<W: Write>(writer: W, stats: &[PetStats]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    for s in stats {
        csv.serialize(s)?;
    }
    csv.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorpusSummary {
    pub examples: usize,
    pub positives: usize,
    pub distinct_pets: usize,
}

pub fn summarize(examples: &[PetExample]) -> CorpusSummary {
    let stats = compute_pet_stats(examples);
    CorpusSummary {
        examples: examples.len(),
        positives: stats.iter().map(|s| s.positives).sum(),
        distinct_pets: stats.len(),
    }
}
