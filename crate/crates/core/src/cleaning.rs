//! Mislabel detection: PETs with enough balanced examples have their span
//! replaced by the euphemistic sense, the rewrite is scored against the
//! original with greedy-matching BERTScore, and label/score disagreements
//! relative to the median are flagged for human review.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{canonical_pet, compute_pet_stats, CharSpan, PetExample, PetStats};
use crate::embedding::{cosine_similarity, EmbeddingBundle, Encoder, TokenEmbeddings};
use crate::error::{Error, Result};
use crate::label::Label;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Senses {
    pub euphemistic: Option<String>,
    pub literal: Option<String>,
}

/// Per-PET paraphrases of the euphemistic and literal readings.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SenseInventory {
    entries: BTreeMap<String, Senses>,
}

#[derive(Debug, Deserialize, Serialize)]
struct InventoryRecord {
    pet: String,
    euph_sense: String,
    noneuph_sense: String,
}

fn non_empty(s: &str) -> Option<String> {
    let t = s.trim();
    (!t.is_empty()).then(|| t.to_string())
}

impl SenseInventory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an entry; at least one sense must be present.
    pub fn insert(
        &mut self,
        pet: &str,
        euphemistic: Option<&str>,
        literal: Option<&str>,
    ) -> Result<()> {
        let pet = canonical_pet(pet);
        if pet.is_empty() {
            return Err(Error::Config("sense inventory entry with empty PET".into()));
        }
        let senses = Senses {
            euphemistic: euphemistic.and_then(non_empty),
            literal: literal.and_then(non_empty),
        };
        if senses.euphemistic.is_none() && senses.literal.is_none() {
            return Err(Error::MissingSense(pet));
        }
        self.entries.insert(pet, senses);
        Ok(())
    }

    pub fn get(&self, pet: &str) -> Option<&Senses> {
        self.entries.get(pet)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Senses)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Reads `pet,euph_sense,noneuph_sense`; either sense column may be empty.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut inventory = SenseInventory::new();
        let mut csv = csv::Reader::from_reader(reader);
        for record in csv.deserialize::<InventoryRecord>() {
            let record = record?;
            inventory.insert(
                &record.pet,
                Some(&record.euph_sense),
                Some(&record.noneuph_sense),
            )?;
        }
        Ok(inventory)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        for (pet, senses) in &self.entries {
            csv.serialize(InventoryRecord {
                pet: pet.clone(),
                euph_sense: senses.euphemistic.clone().unwrap_or_default(),
                noneuph_sense: senses.literal.clone().unwrap_or_default(),
            })?;
        }
        csv.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// PETs frequent enough and balanced enough to be worth cleaning.
///
/// Excludes PETs with fewer than `min_count` examples and those whose
/// majority class exceeds `max_skew` (a PET at exactly `max_skew` stays).
pub fn select_cleanable_pets(stats: &[PetStats], min_count: usize, max_skew: f64) -> BTreeSet<String> {
    stats
        .iter()
        .filter(|s| s.count >= min_count && s.count > 0)
        .filter(|s| {
            let majority = s.positives.max(s.count - s.positives);
            majority as f64 / s.count as f64 <= max_skew
        })
        .map(|s| s.pet.clone())
        .collect()
}

fn begins_sentence(text: &str, span: CharSpan) -> bool {
    let before = text
        .chars()
        .take(span.start)
        .collect::<Vec<_>>();
    let last = before
        .iter()
        .rev()
        .find(|c| !c.is_whitespace() && !matches!(c, '"' | '\'' | '“' | '‘' | '(' | '['));
    matches!(last, None | Some('.' | '!' | '?' | '…'))
}

/// Replaces `span` of `text` with `phrase`. At the start of a sentence the
/// first character of `phrase` takes the case of the replaced text.
/// Returns the new text and the span of the inserted phrase.
pub fn replace_span(text: &str, span: CharSpan, phrase: &str) -> Result<(String, CharSpan)> {
    let range = span.byte_range(text)?;
    let original = &text[range.clone()];
    let mut replacement = phrase.to_string();
    if begins_sentence(text, span) {
        if let (Some(orig_first), Some(first)) = (original.chars().next(), phrase.chars().next()) {
            let cased: String = if orig_first.is_uppercase() {
                first.to_uppercase().collect()
            } else if orig_first.is_lowercase() {
                first.to_lowercase().collect()
            } else {
                first.to_string()
            };
            replacement = cased + &phrase[first.len_utf8()..];
        }
    }
    let mut out = String::with_capacity(text.len() + replacement.len());
    out.push_str(&text[..range.start]);
    out.push_str(&replacement);
    out.push_str(&text[range.end..]);
    let new_span = CharSpan::new(span.start, span.start + replacement.chars().count());
    Ok((out, new_span))
}

pub fn substitute_sense(example: &PetExample, phrase: &str) -> Result<String> {
    replace_span(&example.text, example.span, phrase).map(|(text, _)| text)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BertScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Greedy-matching BERTScore without idf weighting or baseline rescaling.
///
/// Precision averages, over candidate tokens, the best cosine similarity
/// against any reference token; recall is the same with roles swapped.
pub fn bertscore(candidate: &TokenEmbeddings, reference: &TokenEmbeddings) -> Result<BertScore> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(Error::EmptyTokens);
    }
    if candidate.dim() != reference.dim() {
        return Err(Error::DimensionMismatch {
            expected: candidate.dim(),
            found: reference.dim(),
        });
    }
    let (n, m) = (candidate.len(), reference.len());
    let mut best_row = vec![f64::NEG_INFINITY; n];
    let mut best_col = vec![f64::NEG_INFINITY; m];
    for (i, c) in candidate.rows().enumerate() {
        for (j, r) in reference.rows().enumerate() {
            let sim = cosine_similarity(c, r)?;
            best_row[i] = best_row[i].max(sim);
            best_col[j] = best_col[j].max(sim);
        }
    }
    let precision = best_row.iter().sum::<f64>() / n as f64;
    let recall = best_col.iter().sum::<f64>() / m as f64;
    let denom = precision + recall;
    let f1 = if denom == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / denom
    };
    Ok(BertScore {
        precision,
        recall,
        f1,
    })
}

pub fn bertscore_f1(candidate: &TokenEmbeddings, reference: &TokenEmbeddings) -> Result<f64> {
    bertscore(candidate, reference).map(|s| s.f1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FlagReason {
    #[serde(rename = "pos-below-median")]
    PositiveBelowMedian,
    #[serde(rename = "neg-above-median")]
    NegativeAboveMedian,
}

impl fmt::Display for FlagReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlagReason::PositiveBelowMedian => "pos-below-median",
            FlagReason::NegativeAboveMedian => "neg-above-median",
        })
    }
}

/// A sentence whose label disagrees with its substitution score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanFlag {
    pub id: String,
    pub pet: String,
    pub label: Label,
    pub bertscore: f64,
    pub median: f64,
    pub reason: FlagReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredExample {
    pub id: String,
    pub pet: String,
    pub label: Label,
    pub score: f64,
}

/// Applies the half rule to one group of scores: positives strictly below
/// the median and negatives strictly above it are flagged. Scores equal to
/// the median are never flagged.
pub fn flag_scored(scored: &[ScoredExample]) -> Vec<CleanFlag> {
    if scored.is_empty() {
        return Vec::new();
    }
    let mut sorted: Vec<f64> = scored.iter().map(|s| s.score).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let (lo, hi) = if n % 2 == 1 {
        (sorted[n / 2], sorted[n / 2])
    } else {
        (sorted[n / 2 - 1], sorted[n / 2])
    };
    let median = lo + (hi - lo) / 2.0;
    // compared against the two middle values so no rounding enters the rule
    let above = |x: f64| x > hi || (x == hi && hi > lo);
    let below = |x: f64| x < lo || (x == lo && lo < hi);

    scored
        .iter()
        .filter_map(|s| {
            let reason = match s.label {
                Label::Euphemistic if below(s.score) => FlagReason::PositiveBelowMedian,
                Label::Literal if above(s.score) => FlagReason::NegativeAboveMedian,
                _ => return None,
            };
            Some(CleanFlag {
                id: s.id.clone(),
                pet: s.pet.clone(),
                label: s.label,
                bertscore: s.score,
                median,
                reason,
            })
        })
        .collect()
}

/// Id under which the euphemistic-sense rewrite of `id` is embedded.
pub fn substituted_id(id: &str) -> String {
    format!("{id}::euph")
}

/// Rewrites of every example whose PET has a euphemistic sense, with the
/// inserted phrase as the new span. Feed these to an external encoder when
/// the mock encoder is not used.
pub fn substitution_examples(
    examples: &[PetExample],
    inventory: &SenseInventory,
) -> Result<Vec<PetExample>> {
    let mut out = Vec::new();
    for example in examples {
        let Some(phrase) = inventory
            .get(&example.pet)
            .and_then(|s| s.euphemistic.as_deref())
        else {
            continue;
        };
        let (text, span) = replace_span(&example.text, example.span, phrase)?;
        out.push(PetExample {
            id: substituted_id(&example.id),
            text,
            pet: example.pet.clone(),
            span,
            label: example.label,
        });
    }
    Ok(out)
}

/// BERTScore of each example against its euphemistic-sense rewrite.
pub fn score_examples<E: Encoder + ?Sized>(
    examples: &[PetExample],
    inventory: &SenseInventory,
    originals: &EmbeddingBundle,
    substituted: &E,
) -> Result<Vec<ScoredExample>> {
    examples
        .iter()
        .map(|example| {
            let phrase = inventory
                .get(&example.pet)
                .and_then(|s| s.euphemistic.as_deref())
                .ok_or_else(|| Error::MissingSense(example.pet.clone()))?;
            let rewritten = substitute_sense(example, phrase)?;
            let original = originals.entry(&example.id)?;
            let replaced = substituted
                .encode(&substituted_id(&example.id), &rewritten)
                .map_err(|err| match err {
                    Error::MissingEmbedding(_) => {
                        Error::MissingEmbedding(substituted_id(&example.id))
                    }
                    other => other,
                })?;
            let score = bertscore_f1(&original.tokens, &replaced.tokens)?;
            Ok(ScoredExample {
                id: example.id.clone(),
                pet: example.pet.clone(),
                label: example.label,
                score,
            })
        })
        .collect()
}

/// Flags the examples of a single PET against that PET's median score.
pub fn flag_mislabelled<E: Encoder + ?Sized>(
    examples: &[PetExample],
    inventory: &SenseInventory,
    originals: &EmbeddingBundle,
    substituted: &E,
) -> Result<Vec<CleanFlag>> {
    if let Some(first) = examples.first() {
        if let Some(other) = examples.iter().find(|e| e.pet != first.pet) {
            return Err(Error::Shape(format!(
                "flag_mislabelled expects one PET, got {:?} and {:?}",
                first.pet, other.pet
            )));
        }
    }
    let scored = score_examples(examples, inventory, originals, substituted)?;
    Ok(flag_scored(&scored))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MedianScope {
    #[default]
    PerPet,
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CleaningConfig {
    pub min_count: usize,
    pub max_skew: f64,
    pub median_scope: MedianScope,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        CleaningConfig {
            min_count: 10,
            max_skew: 0.8,
            median_scope: MedianScope::PerPet,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CleaningReport {
    pub cleanable_pets: Vec<String>,
    /// Cleanable PETs skipped because the inventory has no euphemistic sense.
    pub missing_sense: Vec<String>,
    pub scored: usize,
    pub flags: Vec<CleanFlag>,
}

/// Runs selection, scoring and flagging over a whole training corpus.
pub fn flag_corpus<E: Encoder + ?Sized>(
    examples: &[PetExample],
    inventory: &SenseInventory,
    originals: &EmbeddingBundle,
    substituted: &E,
    config: &CleaningConfig,
) -> Result<CleaningReport> {
    let cleanable = select_cleanable_pets(
        &compute_pet_stats(examples),
        config.min_count,
        config.max_skew,
    );
    let (usable, missing): (Vec<&String>, Vec<&String>) = cleanable.iter().partition(|pet| {
        inventory
            .get(pet)
            .is_some_and(|s| s.euphemistic.is_some())
    });
    let usable: HashSet<&str> = usable.into_iter().map(String::as_str).collect();

    let mut groups: BTreeMap<&str, Vec<PetExample>> = BTreeMap::new();
    for example in examples.iter().filter(|e| usable.contains(e.pet.as_str())) {
        groups.entry(&example.pet).or_default().push(example.clone());
    }
    let mut scored_total = 0;
    let flags = match config.median_scope {
        MedianScope::PerPet => {
            let mut flags = Vec::new();
            for group in groups.values() {
                let scored = score_examples(group, inventory, originals, substituted)?;
                scored_total += scored.len();
                flags.extend(flag_scored(&scored));
            }
            flags
        }
        MedianScope::Global => {
            let mut scored = Vec::new();
            for group in groups.values() {
                scored.extend(score_examples(group, inventory, originals, substituted)?);
            }
            scored_total = scored.len();
            flag_scored(&scored)
        }
    };
    Ok(CleaningReport {
        cleanable_pets: cleanable.iter().cloned().collect(),
        missing_sense: missing.into_iter().cloned().collect(),
        scored: scored_total,
        flags,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct FlagRecord {
    id: String,
    pet: String,
    label: Label,
    bertscore: f64,
    median: f64,
    reason: FlagReason,
}

pub fn write_flags<W: Write>(writer: W, flags: &[CleanFlag]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    for f in flags {
        csv.serialize(FlagRecord {
            id: f.id.clone(),
            pet: f.pet.clone(),
            label: f.label,
            bertscore: f.bertscore,
            median: f.median,
            reason: f.reason,
        })?;
    }
    csv.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn read_flags<R: Read>(reader: R) -> Result<Vec<CleanFlag>> {
    let mut csv = csv::Reader::from_reader(reader);
    csv.deserialize::<FlagRecord>()
        .map(|r| {
            let r = r?;
            Ok(CleanFlag {
                id: r.id,
                pet: r.pet,
                label: r.label,
                bertscore: r.bertscore,
                median: r.median,
                reason: r.reason,
            })
        })
        .collect()
}

/// Reviewer decision for one flagged example.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Relabel(Label),
    KeepOriginal,
}

impl FromStr for Verdict {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "keep" => Ok(Verdict::KeepOriginal),
            other => other.parse().map(Verdict::Relabel),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Correction {
    pub id: String,
    pub verdict: Verdict,
}

#[derive(Debug, Deserialize)]
struct CorrectionRecord {
    id: String,
    new_label: String,
}

/// Reads `id,new_label` where `new_label` is `0`, `1` or `keep`.
pub fn read_corrections<R: Read>(reader: R) -> Result<Vec<Correction>> {
    let mut csv = csv::Reader::from_reader(reader);
    csv.deserialize::<CorrectionRecord>()
        .map(|r| {
            let r = r?;
            Ok(Correction {
                verdict: r.new_label.parse()?,
                id: r.id,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditEntry {
    pub id: String,
    pub old_label: Label,
    pub new_label: Label,
    pub changed: bool,
}

pub fn write_audit<W: Write>(writer: W, audit: &[AuditEntry]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    for entry in audit {
        csv.serialize(entry)?;
    }
    csv.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Applies reviewed corrections, returning the new dataset and one audit
/// entry per correction.
pub fn apply_corrections(
    dataset: &[PetExample],
    flags: &[CleanFlag],
    corrections: &[Correction],
) -> Result<(Vec<PetExample>, Vec<AuditEntry>)> {
    let index: HashMap<&str, usize> = dataset
        .iter()
        .enumerate()
        .map(|(i, e)| (e.id.as_str(), i))
        .collect();
    let flagged: HashSet<&str> = flags.iter().map(|f| f.id.as_str()).collect();

    let mut out = dataset.to_vec();
    let mut audit = Vec::with_capacity(corrections.len());
    for correction in corrections {
        let &i = index
            .get(correction.id.as_str())
            .ok_or_else(|| Error::UnknownExample(correction.id.clone()))?;
        if !flagged.contains(correction.id.as_str()) {
            return Err(Error::UnflaggedCorrection(correction.id.clone()));
        }
        let old_label = out[i].label;
        let new_label = match correction.verdict {
            Verdict::Relabel(label) => label,
            Verdict::KeepOriginal => old_label,
        };
        out[i].label = new_label;
        audit.push(AuditEntry {
            id: correction.id.clone(),
            old_label,
            new_label,
            changed: old_label != new_label,
        });
    }
    Ok((out, audit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Delimiters;
    use crate::embedding::{MockEncoder, MockEncoderConfig};

    fn example(id: &str, raw: &str, label: Label) -> PetExample {
        PetExample::parse(id, raw, label, &Delimiters::default()).unwrap()
    }

    fn stats(count: usize, positives: usize) -> PetStats {
        PetStats {
            pet: format!("p{count}-{positives}"),
            count,
            positives,
        }
    }

    #[test]
    fn cleanable_selection_boundaries() {
        let s9 = stats(9, 5);
        let s10 = stats(10, 5);
        let s10_skew = stats(10, 8);
        let s10_neg_skew = stats(10, 2);
        let s10_over = stats(10, 9);
        let s20_over = stats(20, 17);
        let picked = select_cleanable_pets(
            &[s9.clone(), s10.clone(), s10_skew.clone(), s10_neg_skew.clone(), s10_over.clone(), s20_over.clone()],
            10,
            0.8,
        );
        assert!(!picked.contains(&s9.pet));
        assert!(picked.contains(&s10.pet));
        assert!(picked.contains(&s10_skew.pet));
        assert!(picked.contains(&s10_neg_skew.pet));
        assert!(!picked.contains(&s10_over.pet));
        assert!(!picked.contains(&s20_over.pet));
    }

    #[test]
    fn substitution_examples_from_table() {
        let ex = example("1", "Can it be <disabled>?", Label::Euphemistic);
        assert_eq!(substitute_sense(&ex, "handicapped").unwrap(), "Can it be handicapped?");
        assert_eq!(substitute_sense(&ex, "disabled").unwrap(), ex.text);

        let ex = example("2", "<Disabled> people deserve access.", Label::Euphemistic);
        assert_eq!(
            substitute_sense(&ex, "switched off").unwrap(),
            "Switched off people deserve access."
        );
        assert_eq!(substitute_sense(&ex, "disabled").unwrap(), ex.text);

        let ex = example("3", "It broke. <Slim> chances remain.", Label::Literal);
        assert_eq!(
            substitute_sense(&ex, "thin").unwrap(),
            "It broke. Thin chances remain."
        );
    }

    #[test]
    fn substitution_rejects_bad_span() {
        let mut ex = example("1", "a <b>", Label::Literal);
        ex.span = CharSpan::new(2, 40);
        assert!(matches!(substitute_sense(&ex, "x"), Err(Error::Span { .. })));
    }

    fn token_rows(rows: &[&[f32]]) -> TokenEmbeddings {
        let dim = rows[0].len();
        TokenEmbeddings::new(
            dim,
            (0..rows.len()).map(|i| format!("t{i}")).collect(),
            (0..rows.len()).map(|i| CharSpan::new(i, i + 1)).collect(),
            rows.concat(),
        )
        .unwrap()
    }

    #[test]
    fn bertscore_landmarks() {
        let a = token_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!((bertscore_f1(&a, &a).unwrap() - 1.0).abs() < 1e-12);

        let x = token_rows(&[&[1.0, 0.0]]);
        let y = token_rows(&[&[0.5, 3f32.sqrt() / 2.0]]);
        assert!((bertscore_f1(&x, &y).unwrap() - 0.5).abs() < 1e-7);
    }

    #[test]
    fn bertscore_two_by_three_against_hand_oracle() {
        // similarity matrix rows: candidate tokens, columns: reference tokens
        let c = token_rows(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        let r = token_rows(&[&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0], &[0.0, 0.6, 0.8]]);
        // sims: c0 -> (1, 0, 0); c1 -> (0, 0, 0.6)
        let p: f64 = (1.0 + 0.6) / 2.0;
        let r_: f64 = (1.0 + 0.0 + 0.6) / 3.0;
        let expected = 2.0 * p * r_ / (p + r_);
        let got = bertscore(&c, &r).unwrap();
        assert!((got.precision - p).abs() < 1e-7);
        assert!((got.recall - r_).abs() < 1e-7);
        assert!((got.f1 - expected).abs() < 1e-7);
    }

    #[test]
    fn bertscore_empty_side() {
        let a = token_rows(&[&[1.0, 0.0]]);
        let empty = TokenEmbeddings::new(2, vec![], vec![], vec![]).unwrap();
        assert!(matches!(bertscore_f1(&a, &empty), Err(Error::EmptyTokens)));
        assert!(matches!(bertscore_f1(&empty, &a), Err(Error::EmptyTokens)));
    }

    fn scored(rows: &[(f64, Label)]) -> Vec<ScoredExample> {
        rows.iter()
            .enumerate()
            .map(|(i, &(score, label))| ScoredExample {
                id: format!("s{i}"),
                pet: "p".into(),
                label,
                score,
            })
            .collect()
    }

    #[test]
    fn half_rule_on_six_sentences() {
        use Label::*;
        // sorted scores: .1 .2 .3 | .6 .7 .9, median .45
        let rows = scored(&[
            (0.9, Literal),     // above, negative -> flag
            (0.1, Euphemistic), // below, positive -> flag
            (0.3, Literal),
            (0.7, Euphemistic),
            (0.2, Euphemistic), // flag
            (0.6, Literal),     // flag
        ]);
        let flags = flag_scored(&rows);
        let ids: Vec<_> = flags.iter().map(|f| f.id.as_str()).collect();
        assert_eq!(ids, ["s0", "s1", "s4", "s5"]);
        assert_eq!(flags[0].reason, FlagReason::NegativeAboveMedian);
        assert_eq!(flags[1].reason, FlagReason::PositiveBelowMedian);
        assert!((flags[0].median - 0.45).abs() < 1e-12);
    }

    #[test]
    fn median_ties_are_not_flagged() {
        use Label::*;
        let rows = scored(&[(0.5, Literal), (0.5, Euphemistic), (0.5, Literal)]);
        assert!(flag_scored(&rows).is_empty());
        let rows = scored(&[(0.2, Literal), (0.5, Euphemistic), (0.5, Literal), (0.9, Literal)]);
        let flags = flag_scored(&rows);
        assert_eq!(flags.len(), 1);
        assert_eq!(flags[0].id, "s3");
    }

    #[test]
    fn corrections_apply_and_audit() {
        let data = vec![
            example("d", "Can it be <disabled>?", Label::Euphemistic),
            example("e", "An <economical> route.", Label::Literal),
            example("s", "A <slim> lead.", Label::Euphemistic),
        ];
        let flag = |id: &str| CleanFlag {
            id: id.into(),
            pet: "x".into(),
            label: Label::Euphemistic,
            bertscore: 0.0,
            median: 0.0,
            reason: FlagReason::PositiveBelowMedian,
        };
        let flags = vec![flag("d"), flag("s")];
        let corrections = read_corrections("id,new_label\nd,0\ns,keep\n".as_bytes()).unwrap();
        let (out, audit) = apply_corrections(&data, &flags, &corrections).unwrap();
        assert_eq!(out[0].label, Label::Literal);
        assert_eq!(out[1], data[1]);
        assert_eq!(out[2], data[2]);
        assert_eq!(audit.len(), 2);
        assert!(audit[0].changed);
        assert!(!audit[1].changed);

        let (same, audit) = apply_corrections(&data, &flags, &[]).unwrap();
        assert_eq!(same, data);
        assert!(audit.is_empty());

        let unknown = [Correction {
            id: "zzz".into(),
            verdict: Verdict::KeepOriginal,
        }];
        assert!(matches!(
            apply_corrections(&data, &flags, &unknown),
            Err(Error::UnknownExample(_))
        ));
        let unflagged = [Correction {
            id: "e".into(),
            verdict: Verdict::Relabel(Label::Euphemistic),
        }];
        assert!(matches!(
            apply_corrections(&data, &flags, &unflagged),
            Err(Error::UnflaggedCorrection(_))
        ));
    }

    #[test]
    fn inventory_csv() {
        let csv = "pet,euph_sense,noneuph_sense\nDisabled,handicapped,switched off\nslim,thin,\n";
        let inv = SenseInventory::read_csv(csv.as_bytes()).unwrap();
        assert_eq!(inv.len(), 2);
        assert_eq!(inv.get("disabled").unwrap().literal.as_deref(), Some("switched off"));
        assert_eq!(inv.get("slim").unwrap().literal, None);
        let bad = "pet,euph_sense,noneuph_sense\nx,,\n";
        assert!(SenseInventory::read_csv(bad.as_bytes()).is_err());
    }

    #[test]
    fn flags_csv_round_trip() {
        let flags = flag_scored(&scored(&[(0.9, Label::Literal), (0.1, Label::Euphemistic)]));
        let mut buf = Vec::new();
        write_flags(&mut buf, &flags).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("id,pet,label,bertscore,median,reason\n"));
        assert!(text.contains("neg-above-median"));
        assert_eq!(read_flags(buf.as_slice()).unwrap(), flags);
    }

    #[test]
    fn flag_mislabelled_end_to_end_with_mock() {
        let enc = MockEncoder::new(MockEncoderConfig::default()).unwrap();
        let mut inventory = SenseInventory::new();
        inventory.insert("disabled", Some("handicapped"), Some("switched off")).unwrap();
        let data = vec![
            example("a", "Can it be <disabled>?", Label::Euphemistic),
            example("b", "The <disabled> veteran spoke about the war and his wheelchair", Label::Euphemistic),
            example("c", "<disabled>", Label::Literal),
            example("d", "Alarm <disabled> now", Label::Literal),
        ];
        let mut originals = EmbeddingBundle::new(64).unwrap();
        for e in &data {
            originals.insert(e.id.clone(), enc.encode_text(&e.text)).unwrap();
        }
        let scores = score_examples(&data, &inventory, &originals, &enc).unwrap();
        let flags = flag_mislabelled(&data, &inventory, &originals, &enc).unwrap();
        assert_eq!(flags, flag_scored(&scores));
        // the one-token sentence changes entirely, so its score is lowest
        let min = scores.iter().min_by(|a, b| a.score.total_cmp(&b.score)).unwrap();
        assert_eq!(min.id, "c");

        let mut empty = SenseInventory::new();
        empty.insert("other", Some("x"), None).unwrap();
        assert!(matches!(
            flag_mislabelled(&data, &empty, &originals, &enc),
            Err(Error::MissingSense(_))
        ));
        let partial = EmbeddingBundle::new(64).unwrap();
        assert!(matches!(
            flag_mislabelled(&data, &inventory, &partial, &enc),
            Err(Error::MissingEmbedding(_))
        ));
        assert!(matches!(
            flag_mislabelled(&data, &inventory, &originals, &partial),
            Err(Error::MissingEmbedding(id)) if id == "a::euph"
        ));
    }
}
