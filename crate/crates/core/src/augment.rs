//! Corpus augmentation from an external one-sentence-per-line corpus.
//!
//! Representation-based augmentation labels new sentences containing a
//! training PET by their cosine distances to the PET's training sentences.
//! Sense-based augmentation finds sentences containing a sense paraphrase
//! and swaps the PET in, labelled by which sense matched.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::cleaning::{replace_span, SenseInventory};
use crate::corpus::{CharSpan, Delimiters, PetExample, SplitManifest};
use crate::embedding::{cosine_distance, tokenize, tokenize_with_offsets, EmbeddingBundle, Encoder};
use crate::error::{Error, Result};
use crate::label::Label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugConfig {
    /// Accept-far threshold on the largest distance.
    pub delta: f64,
    /// Accept-near threshold on the smallest distance.
    pub epsilon: f64,
    pub n_max: usize,
    /// When false the near branch assigns the nearest sentence's own label.
    pub literal_mode: bool,
}

impl Default for AugConfig {
    fn default() -> Self {
        AugConfig {
            delta: 1.0,
            epsilon: 0.15,
            n_max: 20,
            literal_mode: true,
        }
    }
}

impl AugConfig {
    pub fn validate(&self) -> Result<()> {
        let in_range = |x: f64| (0.0..=2.0).contains(&x);
        if !in_range(self.delta) || !in_range(self.epsilon) {
            return Err(Error::Config(format!(
                "delta {} and epsilon {} must lie in [0, 2]",
                self.delta, self.epsilon
            )));
        }
        if self.epsilon > self.delta {
            return Err(Error::Config(format!(
                "epsilon {} exceeds delta {}",
                self.epsilon, self.delta
            )));
        }
        if self.n_max == 0 {
            return Err(Error::Config("n_max must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    FarAccept,
    NearAccept,
    SenseEuph,
    SenseNoneuph,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::FarAccept => "far-accept",
            Branch::NearAccept => "near-accept",
            Branch::SenseEuph => "sense-euph",
            Branch::SenseNoneuph => "sense-noneuph",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    #[serde(rename = "euphaug-r")]
    Representation,
    #[serde(rename = "euphaug-s")]
    Sense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Accept { label: Label, branch: Branch },
    Reject,
}

/// Threshold rule deciding whether a candidate sentence joins the corpus.
///
/// `dists[i]` is the cosine distance from the candidate to the i-th
/// training sentence of the PET and `labels[i]` that sentence's label.
/// With `M` the farthest and `m` the nearest sentence (lowest index on
/// ties):
///
/// - far branch: `d_M >= delta` and `|d_M - delta| > |d_m - epsilon|`
///   accepts with label `l_M`;
/// - near branch: `d_m <= epsilon` and `|d_m - epsilon| > |d_M - delta|`
///   accepts with `1 - l_M` (or `l_m` when `literal_mode` is off);
/// - anything else is rejected.
pub fn euphaug_r_decide(dists: &[f64], labels: &[Label], config: &AugConfig) -> Result<Decision> {
    if dists.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} distances but {} labels",
            dists.len(),
            labels.len()
        )));
    }
    if dists.is_empty() {
        return Err(Error::Shape("no training sentences to compare against".into()));
    }
    if dists.iter().any(|d| !d.is_finite()) {
        return Err(Error::Range("non-finite distance".into()));
    }
    let (mut far, mut near) = (0, 0);
    for (i, &d) in dists.iter().enumerate() {
        if d > dists[far] {
            far = i;
        }
        if d < dists[near] {
            near = i;
        }
    }
    let (d_far, d_near) = (dists[far], dists[near]);
    let far_gap = (d_far - config.delta).abs();
    let near_gap = (d_near - config.epsilon).abs();

    if d_far >= config.delta && far_gap > near_gap {
        return Ok(Decision::Accept {
            label: labels[far],
            branch: Branch::FarAccept,
        });
    }
    if d_near <= config.epsilon && near_gap > far_gap {
        let label = if config.literal_mode {
            labels[far].flipped()
        } else {
            labels[near]
        };
        return Ok(Decision::Accept {
            label,
            branch: Branch::NearAccept,
        });
    }
    Ok(Decision::Reject)
}

/// External corpus held as one sentence per line. Blank lines are skipped
/// but still count towards line offsets.
#[derive(Debug, Clone, Default)]
pub struct ExternalCorpus {
    lines: Vec<(usize, String)>,
}

impl ExternalCorpus {
    pub fn from_text(text: &str) -> Self {
        let lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| (i, l.to_string()))
            .collect();
        ExternalCorpus { lines }
    }

    pub fn read<R: Read>(mut reader: R) -> Result<Self> {
        let mut text = String::new();
        reader
            .read_to_string(&mut text)
            .map_err(|e| Error::io("<external corpus>", e))?;
        Ok(Self::from_text(&text))
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Occurrence {
    /// Zero-based line number in the external corpus.
    pub line: usize,
    pub sentence: String,
    pub span: CharSpan,
}

/// Sentences containing `phrase` as a whole-token sequence, compared
/// case-insensitively after tokenization, in corpus order. Only the first
/// match within a sentence is reported.
pub fn occurrences<'a>(
    corpus: &'a ExternalCorpus,
    phrase: &str,
) -> impl Iterator<Item = Occurrence> + 'a {
    let needle = tokenize(phrase);
    corpus.lines.iter().filter_map(move |(line, sentence)| {
        if needle.is_empty() {
            return None;
        }
        let tokens = tokenize_with_offsets(sentence);
        tokens
            .windows(needle.len())
            .find(|w| w.iter().zip(&needle).all(|(t, n)| t.text == *n))
            .map(|w| Occurrence {
                line: *line,
                sentence: sentence.clone(),
                span: CharSpan::new(w[0].span.start, w[w.len() - 1].span.end),
            })
    })
}

pub fn find_occurrences(corpus: &ExternalCorpus, phrase: &str, n_max: usize) -> Vec<Occurrence> {
    occurrences(corpus, phrase).take(n_max).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedExample {
    pub example: PetExample,
    pub provenance: Provenance,
    pub branch: Branch,
    pub source_offset: usize,
}

fn id_slug(pet: &str) -> String {
    pet.replace(char::is_whitespace, "_")
}

/// A corpus sentence that will be scored against a PET's training sentences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub id: String,
    pub pet: String,
    pub occurrence: Occurrence,
}

/// Up to `n_max` candidates per training PET, deduplicated by exact text
/// and excluding sentences already in the training set. Sorted by PET.
pub fn euphaug_r_candidates(
    train: &[PetExample],
    corpus: &ExternalCorpus,
    n_max: usize,
) -> Vec<Candidate> {
    let train_texts: HashSet<&str> = train.iter().map(|e| e.text.as_str()).collect();
    let pets: BTreeMap<&str, ()> = train.iter().map(|e| (e.pet.as_str(), ())).collect();
    let mut out = Vec::new();
    for pet in pets.keys() {
        let mut seen = HashSet::new();
        out.extend(
            occurrences(corpus, pet)
                .filter(|o| !train_texts.contains(o.sentence.as_str()))
                .filter(|o| seen.insert(o.sentence.clone()))
                .take(n_max)
                .map(|occurrence| Candidate {
                    id: format!("euphaug-r:{}:{}", occurrence.line, id_slug(pet)),
                    pet: pet.to_string(),
                    occurrence,
                }),
        );
    }
    out
}

/// Representation-based augmentation.
///
/// Training sentence vectors come from `train_bundle`; candidates are
/// embedded through `encoder` under their candidate ids.
pub fn euphaug_r_run<E: Encoder + ?Sized>(
    train: &[PetExample],
    corpus: &ExternalCorpus,
    train_bundle: &EmbeddingBundle,
    encoder: &E,
    config: &AugConfig,
) -> Result<Vec<AugmentedExample>> {
    config.validate()?;
    let mut by_pet: BTreeMap<&str, (Vec<&[f32]>, Vec<Label>)> = BTreeMap::new();
    for example in train {
        let entry = train_bundle.entry(&example.id)?;
        let slot = by_pet.entry(&example.pet).or_default();
        slot.0.push(&entry.sentence);
        slot.1.push(example.label);
    }

    let mut out = Vec::new();
    for candidate in euphaug_r_candidates(train, corpus, config.n_max) {
        let (vectors, labels) = &by_pet[candidate.pet.as_str()];
        let encoded = encoder.encode(&candidate.id, &candidate.occurrence.sentence)?;
        let dists = vectors
            .iter()
            .map(|v| cosine_distance(v, &encoded.sentence))
            .collect::<Result<Vec<_>>>()?;
        if let Decision::Accept { label, branch } = euphaug_r_decide(&dists, labels, config)? {
            out.push(AugmentedExample {
                example: PetExample {
                    id: candidate.id,
                    text: candidate.occurrence.sentence,
                    pet: candidate.pet,
                    span: candidate.occurrence.span,
                    label,
                },
                provenance: Provenance::Representation,
                branch,
                source_offset: candidate.occurrence.line,
            });
        }
    }
    Ok(out)
}

/// Sense-based augmentation: up to `n_max` sentences per sense phrase, with
/// the phrase replaced by the PET. Euphemistic-sense hits are labelled 1,
/// literal-sense hits 0. Output is sorted by PET, then corpus line.
pub fn euphaug_s_run(
    inventory: &SenseInventory,
    corpus: &ExternalCorpus,
    n_max: usize,
) -> Result<Vec<AugmentedExample>> {
    if n_max == 0 {
        return Err(Error::Config("n_max must be positive".into()));
    }
    let mut out = Vec::new();
    for (pet, senses) in inventory.iter() {
        let sources = [
            (senses.euphemistic.as_deref(), Label::Euphemistic, Branch::SenseEuph, 'e'),
            (senses.literal.as_deref(), Label::Literal, Branch::SenseNoneuph, 'n'),
        ];
        let mut rows = Vec::new();
        let mut seen = HashSet::new();
        for (phrase, label, branch, tag) in sources {
            let Some(phrase) = phrase else { continue };
            let mut taken = 0;
            for occurrence in occurrences(corpus, phrase) {
                if taken == n_max {
                    break;
                }
                let (text, span) = replace_span(&occurrence.sentence, occurrence.span, pet)?;
                if !seen.insert(text.clone()) {
                    continue;
                }
                taken += 1;
                rows.push(AugmentedExample {
                    example: PetExample {
                        id: format!("euphaug-s:{}:{}:{tag}", occurrence.line, id_slug(pet)),
                        text,
                        pet: pet.to_string(),
                        span,
                        label,
                    },
                    provenance: Provenance::Sense,
                    branch,
                    source_offset: occurrence.line,
                });
            }
        }
        rows.sort_by_key(|r| (r.source_offset, r.branch));
        out.extend(rows);
    }
    Ok(out)
}

/// Fails if any augmented id is a validation or test id.
pub fn check_held_out(augmented: &[AugmentedExample], manifest: &SplitManifest) -> Result<()> {
    let held: HashSet<&str> = manifest
        .validation_ids
        .iter()
        .chain(&manifest.test_ids)
        .map(String::as_str)
        .collect();
    match augmented.iter().find(|a| held.contains(a.example.id.as_str())) {
        Some(a) => Err(Error::IdCollision(a.example.id.clone())),
        None => Ok(()),
    }
}

#[derive(Debug, Serialize)]
struct AugmentedRecord<'a> {
    id: &'a str,
    text: String,
    label: Label,
    provenance: Provenance,
    branch: Branch,
    source_offset: usize,
}

/// Corpus CSV schema plus `provenance,branch,source_offset`.
pub fn write_augmented<W: Write>(
    writer: W,
    rows: &[AugmentedExample],
    delimiters: &Delimiters,
) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    for row in rows {
        csv.serialize(AugmentedRecord {
            id: &row.example.id,
            text: row.example.delimited_text(delimiters)?,
            label: row.example.label,
            provenance: row.provenance,
            branch: row.branch,
            source_offset: row.source_offset,
        })?;
    }
    csv.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::read_corpus;
    use crate::embedding::{MockEncoder, MockEncoderConfig};
    use Label::*;

    fn cfg(delta: f64, epsilon: f64) -> AugConfig {
        AugConfig {
            delta,
            epsilon,
            ..AugConfig::default()
        }
    }

    #[test]
    fn far_branch_trace() {
        let d = euphaug_r_decide(&[0.9, 0.3], &[Euphemistic, Literal], &cfg(0.7, 0.2)).unwrap();
        assert_eq!(
            d,
            Decision::Accept {
                label: Euphemistic,
                branch: Branch::FarAccept
            }
        );
    }

    #[test]
    fn near_branch_trace() {
        let d = euphaug_r_decide(&[0.5, 0.05], &[Euphemistic, Literal], &cfg(0.6, 0.2)).unwrap();
        assert_eq!(
            d,
            Decision::Accept {
                label: Literal,
                branch: Branch::NearAccept
            }
        );
        let alt = AugConfig {
            literal_mode: false,
            ..cfg(0.6, 0.2)
        };
        assert_eq!(
            euphaug_r_decide(&[0.5, 0.05], &[Euphemistic, Literal], &alt).unwrap(),
            Decision::Accept {
                label: Literal,
                branch: Branch::NearAccept
            }
        );
        let alt_labels = euphaug_r_decide(&[0.5, 0.05], &[Literal, Literal], &alt).unwrap();
        let lit_labels = euphaug_r_decide(&[0.5, 0.05], &[Literal, Literal], &cfg(0.6, 0.2)).unwrap();
        assert_eq!(alt_labels, Decision::Accept { label: Literal, branch: Branch::NearAccept });
        assert_eq!(lit_labels, Decision::Accept { label: Euphemistic, branch: Branch::NearAccept });
    }

    #[test]
    fn reject_trace() {
        let d = euphaug_r_decide(&[0.5, 0.3], &[Euphemistic, Literal], &cfg(0.7, 0.2)).unwrap();
        assert_eq!(d, Decision::Reject);
    }

    #[test]
    fn decide_shape_errors() {
        assert!(matches!(
            euphaug_r_decide(&[0.1], &[Literal, Literal], &cfg(0.7, 0.2)),
            Err(Error::Shape(_))
        ));
        assert!(matches!(euphaug_r_decide(&[], &[], &cfg(0.7, 0.2)), Err(Error::Shape(_))));
    }

    #[test]
    fn config_validation() {
        assert!(AugConfig::default().validate().is_ok());
        assert!(cfg(0.2, 0.3).validate().is_err());
        assert!(cfg(2.5, 0.3).validate().is_err());
        assert!(AugConfig { n_max: 0, ..AugConfig::default() }.validate().is_err());
    }

    #[test]
    fn occurrence_limits_and_boundaries() {
        let text: String = (0..25).map(|i| format!("sentence {i} is about the slim margin\n")).collect();
        let corpus = ExternalCorpus::from_text(&text);
        assert_eq!(find_occurrences(&corpus, "slim", 20).len(), 20);
        assert!(find_occurrences(&corpus, "absent", 20).is_empty());

        let corpus = ExternalCorpus::from_text("She is slimmer now.\nA Slim, quiet chance.\n");
        let hits = find_occurrences(&corpus, "slim", 20);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].line, 1);
        assert_eq!(hits[0].span, CharSpan::new(2, 6));
    }

    #[test]
    fn multi_word_phrase_span() {
        let corpus = ExternalCorpus::from_text("\nThe light was switched off, then on.\n");
        let hits = find_occurrences(&corpus, "Switched Off", 5);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].line, 1);
        let chars: Vec<char> = hits[0].sentence.chars().collect();
        let s: String = chars[hits[0].span.start..hits[0].span.end].iter().collect();
        assert_eq!(s, "switched off");
    }

    #[test]
    fn sense_run_substitutes_pet() {
        let mut inv = SenseInventory::new();
        inv.insert("disabled", Some("handicapped"), Some("switched off")).unwrap();
        inv.insert("slim", Some("skinny"), None).unwrap();
        let corpus = ExternalCorpus::from_text(
            "Handicapped parking is free.\nThe alarm was switched off.\nNothing here.\n",
        );
        let rows = euphaug_s_run(&inv, &corpus, 20).unwrap();
        assert_eq!(rows.len(), 2);
        let delims = Delimiters::default();
        assert_eq!(
            rows[0].example.delimited_text(&delims).unwrap(),
            "<Disabled> parking is free."
        );
        assert_eq!(rows[0].example.label, Euphemistic);
        assert_eq!(rows[0].branch, Branch::SenseEuph);
        assert_eq!(
            rows[1].example.delimited_text(&delims).unwrap(),
            "The alarm was <disabled>."
        );
        assert_eq!(rows[1].example.label, Literal);
        assert_eq!(rows[1].source_offset, 1);
    }

    #[test]
    fn sense_run_caps_each_sense() {
        let mut inv = SenseInventory::new();
        inv.insert("disabled", Some("handicapped"), Some("switched off")).unwrap();
        let mut text = String::new();
        for i in 0..30 {
            text.push_str(&format!("handicapped access number {i}\nswitched off device {i}\n"));
        }
        let rows = euphaug_s_run(&inv, &ExternalCorpus::from_text(&text), 20).unwrap();
        let euph = rows.iter().filter(|r| r.branch == Branch::SenseEuph).count();
        let lit = rows.iter().filter(|r| r.branch == Branch::SenseNoneuph).count();
        assert_eq!((euph, lit), (20, 20));
        let offsets: Vec<_> = rows.iter().map(|r| r.source_offset).collect();
        let mut sorted = offsets.clone();
        sorted.sort();
        assert_eq!(offsets, sorted);
    }

    fn train_fixture() -> Vec<PetExample> {
        let csv = "id,text,label\nt1,Grandpa <passed away> last night,1\nt2,The car <passed away> from us on the road,0\n";
        read_corpus(csv.as_bytes(), &Delimiters::default()).unwrap()
    }

    #[test]
    fn candidate_identical_to_train_sentence_is_excluded() {
        let train = train_fixture();
        let corpus = ExternalCorpus::from_text("Grandpa passed away last night\nHe passed away quietly\n");
        let cands = euphaug_r_candidates(&train, &corpus, 20);
        assert_eq!(cands.len(), 1);
        assert_eq!(cands[0].occurrence.line, 1);
    }

    #[test]
    fn r_run_follows_decide() {
        let train = train_fixture();
        let enc = MockEncoder::new(MockEncoderConfig::default()).unwrap();
        let mut bundle = EmbeddingBundle::new(64).unwrap();
        for e in &train {
            bundle.insert(e.id.clone(), enc.encode_text(&e.text)).unwrap();
        }
        let corpus = ExternalCorpus::from_text(
            "Grandpa passed away last night.\nHe passed away quietly\nunrelated line\nHe passed away quietly\n",
        );
        let config = AugConfig {
            delta: 1.5,
            epsilon: 0.1,
            ..AugConfig::default()
        };
        let rows = euphaug_r_run(&train, &corpus, &bundle, &enc, &config).unwrap();
        // replay every candidate against the decision rule directly
        let mut expected = Vec::new();
        for cand in euphaug_r_candidates(&train, &corpus, 20) {
            let v = enc.encode_text(&cand.occurrence.sentence).sentence;
            let dists: Vec<f64> = train
                .iter()
                .map(|t| cosine_distance(&bundle.entry(&t.id).unwrap().sentence, &v).unwrap())
                .collect();
            let labels: Vec<Label> = train.iter().map(|t| t.label).collect();
            if let Decision::Accept { label, branch } = euphaug_r_decide(&dists, &labels, &config).unwrap() {
                expected.push((cand.id, label, branch));
            }
        }
        let got: Vec<_> = rows.iter().map(|r| (r.example.id.clone(), r.example.label, r.branch)).collect();
        assert_eq!(got, expected);
        // "Grandpa passed away last night." tokenizes like t1, so the nearest
        // distance is 0 <= epsilon and only the gap comparison decides
        let v = enc.encode_text("Grandpa passed away last night.").sentence;
        let d_near = cosine_distance(&bundle.entry("t1").unwrap().sentence, &v).unwrap();
        assert!(d_near < 1e-6);
        assert!(!expected.is_empty() || rows.is_empty());
        // duplicate line 3 is deduplicated
        assert!(rows.iter().all(|r| r.source_offset != 3));
    }

    #[test]
    fn r_run_absent_pet_and_missing_embedding() {
        let train = train_fixture();
        let enc = MockEncoder::new(MockEncoderConfig::default()).unwrap();
        let mut bundle = EmbeddingBundle::new(64).unwrap();
        let corpus = ExternalCorpus::from_text("nothing relevant\n");
        assert!(matches!(
            euphaug_r_run(&train, &corpus, &bundle, &enc, &AugConfig::default()),
            Err(Error::MissingEmbedding(_))
        ));
        for e in &train {
            bundle.insert(e.id.clone(), enc.encode_text(&e.text)).unwrap();
        }
        let rows = euphaug_r_run(&train, &corpus, &bundle, &enc, &AugConfig::default()).unwrap();
        assert!(rows.is_empty());
    }

    #[test]
    fn held_out_collision() {
        let mut inv = SenseInventory::new();
        inv.insert("disabled", Some("handicapped"), None).unwrap();
        let rows = euphaug_s_run(&inv, &ExternalCorpus::from_text("handicapped\n"), 20).unwrap();
        let manifest = SplitManifest {
            seed: 0,
            train_size: 0,
            validation_size: 1,
            test_size: 0,
            validation_ids: vec![rows[0].example.id.clone()],
            test_ids: vec![],
        };
        assert!(matches!(check_held_out(&rows, &manifest), Err(Error::IdCollision(_))));
        let clean = SplitManifest { validation_ids: vec!["other".into()], ..manifest };
        assert!(check_held_out(&rows, &clean).is_ok());
    }

    #[test]
    fn augmented_csv_reads_back_as_corpus() {
        let mut inv = SenseInventory::new();
        inv.insert("disabled", Some("handicapped"), None).unwrap();
        let rows = euphaug_s_run(&inv, &ExternalCorpus::from_text("Is it handicapped, really?\n"), 20).unwrap();
        let delims = Delimiters::default();
        let mut buf = Vec::new();
        write_augmented(&mut buf, &rows, &delims).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("id,text,label,provenance,branch,source_offset\n"));
        assert!(text.contains("euphaug-s,sense-euph,0"));
        let back = read_corpus(buf.as_slice(), &delims).unwrap();
        assert_eq!(back[0], rows[0].example);
    }
}
