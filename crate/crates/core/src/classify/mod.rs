//! Base classifiers over bundle embeddings and their training loop.

mod dan;
mod head;
mod io;

pub use dan::Dan;
pub use head::LinearHead;
pub use io::{load_classifier, write_classifier, write_loss_trace, PARAMS_BIN, PARAMS_MANIFEST};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::PetExample;
use crate::embedding::{BundleEntry, EmbeddingBundle, TokenEmbeddings};
use crate::error::{Error, Result};
use crate::label::{ClassProbs, Label};

const INIT_RANGE: f64 = 0.05;

/// A two-class model over a fixed-length input vector, with parameters
/// exposed as one flat slice.
pub trait Model {
    fn input_dim(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    /// Logits for input `x`; `mask` scales hidden units where the model has any.
    fn logits(&self, x: &[f64], mask: Option<&[f64]>) -> [f64; 2];
    /// Adds d(cross-entropy)/d(params) for class `target` into `grad` and
    /// returns the loss.
    fn accumulate_gradient(&self, x: &[f64], target: usize, mask: Option<&[f64]>, grad: &mut [f64]) -> f64;
    fn dropout_mask(&self, _rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
        None
    }

    fn loss(&self, x: &[f64], target: usize) -> f64 {
        cross_entropy(self.logits(x, None), target)
    }

    fn predict(&self, x: &[f64]) -> ClassProbs {
        ClassProbs::from_logits(self.logits(x, None))
    }
}

/// `-log softmax(logits)[target]`.
pub fn cross_entropy(logits: [f64; 2], target: usize) -> f64 {
    let max = logits[0].max(logits[1]);
    let lse = max + ((logits[0] - max).exp() + (logits[1] - max).exp()).ln();
    lse - logits[target]
}

fn init_uniform<R: Rng>(params: &mut [f64], rng: &mut R) {
    for p in params {
        *p = rng.gen_range(-INIT_RANGE..=INIT_RANGE);
    }
}

pub(crate) fn mean_rows(tokens: &TokenEmbeddings) -> Result<Vec<f64>> {
    if tokens.is_empty() {
        return Err(Error::EmptyTokens);
    }
    let mut mean = vec![0.0f64; tokens.dim()];
    for row in tokens.rows() {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x as f64;
        }
    }
    let n = tokens.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// Componentwise sum of every token vector whose character span overlaps
/// the example's PET span.
pub fn pet_sum_embedding(example: &PetExample, entry: &BundleEntry) -> Result<Vec<f64>> {
    let tokens = &entry.tokens;
    let mut sum = vec![0.0f64; tokens.dim()];
    let mut hits = 0;
    for (i, span) in tokens.offsets().iter().enumerate() {
        if span.overlaps(&example.span) {
            hits += 1;
            for (s, &x) in sum.iter_mut().zip(tokens.row(i)) {
                *s += x as f64;
            }
        }
    }
    if hits == 0 {
        return Err(Error::SpanAlignment(example.id.clone()));
    }
    Ok(sum)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Linear head over the summed PET token vectors.
    PetHead,
    /// Deep averaging network over all token vectors.
    Dan,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pet" | "pet-head" => Ok(ModelKind::PetHead),
            "dan" => Ok(ModelKind::Dan),
            other => Err(Error::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

impl ModelKind {
    pub fn feature(self, example: &PetExample, entry: &BundleEntry) -> Result<Vec<f64>> {
        match self {
            ModelKind::PetHead => pet_sum_embedding(example, entry),
            ModelKind::Dan => mean_rows(&entry.tokens),
        }
    }

    /// Input vectors for every example, resolved before any training starts.
    pub fn features(self, examples: &[PetExample], bundle: &EmbeddingBundle) -> Result<Vec<Vec<f64>>> {
        let entries = examples
            .iter()
            .map(|e| bundle.entry(&e.id))
            .collect::<Result<Vec<_>>>()?;
        examples
            .iter()
            .zip(entries)
            .map(|(e, entry)| self.feature(e, entry))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// DAN only.
    pub dropout: f64,
    /// DAN only.
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-2,
            batch_size: 4,
            epochs: 10,
            seed: 0,
            dropout: 0.1,
            hidden: 128,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// A trained (or freshly initialized) base classifier.
#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    PetHead(LinearHead),
    Dan(Dan),
}

impl Classifier {
    /// Seeded uniform initialization in `[-0.05, 0.05]`.
    pub fn initialize(kind: ModelKind, dim: usize, config: &TrainConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(match kind {
            ModelKind::PetHead => Classifier::PetHead(LinearHead::init(dim, &mut rng)),
            ModelKind::Dan => Classifier::Dan(Dan::init(dim, config.hidden, config.dropout, &mut rng)?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Classifier::PetHead(_) => ModelKind::PetHead,
            Classifier::Dan(_) => ModelKind::Dan,
        }
    }

    pub fn model(&self) -> &dyn Model {
        match self {
            Classifier::PetHead(m) => m,
            Classifier::Dan(m) => m,
        }
    }

    fn model_mut(&mut self) -> &mut dyn Model {
        match self {
            Classifier::PetHead(m) => m,
            Classifier::Dan(m) => m,
        }
    }

    pub fn predict(&self, example: &PetExample, entry: &BundleEntry) -> Result<ClassProbs> {
        let x = self.kind().feature(example, entry)?;
        if x.len() != self.model().input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.model().input_dim(),
                found: x.len(),
            });
        }
        Ok(self.model().predict(&x))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub classifier: Classifier,
    /// Mean training loss of each epoch.
    pub losses: Vec<f64>,
}

/// Mini-batch gradient descent on mean cross-entropy.
///
/// Batch order is reshuffled every epoch from a stream derived from
/// `config.seed`; dropout masks come from the same stream.
pub fn fit<M: Model + ?Sized>(
    model: &mut M,
    data: &[(Vec<f64>, Label)],
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some((x, _)) = data.iter().find(|(x, _)| x.len() != model.input_dim()) {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            found: x.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; model.params().len()];
    let mut losses = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let (x, label) = &data[i];
                let mask = model.dropout_mask(&mut rng);
                total += model.accumulate_gradient(x, label.index(), mask.as_deref(), &mut grad);
            }
            let step = config.learning_rate / batch.len() as f64;
            for (p, g) in model.params_mut().iter_mut().zip(&grad) {
                *p -= step * g;
            }
        }
        losses.push(total / data.len() as f64);
    }
    Ok(losses)
}

/// Trains a classifier of `kind` on `examples` using `bundle` embeddings.
pub fn train(
    kind: ModelKind,
    examples: &[PetExample],
    bundle: &EmbeddingBundle,
    config: &TrainConfig,
) -> Result<Trained> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let features = kind.features(examples, bundle)?;
    let data: Vec<(Vec<f64>, Label)> = features
        .into_iter()
        .zip(examples.iter().map(|e| e.label))
        .collect();
    let mut classifier = Classifier::initialize(kind, bundle.dim(), config)?;
    let losses = fit(classifier.model_mut(), &data, config)?;
    Ok(Trained { classifier, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CharSpan, Delimiters};
    use crate::embedding::{MockEncoder, MockEncoderConfig};

    fn entry_with_rows(rows: &[(&str, CharSpan, [f32; 3])]) -> BundleEntry {
        let tokens = TokenEmbeddings::new(
            3,
            rows.iter().map(|r| r.0.to_string()).collect(),
            rows.iter().map(|r| r.1).collect(),
            rows.iter().flat_map(|r| r.2).collect(),
        )
        .unwrap();
        BundleEntry {
            tokens,
            sentence: vec![1.0, 0.0, 0.0],
            degenerate: false,
        }
    }

    #[test]
    fn pet_sum_single_and_pair() {
        let ex = PetExample::parse("x", "it was <switched off> today", Label::Literal, &Delimiters::default())
            .unwrap();
        let entry = entry_with_rows(&[
            ("it", CharSpan::new(0, 2), [9.0, 9.0, 9.0]),
            ("was", CharSpan::new(3, 6), [9.0, 9.0, 9.0]),
            ("switched", CharSpan::new(7, 15), [1.0, 2.0, 3.0]),
            ("off", CharSpan::new(16, 19), [0.5, -1.0, 0.25]),
            ("today", CharSpan::new(20, 25), [9.0, 9.0, 9.0]),
        ]);
        assert_eq!(pet_sum_embedding(&ex, &entry).unwrap(), [1.5, 1.0, 3.25]);

        let single = PetExample::parse("y", "was <switched> today", Label::Literal, &Delimiters::default())
            .unwrap();
        let entry = entry_with_rows(&[
            ("was", CharSpan::new(0, 3), [9.0, 9.0, 9.0]),
            ("switched", CharSpan::new(4, 12), [1.0, 2.0, 3.0]),
        ]);
        assert_eq!(pet_sum_embedding(&single, &entry).unwrap(), [1.0, 2.0, 3.0]);
    }

    #[test]
    fn subword_pieces_are_summed() {
        // "passed away" split into subword pieces that straddle the span
        let ex = PetExample::parse("z", "he <passed away>.", Label::Euphemistic, &Delimiters::default())
            .unwrap();
        let entry = entry_with_rows(&[
            ("he", CharSpan::new(0, 2), [9.0, 9.0, 9.0]),
            ("pass", CharSpan::new(3, 7), [1.0, 0.0, 0.0]),
            ("ed", CharSpan::new(7, 9), [0.0, 1.0, 0.0]),
            ("away", CharSpan::new(10, 14), [0.0, 0.0, 1.0]),
            (".", CharSpan::new(14, 15), [9.0, 9.0, 9.0]),
        ]);
        let got = pet_sum_embedding(&ex, &entry).unwrap();
        let mut oracle = [0.0f64; 3];
        for (i, span) in entry.tokens.offsets().iter().enumerate() {
            if span.end > ex.span.start && span.start < ex.span.end {
                for d in 0..3 {
                    oracle[d] += entry.tokens.row(i)[d] as f64;
                }
            }
        }
        assert_eq!(got, oracle);
        assert_eq!(got, [1.0, 1.0, 1.0]);
    }

    #[test]
    fn pet_sum_alignment_error() {
        let ex = PetExample::parse("x", "abc <def>", Label::Literal, &Delimiters::default()).unwrap();
        let entry = entry_with_rows(&[("abc", CharSpan::new(0, 3), [1.0, 0.0, 0.0])]);
        assert!(matches!(pet_sum_embedding(&ex, &entry), Err(Error::SpanAlignment(_))));
    }

    fn mock_data() -> (Vec<PetExample>, EmbeddingBundle) {
        let enc = MockEncoder::new(MockEncoderConfig { dimension: 8, hash_seed: 1 }).unwrap();
        let delims = Delimiters::default();
        let rows = [
            ("a", "the <slim> model", 1),
            ("b", "a <slim> lead", 0),
            ("c", "he <passed away>", 1),
            ("d", "he <passed> the ball", 0),
            ("e", "very <economical> choice", 1),
        ];
        let mut bundle = EmbeddingBundle::new(8).unwrap();
        let examples: Vec<_> = rows
            .iter()
            .map(|(id, raw, l)| {
                let e = PetExample::parse(*id, raw, Label::from_index(*l).unwrap(), &delims).unwrap();
                bundle.insert(*id, enc.encode_text(&e.text)).unwrap();
                e
            })
            .collect();
        (examples, bundle)
    }

    #[test]
    fn zero_epochs_keeps_initialization() {
        let (examples, bundle) = mock_data();
        for kind in [ModelKind::PetHead, ModelKind::Dan] {
            let config = TrainConfig { epochs: 0, hidden: 4, seed: 11, ..TrainConfig::default() };
            let trained = train(kind, &examples, &bundle, &config).unwrap();
            let init = Classifier::initialize(kind, 8, &config).unwrap();
            let bits = |c: &Classifier| c.model().params().iter().map(|p| p.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&trained.classifier), bits(&init));
            assert!(trained.losses.is_empty());
            assert!(init.model().params().iter().all(|p| p.abs() <= 0.05));
        }
    }

    #[test]
    fn training_is_bitwise_reproducible() {
        let (examples, bundle) = mock_data();
        for kind in [ModelKind::PetHead, ModelKind::Dan] {
            let config = TrainConfig { epochs: 5, hidden: 6, seed: 3, ..TrainConfig::default() };
            let a = train(kind, &examples, &bundle, &config).unwrap();
            let b = train(kind, &examples, &bundle, &config).unwrap();
            let bits = |t: &Trained| t.classifier.model().params().iter().map(|p| p.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a), bits(&b));
            assert_eq!(a.losses, b.losses);
            let c = train(kind, &examples, &bundle, &TrainConfig { seed: 4, ..config }).unwrap();
            assert_ne!(bits(&a), bits(&c));
        }
    }

    #[test]
    fn missing_embedding_fails_before_training() {
        let (mut examples, bundle) = mock_data();
        examples.push(PetExample { id: "ghost".into(), ..examples[0].clone() });
        assert!(matches!(
            train(ModelKind::PetHead, &examples, &bundle, &TrainConfig::default()),
            Err(Error::MissingEmbedding(id)) if id == "ghost"
        ));
        assert!(matches!(
            train(ModelKind::Dan, &[], &bundle, &TrainConfig::default()),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn loss_decreases_on_mock_data() {
        let (examples, bundle) = mock_data();
        let config = TrainConfig { epochs: 50, learning_rate: 0.5, ..TrainConfig::default() };
        let trained = train(ModelKind::PetHead, &examples, &bundle, &config).unwrap();
        assert!(trained.losses.last().unwrap() < trained.losses.first().unwrap());
    }

    #[test]
    fn cross_entropy_matches_softmax() {
        let logits = [0.3, -1.2];
        let p = ClassProbs::from_logits(logits);
        assert!((cross_entropy(logits, 0) + p.get(Label::Literal).ln()).abs() < 1e-12);
        assert!((cross_entropy([800.0, 0.0], 1) - 800.0).abs() < 1e-9);
    }
}
