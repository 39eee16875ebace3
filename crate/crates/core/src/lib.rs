pub mod augment;
pub mod classify;
pub mod cleaning;
pub mod corpus;
pub mod embedding;
pub mod ensemble;
pub mod error;
pub mod knn;
pub mod label;
pub mod metrics;

pub use classify::{Classifier, ModelKind, TrainConfig};
pub use corpus::{CharSpan, Delimiters, PetExample};
pub use embedding::{BundleEntry, EmbeddingBundle, Encoder, MockEncoder};
pub use error::{Error, Result};
pub use knn::{KnnDatastore, Prediction};
pub use label::{ClassProbs, Label};
pub use metrics::MacroMetrics;
