//! Nearest-neighbour class probabilities over training sentence vectors and
//! their mixture with a base classifier.

use std::cmp::Ordering;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classify::Classifier;
use crate::corpus::PetExample;
use crate::embedding::{cosine_distance, EmbeddingBundle};
use crate::error::{Error, Result};
use crate::label::{ClassProbs, Label};
use crate::metrics::macro_metrics;

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_LAMBDA: f64 = 0.25;
pub const LAMBDA_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

pub const STORE_MANIFEST: &str = "datastore.json";
pub const STORE_KEYS: &str = "keys.bin";
const STORE_FORMAT: &str = "euph-knn-datastore";

/// Training sentence vectors with their labels, in construction order.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnDatastore {
    dim: usize,
    ids: Vec<String>,
    keys: Vec<Vec<f64>>,
    values: Vec<Label>,
}

impl KnnDatastore {
    pub fn new(dim: usize, ids: Vec<String>, keys: Vec<Vec<f64>>, values: Vec<Label>) -> Result<Self> {
        if ids.len() != keys.len() || ids.len() != values.len() {
            return Err(Error::Shape(format!(
                "datastore lists differ in length: {} ids, {} keys, {} values",
                ids.len(),
                keys.len(),
                values.len()
            )));
        }
        if let Some(k) = keys.iter().find(|k| k.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, found: k.len() });
        }
        Ok(KnnDatastore { dim, ids, keys, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn keys(&self) -> &[Vec<f64>] {
        &self.keys
    }

    pub fn values(&self) -> &[Label] {
        &self.values
    }
}

pub fn build_datastore(train: &[PetExample], bundle: &EmbeddingBundle) -> Result<KnnDatastore> {
    let mut keys = Vec::with_capacity(train.len());
    for example in train {
        let entry = bundle.entry(&example.id)?;
        keys.push(entry.sentence.iter().map(|&x| x as f64).collect());
    }
    KnnDatastore::new(
        bundle.dim(),
        train.iter().map(|e| e.id.clone()).collect(),
        keys,
        train.iter().map(|e| e.label).collect(),
    )
}

/// Class probability from the `k` entries nearest to `query` by cosine
/// distance, each weighted by `exp(-d)`. Equal distances keep construction
/// order. The entry whose id equals `exclude_id` is skipped.
pub fn knn_probability(
    store: &KnnDatastore,
    query: &[f64],
    k: usize,
    exclude_id: Option<&str>,
) -> Result<ClassProbs> {
    if k == 0 {
        return Err(Error::Config("k must be positive".into()));
    }
    let mut scored = Vec::with_capacity(store.len());
    for (i, key) in store.keys.iter().enumerate() {
        if exclude_id == Some(store.ids[i].as_str()) {
            continue;
        }
        scored.push((cosine_distance(query, key)?, i));
    }
    if scored.is_empty() {
        return Err(Error::EmptyDatastore);
    }
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));

    let mut mass = [0.0f64; 2];
    for &(d, i) in scored.iter().take(k) {
        mass[store.values[i].index()] += (-d).exp();
    }
    let total = mass[0] + mass[1];
    Ok(ClassProbs::from_raw([mass[0] / total, mass[1] / total]))
}

/// `lambda * p_knn + (1 - lambda) * p_base`.
pub fn interpolate(p_knn: ClassProbs, p_base: ClassProbs, lambda: f64) -> Result<ClassProbs> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Range(format!("lambda {lambda} outside [0, 1]")));
    }
    if lambda == 0.0 {
        return Ok(p_base);
    }
    if lambda == 1.0 {
        return Ok(p_knn);
    }
    let a = p_knn.as_array();
    let b = p_base.as_array();
    let mix = |c: usize| lambda * a[c] + (1.0 - lambda) * b[c];
    Ok(ClassProbs::from_raw([mix(0), mix(1)]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
    pub lambda: f64,
    /// Skip a query's own id in the store.
    pub leave_one_out: bool,
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig {
            k: DEFAULT_K,
            lambda: DEFAULT_LAMBDA,
            leave_one_out: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub p_base: ClassProbs,
    pub p_knn: Option<ClassProbs>,
    pub p_final: ClassProbs,
    pub label: Label,
}

impl Prediction {
    pub fn new(id: impl Into<String>, p_base: ClassProbs, p_knn: Option<ClassProbs>, p_final: ClassProbs) -> Self {
        Prediction {
            id: id.into(),
            p_base,
            p_knn,
            p_final,
            label: p_final.argmax(),
        }
    }

    pub fn base_only(id: impl Into<String>, p_base: ClassProbs) -> Self {
        Self::new(id, p_base, None, p_base)
    }
}

/// Scores `examples` with `classifier`, mixing in the datastore when given.
pub fn predict(
    classifier: &Classifier,
    store: Option<&KnnDatastore>,
    examples: &[PetExample],
    bundle: &EmbeddingBundle,
    config: &KnnConfig,
) -> Result<Vec<Prediction>> {
    examples
        .iter()
        .map(|example| {
            let entry = bundle.entry(&example.id)?;
            let p_base = classifier.predict(example, entry)?;
            match store {
                None => Ok(Prediction::base_only(&example.id, p_base)),
                Some(store) => {
                    let query: Vec<f64> = entry.sentence.iter().map(|&x| x as f64).collect();
                    let exclude = config.leave_one_out.then_some(example.id.as_str());
                    let p_knn = knn_probability(store, &query, config.k, exclude)?;
                    let p_final = interpolate(p_knn, p_base, config.lambda)?;
                    Ok(Prediction::new(&example.id, p_base, Some(p_knn), p_final))
                }
            }
        })
        .collect()
}

/// Re-mixes kNN predictions with a different `lambda`. Rows without a kNN
/// probability are kept as they are.
pub fn remix(predictions: &[Prediction], lambda: f64) -> Result<Vec<Prediction>> {
    predictions
        .iter()
        .map(|p| match p.p_knn {
            Some(knn) => Ok(Prediction::new(&p.id, p.p_base, Some(knn), interpolate(knn, p.p_base, lambda)?)),
            None => Ok(p.clone()),
        })
        .collect()
}

/// Picks the `lambda` from `grid` with the highest macro F1 against `gold`;
/// the first (smallest) wins ties.
pub fn tune_lambda(predictions: &[Prediction], gold: &[Label], grid: &[f64]) -> Result<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    for &lambda in grid {
        let mixed = remix(predictions, lambda)?;
        let predicted: Vec<Label> = mixed.iter().map(|p| p.label).collect();
        let f1 = macro_metrics(gold, &predicted)?.macro_f1;
        if best.map_or(true, |(_, b)| f1 > b) {
            best = Some((lambda, f1));
        }
    }
    best.ok_or_else(|| Error::Config("empty lambda grid".into()))
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRow {
    id: String,
    p_base_1: f64,
    p_knn_1: Option<f64>,
    p_final_1: f64,
    label: Label,
}

pub fn write_predictions<W: Write>(writer: W, predictions: &[Prediction]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for p in predictions {
        w.serialize(PredictionRow {
            id: p.id.clone(),
            p_base_1: p.p_base.euphemistic(),
            p_knn_1: p.p_knn.map(|k| k.euphemistic()),
            p_final_1: p.p_final.euphemistic(),
            label: p.label,
        })?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn read_predictions<R: Read>(reader: R) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for (i, row) in csv::Reader::from_reader(reader).deserialize::<PredictionRow>().enumerate() {
        let row = row?;
        let p_final = ClassProbs::from_euphemistic(row.p_final_1)?;
        if p_final.argmax() != row.label {
            return Err(Error::Shape(format!(
                "prediction row {} ({}): label {} disagrees with p_final_1 {}",
                i + 1,
                row.id,
                row.label,
                row.p_final_1
            )));
        }
        out.push(Prediction {
            id: row.id,
            p_base: ClassProbs::from_euphemistic(row.p_base_1)?,
            p_knn: row.p_knn_1.map(ClassProbs::from_euphemistic).transpose()?,
            p_final,
            label: row.label,
        });
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreManifest {
    format: String,
    version: u32,
    dimension: usize,
    ids: Vec<String>,
    values: Vec<Label>,
}

/// Writes `datastore.json` and `keys.bin` (f64 little-endian, row-major).
pub fn write_datastore(store: &KnnDatastore, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = StoreManifest {
        format: STORE_FORMAT.into(),
        version: 1,
        dimension: store.dim,
        ids: store.ids.clone(),
        values: store.values.clone(),
    };
    let path = dir.join(STORE_MANIFEST);
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    let bytes: Vec<u8> = store.keys.iter().flatten().flat_map(|x| x.to_le_bytes()).collect();
    let path = dir.join(STORE_KEYS);
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
}

pub fn load_datastore(dir: &Path) -> Result<KnnDatastore> {
    let path = dir.join(STORE_MANIFEST);
    let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: StoreManifest = serde_json::from_slice(&text)?;
    if manifest.format != STORE_FORMAT || manifest.version != 1 {
        return Err(Error::format(0, format!("unsupported datastore format {} v{}", manifest.format, manifest.version)));
    }
    let path = dir.join(STORE_KEYS);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let expected = manifest.ids.len() * manifest.dimension * 8;
    if bytes.len() != expected {
        return Err(Error::format(
            bytes.len().min(expected) as u64,
            format!("expected {expected} key bytes, found {}", bytes.len()),
        ));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let keys = if manifest.dimension == 0 {
        vec![Vec::new(); manifest.ids.len()]
    } else {
        flat.chunks_exact(manifest.dimension).map(<[f64]>::to_vec).collect()
    };
    KnnDatastore::new(manifest.dimension, manifest.ids, keys, manifest.values)
}
