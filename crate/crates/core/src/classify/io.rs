use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Classifier, Dan, LinearHead, ModelKind, TrainConfig};
use crate::error::{Error, Result};

pub const PARAMS_MANIFEST: &str = "params.json";
pub const PARAMS_BIN: &str = "params.bin";
const PARAMS_FORMAT: &str = "euph-classifier";

#[derive(Debug, Serialize, Deserialize)]
struct ParamsManifest {
    format: String,
    version: u32,
    kind: ModelKind,
    dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hidden: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dropout: Option<f64>,
    param_count: usize,
    train_config: Option<TrainConfig>,
}

/// Writes `params.json` and `params.bin` (f64 little-endian) into `dir`.
pub fn write_classifier(classifier: &Classifier, config: Option<&TrainConfig>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let model = classifier.model();
    let (hidden, dropout) = match classifier {
        Classifier::PetHead(_) => (None, None),
        Classifier::Dan(d) => (Some(d.hidden()), Some(d.dropout())),
    };
    let manifest = ParamsManifest {
        format: PARAMS_FORMAT.into(),
        version: 1,
        kind: classifier.kind(),
        dim: model.input_dim(),
        hidden,
        dropout,
        param_count: model.params().len(),
        train_config: config.copied(),
    };
    let path = dir.join(PARAMS_MANIFEST);
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;

    let path = dir.join(PARAMS_BIN);
    let mut bytes = Vec::with_capacity(model.params().len() * 8);
    for p in model.params() {
        bytes.write_all(&p.to_le_bytes()).map_err(|e| Error::io(&path, e))?;
    }
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
}

pub fn load_classifier(dir: &Path) -> Result<Classifier> {
    let path = dir.join(PARAMS_MANIFEST);
    let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: ParamsManifest = serde_json::from_slice(&text)?;
    if manifest.format != PARAMS_FORMAT || manifest.version != 1 {
        return Err(Error::format(0, format!("unsupported classifier format {} v{}", manifest.format, manifest.version)));
    }
    let path = dir.join(PARAMS_BIN);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() != manifest.param_count * 8 {
        return Err(Error::format(
            bytes.len() as u64,
            format!("expected {} parameter bytes, found {}", manifest.param_count * 8, bytes.len()),
        ));
    }
    let params: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    if let Some(i) = params.iter().position(|p| !p.is_finite()) {
        return Err(Error::format((i * 8) as u64, "non-finite parameter"));
    }
    Ok(match manifest.kind {
        ModelKind::PetHead => Classifier::PetHead(LinearHead::from_params(manifest.dim, params)?),
        ModelKind::Dan => {
            let hidden = manifest.hidden.ok_or_else(|| Error::format(0, "DAN manifest lacks hidden size"))?;
            Classifier::Dan(Dan::from_params(manifest.dim, hidden, manifest.dropout.unwrap_or(0.0), params)?)
        }
    })
}

/// Per-epoch mean loss as `epoch,mean_loss` CSV, epochs numbered from 1.
pub fn write_loss_trace<W: std::io::Write>(writer: W, losses: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["epoch", "mean_loss"])?;
    for (i, loss) in losses.iter().enumerate() {
        w.write_record([(i + 1).to_string(), loss.to_string()])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}
