use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use euph_core::augment::{self, AugmentedExample, ExternalCorpus};
use euph_core::classify::{self, load_classifier, write_classifier, write_loss_trace};
use euph_core::cleaning::{self, read_corrections, read_flags, substitution_examples, SenseInventory};
use euph_core::corpus::{self, load_corpus, split_dataset, write_corpus, SplitManifest};
use euph_core::embedding::{load_bundle, write_bundle};
use euph_core::ensemble::ensemble;
use euph_core::knn::{self, read_predictions, write_predictions, LAMBDA_GRID};
use euph_core::metrics::macro_metrics;
use euph_core::{Delimiters, EmbeddingBundle, Encoder, MockEncoder, PetExample, Prediction};
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};
use crate::output::Staging;

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Missing(format!("{}: {e}", path.display())))
}

pub fn read_examples(paths: &[PathBuf], delims: &Delimiters) -> CliResult<Vec<PetExample>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for path in paths {
        for example in load_corpus(path, delims)? {
            if !seen.insert(example.id.clone()) {
                return Err(CliError::Data(format!("duplicate example id {:?} in {}", example.id, path.display())));
            }
            out.push(example);
        }
    }
    Ok(out)
}

pub fn read_bundles(paths: &[PathBuf]) -> CliResult<EmbeddingBundle> {
    let mut iter = paths.iter();
    let first = iter.next().ok_or_else(|| CliError::Usage("at least one --bundle is required".into()))?;
    let mut bundle = load_bundle(first)?;
    for path in iter {
        bundle.merge(load_bundle(path)?)?;
    }
    Ok(bundle)
}

fn read_external(path: &Path) -> CliResult<ExternalCorpus> {
    Ok(ExternalCorpus::read(open(path)?)?)
}

fn read_inventory(path: &Path) -> CliResult<SenseInventory> {
    Ok(SenseInventory::read_csv(open(path)?)?)
}

fn read_split_manifest(path: &Path) -> CliResult<SplitManifest> {
    Ok(serde_json::from_reader(open(path)?)?)
}

fn paths(list: &[PathBuf]) -> Vec<&Path> {
    list.iter().map(PathBuf::as_path).collect()
}

pub fn split(corpus: &Path, out: &Path, force: bool, config: &PipelineConfig) -> CliResult<()> {
    let mut staging = Staging::new("split", out, force, &[corpus])?;
    let delims = config.delimiters()?;
    let examples = load_corpus(corpus, &delims)?;
    let split = split_dataset(&examples, config.seed)?;
    write_corpus(staging.create("train.csv")?, &split.train, &delims)?;
    write_corpus(staging.create("validation.csv")?, &split.validation, &delims)?;
    write_corpus(staging.create("test.csv")?, &split.test, &delims)?;
    staging.write_json("split.json", &SplitManifest::from_split(&split))?;
    corpus::write_pet_stats(staging.create("pet_stats.csv")?, &corpus::compute_pet_stats(&examples))?;
    staging.note("summary", corpus::summarize(&examples));
    staging.commit(config)?;
    Ok(())
}

pub fn encode_mock(
    corpora: &[PathBuf],
    inventory: Option<&Path>,
    out: &Path,
    force: bool,
    config: &PipelineConfig,
) -> CliResult<()> {
    let mut inputs = paths(corpora);
    inputs.extend(inventory);
    let mut staging = Staging::new("encode-mock", out, force, &inputs)?;
    let delims = config.delimiters()?;
    let examples = read_examples(corpora, &delims)?;
    let encoder = MockEncoder::new(config.mock())?;
    let mut bundle = EmbeddingBundle::new(encoder.dim())?;
    for example in &examples {
        bundle.insert(example.id.clone(), encoder.encode_text(&example.text))?;
    }
    if let Some(path) = inventory {
        let rewrites = substitution_examples(&examples, &read_inventory(path)?)?;
        staging.note("substituted_entries", rewrites.len());
        for example in &rewrites {
            bundle.insert(example.id.clone(), encoder.encode_text(&example.text))?;
        }
    }
    write_bundle(&bundle, staging.dir())?;
    staging.note("entries", bundle.len());
    staging.commit(config)?;
    Ok(())
}

pub fn clean_flag(
    train: &Path,
    bundle: &Path,
    inventory: &Path,
    mock_substitutions: bool,
    out: &Path,
    force: bool,
    config: &PipelineConfig,
) -> CliResult<()> {
    let mut staging = Staging::new("clean-flag", out, force, &[train, bundle, inventory])?;
    let examples = load_corpus(train, &config.delimiters()?)?;
    let bundle = load_bundle(bundle)?;
    let inventory = read_inventory(inventory)?;
    let report = if mock_substitutions {
        let encoder = MockEncoder::new(config.mock())?;
        cleaning::flag_corpus(&examples, &inventory, &bundle, &encoder, &config.cleaning())?
    } else {
        cleaning::flag_corpus(&examples, &inventory, &bundle, &bundle, &config.cleaning())?
    };
    cleaning::write_flags(staging.create("flags.csv")?, &report.flags)?;
    staging.write_json("report.json", &report)?;
    staging.note("flagged", report.flags.len());
    staging.commit(config)?;
    Ok(())
}

pub fn clean_apply(
    train: &Path,
    flags: &Path,
    corrections: &Path,
    out: &Path,
    force: bool,
    config: &PipelineConfig,
) -> CliResult<()> {
    let mut staging = Staging::new("clean-apply", out, force, &[train, flags, corrections])?;
    let delims = config.delimiters()?;
    let examples = load_corpus(train, &delims)?;
    let flags = read_flags(open(flags)?)?;
    let corrections = read_corrections(open(corrections)?)?;
    let (cleaned, audit) = cleaning::apply_corrections(&examples, &flags, &corrections)?;
    write_corpus(staging.create("cleaned.csv")?, &cleaned, &delims)?;
    cleaning::write_audit(staging.create("audit.csv")?, &audit)?;
    staging.note("relabelled", audit.iter().filter(|a| a.changed).count());
    staging.commit(config)?;
    Ok(())
}

/// Drops rows whose text contains a delimiter, since they could not be
/// read back as a delimited corpus.
fn writable_rows(rows: Vec<AugmentedExample>, delims: &Delimiters) -> (Vec<AugmentedExample>, usize) {
    let before = rows.len();
    let kept: Vec<_> = rows
        .into_iter()
        .filter(|r| !r.example.text.contains(delims.open()) && !r.example.text.contains(delims.close()))
        .collect();
    let dropped = before - kept.len();
    (kept, dropped)
}

fn branch_counts(rows: &[AugmentedExample]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for row in rows {
        *counts.entry(row.branch.to_string()).or_insert(0) += 1;
    }
    counts
}

fn finish_augmented(
    mut staging: Staging,
    rows: Vec<AugmentedExample>,
    split: Option<&Path>,
    config: &PipelineConfig,
) -> CliResult<()> {
    let delims = config.delimiters()?;
    let (rows, dropped) = writable_rows(rows, &delims);
    if let Some(path) = split {
        augment::check_held_out(&rows, &read_split_manifest(path)?)?;
    }
    augment::write_augmented(staging.create("augmented.csv")?, &rows, &delims)?;
    staging.note("rows", rows.len());
    staging.note("branches", branch_counts(&rows));
    staging.note("dropped_for_delimiters", dropped);
    staging.commit(config)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn augment_r(
    train: &Path,
    bundle: &Path,
    external: &Path,
    candidate_bundle: Option<&Path>,
    split: Option<&Path>,
    out: &Path,
    force: bool,
    config: &PipelineConfig,
) -> CliResult<()> {
    let mut inputs = vec![train, bundle, external];
    inputs.extend(candidate_bundle);
    inputs.extend(split);
    let staging = Staging::new("augment-r", out, force, &inputs)?;
    let aug = config.augment()?;
    let examples = load_corpus(train, &config.delimiters()?)?;
    let bundle = load_bundle(bundle)?;
    let corpus = read_external(external)?;
    let rows = match candidate_bundle {
        Some(path) => augment::euphaug_r_run(&examples, &corpus, &bundle, &load_bundle(path)?, &aug)?,
        None => {
            let encoder = MockEncoder::new(config.mock())?;
            if encoder.dim() != bundle.dim() {
                return Err(CliError::Usage(format!(
                    "mock encoder dimension {} differs from bundle dimension {}; set \"dimension\" or pass --candidate-bundle",
                    encoder.dim(),
                    bundle.dim()
                )));
            }
            augment::euphaug_r_run(&examples, &corpus, &bundle, &encoder, &aug)?
        }
    };
    finish_augmented(staging, rows, split, config)
}

pub fn augment_s(
    inventory: &Path,
    external: &Path,
    split: Option<&Path>,
    out: &Path,
    force: bool,
    config: &PipelineConfig,
) -> CliResult<()> {
    let mut inputs = vec![inventory, external];
    inputs.extend(split);
    let staging = Staging::new("augment-s", out, force, &inputs)?;
    if config.n_max == 0 {
        return Err(CliError::Usage("n_max must be positive".into()));
    }
    let rows = augment::euphaug_s_run(&read_inventory(inventory)?, &read_external(external)?, config.n_max)?;
    finish_augmented(staging, rows, split, config)
}

pub fn train(
    train: &[PathBuf],
    bundles: &[PathBuf],
    out: &Path,
    force: bool,
    config: &PipelineConfig,
) -> CliResult<()> {
    let mut inputs = paths(train);
    inputs.extend(paths(bundles));
    let mut staging = Staging::new("train", out, force, &inputs)?;
    let train_config = config.train()?;
    let examples = read_examples(train, &config.delimiters()?)?;
    let bundle = read_bundles(bundles)?;
    let trained = classify::train(config.model, &examples, &bundle, &train_config)?;
    write_classifier(&trained.classifier, Some(&train_config), staging.dir())?;
    write_loss_trace(staging.create("loss.csv")?, &trained.losses)?;
    staging.note("examples", examples.len());
    staging.note("final_loss", trained.losses.last());
    staging.commit(config)?;
    Ok(())
}

pub fn knn_build(
    train: &[PathBuf],
    bundles: &[PathBuf],
    out: &Path,
    force: bool,
    config: &PipelineConfig,
) -> CliResult<()> {
    let mut inputs = paths(train);
    inputs.extend(paths(bundles));
    let mut staging = Staging::new("knn-build", out, force, &inputs)?;
    let mut examples = read_examples(train, &config.delimiters()?)?;
    let before = examples.len();
    if !config.augmented_in_store {
        examples.retain(|e| !e.id.starts_with("euphaug-"));
    }
    let bundle = read_bundles(bundles)?;
    let store = knn::build_datastore(&examples, &bundle)?;
    knn::write_datastore(&store, staging.dir())?;
    staging.note("entries", store.len());
    staging.note("augmented_excluded", before - examples.len());
    staging.commit(config)?;
    Ok(())
}

#[derive(Serialize)]
struct LambdaChoice {
    lambda: f64,
    validation_macro_f1: f64,
    grid: &'static [f64],
}

#[allow(clippy::too_many_arguments)]
pub fn predict(
    model: &Path,
    examples: &Path,
    bundles: &[PathBuf],
    datastore: Option<&Path>,
    tune_on: Option<&Path>,
    out: &Path,
    force: bool,
    config: &PipelineConfig,
) -> CliResult<()> {
    let mut inputs = vec![model, examples];
    inputs.extend(paths(bundles));
    inputs.extend(datastore);
    inputs.extend(tune_on);
    let mut staging = Staging::new("predict", out, force, &inputs)?;
    let mut knn_config = config.knn()?;
    let delims = config.delimiters()?;
    let classifier = load_classifier(model)?;
    let bundle = read_bundles(bundles)?;
    let store = datastore.map(knn::load_datastore).transpose()?;

    if let Some(path) = tune_on {
        let store = store
            .as_ref()
            .ok_or_else(|| CliError::Usage("--tune-on needs --datastore".into()))?;
        let validation = load_corpus(path, &delims)?;
        let preds = knn::predict(&classifier, Some(store), &validation, &bundle, &knn_config)?;
        let gold: Vec<_> = validation.iter().map(|e| e.label).collect();
        let (lambda, f1) = knn::tune_lambda(&preds, &gold, &LAMBDA_GRID)?;
        knn_config.lambda = lambda;
        staging.write_json(
            "lambda.json",
            &LambdaChoice {
                lambda,
                validation_macro_f1: f1,
                grid: &LAMBDA_GRID,
            },
        )?;
    }
    let examples = load_corpus(examples, &delims)?;
    let predictions = knn::predict(&classifier, store.as_ref(), &examples, &bundle, &knn_config)?;
    write_predictions(staging.create("predictions.csv")?, &predictions)?;
    staging.note("rows", predictions.len());
    staging.note("lambda", store.as_ref().map(|_| knn_config.lambda));
    staging.commit(config)?;
    Ok(())
}

pub fn eval(predictions: &Path, gold: &Path, out: &Path, force: bool, config: &PipelineConfig) -> CliResult<()> {
    let staging = Staging::new("eval", out, force, &[predictions, gold])?;
    let predictions = read_predictions(open(predictions)?)?;
    let gold = load_corpus(gold, &config.delimiters()?)?;
    let labels: HashMap<&str, _> = gold.iter().map(|e| (e.id.as_str(), e.label)).collect();
    if labels.len() != predictions.len() {
        return Err(CliError::Data(format!(
            "{} predictions for {} gold examples",
            predictions.len(),
            labels.len()
        )));
    }
    let mut gold_labels = Vec::with_capacity(predictions.len());
    for p in &predictions {
        let label = labels
            .get(p.id.as_str())
            .ok_or_else(|| CliError::Data(format!("prediction for unknown example {:?}", p.id)))?;
        gold_labels.push(*label);
    }
    let predicted: Vec<_> = predictions.iter().map(|p| p.label).collect();
    staging.write_json("metrics.json", &macro_metrics(&gold_labels, &predicted)?)?;
    staging.commit(config)?;
    Ok(())
}

pub fn ensemble_stage(members: &[PathBuf], out: &Path, force: bool, config: &PipelineConfig) -> CliResult<()> {
    let mut staging = Staging::new("ensemble", out, force, &paths(members))?;
    let lists = members
        .iter()
        .map(|p| Ok(read_predictions(open(p)?)?))
        .collect::<CliResult<Vec<Vec<Prediction>>>>()?;
    if lists.is_empty() {
        return Err(CliError::Usage("ensemble needs at least one --predictions file".into()));
    }
    let combined = ensemble(&lists)?;
    write_predictions(staging.create("predictions.csv")?, &combined)?;
    staging.note("members", members.len());
    staging.commit(config)?;
    Ok(())
}
