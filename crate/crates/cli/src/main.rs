use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use euph_core::ModelKind;

mod config;
mod error;
mod output;
mod stages;

use config::PipelineConfig;
use error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "euph", version, about = "Euphemism detection pipeline, one stage per subcommand")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    stage: Stage,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON file with flat pipeline settings.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for splitting and training; overrides the config.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Replace an existing output directory.
    #[arg(long, global = true)]
    force: bool,
    /// Output directory of the stage.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Stage {
    /// Split a labelled corpus 80/10/10 and write per-PET statistics.
    Split {
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Embed corpora with the deterministic mock encoder.
    EncodeMock {
        #[arg(long = "corpus", required = true)]
        corpora: Vec<PathBuf>,
        /// Also embed euphemistic-sense rewrites for cleaning.
        #[arg(long)]
        inventory: Option<PathBuf>,
    },
    /// Flag likely mislabelled training examples for review.
    CleanFlag {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long)]
        inventory: Option<PathBuf>,
        /// Embed rewrites with the mock encoder instead of the bundle.
        #[arg(long)]
        mock_substitutions: bool,
    },
    /// Apply reviewed corrections to flagged examples.
    CleanApply {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        flags: PathBuf,
        #[arg(long)]
        corrections: PathBuf,
    },
    /// Representation-based augmentation from an external corpus.
    AugmentR {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long)]
        external: Option<PathBuf>,
        /// Embeddings of candidate sentences; defaults to the mock encoder.
        #[arg(long)]
        candidate_bundle: Option<PathBuf>,
        /// Split manifest used to reject held-out ids.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Sense-based augmentation from an external corpus.
    AugmentS {
        #[arg(long)]
        inventory: Option<PathBuf>,
        #[arg(long)]
        external: Option<PathBuf>,
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Train a PET head or DAN classifier.
    Train {
        #[arg(long = "train", required = true)]
        train: Vec<PathBuf>,
        #[arg(long = "bundle")]
        bundles: Vec<PathBuf>,
        #[arg(long)]
        model: Option<ModelKind>,
    },
    /// Build the nearest-neighbour datastore from training sentences.
    KnnBuild {
        #[arg(long = "train", required = true)]
        train: Vec<PathBuf>,
        #[arg(long = "bundle")]
        bundles: Vec<PathBuf>,
    },
    /// Score examples with a trained model, optionally mixed with kNN.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        examples: PathBuf,
        #[arg(long = "bundle")]
        bundles: Vec<PathBuf>,
        #[arg(long)]
        datastore: Option<PathBuf>,
        /// Labelled corpus for choosing lambda from the grid 0.1..0.9.
        #[arg(long)]
        tune_on: Option<PathBuf>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Macro precision, recall and F1 of a predictions file.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        gold: PathBuf,
    },
    /// Majority vote over an odd number of predictions files.
    Ensemble {
        #[arg(long = "predictions")]
        predictions: Vec<PathBuf>,
    },
}

impl Stage {
    fn name(&self) -> &'static str {
        match self {
            Stage::Split { .. } => "split",
            Stage::EncodeMock { .. } => "encode-mock",
            Stage::CleanFlag { .. } => "clean-flag",
            Stage::CleanApply { .. } => "clean-apply",
            Stage::AugmentR { .. } => "augment-r",
            Stage::AugmentS { .. } => "augment-s",
            Stage::Train { .. } => "train",
            Stage::KnnBuild { .. } => "knn-build",
            Stage::Predict { .. } => "predict",
            Stage::Eval { .. } => "eval",
            Stage::Ensemble { .. } => "ensemble",
        }
    }
}

fn required<'a>(flag: &'a Option<PathBuf>, fallback: &'a Option<PathBuf>, name: &str) -> CliResult<&'a Path> {
    flag.as_deref()
        .or(fallback.as_deref())
        .ok_or_else(|| CliError::Usage(format!("--{name} is required (or set \"{name}\" in the config)")))
}

fn or_config(flags: &[PathBuf], fallback: &Option<PathBuf>) -> Vec<PathBuf> {
    if flags.is_empty() {
        fallback.iter().cloned().collect()
    } else {
        flags.to_vec()
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let mut config = PipelineConfig::load(cli.common.config.as_deref())?;
    if let Some(seed) = cli.common.seed {
        config.seed = seed;
    }
    let out_flag = cli.common.out.clone();
    let force = cli.common.force;

    match &cli.stage {
        Stage::AugmentR { delta, epsilon, .. } => {
            config.delta = delta.unwrap_or(config.delta);
            config.epsilon = epsilon.unwrap_or(config.epsilon);
        }
        Stage::Predict { lambda, k, .. } => {
            config.lambda = lambda.unwrap_or(config.lambda);
            config.k = k.unwrap_or(config.k);
        }
        Stage::Train { model: Some(model), .. } => config.model = *model,
        _ => {}
    }
    let out = required(&out_flag, &config.out, "out")?.to_path_buf();
    let config = config;

    match cli.stage {
        Stage::Split { corpus } => stages::split(required(&corpus, &config.corpus, "corpus")?, &out, force, &config),
        Stage::EncodeMock { corpora, inventory } => {
            stages::encode_mock(&corpora, inventory.as_deref(), &out, force, &config)
        }
        Stage::CleanFlag { train, bundle, inventory, mock_substitutions } => stages::clean_flag(
            &train,
            required(&bundle, &config.bundle, "bundle")?,
            required(&inventory, &config.inventory, "inventory")?,
            mock_substitutions,
            &out,
            force,
            &config,
        ),
        Stage::CleanApply { train, flags, corrections } => {
            stages::clean_apply(&train, &flags, &corrections, &out, force, &config)
        }
        Stage::AugmentR { train, bundle, external, candidate_bundle, split, .. } => stages::augment_r(
            &train,
            required(&bundle, &config.bundle, "bundle")?,
            required(&external, &config.external, "external")?,
            candidate_bundle.as_deref(),
            split.as_deref(),
            &out,
            force,
            &config,
        ),
        Stage::AugmentS { inventory, external, split } => stages::augment_s(
            required(&inventory, &config.inventory, "inventory")?,
            required(&external, &config.external, "external")?,
            split.as_deref(),
            &out,
            force,
            &config,
        ),
        Stage::Train { train, bundles, .. } => {
            stages::train(&train, &or_config(&bundles, &config.bundle), &out, force, &config)
        }
        Stage::KnnBuild { train, bundles } => {
            stages::knn_build(&train, &or_config(&bundles, &config.bundle), &out, force, &config)
        }
        Stage::Predict { model, examples, bundles, datastore, tune_on, .. } => stages::predict(
            &model,
            &examples,
            &or_config(&bundles, &config.bundle),
            datastore.as_deref(),
            tune_on.as_deref(),
            &out,
            force,
            &config,
        ),
        Stage::Eval { predictions, gold } => stages::eval(&predictions, &gold, &out, force, &config),
        Stage::Ensemble { predictions } => {
            let members = if predictions.is_empty() { config.ensemble_members.clone() } else { predictions };
            stages::ensemble_stage(&members, &out, force, &config)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            if matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = err.print();
                return ExitCode::SUCCESS;
            }
            let message = err.to_string();
            let first = message.lines().next().unwrap_or("invalid arguments");
            let first = first.trim_start_matches("error: ").to_string();
            eprintln!("{}", CliError::Usage(first).to_json_line(None));
            return ExitCode::from(error::EXIT_USAGE);
        }
    };
    let stage = cli.stage.name();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", err.to_json_line(Some(stage)));
            ExitCode::from(err.code())
        }
    }
}
