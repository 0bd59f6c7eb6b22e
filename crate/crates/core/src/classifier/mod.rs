//! From-scratch MLP classifier: training, evaluation reports, int8
//! quantization, model files and sensor-subset ablation.

mod ablation;
mod codec;
mod eval;
mod mlp;
mod quant;
mod train;

use thiserror::Error;

use crate::pipeline::{segment, FeatureExtractor, FeatureVector, PipelineError};
use crate::types::{LabelKind, LabeledRecording};

pub use ablation::{ablation_compare, SubsetAccuracy};
pub use codec::{MODEL_MAGIC, QUANT_MAGIC};
pub use eval::{evaluate, percent, ClassScore, EvalReport};
pub use mlp::{argmax, Gradients, MlpModel};
pub use quant::{quantize, quantized_flash_bytes, QuantTensor, QuantizedModel, TENSOR_OVERHEAD_BYTES};
pub use train::{stratified_split, train, LossHistory, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("input dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite value in input or parameters")]
    NonFinite,
    #[error("class {class} out of range for {classes} classes")]
    InvalidClass { class: usize, classes: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("degenerate dataset: {0} distinct class(es), need at least 2")]
    DegenerateDataset(usize),
    #[error("empty test set")]
    EmptyTestSet,
    #[error("shape: {0}")]
    Shape(String),
    #[error("training config: {0}")]
    Config(String),
    #[error("model file: {0}")]
    Codec(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// One labeled feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub class: usize,
}

/// Labeled windows of a recording turned into feature vectors. Windows
/// without a label of `kind` are dropped.
pub fn labeled_features(
    recording: &LabeledRecording,
    window: usize,
    overlap: f64,
    kind: LabelKind,
) -> Result<Vec<(FeatureVector, usize)>, PipelineError> {
    let extractor = FeatureExtractor::new(window);
    Ok(segment(recording, window, overlap)?
        .into_iter()
        .filter_map(|w| {
            let label = w.label.filter(|l| l.kind() == kind)?;
            Some((extractor.extract(&w.samples), label.encode()))
        })
        .collect())
}

pub fn to_examples(features: &[(FeatureVector, usize)]) -> Vec<Example> {
    features
        .iter()
        .map(|(f, c)| Example {
            features: f.values.clone(),
            class: *c,
        })
        .collect()
}

/// Layer sizes for a classifier over `dim` features of `kind` labels.
pub fn layer_sizes(dim: usize, hidden: usize, kind: LabelKind) -> [usize; 3] {
    [dim, hidden, kind.class_count()]
}

/// Splits, trains and evaluates in one go with `config`'s seed and split.
pub fn fit_and_evaluate(
    examples: &[Example],
    kind: LabelKind,
    config: &TrainConfig,
) -> Result<(TrainOutcome, EvalReport), ClassifierError> {
    let dim = examples.first().map(|e| e.features.len()).ok_or(ClassifierError::EmptyTestSet)?;
    let classes: Vec<usize> = examples.iter().map(|e| e.class).collect();
    let (train_idx, test_idx) = stratified_split(&classes, config.train_fraction, config.seed);
    let train_set: Vec<Example> = train_idx.iter().map(|&i| examples[i].clone()).collect();
    let test_set: Vec<Example> = test_idx.iter().map(|&i| examples[i].clone()).collect();
    let model = MlpModel::init(layer_sizes(dim, config.hidden, kind), config.seed).with_kind(kind);
    let outcome = train(&model, &train_set, config)?;
    let report = evaluate(&outcome.model, &test_set)?;
    Ok((outcome, report))
}
