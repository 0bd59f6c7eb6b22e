use serde::Serialize;

use super::{fit_and_evaluate, ClassifierError, Example, TrainConfig};
use crate::pipeline::{FeatureVector, PipelineError};
use crate::types::{Channel, ChannelSet, LabelKind};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetAccuracy {
    pub channels: String,
    pub overall_accuracy: f64,
}

/// Trains one identically configured model per channel subset (same seed,
/// same split) and reports each model's overall test accuracy.
pub fn ablation_compare(
    dataset: &[(FeatureVector, usize)],
    kind: LabelKind,
    subsets: &[ChannelSet],
    config: &TrainConfig,
) -> Result<Vec<SubsetAccuracy>, ClassifierError> {
    let available = dataset
        .first()
        .map(|(f, _)| f.channels)
        .ok_or(ClassifierError::EmptyTestSet)?;
    if !available.contains(Channel::Stretch) {
        return Err(PipelineError::MissingChannel {
            requested: ChannelSet::from_channels([Channel::Stretch]),
            available,
        }
        .into());
    }
    let mut out = Vec::with_capacity(subsets.len());
    for &subset in subsets {
        if subset.is_empty() {
            return Err(ClassifierError::Config("empty channel subset".into()));
        }
        let examples = dataset
            .iter()
            .map(|(f, c)| {
                Ok(Example {
                    features: f.select(subset)?.values,
                    class: *c,
                })
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;
        let (_, report) = fit_and_evaluate(&examples, kind, config)?;
        out.push(SubsetAccuracy {
            channels: subset.to_string(),
            overall_accuracy: report.overall_accuracy,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::labeled_features;
    use crate::datagen::{generate_synthetic, SyntheticActivityModel};

    fn corpus() -> Vec<(FeatureVector, usize)> {
        let model = SyntheticActivityModel::ablation(3);
        let rec = generate_synthetic(&model, &SyntheticActivityModel::ablation_schedule(2), 100).unwrap();
        labeled_features(&rec, 128, 0.5, LabelKind::Activity).unwrap()
    }

    #[test]
    fn repeated_subset_is_deterministic() {
        let data = corpus();
        let cfg = TrainConfig { epochs: 10, ..Default::default() };
        let r = ablation_compare(&data, LabelKind::Activity, &[ChannelSet::ALL, ChannelSet::ALL], &cfg).unwrap();
        assert_eq!(r[0], r[1]);
    }

    #[test]
    fn empty_and_missing_subsets_rejected() {
        let data = corpus();
        let cfg = TrainConfig { epochs: 1, ..Default::default() };
        assert!(ablation_compare(&data, LabelKind::Activity, &[ChannelSet::empty()], &cfg).is_err());

        let no_stretch: Vec<_> = data
            .iter()
            .map(|(f, c)| (f.select(ChannelSet::MOTION).unwrap(), *c))
            .collect();
        let err = ablation_compare(&no_stretch, LabelKind::Activity, &[ChannelSet::ACCEL], &cfg);
        assert!(matches!(err, Err(ClassifierError::Pipeline(PipelineError::MissingChannel { .. }))));
    }
}
