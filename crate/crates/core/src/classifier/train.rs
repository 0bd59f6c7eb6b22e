use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClassifierError, Example, MlpModel};
use crate::pipeline::{FeatureStats, FeatureVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub train_fraction: f64,
    /// Stop after this many epochs without a new best epoch loss.
    pub patience: Option<usize>,
    pub hidden: usize,
    /// Fit z-score statistics on the training set and store them in the model.
    pub normalize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            epochs: 200,
            batch_size: 32,
            seed: 42,
            train_fraction: 0.8,
            patience: None,
            hidden: 16,
            normalize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |m: &str| Err(ClassifierError::Config(m.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie in (0, 1)");
        }
        if self.batch_size == 0 || self.hidden == 0 {
            return bad("batch_size and hidden must be > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    /// Mean loss over the training set before the first update.
    pub initial: f64,
    /// Mean of the mini-batch losses of each epoch.
    pub epochs: Vec<f64>,
    /// Mean loss over the training set after the last update.
    pub final_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub history: LossHistory,
}

/// Mini-batch SGD with momentum. Shuffling uses a ChaCha stream seeded from
/// `config.seed`, so `(model, data, config)` fully determine the result.
pub fn train(
    model: &MlpModel,
    data: &[Example],
    config: &TrainConfig,
) -> Result<TrainOutcome, ClassifierError> {
    config.validate()?;
    model.validate()?;
    let classes = model.class_count();
    if let Some(bad) = data.iter().find(|e| e.class >= classes) {
        return Err(ClassifierError::InvalidClass {
            class: bad.class,
            classes,
        });
    }
    let mut present: Vec<usize> = data.iter().map(|e| e.class).collect();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(ClassifierError::DegenerateDataset(present.len()));
    }

    // With `normalize`, training runs on pre-normalized inputs and the fitted
    // statistics are attached at the end; otherwise the model's own statistics
    // (if any) stay in the loop.
    let mut net = model.clone();
    let mut fitted = None;
    let inputs: Vec<Vec<f64>> = if config.normalize {
        let vectors: Vec<FeatureVector> = data
            .iter()
            .map(|e| FeatureVector {
                values: e.features.clone(),
                channels: Default::default(),
            })
            .collect();
        let stats = FeatureStats::fit(&vectors)?;
        let normalized = vectors
            .into_iter()
            .map(|mut v| stats.apply(&mut v.values).map(|_| v.values))
            .collect::<Result<Vec<_>, _>>()?;
        net.norm = None;
        fitted = Some(stats);
        normalized
    } else {
        data.iter().map(|e| e.features.clone()).collect()
    };
    let everything: Vec<(&[f64], usize)> = inputs
        .iter()
        .zip(data)
        .map(|(x, e)| (x.as_slice(), e.class))
        .collect();

    let initial = net.loss(&everything)?;
    let mut velocity = vec![0.0; net.param_count()];
    let mut order: Vec<usize> = (0..everything.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best = f64::INFINITY;
    let mut since_best = 0;

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&[f64], usize)> = chunk.iter().map(|&i| everything[i]).collect();
            let (loss, grad) = net.loss_and_grad(&batch)?;
            for (i, g) in grad.iter().enumerate() {
                velocity[i] = config.momentum * velocity[i] - config.learning_rate * g;
                *net.param_mut(i) += velocity[i];
            }
            sum += loss;
            batches += 1;
        }
        let epoch_loss = sum / batches as f64;
        if !epoch_loss.is_finite() {
            return Err(ClassifierError::NonFinite);
        }
        epochs.push(epoch_loss);
        if epoch_loss < best - 1e-9 {
            best = epoch_loss;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if config.patience.is_some_and(|p| since_best >= p) {
            break;
        }
    }

    let final_loss = net.loss(&everything)?;
    if fitted.is_some() {
        net.norm = fitted;
    }
    Ok(TrainOutcome {
        model: net,
        history: LossHistory {
            initial,
            epochs,
            final_loss,
        },
    })
}

/// Per-class shuffled split; every class with at least two examples lands
/// on both sides. Returns `(train, test)` indices into `classes`.
pub fn stratified_split(classes: &[usize], train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_class = classes.iter().copied().max().map_or(0, |m| m + 1);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..max_class {
        let mut members: Vec<usize> = (0..classes.len()).filter(|&i| classes[i] == c).collect();
        members.shuffle(&mut rng);
        let n = members.len();
        let mut k = (n as f64 * train_fraction).round() as usize;
        if n >= 2 {
            k = k.clamp(1, n - 1);
        }
        train.extend_from_slice(&members[..k.min(n)]);
        test.extend_from_slice(&members[k.min(n)..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Two Gaussian-free blobs split by the hyperplane x0 + x1 = 0 with margin.
    fn separable(n: usize, seed: u64) -> Vec<Example> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let class = i % 2;
                let sign = if class == 0 { -1.0 } else { 1.0 };
                let along = sign * rng.gen_range(0.5..2.0);
                let across = rng.gen_range(-2.0..2.0);
                Example {
                    features: vec![along + across, along - across, rng.gen_range(-1.0..1.0)],
                    class,
                }
            })
            .collect()
    }

    /// Perceptron oracle: converges iff the data are linearly separable.
    fn perceptron_separates(data: &[Example]) -> bool {
        let mut w = [0.0f64; 4];
        for _ in 0..1000 {
            let mut mistakes = 0;
            for e in data {
                let y = if e.class == 1 { 1.0 } else { -1.0 };
                let s = w[3] + (0..3).map(|i| w[i] * e.features[i]).sum::<f64>();
                if y * s <= 0.0 {
                    mistakes += 1;
                    for i in 0..3 {
                        w[i] += y * e.features[i];
                    }
                    w[3] += y;
                }
            }
            if mistakes == 0 {
                return true;
            }
        }
        false
    }

    #[test]
    fn separable_toy_set_reaches_full_training_accuracy() {
        let data = separable(100, 4);
        assert!(perceptron_separates(&data));
        let model = MlpModel::init([3, 16, 2], 1);
        let out = train(&model, &data, &TrainConfig::default()).unwrap();
        let correct = data
            .iter()
            .filter(|e| out.model.predict(&e.features).unwrap().0 == e.class)
            .count();
        assert_eq!(correct, 100);
        assert!(out.history.final_loss < out.history.initial);
        assert_eq!(out.history.epochs.len(), 200);
    }

    #[test]
    fn training_is_deterministic() {
        let data = separable(60, 8);
        let model = MlpModel::init([3, 8, 2], 3);
        let cfg = TrainConfig { epochs: 20, ..Default::default() };
        let a = train(&model, &data, &cfg).unwrap();
        let b = train(&model, &data, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn single_class_is_degenerate() {
        let data: Vec<_> = separable(20, 1).into_iter().filter(|e| e.class == 1).collect();
        let model = MlpModel::init([3, 4, 2], 0);
        assert!(matches!(
            train(&model, &data, &TrainConfig::default()),
            Err(ClassifierError::DegenerateDataset(1))
        ));
    }

    #[test]
    fn patience_stops_early() {
        let data = separable(40, 2);
        let model = MlpModel::init([3, 8, 2], 0);
        let cfg = TrainConfig { patience: Some(3), epochs: 500, ..Default::default() };
        let out = train(&model, &data, &cfg).unwrap();
        assert!(out.history.epochs.len() < 500);
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig { train_fraction: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { learning_rate: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn split_keeps_every_class_on_both_sides() {
        let classes: Vec<usize> = (0..50).map(|i| if i < 3 { 2 } else { i % 2 }).collect();
        let (train, test) = stratified_split(&classes, 0.8, 1);
        assert_eq!(train.len() + test.len(), 50);
        for c in 0..3 {
            assert!(train.iter().any(|&i| classes[i] == c));
            assert!(test.iter().any(|&i| classes[i] == c));
        }
        assert_eq!(stratified_split(&classes, 0.8, 1), (train, test));
    }
}
