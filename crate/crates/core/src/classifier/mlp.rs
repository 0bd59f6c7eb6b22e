use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ClassifierError;
use crate::pipeline::FeatureStats;
use crate::types::LabelKind;

/// Single-hidden-layer perceptron: `input -> ReLU(hidden) -> softmax(classes)`.
///
/// Weight matrices are row-major with one row per output unit.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub sizes: [usize; 3],
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    /// Applied to raw features before the first layer.
    pub norm: Option<FeatureStats>,
    pub kind: Option<LabelKind>,
}

/// Gradient of the loss with the same layout as [`MlpModel`] parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Gradients {
    fn zeros(sizes: [usize; 3]) -> Self {
        let [d, h, c] = sizes;
        Gradients {
            w1: vec![0.0; h * d],
            b1: vec![0.0; h],
            w2: vec![0.0; c * h],
            b2: vec![0.0; c],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2).copied()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.iter().nth(index).expect("parameter index in range")
    }
}

/// Intermediate values of one forward pass.
struct Activations {
    hidden: Vec<f64>,
    probs: Vec<f64>,
    log_norm: f64,
    logits: Vec<f64>,
}

impl MlpModel {
    pub fn zeros(sizes: [usize; 3]) -> Self {
        let [d, h, c] = sizes;
        MlpModel {
            sizes,
            w1: vec![0.0; h * d],
            b1: vec![0.0; h],
            w2: vec![0.0; c * h],
            b2: vec![0.0; c],
            norm: None,
            kind: None,
        }
    }

    /// He-scaled uniform weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero biases.
    pub fn init(sizes: [usize; 3], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Self::zeros(sizes);
        let [d, h, _] = sizes;
        for (w, fan_in) in [(&mut model.w1, d), (&mut model.w2, h)] {
            let limit = (6.0 / fan_in.max(1) as f64).sqrt();
            w.iter_mut().for_each(|x| *x = rng.gen_range(-limit..limit));
        }
        model
    }

    pub fn with_kind(mut self, kind: LabelKind) -> Self {
        self.kind = Some(kind);
        self
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn class_count(&self) -> usize {
        self.sizes[2]
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2).copied()
    }

    pub fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for tensor in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            if index < tensor.len() {
                return &mut tensor[index];
            }
            index -= tensor.len();
        }
        panic!("parameter index out of range")
    }

    /// Checks tensor shapes against `sizes` and that every parameter is finite.
    pub fn validate(&self) -> Result<(), ClassifierError> {
        let [d, h, c] = self.sizes;
        let shapes = [
            (self.w1.len(), h * d),
            (self.b1.len(), h),
            (self.w2.len(), c * h),
            (self.b2.len(), c),
        ];
        if shapes.iter().any(|(got, want)| got != want) {
            return Err(ClassifierError::Shape(format!(
                "tensors do not match layer sizes {:?}",
                self.sizes
            )));
        }
        if !self.params().all(f64::is_finite) {
            return Err(ClassifierError::NonFinite);
        }
        if let Some(norm) = &self.norm {
            if norm.dim() != d {
                return Err(ClassifierError::Dimension {
                    expected: d,
                    got: norm.dim(),
                });
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<(), ClassifierError> {
        if x.len() != self.input_dim() {
            return Err(ClassifierError::Dimension {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(ClassifierError::NonFinite);
        }
        Ok(())
    }

    fn normalized<'a>(&self, x: &'a [f64]) -> std::borrow::Cow<'a, [f64]> {
        match &self.norm {
            Some(stats) => {
                let mut v = x.to_vec();
                stats.apply(&mut v).expect("dimension checked");
                v.into()
            }
            None => x.into(),
        }
    }

    fn activations(&self, x: &[f64]) -> Activations {
        let [d, h, c] = self.sizes;
        let hidden: Vec<f64> = (0..h)
            .map(|j| {
                let row = &self.w1[j * d..(j + 1) * d];
                let z = self.b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                z.max(0.0)
            })
            .collect();
        let logits: Vec<f64> = (0..c)
            .map(|k| {
                let row = &self.w2[k * h..(k + 1) * h];
                self.b2[k] + row.iter().zip(&hidden).map(|(w, a)| w * a).sum::<f64>()
            })
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        Activations {
            hidden,
            probs: exps.iter().map(|e| e / sum).collect(),
            log_norm: max + sum.ln(),
            logits,
        }
    }

    /// Class probabilities for one raw feature vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, ClassifierError> {
        self.check_input(x)?;
        Ok(self.activations(&self.normalized(x)).probs)
    }

    /// Most probable class (lowest index on ties) and its probability.
    pub fn predict(&self, x: &[f64]) -> Result<(usize, f64), ClassifierError> {
        Ok(argmax(&self.forward(x)?))
    }

    /// Mean cross-entropy over `batch` and its gradient.
    pub fn loss_and_grad(&self, batch: &[(&[f64], usize)]) -> Result<(f64, Gradients), ClassifierError> {
        if batch.is_empty() {
            return Err(ClassifierError::EmptyBatch);
        }
        let [d, h, c] = self.sizes;
        let mut grad = Gradients::zeros(self.sizes);
        let mut loss = 0.0;
        let mut delta_out = vec![0.0; c];
        for &(x, y) in batch {
            self.check_input(x)?;
            if y >= c {
                return Err(ClassifierError::InvalidClass { class: y, classes: c });
            }
            let x = self.normalized(x);
            let act = self.activations(&x);
            loss += act.log_norm - act.logits[y];

            for k in 0..c {
                delta_out[k] = act.probs[k] - if k == y { 1.0 } else { 0.0 };
                grad.b2[k] += delta_out[k];
                let row = &mut grad.w2[k * h..(k + 1) * h];
                for (g, a) in row.iter_mut().zip(&act.hidden) {
                    *g += delta_out[k] * a;
                }
            }
            for j in 0..h {
                if act.hidden[j] <= 0.0 {
                    continue;
                }
                let back: f64 = (0..c).map(|k| delta_out[k] * self.w2[k * h + j]).sum();
                grad.b1[j] += back;
                let row = &mut grad.w1[j * d..(j + 1) * d];
                for (g, v) in row.iter_mut().zip(x.iter()) {
                    *g += back * v;
                }
            }
        }
        let n = batch.len() as f64;
        for tensor in [&mut grad.w1, &mut grad.b1, &mut grad.w2, &mut grad.b2] {
            tensor.iter_mut().for_each(|g| *g /= n);
        }
        Ok((loss / n, grad))
    }

    /// Mean cross-entropy without the gradient.
    pub fn loss(&self, batch: &[(&[f64], usize)]) -> Result<f64, ClassifierError> {
        if batch.is_empty() {
            return Err(ClassifierError::EmptyBatch);
        }
        let mut total = 0.0;
        for &(x, y) in batch {
            self.check_input(x)?;
            if y >= self.class_count() {
                return Err(ClassifierError::InvalidClass {
                    class: y,
                    classes: self.class_count(),
                });
            }
            let act = self.activations(&self.normalized(x));
            total += act.log_norm - act.logits[y];
        }
        Ok(total / batch.len() as f64)
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> (usize, f64) {
    values
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::index::sample;
    use rand::Rng;

    fn random_input(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = MlpModel::zeros([5, 3, 4]);
        let p = m.forward(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap();
        assert!(p.iter().all(|&q| (q - 0.25).abs() < 1e-15));
    }

    #[test]
    fn dimension_and_finiteness_checked() {
        let m = MlpModel::zeros([3, 2, 2]);
        assert!(matches!(m.forward(&[1.0]), Err(ClassifierError::Dimension { expected: 3, got: 1 })));
        assert!(matches!(m.forward(&[1.0, f64::NAN, 0.0]), Err(ClassifierError::NonFinite)));
        assert!(matches!(m.loss_and_grad(&[]), Err(ClassifierError::EmptyBatch)));
        let x = [0.0; 3];
        assert!(matches!(
            m.loss_and_grad(&[(&x, 2)]),
            Err(ClassifierError::InvalidClass { .. })
        ));
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one(seed in any::<u64>(), scale in 0.1f64..50.0) {
            let m = MlpModel::init([8, 6, 5], seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
            let x: Vec<f64> = random_input(&mut rng, 8).iter().map(|v| v * scale).collect();
            let p = m.forward(&x).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|q| (0.0..=1.0).contains(q)));
        }

        #[test]
        fn argmax_invariant_to_shared_output_bias(seed in any::<u64>(), shift in -100.0f64..100.0) {
            let m = MlpModel::init([6, 4, 3], seed);
            let mut shifted = m.clone();
            shifted.b2.iter_mut().for_each(|b| *b += shift);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_input(&mut rng, 6);
            prop_assert_eq!(m.predict(&x).unwrap().0, shifted.predict(&x).unwrap().0);
        }
    }

    #[test]
    fn confident_correct_output_has_near_zero_loss() {
        let mut m = MlpModel::zeros([2, 2, 3]);
        m.b2 = vec![0.0, 60.0, 0.0];
        let x = [0.3, 0.1];
        let (loss, _) = m.loss_and_grad(&[(&x, 1)]).unwrap();
        assert!((0.0..1e-20).contains(&loss), "loss {loss}");
    }

    #[test]
    fn duplicated_batch_has_same_loss_and_gradient() {
        let m = MlpModel::init([6, 4, 3], 9);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<Vec<f64>> = (0..5).map(|_| random_input(&mut rng, 6)).collect();
        let batch: Vec<(&[f64], usize)> = xs.iter().enumerate().map(|(i, x)| (x.as_slice(), i % 3)).collect();
        let doubled: Vec<_> = batch.iter().chain(batch.iter()).copied().collect();
        let (l1, g1) = m.loss_and_grad(&batch).unwrap();
        let (l2, g2) = m.loss_and_grad(&doubled).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        assert!(g1.iter().zip(g2.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    /// Central finite differences at h = 1e-4 against the analytic gradient.
    pub(crate) fn max_relative_gradient_error(seed: u64, checked: usize) -> f64 {
        let mut model = MlpModel::init([6, 4, 3], seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(7));
        model.b1.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
        model.b2.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
        let xs: Vec<Vec<f64>> = (0..8).map(|_| random_input(&mut rng, 6)).collect();
        let batch: Vec<(&[f64], usize)> =
            xs.iter().map(|x| (x.as_slice(), rng.gen_range(0..3))).collect();
        let (_, grad) = model.loss_and_grad(&batch).unwrap();
        let h = 1e-4;
        let mut worst: f64 = 0.0;
        for i in sample(&mut rng, model.param_count(), checked) {
            let orig = *model.param_mut(i);
            *model.param_mut(i) = orig + h;
            let up = model.loss(&batch).unwrap();
            *model.param_mut(i) = orig - h;
            let down = model.loss(&batch).unwrap();
            *model.param_mut(i) = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grad.get(i);
            let scale = analytic.abs().max(numeric.abs());
            if scale > 1e-10 {
                worst = worst.max((analytic - numeric).abs() / scale);
            }
        }
        worst
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..10 {
            let err = max_relative_gradient_error(seed, 20);
            assert!(err < 1e-5, "seed {seed}: relative error {err}");
        }
    }
}
