//! Built-in child evaluator: multinomial logistic regression on flattened
//! pixels, trained for a few epochs on chain-augmented data and scored on a
//! held-out split.
//!
//! Everything is deterministic in `(chain, data, protocol)`: the split,
//! per-item augmentation streams, the per-epoch shuffle and the zero
//! initialisation all derive from the protocol seed.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, LabeledDataset};
use crate::image::Image;
use crate::ops::apply_chain;
use crate::policy::PolicyChain;
use crate::rng::{derive_seed, derive_tagged, stream, stream_for};
use crate::search::{EvalFailure, Evaluator};

pub const CIFAR_HOLDOUT: usize = 2500;
pub const LARGE_HOLDOUT: usize = 5000;

/// Finite-difference step used by [`gradient_check`].
pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChildProtocol {
    pub epochs: usize,
    pub holdout_size: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ChildProtocol {
    fn default() -> Self {
        Self { epochs: 5, holdout_size: CIFAR_HOLDOUT, learning_rate: 0.1, batch_size: 64, seed: 0 }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("holdout size {holdout} must be in [1, {len}) for a dataset of {len} items")]
    BadHoldout { holdout: usize, len: usize },
    #[error("training data has {present} class(es) present; need at least 2")]
    TooFewClasses { present: usize },
    #[error("training diverged: non-finite loss in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("invalid protocol: {0}")]
    BadProtocol(&'static str),
    #[error("train and test images differ in size: {train:?} vs {test:?}")]
    SizeMismatch { train: (usize, usize), test: (usize, usize) },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

impl From<EvalError> for EvalFailure {
    fn from(e: EvalError) -> Self {
        EvalFailure(e.to_string())
    }
}

/// Uniformly random disjoint split into `(train, test)` with
/// `|test| = holdout_size`. Both halves keep the input's relative order.
pub fn split_holdout(data: &LabeledDataset, holdout_size: usize, seed: u64) -> Result<(LabeledDataset, LabeledDataset), EvalError> {
    let n = data.len();
    if holdout_size == 0 || holdout_size >= n {
        return Err(EvalError::BadHoldout { holdout: holdout_size, len: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed));
    let mut in_test = vec![false; n];
    for &i in &order[..holdout_size] {
        in_test[i] = true;
    }
    let pick = |want: bool| {
        let items = data.items().iter().enumerate().filter(|(i, _)| in_test[*i] == want).map(|(_, it)| it.clone()).collect();
        LabeledDataset::new(items, data.class_count())
    };
    Ok((pick(false)?, pick(true)?))
}

/// Flattened `[0, 1]` pixel features, row-major `(y, x, channel)`.
pub fn image_features(img: &Image) -> Vec<f64> {
    let mut out = Vec::with_capacity(img.pixels().len() * 3);
    for p in img.pixels() {
        out.extend(p.iter().map(|&c| f64::from(c) / 255.0));
    }
    out
}

/// Dense feature matrix with labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    pub dim: usize,
    pub data: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Features {
    pub fn from_images<'a>(items: impl IntoIterator<Item = (&'a Image, usize)>) -> Self {
        let mut dim = 0;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (img, label) in items {
            let f = image_features(img);
            dim = f.len();
            data.extend(f);
            labels.push(label);
        }
        Self { dim, data, labels }
    }

    pub fn from_dataset(ds: &LabeledDataset) -> Self {
        Self::from_images(ds.items().iter().map(|it| (&it.image, it.label)))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f64>() + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Softmax regression: `logits = W x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct TinyClassifier {
    classes: usize,
    dim: usize,
    /// Row-major `classes x dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradient of the summed cross-entropy loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl TinyClassifier {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self { classes, dim, weights: vec![0.0; classes * dim], bias: vec![0.0; classes] }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.classes)
            .map(|c| dot(&self.weights[c * self.dim..(c + 1) * self.dim], x) + self.bias[c])
            .collect()
    }

    /// Argmax of the logits, lowest class on ties.
    pub fn predict(&self, x: &[f64]) -> usize {
        let logits = self.logits(x);
        let mut best = 0;
        for c in 1..logits.len() {
            if logits[c] > logits[best] {
                best = c;
            }
        }
        best
    }

    /// Softmax probabilities and `-log p[label]` for one sample.
    fn forward(&self, x: &[f64], label: usize) -> (Vec<f64>, f64) {
        let logits = self.logits(x);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let loss = max + sum.ln() - logits[label];
        (exps.into_iter().map(|e| e / sum).collect(), loss)
    }

    /// Summed cross-entropy over the batch.
    pub fn loss<'a>(&self, batch: impl IntoIterator<Item = (&'a [f64], usize)>) -> f64 {
        batch.into_iter().map(|(x, y)| self.forward(x, y).1).sum()
    }

    /// Summed loss and its analytic gradient.
    pub fn loss_and_grad<'a>(&self, batch: impl IntoIterator<Item = (&'a [f64], usize)>) -> (f64, Gradient) {
        let mut grad = Gradient { weights: vec![0.0; self.weights.len()], bias: vec![0.0; self.classes] };
        let loss = self.accumulate(batch, &mut grad);
        (loss, grad)
    }

    fn accumulate<'a>(&self, batch: impl IntoIterator<Item = (&'a [f64], usize)>, grad: &mut Gradient) -> f64 {
        let mut loss = 0.0;
        for (x, y) in batch {
            let (probs, l) = self.forward(x, y);
            loss += l;
            for (c, p) in probs.into_iter().enumerate() {
                let d = if c == y { p - 1.0 } else { p };
                grad.bias[c] += d;
                axpy(d, x, &mut grad.weights[c * self.dim..(c + 1) * self.dim]);
            }
        }
        loss
    }

    pub fn accuracy(&self, data: &Features) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let correct = (0..data.len()).filter(|&i| self.predict(data.row(i)) == data.labels[i]).count();
        correct as f64 / data.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }

    /// Mini-batch gradient descent on the mean batch loss; the sample order
    /// is reshuffled every epoch from `seed`.
    pub fn train(&mut self, data: &Features, protocol: &ChildProtocol, seed: u64) -> Result<(), EvalError> {
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut grad = Gradient { weights: vec![0.0; self.weights.len()], bias: vec![0.0; self.classes] };
        for epoch in 0..protocol.epochs {
            order.shuffle(&mut stream_for(seed, epoch as u64));
            for batch in order.chunks(protocol.batch_size) {
                grad.weights.iter_mut().for_each(|g| *g = 0.0);
                grad.bias.iter_mut().for_each(|g| *g = 0.0);
                let loss = self.accumulate(batch.iter().map(|&i| (data.row(i), data.labels[i])), &mut grad);
                if !loss.is_finite() {
                    return Err(EvalError::Diverged { epoch });
                }
                let step = protocol.learning_rate / batch.len() as f64;
                axpy(-step, &grad.weights, &mut self.weights);
                axpy(-step, &grad.bias, &mut self.bias);
            }
            if !self.is_finite() {
                return Err(EvalError::Diverged { epoch });
            }
        }
        Ok(())
    }

    fn param(&self, k: usize) -> f64 {
        if k < self.weights.len() {
            self.weights[k]
        } else {
            self.bias[k - self.weights.len()]
        }
    }

    fn param_mut(&mut self, k: usize) -> &mut f64 {
        let n = self.weights.len();
        if k < n {
            &mut self.weights[k]
        } else {
            &mut self.bias[k - n]
        }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Largest relative disagreement between the analytic gradient and central
/// finite differences (step [`FD_STEP`]) over all parameters. The relative
/// error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check(classifier: &TinyClassifier, batch: &[(Vec<f64>, usize)]) -> f64 {
    let view = || batch.iter().map(|(x, y)| (x.as_slice(), *y));
    let (_, grad) = classifier.loss_and_grad(view());
    let analytic: Vec<f64> = grad.weights.iter().chain(&grad.bias).copied().collect();
    let mut probe = classifier.clone();
    let mut worst = 0.0f64;
    for (k, &a) in analytic.iter().enumerate().take(probe.param_count()) {
        let orig = probe.param(k);
        *probe.param_mut(k) = orig + FD_STEP;
        let up = probe.loss(view());
        *probe.param_mut(k) = orig - FD_STEP;
        let down = probe.loss(view());
        *probe.param_mut(k) = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

fn check_protocol(p: &ChildProtocol) -> Result<(), EvalError> {
    if p.epochs == 0 {
        return Err(EvalError::BadProtocol("epochs must be >= 1"));
    }
    if p.batch_size == 0 {
        return Err(EvalError::BadProtocol("batch_size must be >= 1"));
    }
    if !(p.learning_rate.is_finite() && p.learning_rate > 0.0) {
        return Err(EvalError::BadProtocol("learning_rate must be positive"));
    }
    Ok(())
}

/// Passes every training item once through `chain`, item `i` using its own
/// stream derived from `(seed, i)`.
pub fn augment_once(train: &LabeledDataset, chain: &PolicyChain, seed: u64) -> Features {
    if chain.is_empty() {
        return Features::from_dataset(train);
    }
    let aug_seed = derive_tagged(seed, "augment");
    let images: Vec<Image> = train
        .items()
        .par_iter()
        .enumerate()
        .map(|(i, it)| apply_chain(&it.image, chain, &mut stream_for(aug_seed, i as u64)))
        .collect();
    Features::from_images(images.iter().zip(train.items()).map(|(img, it)| (img, it.label)))
}

/// Trains on `train` augmented once by `chain` and returns accuracy on
/// precomputed test features.
pub fn train_and_score(
    chain: &PolicyChain,
    train: &LabeledDataset,
    test: &Features,
    protocol: &ChildProtocol,
) -> Result<f64, EvalError> {
    check_protocol(protocol)?;
    let present = train.classes_present();
    if present < 2 {
        return Err(EvalError::TooFewClasses { present });
    }
    let features = augment_once(train, chain, protocol.seed);
    let mut model = TinyClassifier::zeros(train.class_count(), features.dim);
    model.train(&features, protocol, derive_tagged(protocol.seed, "shuffle"))?;
    Ok(model.accuracy(test))
}

pub fn evaluate_chain_on_split(
    chain: &PolicyChain,
    train: &LabeledDataset,
    test: &LabeledDataset,
    protocol: &ChildProtocol,
) -> Result<f64, EvalError> {
    if train.image_size() != test.image_size() {
        return Err(EvalError::SizeMismatch { train: train.image_size(), test: test.image_size() });
    }
    train_and_score(chain, train, &Features::from_dataset(test), protocol)
}

/// Splits `data` with the protocol's holdout size, then trains and scores.
pub fn evaluate_chain(chain: &PolicyChain, data: &LabeledDataset, protocol: &ChildProtocol) -> Result<f64, EvalError> {
    let present = data.classes_present();
    if present < 2 {
        return Err(EvalError::TooFewClasses { present });
    }
    let (train, test) = split_holdout(data, protocol.holdout_size, derive_tagged(protocol.seed, "split"))?;
    evaluate_chain_on_split(chain, &train, &test, protocol)
}

/// [`Evaluator`] over a fixed train/test split. The engine-supplied seed
/// replaces `protocol.seed` on every call.
pub struct ChildEvaluator {
    train: LabeledDataset,
    test: Features,
    protocol: ChildProtocol,
}

impl ChildEvaluator {
    /// Splits `data` once using the protocol's holdout size and seed.
    pub fn new(data: &LabeledDataset, protocol: ChildProtocol) -> Result<Self, EvalError> {
        let present = data.classes_present();
        if present < 2 {
            return Err(EvalError::TooFewClasses { present });
        }
        let (train, test) = split_holdout(data, protocol.holdout_size, derive_tagged(protocol.seed, "split"))?;
        Self::with_split(train, test, protocol)
    }

    pub fn with_split(train: LabeledDataset, test: LabeledDataset, protocol: ChildProtocol) -> Result<Self, EvalError> {
        check_protocol(&protocol)?;
        if train.image_size() != test.image_size() {
            return Err(EvalError::SizeMismatch { train: train.image_size(), test: test.image_size() });
        }
        let present = train.classes_present();
        if present < 2 {
            return Err(EvalError::TooFewClasses { present });
        }
        Ok(Self { train, test: Features::from_dataset(&test), protocol })
    }

    pub fn protocol(&self) -> &ChildProtocol {
        &self.protocol
    }

    pub fn train_set(&self) -> &LabeledDataset {
        &self.train
    }

    pub fn test_features(&self) -> &Features {
        &self.test
    }

    /// Trains on an arbitrary training set (e.g. an expanded one) under this
    /// evaluator's protocol and scores on its test split.
    pub fn score_training_set(&self, train: &LabeledDataset, seed: u64) -> Result<f64, EvalError> {
        let protocol = ChildProtocol { seed, ..self.protocol.clone() };
        train_and_score(&PolicyChain::empty(), train, &self.test, &protocol)
    }
}

impl Evaluator for ChildEvaluator {
    fn evaluate(&self, chain: &PolicyChain, seed: u64) -> Result<f64, EvalFailure> {
        let protocol = ChildProtocol { seed: derive_seed(seed, 0), ..self.protocol.clone() };
        Ok(train_and_score(chain, &self.train, &self.test, &protocol)?)
    }

    fn epochs_per_evaluation(&self) -> u64 {
        self.protocol.epochs as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{MagnitudeLevel, Technique};
    use crate::policy::{Policy, Probability};
    use rand::Rng;

    fn random_batch(n: usize, dim: usize, classes: usize, seed: u64) -> (TinyClassifier, Vec<(Vec<f64>, usize)>) {
        let mut rng = stream(seed);
        let mut model = TinyClassifier::zeros(classes, dim);
        model.weights.iter_mut().for_each(|w| *w = rng.gen_range(-1.0..1.0));
        model.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
        let batch = (0..n)
            .map(|_| ((0..dim).map(|_| rng.gen::<f64>()).collect(), rng.gen_range(0..classes as u32) as usize))
            .collect();
        (model, batch)
    }

    #[test]
    fn protocol_defaults() {
        let p = ChildProtocol::default();
        assert_eq!(p.epochs, 5);
        assert_eq!(p.learning_rate, 0.1);
        assert_eq!(p.holdout_size, 2500);
    }

    #[test]
    fn uniform_softmax_loss_is_log_class_count() {
        for classes in [2, 3, 10] {
            let model = TinyClassifier::zeros(classes, 4);
            let x = vec![0.3, 0.1, 0.9, 0.0];
            assert_eq!(model.loss([(x.as_slice(), 1)]), (classes as f64).ln());
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (model, batch) = random_batch(4, 12, 3, 17);
        let err = gradient_check(&model, &batch);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn duplicated_batch_doubles_gradient() {
        let (model, batch) = random_batch(1, 6, 3, 4);
        let (x, y) = (&batch[0].0, batch[0].1);
        let (_, single) = model.loss_and_grad([(x.as_slice(), y)]);
        let (_, double) = model.loss_and_grad([(x.as_slice(), y), (x.as_slice(), y)]);
        for (s, d) in single.weights.iter().chain(&single.bias).zip(double.weights.iter().chain(&double.bias)) {
            assert_eq!(2.0 * s, *d);
        }
    }

    fn dataset(n: usize, seed: u64) -> LabeledDataset {
        let mut rng = stream(seed);
        LabeledDataset::from_pairs(
            (0..n).map(|i| {
                let label = i % 2;
                let base = if label == 0 { 40 } else { 200 };
                let img = Image::from_fn(4, 4, |_, _| [(base + rng.gen_range(0..20)) as u8; 3]);
                (img, label)
            }),
            2,
        )
        .unwrap()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let data = dataset(100, 1);
        let (train, test) = split_holdout(&data, 25, 9).unwrap();
        assert_eq!((train.len(), test.len()), (75, 25));
        assert_eq!(split_holdout(&data, 25, 9).unwrap(), (train.clone(), test.clone()));
        let mut all: Vec<_> = train.items().iter().chain(test.items()).map(|i| i.image.clone()).collect();
        let mut orig: Vec<_> = data.items().iter().map(|i| i.image.clone()).collect();
        all.sort_by_key(|i| i.pixels().to_vec());
        orig.sort_by_key(|i| i.pixels().to_vec());
        assert_eq!(all, orig);
        assert_eq!(split_holdout(&data, 100, 9), Err(EvalError::BadHoldout { holdout: 100, len: 100 }));
        assert_eq!(split_holdout(&data, 0, 9), Err(EvalError::BadHoldout { holdout: 0, len: 100 }));
    }

    #[test]
    fn separable_data_is_learned() {
        let data = dataset(400, 2);
        let protocol = ChildProtocol { holdout_size: 100, ..Default::default() };
        let acc = evaluate_chain(&PolicyChain::empty(), &data, &protocol).unwrap();
        assert!(acc >= 0.95, "{acc}");
        assert_eq!(evaluate_chain(&PolicyChain::empty(), &data, &protocol).unwrap(), acc);
    }

    #[test]
    fn single_class_is_rejected() {
        let data = LabeledDataset::from_pairs((0..10).map(|_| (Image::filled(2, 2, [9; 3]), 1)), 2).unwrap();
        let protocol = ChildProtocol { holdout_size: 2, ..Default::default() };
        assert_eq!(evaluate_chain(&PolicyChain::empty(), &data, &protocol), Err(EvalError::TooFewClasses { present: 1 }));
    }

    #[test]
    fn huge_learning_rate_reports_divergence() {
        let data = dataset(64, 3);
        let protocol = ChildProtocol { holdout_size: 8, learning_rate: 1e308, ..Default::default() };
        let chain = PolicyChain::new(vec![Policy::new(Technique::Invert, Probability::ONE, MagnitudeLevel::new(1).unwrap())]);
        assert!(matches!(evaluate_chain(&chain, &data, &protocol), Err(EvalError::Diverged { .. })));
    }
}
