//! Desk-scale empirical risk minimization.
//!
//! Synthetic Gaussian pixel scenes stand in for real imagery: each class
//! has a mean feature vector, pixels are drawn class-first from the
//! configured frequencies, and a linear softmax model is trained by plain
//! gradient descent under any of the supported losses. Everything is
//! seeded and single-threaded, so a config reproduces its run bit for bit.

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView1};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ground_metric::{apply_metric_fn, GroundMatrix, ImportanceGrouping, MetricFn};
use crate::labels::OneHotTarget;
use crate::metrics::{ConfusionMatrix, EvalReport};
use crate::wasserstein::{self, ProbabilityHistogram, SinkhornParams};

/// Pixel counts per split; no split may be empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Gaussian mixture scene: class `c` emits features
/// `mean[c] + noise_scale * N(0, I)` and appears with probability
/// `frequencies[c]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneConfig {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub class_means: Vec<Vec<f64>>,
    pub noise_scale: f64,
    pub frequencies: Vec<f64>,
    pub pixels: SplitSizes,
    pub seed: u64,
}

impl SyntheticSceneConfig {
    fn validate(&self) -> Result<()> {
        let n = self.num_classes;
        if n < 2 {
            return Err(Error::InvalidParameter(format!(
                "scene needs at least 2 classes, got {n}"
            )));
        }
        if self.feature_dim == 0 {
            return Err(Error::InvalidParameter(
                "feature_dim must be positive".into(),
            ));
        }
        if self.class_means.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} class means for {} classes",
                self.class_means.len(),
                n
            )));
        }
        for (c, mean) in self.class_means.iter().enumerate() {
            if mean.len() != self.feature_dim {
                return Err(Error::DimensionMismatch(format!(
                    "mean of class {c} has dimension {}, expected {}",
                    mean.len(),
                    self.feature_dim
                )));
            }
            if mean.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "mean of class {c} has non-finite entries"
                )));
            }
        }
        for a in 0..n {
            for b in a + 1..n {
                if self.class_means[a] == self.class_means[b] {
                    return Err(Error::InvalidParameter(format!(
                        "classes {a} and {b} share the same mean"
                    )));
                }
            }
        }
        if !self.noise_scale.is_finite() || self.noise_scale <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "noise scale must be > 0, got {}",
                self.noise_scale
            )));
        }
        if self.frequencies.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} frequencies for {} classes",
                self.frequencies.len(),
                n
            )));
        }
        if self.frequencies.iter().any(|&f| !f.is_finite() || f < 0.0) {
            return Err(Error::InvalidParameter("frequencies must be >= 0".into()));
        }
        let sum: f64 = self.frequencies.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "frequencies must sum to 1, got {sum}"
            )));
        }
        if self.pixels.train == 0 || self.pixels.val == 0 || self.pixels.test == 0 {
            return Err(Error::InvalidParameter("every split needs pixels".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Flat bag of pixels: a features row per pixel plus its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelDataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub split: Split,
}

impl PixelDataset {
    pub fn num_pixels(&self) -> usize {
        self.labels.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    fn check(&self, num_classes: usize) -> Result<()> {
        if self.features.nrows() != self.labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows vs {} labels",
                self.features.nrows(),
                self.labels.len()
            )));
        }
        if self.labels.is_empty() {
            return Err(Error::InvalidParameter("empty dataset split".into()));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::ClassOutOfRange {
                index: bad,
                num_classes,
            });
        }
        Ok(())
    }
}

/// Train/val/test triple drawn from one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneDataset {
    pub num_classes: usize,
    pub train: PixelDataset,
    pub val: PixelDataset,
    pub test: PixelDataset,
}

#[derive(Serialize, Deserialize)]
struct SplitFile {
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct SceneDatasetFile {
    num_classes: usize,
    feature_dim: usize,
    train: SplitFile,
    val: SplitFile,
    test: SplitFile,
}

fn split_to_file(split: &PixelDataset) -> SplitFile {
    SplitFile {
        features: split
            .features
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect(),
        labels: split.labels.clone(),
    }
}

fn split_from_file(file: SplitFile, feature_dim: usize, split: Split) -> Result<PixelDataset> {
    let rows = file.features.len();
    for (i, row) in file.features.iter().enumerate() {
        if row.len() != feature_dim {
            return Err(Error::DimensionMismatch(format!(
                "feature row {i} has dimension {}, expected {feature_dim}",
                row.len()
            )));
        }
    }
    let flat: Vec<f64> = file.features.into_iter().flatten().collect();
    let features = Array2::from_shape_vec((rows, feature_dim), flat)
        .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    Ok(PixelDataset {
        features,
        labels: file.labels,
        split,
    })
}

impl SceneDataset {
    pub fn feature_dim(&self) -> usize {
        self.train.feature_dim()
    }

    pub fn split(&self, which: Split) -> &PixelDataset {
        match which {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn to_json_string(&self) -> String {
        let file = SceneDatasetFile {
            num_classes: self.num_classes,
            feature_dim: self.feature_dim(),
            train: split_to_file(&self.train),
            val: split_to_file(&self.val),
            test: split_to_file(&self.test),
        };
        serde_json::to_string(&file).expect("dataset serialization cannot fail")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: SceneDatasetFile = serde_json::from_str(text)?;
        let scene = Self {
            num_classes: file.num_classes,
            train: split_from_file(file.train, file.feature_dim, Split::Train)?,
            val: split_from_file(file.val, file.feature_dim, Split::Val)?,
            test: split_from_file(file.test, file.feature_dim, Split::Test)?,
        };
        scene.train.check(scene.num_classes)?;
        scene.val.check(scene.num_classes)?;
        scene.test.check(scene.num_classes)?;
        Ok(scene)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn write_json_file(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }
}

/// Draws the train/val/test splits. Labels come first from the class
/// frequencies, then features from the class Gaussian, all from one seeded
/// stream, so equal configs give bit-identical datasets.
pub fn generate_scene(config: &SyntheticSceneConfig) -> Result<SceneDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut cdf = Vec::with_capacity(config.num_classes);
    let mut acc = 0.0;
    for &f in &config.frequencies {
        acc += f;
        cdf.push(acc);
    }

    let mut draw = |count: usize, split: Split| -> PixelDataset {
        let mut features = Array2::zeros((count, config.feature_dim));
        let mut labels = Vec::with_capacity(count);
        for p in 0..count {
            let u: f64 = rng.random();
            let class = cdf
                .iter()
                .position(|&edge| u < edge)
                .unwrap_or(config.num_classes - 1);
            labels.push(class);
            for j in 0..config.feature_dim {
                let noise: f64 = rng.sample(StandardNormal);
                features[[p, j]] = config.class_means[class][j] + config.noise_scale * noise;
            }
        }
        PixelDataset {
            features,
            labels,
            split,
        }
    };

    let train = draw(config.pixels.train, Split::Train);
    let val = draw(config.pixels.val, Split::Val);
    let test = draw(config.pixels.test, Split::Test);
    Ok(SceneDataset {
        num_classes: config.num_classes,
        train,
        val,
        test,
    })
}

/// Linear softmax classifier over pixel features.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxModel {
    weights: Array2<f64>,
    bias: Array1<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl SoftmaxModel {
    /// Seeded Gaussian weights at scale 0.01, zero bias.
    pub fn init(num_classes: usize, feature_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = Array2::from_shape_fn((num_classes, feature_dim), |_| {
            0.01 * rng.sample::<f64, _>(StandardNormal)
        });
        Self {
            weights,
            bias: Array1::zeros(num_classes),
        }
    }

    pub fn new(weights: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weight rows vs {} bias entries",
                weights.nrows(),
                bias.len()
            )));
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "model parameters must be finite".into(),
            ));
        }
        Ok(Self { weights, bias })
    }

    pub fn num_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    pub fn logits(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        self.weights.dot(&x) + &self.bias
    }

    fn check_features(&self, features: &Array2<f64>) -> Result<()> {
        if features.ncols() != self.feature_dim() {
            return Err(Error::DimensionMismatch(format!(
                "model expects {} features, got rows of {}",
                self.feature_dim(),
                features.ncols()
            )));
        }
        Ok(())
    }

    /// Max-subtracted softmax of the logits; sums to 1 within 1e-6.
    pub fn probabilities(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        stable_softmax(self.logits(x).view())
    }

    /// One histogram per pixel row.
    pub fn forward(&self, features: &Array2<f64>) -> Result<Vec<ProbabilityHistogram>> {
        self.check_features(features)?;
        Ok(features
            .rows()
            .into_iter()
            .map(|x| ProbabilityHistogram::from_normalized(self.probabilities(x)))
            .collect())
    }

    /// Argmax class per pixel, ties toward the smaller index.
    pub fn predict(&self, features: &Array2<f64>) -> Result<Vec<usize>> {
        self.check_features(features)?;
        Ok(features
            .rows()
            .into_iter()
            .map(|x| {
                let z = self.logits(x);
                let mut best = 0;
                for k in 1..z.len() {
                    if z[k] > z[best] {
                        best = k;
                    }
                }
                best
            })
            .collect())
    }

    pub fn to_json_string(&self) -> String {
        let file = ModelFile {
            weights: self
                .weights
                .rows()
                .into_iter()
                .map(|r| r.to_vec())
                .collect(),
            bias: self.bias.to_vec(),
        };
        serde_json::to_string_pretty(&file).expect("model serialization cannot fail")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        let rows = file.weights.len();
        let cols = file.weights.first().map_or(0, Vec::len);
        if cols == 0 || file.weights.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch(
                "model weight rows have unequal or zero width".into(),
            ));
        }
        let flat: Vec<f64> = file.weights.into_iter().flatten().collect();
        let weights = Array2::from_shape_vec((rows, cols), flat)
            .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
        Self::new(weights, Array1::from_vec(file.bias))
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn write_json_file(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }
}

fn stable_softmax(logits: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = logits.mapv(|z| (z - max).exp());
    let sum = out.sum();
    out.mapv_inplace(|e| e / sum);
    out
}

/// Which loss drives training.
#[derive(Debug, Clone)]
pub enum LossSpec {
    CrossEntropy,
    /// One-hot Wasserstein under a fixed ground matrix (metric function
    /// already applied).
    Wasserstein {
        matrix: GroundMatrix,
    },
    /// Half l1 distance to the one-hot target.
    L1,
    /// Entropic transport to the smoothed (conservative) target. The
    /// gradient uses the dual potential with the plan held fixed, which is
    /// approximate; it is excluded from gradient-check guarantees.
    Sinkhorn {
        matrix: GroundMatrix,
        params: SinkhornParams,
        smoothing: f64,
    },
}

impl LossSpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::CrossEntropy => "ce",
            Self::Wasserstein { .. } => "wasserstein",
            Self::L1 => "l1",
            Self::Sinkhorn { .. } => "sinkhorn",
        }
    }

    pub fn matrix(&self) -> Option<&GroundMatrix> {
        match self {
            Self::Wasserstein { matrix } | Self::Sinkhorn { matrix, .. } => Some(matrix),
            _ => None,
        }
    }

    fn check(&self, num_classes: usize) -> Result<()> {
        if let Some(matrix) = self.matrix() {
            if matrix.n() != num_classes {
                return Err(Error::DimensionMismatch(format!(
                    "{}x{} loss matrix for {} classes",
                    matrix.n(),
                    matrix.n(),
                    num_classes
                )));
            }
        }
        if let Self::Sinkhorn { smoothing, .. } = self {
            if !smoothing.is_finite() || !(0.0..1.0).contains(smoothing) {
                return Err(Error::InvalidParameter(format!(
                    "sinkhorn smoothing must be in [0, 1), got {smoothing}"
                )));
            }
        }
        Ok(())
    }

    /// Per-pixel loss given softmax probabilities.
    pub fn loss(&self, probs: ArrayView1<'_, f64>, target: usize) -> Result<f64> {
        match self {
            Self::CrossEntropy => Ok(-probs[target].clamp(wasserstein::CE_CLAMP_FLOOR, 1.0).ln()),
            Self::Wasserstein { matrix } => Ok(wasserstein::onehot_cost(probs, target, matrix)),
            Self::L1 => {
                let sum: f64 = probs
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| (p - if i == target { 1.0 } else { 0.0 }).abs())
                    .sum();
                Ok(0.5 * sum)
            }
            Self::Sinkhorn {
                matrix,
                params,
                smoothing,
            } => {
                let s = ProbabilityHistogram::new(probs.to_vec())?;
                let t = OneHotTarget::new(probs.len(), target)?.smooth(*smoothing)?;
                let solution = wasserstein::sinkhorn_solve(&s, t.histogram(), matrix, params)?;
                Ok(solution.transport_cost)
            }
        }
    }

    /// Per-pixel loss and gradient with respect to the logits.
    fn loss_and_logit_grad(
        &self,
        probs: ArrayView1<'_, f64>,
        target: usize,
    ) -> Result<(f64, Array1<f64>)> {
        match self {
            Self::CrossEntropy => {
                let loss = -probs[target].clamp(wasserstein::CE_CLAMP_FLOOR, 1.0).ln();
                let mut grad = probs.to_owned();
                grad[target] -= 1.0;
                Ok((loss, grad))
            }
            Self::Wasserstein { matrix } => {
                let loss = wasserstein::onehot_cost(probs, target, matrix);
                let cost_column = Array1::from_shape_fn(probs.len(), |i| matrix.cost(i, target));
                let grad = wasserstein::logit_pullback(probs, cost_column.view());
                Ok((loss, grad))
            }
            Self::L1 => {
                let diff = Array1::from_shape_fn(probs.len(), |i| {
                    probs[i] - if i == target { 1.0 } else { 0.0 }
                });
                let loss = 0.5 * diff.iter().map(|d| d.abs()).sum::<f64>();
                let subgrad = diff.mapv(|d| if d == 0.0 { 0.0 } else { 0.5 * d.signum() });
                Ok((loss, wasserstein::logit_pullback(probs, subgrad.view())))
            }
            Self::Sinkhorn {
                matrix,
                params,
                smoothing,
            } => {
                let s = ProbabilityHistogram::new(probs.to_vec())?;
                let t = OneHotTarget::new(probs.len(), target)?.smooth(*smoothing)?;
                let solution = wasserstein::sinkhorn_solve(&s, t.histogram(), matrix, params)?;
                let grad = wasserstein::logit_pullback(probs, solution.source_potential.view());
                Ok((solution.transport_cost, grad))
            }
        }
    }
}

/// Training hyperparameters. `batch_size: None` means full batch. A zero
/// learning rate is allowed and leaves the model untouched.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub loss: LossSpec,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: Option<usize>,
    pub seed: u64,
    /// Ground matrix for per-epoch severity reporting; defaults to the
    /// loss's own matrix, then to the 0/1 matrix.
    pub eval_matrix: Option<GroundMatrix>,
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be >= 1".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidParameter("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// One row of the per-epoch log.
#[derive(Debug, Clone, Serialize)]
pub struct TrainStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_miou: Option<f64>,
    pub val_severity_error: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: SoftmaxModel,
    pub stats: Vec<TrainStats>,
}

/// Full-batch (or minibatch) gradient descent. Deterministic given the
/// config seed; aborts with the epoch and batch index if a loss or gradient
/// goes non-finite.
pub fn train(
    model: SoftmaxModel,
    train_split: &PixelDataset,
    val_split: &PixelDataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let n = model.num_classes();
    config.loss.check(n)?;
    train_split.check(n)?;
    val_split.check(n)?;
    if train_split.feature_dim() != model.feature_dim() {
        return Err(Error::DimensionMismatch(format!(
            "model expects {} features, dataset has {}",
            model.feature_dim(),
            train_split.feature_dim()
        )));
    }

    let fallback_eval;
    let eval_matrix = match (&config.eval_matrix, config.loss.matrix()) {
        (Some(d), _) => d,
        (None, Some(d)) => d,
        (None, None) => {
            fallback_eval = GroundMatrix::zero_one(n);
            &fallback_eval
        }
    };

    let mut model = model;
    // Distinct stream from scene generation and weight init.
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9));
    let mut stats = Vec::with_capacity(config.epochs);
    let pixel_count = train_split.num_pixels();

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..pixel_count).collect();
        let batch_len = match config.batch_size {
            Some(b) => {
                order.shuffle(&mut shuffle_rng);
                b.min(pixel_count)
            }
            None => pixel_count,
        };

        let mut epoch_loss = 0.0;
        for (batch_index, batch) in order.chunks(batch_len).enumerate() {
            let (loss, grad_w, grad_b) =
                batch_loss_and_grad(&model, train_split, batch, &config.loss)?;
            let finite = loss.is_finite()
                && grad_w.iter().all(|g| g.is_finite())
                && grad_b.iter().all(|g| g.is_finite());
            if !finite {
                return Err(Error::NumericalAbort {
                    epoch,
                    batch: batch_index,
                });
            }
            epoch_loss += loss * batch.len() as f64;
            model.weights.scaled_add(-config.learning_rate, &grad_w);
            model.bias.scaled_add(-config.learning_rate, &grad_b);
        }

        let (val_loss, val_miou, val_severity_error) =
            validation_stats(&model, val_split, &config.loss, eval_matrix)?;
        stats.push(TrainStats {
            epoch,
            train_loss: epoch_loss / pixel_count as f64,
            val_loss,
            val_miou,
            val_severity_error,
        });
    }

    Ok(TrainOutcome { model, stats })
}

/// Mean loss and parameter gradient over a batch of pixel indices.
fn batch_loss_and_grad(
    model: &SoftmaxModel,
    data: &PixelDataset,
    batch: &[usize],
    loss: &LossSpec,
) -> Result<(f64, Array2<f64>, Array1<f64>)> {
    let n = model.num_classes();
    let f = model.feature_dim();
    let mut grad_w = Array2::zeros((n, f));
    let mut grad_b = Array1::zeros(n);
    let mut total = 0.0;
    for &idx in batch {
        let x = data.features.row(idx);
        let probs = model.probabilities(x);
        let (pixel_loss, dz) = loss.loss_and_logit_grad(probs.view(), data.labels[idx])?;
        total += pixel_loss;
        for k in 0..n {
            grad_b[k] += dz[k];
            for j in 0..f {
                grad_w[[k, j]] += dz[k] * x[j];
            }
        }
    }
    let inv = 1.0 / batch.len() as f64;
    Ok((total * inv, grad_w * inv, grad_b * inv))
}

fn validation_stats(
    model: &SoftmaxModel,
    val: &PixelDataset,
    loss: &LossSpec,
    eval_matrix: &GroundMatrix,
) -> Result<(f64, Option<f64>, f64)> {
    let mut total = 0.0;
    let mut confusion = ConfusionMatrix::new(model.num_classes());
    for (idx, &label) in val.labels.iter().enumerate() {
        let x = val.features.row(idx);
        let probs = model.probabilities(x);
        total += loss.loss(probs.view(), label)?;
        let mut best = 0;
        for k in 1..probs.len() {
            if probs[k] > probs[best] {
                best = k;
            }
        }
        confusion.record(label, best)?;
    }
    let ious = crate::metrics::iou_per_class(&confusion);
    let miou = crate::metrics::mean_iou(&ious);
    let severity = crate::metrics::severity_weighted_error(&confusion, eval_matrix)?;
    Ok((total / val.num_pixels() as f64, miou, severity))
}

/// Evaluates a model on one split, optionally with a grouping for the
/// per-group breakdown and a matrix for the severity error.
pub fn evaluate(
    model: &SoftmaxModel,
    data: &PixelDataset,
    num_classes: usize,
    grouping: Option<&ImportanceGrouping>,
    severity_matrix: Option<&GroundMatrix>,
) -> Result<EvalReport> {
    data.check(num_classes)?;
    if model.num_classes() != num_classes {
        return Err(Error::DimensionMismatch(format!(
            "model has {} classes, dataset has {num_classes}",
            model.num_classes()
        )));
    }
    let preds = model.predict(&data.features)?;
    let confusion = ConfusionMatrix::from_indices(&data.labels, &preds, num_classes)?;
    EvalReport::compute(&confusion, grouping, severity_matrix)
}

/// Analytic-versus-numerical gradient comparison over all model parameters.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GradCheckReport {
    /// Largest relative error among coordinates with `|fd| >= 1e-8`.
    pub max_relative_error: f64,
    /// Largest absolute error among coordinates with `|fd| < 1e-8`.
    pub max_absolute_error: f64,
}

impl GradCheckReport {
    pub fn passes(&self, relative_tol: f64, absolute_tol: f64) -> bool {
        self.max_relative_error <= relative_tol && self.max_absolute_error <= absolute_tol
    }
}

/// Threshold below which a finite-difference value is compared absolutely.
pub const GRAD_CHECK_SMALL_FD: f64 = 1e-8;

/// Central-difference check of the batch-mean parameter gradient. The
/// Sinkhorn spec is rejected: its training gradient is deliberately
/// approximate.
pub fn grad_check(
    model: &SoftmaxModel,
    data: &PixelDataset,
    loss: &LossSpec,
    step: f64,
) -> Result<GradCheckReport> {
    if matches!(loss, LossSpec::Sinkhorn { .. }) {
        return Err(Error::InvalidParameter(
            "grad_check covers ce, wasserstein and l1; the sinkhorn training \
             gradient is an envelope approximation"
                .into(),
        ));
    }
    if !step.is_finite() || step <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "finite-difference step must be > 0, got {step}"
        )));
    }
    let n = model.num_classes();
    data.check(n)?;
    loss.check(n)?;
    let batch: Vec<usize> = (0..data.num_pixels()).collect();
    let (_, grad_w, grad_b) = batch_loss_and_grad(model, data, &batch, loss)?;

    let mean_loss = |m: &SoftmaxModel| -> Result<f64> {
        let mut total = 0.0;
        for (idx, &label) in data.labels.iter().enumerate() {
            let probs = m.probabilities(data.features.row(idx));
            total += loss.loss(probs.view(), label)?;
        }
        Ok(total / data.num_pixels() as f64)
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        max_absolute_error: 0.0,
    };
    let mut probe = |analytic: f64, perturb: &dyn Fn(&mut SoftmaxModel, f64)| -> Result<()> {
        let mut plus = model.clone();
        perturb(&mut plus, step);
        let mut minus = model.clone();
        perturb(&mut minus, -step);
        let fd = (mean_loss(&plus)? - mean_loss(&minus)?) / (2.0 * step);
        let err = (analytic - fd).abs();
        if fd.abs() < GRAD_CHECK_SMALL_FD {
            report.max_absolute_error = report.max_absolute_error.max(err);
        } else {
            report.max_relative_error = report.max_relative_error.max(err / fd.abs());
        }
        Ok(())
    };

    for k in 0..n {
        for j in 0..model.feature_dim() {
            probe(grad_w[[k, j]], &move |m, h| m.weights[[k, j]] += h)?;
        }
        probe(grad_b[k], &move |m, h| m.bias[k] += h)?;
    }
    Ok(report)
}

/// On-disk training configuration. Matrix fields are paths resolved
/// relative to the config file; the data source is either an inline `scene`
/// or a `dataset` file path, exactly one of which must be present.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfigFile {
    pub loss: LossSpecFile,
    pub learning_rate: f64,
    pub epochs: usize,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub scene: Option<SyntheticSceneConfig>,
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub eval_matrix: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpecFile {
    Ce,
    Wasserstein {
        matrix: PathBuf,
        #[serde(default)]
        metric: Option<MetricFn>,
    },
    L1,
    Sinkhorn {
        matrix: PathBuf,
        #[serde(default = "default_sinkhorn_epsilon")]
        epsilon: f64,
        #[serde(default = "default_sinkhorn_max_iter")]
        max_iter: usize,
        #[serde(default = "default_sinkhorn_tol")]
        tol: f64,
        #[serde(default)]
        smoothing: f64,
    },
}

fn default_sinkhorn_epsilon() -> f64 {
    SinkhornParams::default().epsilon
}

fn default_sinkhorn_max_iter() -> usize {
    SinkhornParams::default().max_iter
}

fn default_sinkhorn_tol() -> f64 {
    SinkhornParams::default().tol
}

impl LossSpecFile {
    /// Loads referenced matrices (relative to `base`) and applies the metric
    /// function where one is configured.
    pub fn resolve(&self, base: &Path) -> Result<LossSpec> {
        match self {
            Self::Ce => Ok(LossSpec::CrossEntropy),
            Self::L1 => Ok(LossSpec::L1),
            Self::Wasserstein { matrix, metric } => {
                let (loaded, _) = GroundMatrix::from_json_file(base.join(matrix))?;
                let matrix = match metric {
                    Some(f) => apply_metric_fn(&loaded, *f),
                    None => loaded,
                };
                Ok(LossSpec::Wasserstein { matrix })
            }
            Self::Sinkhorn {
                matrix,
                epsilon,
                max_iter,
                tol,
                smoothing,
            } => {
                let (matrix, _) = GroundMatrix::from_json_file(base.join(matrix))?;
                Ok(LossSpec::Sinkhorn {
                    matrix,
                    params: SinkhornParams {
                        epsilon: *epsilon,
                        max_iter: *max_iter,
                        tol: *tol,
                    },
                    smoothing: *smoothing,
                })
            }
        }
    }
}

impl TrainConfigFile {
    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Materializes the runtime config, loading matrix files relative to
    /// `base`.
    pub fn resolve(&self, base: &Path) -> Result<TrainConfig> {
        let eval_matrix = match &self.eval_matrix {
            Some(path) => Some(GroundMatrix::from_json_file(base.join(path))?.0),
            None => None,
        };
        Ok(TrainConfig {
            loss: self.loss.resolve(base)?,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            eval_matrix,
        })
    }

    /// Produces the dataset, either by generating the inline scene or by
    /// loading the referenced dataset file.
    pub fn load_data(&self, base: &Path) -> Result<SceneDataset> {
        match (&self.scene, &self.dataset) {
            (Some(scene), None) => generate_scene(scene),
            (None, Some(path)) => SceneDataset::from_json_file(base.join(path)),
            (Some(_), Some(_)) => Err(Error::InvalidParameter(
                "config sets both scene and dataset; pick one".into(),
            )),
            (None, None) => Err(Error::InvalidParameter(
                "config needs a scene or a dataset path".into(),
            )),
        }
    }
}
