//! Fully connected active-set classifier: ReLU hidden layers, sigmoid outputs, weighted binary
//! cross-entropy.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, Sample, Standardizer};
use crate::error::check_len;
use crate::labels::{label_statistics, ActiveSetLabels, Category, LabelLayout};
use crate::rng::{stream, stream_rng};
use crate::{Error, Result};

pub const MODEL_FORMAT: &str = "asopf-mlp";
pub const MODEL_VERSION: u32 = 1;
pub const HIDDEN: [usize; 3] = [30, 30, 30];
pub const DEFAULT_THRESHOLD: f64 = 0.5;
/// Probability clip of the loss.
pub const LOSS_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Epoch window of the early-stopping test.
    pub patience: usize,
    /// Smallest relative improvement of the best loss over `patience` epochs.
    pub min_improvement: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            learning_rate: 1e-3,
            batch_size: 32,
            seed: 0,
            patience: 50,
            min_improvement: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub seed: u64,
    pub final_loss: Option<f64>,
    pub config: Option<TrainConfig>,
}

/// Loss per epoch. `loss` is the mean over the training samples of the weighted loss
/// accumulated during the epoch; `best` is its running minimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub loss: Vec<f64>,
    pub best: Vec<f64>,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    w: DMatrix<f64>,
    b: DVector<f64>,
}

impl Dense {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Dense {
            w: DMatrix::zeros(n_out, n_in),
            b: DVector::zeros(n_out),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layout: LabelLayout,
    standardizer: Standardizer,
    layers: Vec<Dense>,
    loss_weights: Vec<f64>,
    /// Output labels excluded from gradient updates.
    frozen: Vec<bool>,
    pub meta: TrainingMeta,
}

/// Activations kept for backpropagation. `acts[0]` is the standardized input.
struct Trace {
    acts: Vec<DMatrix<f64>>,
    logits: DMatrix<f64>,
}

impl MlpModel {
    /// Fan-in scaled uniform initialization of every layer, zero biases.
    pub fn new(
        layout: LabelLayout,
        standardizer: Standardizer,
        loss_weights: Vec<f64>,
        seed: u64,
    ) -> Result<Self> {
        let mut model = Self::zeros(layout, standardizer, loss_weights)?;
        let mut rng = stream_rng(seed, stream::INIT, 0);
        for layer in &mut model.layers {
            let bound = (6.0 / layer.w.ncols().max(1) as f64).sqrt();
            layer.w = DMatrix::from_fn(layer.w.nrows(), layer.w.ncols(), |_, _| {
                rng.random_range(-bound..bound)
            });
        }
        model.meta.seed = seed;
        Ok(model)
    }

    /// All weights and biases zero.
    pub fn zeros(
        layout: LabelLayout,
        standardizer: Standardizer,
        loss_weights: Vec<f64>,
    ) -> Result<Self> {
        check_len("loss weights", layout.len(), loss_weights.len())?;
        if loss_weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Validation(
                "loss weights must be finite and nonnegative".into(),
            ));
        }
        let mut sizes = vec![standardizer.dim()];
        sizes.extend(HIDDEN);
        sizes.push(layout.len());
        Ok(MlpModel {
            layout,
            standardizer,
            layers: sizes.windows(2).map(|s| Dense::zeros(s[0], s[1])).collect(),
            frozen: vec![false; loss_weights.len()],
            loss_weights,
            meta: TrainingMeta {
                epochs: 0,
                seed: 0,
                final_loss: None,
                config: None,
            },
        })
    }

    pub fn layout(&self) -> LabelLayout {
        self.layout
    }

    pub fn n_inputs(&self) -> usize {
        self.standardizer.dim()
    }

    pub fn n_outputs(&self) -> usize {
        self.layout.len()
    }

    pub fn loss_weights(&self) -> &[f64] {
        &self.loss_weights
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    /// Output biases at the logit of each label's training frequency. Labels that never
    /// activate in training, or carry no loss weight, get zero weight rows and are frozen at
    /// the prior during training.
    pub fn set_prior_bias(&mut self, frequency: &[f64]) -> Result<()> {
        check_len("label frequencies", self.n_outputs(), frequency.len())?;
        let out = self.layers.last_mut().expect("output layer");
        for (v, f) in frequency.iter().enumerate() {
            let p = f.clamp(1e-4, 1.0 - 1e-4);
            out.b[v] = (p / (1.0 - p)).ln();
            if self.loss_weights[v] == 0.0 || *f == 0.0 {
                out.w.row_mut(v).fill(0.0);
                self.frozen[v] = true;
            }
        }
        Ok(())
    }

    /// Label probabilities for one raw feature vector, clipped to `[ε, 1 − ε]`.
    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        let x = self.input_matrix(&[features])?;
        let t = self.trace(&x);
        Ok(t.logits
            .iter()
            .map(|z| sigmoid(*z).clamp(LOSS_EPS, 1.0 - LOSS_EPS))
            .collect())
    }

    /// Standardized inputs, one column per row.
    fn input_matrix(&self, rows: &[&[f64]]) -> Result<DMatrix<f64>> {
        let n = self.n_inputs();
        let mut x = DMatrix::zeros(n, rows.len());
        for (j, r) in rows.iter().enumerate() {
            check_len("features", n, r.len())?;
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation("non-finite feature".into()));
            }
            x.column_mut(j).copy_from_slice(&self.standardizer.apply(r));
        }
        Ok(x)
    }

    fn trace(&self, x: &DMatrix<f64>) -> Trace {
        let mut acts = vec![x.clone()];
        let last = self.layers.len() - 1;
        let mut logits = DMatrix::zeros(0, 0);
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.w * acts.last().expect("input");
            for mut col in z.column_iter_mut() {
                col += &layer.b;
            }
            if i == last {
                logits = z;
            } else {
                z.apply(|v| *v = v.max(0.0));
                acts.push(z);
            }
        }
        Trace { acts, logits }
    }

    /// Weighted loss summed over the columns of `x` and its parameter gradient.
    fn loss_and_gradient(&self, x: &DMatrix<f64>, targets: &DMatrix<f64>) -> (f64, Vec<Dense>) {
        let t = self.trace(x);
        let mut loss = 0.0;
        let mut delta = t.logits.clone();
        for j in 0..delta.ncols() {
            for v in 0..delta.nrows() {
                let z = t.logits[(v, j)];
                let y = targets[(v, j)];
                let w = self.loss_weights[v];
                loss += w * bce_from_logit(z, y);
                delta[(v, j)] = if self.frozen[v] {
                    0.0
                } else {
                    w * (sigmoid(z) - y)
                };
            }
        }
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let a = &t.acts[i];
            let gw = &delta * a.transpose();
            let gb = delta.column_sum();
            if i > 0 {
                let mut back = self.layers[i].w.transpose() * &delta;
                back.zip_apply(a, |d, act| {
                    if act <= 0.0 {
                        *d = 0.0
                    }
                });
                delta = back;
            }
            grads.push(Dense { w: gw, b: gb });
        }
        grads.reverse();
        (loss, grads)
    }

    /// Flattened parameters, layer by layer, weights (column-major) then biases.
    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()).copied())
            .collect()
    }

    pub fn set_parameters(&mut self, theta: &[f64]) -> Result<()> {
        check_len("parameters", self.parameters().len(), theta.len())?;
        let mut it = theta.iter();
        for l in &mut self.layers {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    /// Weighted loss and its flattened gradient over a batch of raw feature rows.
    pub fn loss_gradient(
        &self,
        features: &[&[f64]],
        targets: &[ActiveSetLabels],
    ) -> Result<(f64, Vec<f64>)> {
        check_len("targets", features.len(), targets.len())?;
        let x = self.input_matrix(features)?;
        let y = self.target_matrix(targets)?;
        let (loss, grads) = self.loss_and_gradient(&x, &y);
        let flat = grads
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()).copied())
            .collect();
        Ok((loss, flat))
    }

    fn target_matrix(&self, targets: &[ActiveSetLabels]) -> Result<DMatrix<f64>> {
        let mut y = DMatrix::zeros(self.n_outputs(), targets.len());
        for (j, t) in targets.iter().enumerate() {
            if t.layout() != self.layout {
                return Err(Error::Validation(format!(
                    "target layout {:?} does not match the model {:?}",
                    t.layout(),
                    self.layout
                )));
            }
            for (v, bit) in t.iter().enumerate() {
                y[(v, j)] = if bit { 1.0 } else { 0.0 };
            }
        }
        Ok(y)
    }

    /// Whether any hidden unit changes sign between the two parameter vectors.
    fn relu_pattern_changes(&self, x: &DMatrix<f64>, a: &[f64], b: &[f64]) -> bool {
        let pattern = |theta: &[f64]| {
            let mut m = self.clone();
            m.set_parameters(theta).expect("same length");
            let t = m.trace(x);
            t.acts[1..]
                .iter()
                .flat_map(|a| a.iter().map(|v| *v > 0.0).collect::<Vec<_>>())
                .collect::<Vec<_>>()
        };
        pattern(a) != pattern(b)
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            layout: self.layout,
            label_manifest: self.layout.manifest(),
            standardizer: self.standardizer.clone(),
            loss_weights: self.loss_weights.clone(),
            frozen: self.frozen.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerRecord {
                    n_in: l.w.ncols(),
                    n_out: l.w.nrows(),
                    weights_row_major: l.w.transpose().iter().copied().collect(),
                    bias: l.b.iter().copied().collect(),
                })
                .collect(),
            meta: self.meta.clone(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string(&self.to_file())?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<MlpModel> {
        let file: ModelFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        file.into_model()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub layout: LabelLayout,
    pub label_manifest: Vec<String>,
    pub standardizer: Standardizer,
    pub loss_weights: Vec<f64>,
    #[serde(default)]
    pub frozen: Vec<bool>,
    pub layers: Vec<LayerRecord>,
    pub meta: TrainingMeta,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerRecord {
    pub n_in: usize,
    pub n_out: usize,
    pub weights_row_major: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ModelFile {
    pub fn into_model(self) -> Result<MlpModel> {
        if self.format != MODEL_FORMAT || self.version != MODEL_VERSION {
            return Err(Error::Format(format!(
                "expected {MODEL_FORMAT} v{MODEL_VERSION}, found {} v{}",
                self.format, self.version
            )));
        }
        if self.label_manifest != self.layout.manifest() {
            return Err(Error::Format(
                "label manifest does not match the layout".into(),
            ));
        }
        let mut model = MlpModel::zeros(self.layout, self.standardizer, self.loss_weights)?;
        check_len("layers", model.layers.len(), self.layers.len())?;
        for (l, r) in model.layers.iter_mut().zip(self.layers) {
            if (r.n_in, r.n_out) != (l.w.ncols(), l.w.nrows()) {
                return Err(Error::Format(format!(
                    "layer shape {}x{} where {}x{} was expected",
                    r.n_out,
                    r.n_in,
                    l.w.nrows(),
                    l.w.ncols()
                )));
            }
            check_len("layer weights", r.n_in * r.n_out, r.weights_row_major.len())?;
            check_len("layer bias", r.n_out, r.bias.len())?;
            if r.weights_row_major
                .iter()
                .chain(&r.bias)
                .any(|v| !v.is_finite())
            {
                return Err(Error::Format("non-finite model parameter".into()));
            }
            l.w = DMatrix::from_row_slice(r.n_out, r.n_in, &r.weights_row_major);
            l.b = DVector::from_vec(r.bias);
        }
        if !self.frozen.is_empty() {
            check_len("frozen flags", model.frozen.len(), self.frozen.len())?;
            model.frozen = self.frozen;
        }
        model.meta = self.meta;
        Ok(model)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `−log y` for a 1-target, `−log(1 − y)` for a 0-target, with `y = σ(z)` clipped to
/// `[ε, 1 − ε]`.
fn bce_from_logit(z: f64, target: f64) -> f64 {
    let softplus = |u: f64| u.max(0.0) + (-u.abs()).exp().ln_1p();
    let raw = target * softplus(-z) + (1.0 - target) * softplus(z);
    raw.min(-LOSS_EPS.ln())
}

/// `Σ_v w_v L(y_v, t_v)` over aligned probability, target and weight vectors.
pub fn weighted_bce_loss(y: &[f64], targets: &[bool], weights: &[f64]) -> Result<f64> {
    check_len("targets", y.len(), targets.len())?;
    check_len("weights", y.len(), weights.len())?;
    Ok(y.iter()
        .zip(targets)
        .zip(weights)
        .map(|((y, t), w)| {
            let y = y.clamp(LOSS_EPS, 1.0 - LOSS_EPS);
            w * if *t { -y.ln() } else { -(1.0 - y).ln() }
        })
        .sum())
}

/// Adam over the model parameters on `(features, targets)`.
pub fn train(
    model: &mut MlpModel,
    features: &[&[f64]],
    targets: &[ActiveSetLabels],
    config: &TrainConfig,
) -> Result<TrainReport> {
    check_len("targets", features.len(), targets.len())?;
    if features.is_empty() {
        return Err(Error::Validation("empty training set".into()));
    }
    if config.batch_size == 0 || !(config.learning_rate > 0.0) {
        return Err(Error::Validation(
            "batch size and learning rate must be positive".into(),
        ));
    }
    let x_all = model.input_matrix(features)?;
    let y_all = model.target_matrix(targets)?;
    let n = features.len();
    let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut m1: Vec<Dense> = model
        .layers
        .iter()
        .map(|l| Dense::zeros(l.w.ncols(), l.w.nrows()))
        .collect();
    let mut m2 = m1.clone();
    let mut step = 0i32;
    let mut rng = stream_rng(config.seed, stream::TRAIN, 0);
    let mut order: Vec<usize> = (0..n).collect();
    let mut report = TrainReport {
        loss: Vec::new(),
        best: Vec::new(),
        stopped_early: false,
    };

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let x = x_all.select_columns(batch);
            let y = y_all.select_columns(batch);
            let (loss, grads) = model.loss_and_gradient(&x, &y);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            epoch_loss += loss;
            step += 1;
            let scale = 1.0 / batch.len() as f64;
            let c1 = 1.0 - beta1.powi(step);
            let c2 = 1.0 - beta2.powi(step);
            for ((layer, g), (a, b)) in model
                .layers
                .iter_mut()
                .zip(&grads)
                .zip(m1.iter_mut().zip(m2.iter_mut()))
            {
                let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                    let g = g * scale;
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= config.learning_rate * (*m / c1) / ((*v / c2).sqrt() + eps);
                };
                for (((p, g), m), v) in layer
                    .w
                    .iter_mut()
                    .zip(g.w.iter())
                    .zip(a.w.iter_mut())
                    .zip(b.w.iter_mut())
                {
                    update(p, *g, m, v);
                }
                for (((p, g), m), v) in layer
                    .b
                    .iter_mut()
                    .zip(g.b.iter())
                    .zip(a.b.iter_mut())
                    .zip(b.b.iter_mut())
                {
                    update(p, *g, m, v);
                }
            }
        }
        let mean = epoch_loss / n as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        let best = report.best.last().map_or(mean, |b: &f64| b.min(mean));
        report.loss.push(mean);
        report.best.push(best);
        log::trace!("epoch {epoch}: loss {mean:.6e}");
        if epoch >= config.patience {
            let before = report.best[epoch - config.patience];
            if before - best <= config.min_improvement * before.abs() {
                report.stopped_early = epoch + 1 < config.epochs;
                break;
            }
        }
    }
    model.meta.epochs = report.loss.len();
    model.meta.seed = config.seed;
    model.meta.final_loss = report.loss.last().copied();
    model.meta.config = Some(config.clone());
    Ok(report)
}

/// Fit a model on the training split of `dataset`: standardizer, loss weights and prior
/// biases come from the training samples only.
pub fn train_on_dataset(
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<(MlpModel, TrainReport)> {
    let samples: Vec<&Sample> = dataset.train_samples().collect();
    if samples.is_empty() {
        return Err(Error::Validation("empty training split".into()));
    }
    let features: Vec<Vec<f64>> = samples.iter().map(|s| s.features()).collect();
    let rows: Vec<&[f64]> = features.iter().map(|f| f.as_slice()).collect();
    let mags: Vec<Vec<f64>> = samples.iter().map(|s| s.magnitudes()).collect();
    let stats = label_statistics(
        samples
            .iter()
            .zip(&mags)
            .map(|(s, m)| (&s.labels, m.as_slice())),
    )?;
    let standardizer = Standardizer::fit(rows.iter().copied())?;
    let mut model = MlpModel::new(dataset.layout(), standardizer, stats.weight, config.seed)?;
    model.set_prior_bias(&stats.frequency)?;
    let targets: Vec<ActiveSetLabels> = samples.iter().map(|s| s.labels.clone()).collect();
    let report = train(&mut model, &rows, &targets, config)?;
    Ok((model, report))
}

/// `bit_v = 1` iff `y_v ≥ τ`.
pub fn predict_labels(
    model: &MlpModel,
    features: &[f64],
    threshold: f64,
) -> Result<ActiveSetLabels> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Validation(format!(
            "threshold {threshold} is outside (0, 1)"
        )));
    }
    let y = model.forward(features)?;
    ActiveSetLabels::from_fn(model.layout(), |v| y[v] >= threshold)
}

/// Wrong bits over all bits, per category.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Misclassification {
    pub wrong: [usize; 4],
    pub total: [usize; 4],
    pub samples: usize,
}

impl Misclassification {
    pub fn add(&mut self, predicted: &ActiveSetLabels, truth: &ActiveSetLabels) -> Result<()> {
        let layout = truth.layout();
        if predicted.layout() != layout {
            return Err(Error::Validation(
                "predicted and true label layouts differ".into(),
            ));
        }
        for (c, cat) in Category::ALL.iter().enumerate() {
            let range = layout.category_range(*cat);
            self.total[c] += range.len();
        }
        for (v, (p, t)) in predicted.iter().zip(truth.iter()).enumerate() {
            if p != t {
                let c = Category::ALL
                    .iter()
                    .position(|cat| *cat == layout.category_of(v))
                    .expect("known category");
                self.wrong[c] += 1;
            }
        }
        self.samples += 1;
        Ok(())
    }

    /// Share of wrong bits in `category`; zero when the category is empty.
    pub fn rate(&self, category: Category) -> f64 {
        let c = Category::ALL
            .iter()
            .position(|x| *x == category)
            .expect("known category");
        if self.total[c] == 0 {
            0.0
        } else {
            self.wrong[c] as f64 / self.total[c] as f64
        }
    }

    /// Samples whose every bit is correct cannot be read from the counts, so they are tracked
    /// by callers that need them.
    pub fn rates(&self) -> [f64; 4] {
        Category::ALL.map(|c| self.rate(c))
    }
}

pub fn misclassification_report<'a>(
    model: &MlpModel,
    samples: impl IntoIterator<Item = &'a Sample>,
    threshold: f64,
) -> Result<Misclassification> {
    let mut report = Misclassification::default();
    for s in samples {
        let predicted = predict_labels(model, &s.features(), threshold)?;
        report.add(&predicted, &s.labels)?;
    }
    if report.samples == 0 {
        return Err(Error::Validation("empty test split".into()));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Coordinates skipped because the perturbation crossed a ReLU kink.
    pub skipped: usize,
}

/// Compare the backpropagated gradient with central differences of step `h` in every
/// parameter. Relative errors use `max(|analytic|, |numeric|, 1e-8)` as denominator.
pub fn gradient_check(
    model: &MlpModel,
    features: &[&[f64]],
    targets: &[ActiveSetLabels],
    h: f64,
) -> Result<GradientCheck> {
    let (_, analytic) = model.loss_gradient(features, targets)?;
    let x = model.input_matrix(features)?;
    let theta = model.parameters();
    let mut probe = model.clone();
    let mut out = GradientCheck {
        max_relative_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for i in 0..theta.len() {
        let mut plus = theta.clone();
        let mut minus = theta.clone();
        plus[i] += h;
        minus[i] -= h;
        if model.relu_pattern_changes(&x, &plus, &minus) {
            out.skipped += 1;
            continue;
        }
        probe.set_parameters(&plus)?;
        let (lp, _) = probe.loss_gradient(features, targets)?;
        probe.set_parameters(&minus)?;
        let (lm, _) = probe.loss_gradient(features, targets)?;
        let numeric = (lp - lm) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        out.max_relative_error = out
            .max_relative_error
            .max((analytic[i] - numeric).abs() / denom);
        out.checked += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn micro_layout() -> LabelLayout {
        LabelLayout {
            n_units: 1,
            n_lines: 0,
            n_buses: 0,
            n_farms: 0,
        }
    }

    fn identity(dim: usize) -> Standardizer {
        Standardizer {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    fn bits(layout: LabelLayout, b: &[u8]) -> ActiveSetLabels {
        ActiveSetLabels::from_bits(layout, b).unwrap()
    }

    #[test]
    fn zero_model_outputs_one_half() {
        let m = MlpModel::zeros(micro_layout(), identity(3), vec![1.0, 1.0]).unwrap();
        assert_eq!(m.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.5, 0.5]);
        let labels = predict_labels(&m, &[0.0; 3], 0.5).unwrap();
        assert_eq!(labels.to_bits(), vec![1, 1]);
    }

    #[test]
    fn forward_checks_input() {
        let m = MlpModel::new(micro_layout(), identity(3), vec![1.0, 1.0], 1).unwrap();
        assert!(m.forward(&[1.0, 2.0]).unwrap_err().is_validation());
        assert!(m
            .forward(&[1.0, f64::NAN, 0.0])
            .unwrap_err()
            .is_validation());
        let y = m.forward(&[50.0, -40.0, 3.0]).unwrap();
        assert!(y.iter().all(|v| *v > 0.0 && *v < 1.0));
        assert_eq!(y, m.forward(&[50.0, -40.0, 3.0]).unwrap());
    }

    #[test]
    fn loss_values() {
        let l = weighted_bce_loss(&[0.5], &[true], &[2.0]).unwrap();
        assert!((l - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((l - 1.3863).abs() < 1e-4);
        assert!(weighted_bce_loss(&[1.0 - 1e-15], &[true], &[3.0]).unwrap() < 1e-11);
        assert_eq!(weighted_bce_loss(&[0.999], &[false], &[0.0]).unwrap(), 0.0);
        let clipped = weighted_bce_loss(&[0.0], &[true], &[1.0]).unwrap();
        assert!((clipped + LOSS_EPS.ln()).abs() < 1e-9);
        assert!(weighted_bce_loss(&[0.5], &[true, false], &[1.0]).is_err());
    }

    #[test]
    fn logit_loss_matches_probability_loss() {
        for z in [-5.0, -0.3, 0.0, 2.0, 8.0] {
            for t in [false, true] {
                let a = bce_from_logit(z, if t { 1.0 } else { 0.0 });
                let b = weighted_bce_loss(&[sigmoid(z)], &[t], &[1.0]).unwrap();
                assert!((a - b).abs() < 1e-12, "{z} {t}");
            }
        }
    }

    #[test]
    fn threshold_boundary_and_monotonicity() {
        let mut m = MlpModel::zeros(micro_layout(), identity(1), vec![1.0, 1.0]).unwrap();
        // logits giving y = (0.49, 0.51)
        let logit = |p: f64| (p / (1.0 - p)).ln();
        m.layers[3].b = DVector::from_vec(vec![logit(0.49), logit(0.51)]);
        assert_eq!(
            predict_labels(&m, &[0.0], 0.5).unwrap().to_bits(),
            vec![0, 1]
        );
        let mut prev = predict_labels(&m, &[0.0], 0.05).unwrap().to_bits();
        for k in 2..20 {
            let cur = predict_labels(&m, &[0.0], k as f64 * 0.05)
                .unwrap()
                .to_bits();
            assert!(cur.iter().zip(&prev).all(|(c, p)| c <= p));
            prev = cur;
        }
        assert!(predict_labels(&m, &[0.0], 1.0).is_err());
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let layout = micro_layout();
        let mut worst: f64 = 0.0;
        for seed in 0..5 {
            let m = MlpModel::new(layout, identity(3), vec![1.5, 0.7], seed).unwrap();
            let mut rng = stream_rng(seed, "test", 0);
            let rows: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            let x: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
            let t: Vec<ActiveSetLabels> = (0..4)
                .map(|j| bits(layout, &[(j % 2) as u8, ((j / 2) % 2) as u8]))
                .collect();
            let check = gradient_check(&m, &x, &t, 1e-5).unwrap();
            assert!(check.checked > check.skipped);
            worst = worst.max(check.max_relative_error);
        }
        assert!(worst <= 1e-4, "{worst}");
    }

    #[test]
    fn doubling_weights_doubles_loss() {
        let layout = micro_layout();
        let a = MlpModel::new(layout, identity(2), vec![1.0, 3.0], 4).unwrap();
        let mut b = a.clone();
        b.loss_weights = vec![2.0, 6.0];
        let x: Vec<&[f64]> = vec![&[0.3, -1.0], &[1.0, 2.0]];
        let t = vec![bits(layout, &[1, 0]), bits(layout, &[0, 1])];
        let (la, ga) = a.loss_gradient(&x, &t).unwrap();
        let (lb, gb) = b.loss_gradient(&x, &t).unwrap();
        assert!((lb - 2.0 * la).abs() < 1e-12 * la.abs().max(1.0));
        for (p, q) in ga.iter().zip(&gb) {
            assert!((q - 2.0 * p).abs() < 1e-12 * p.abs().max(1.0));
        }
    }

    #[test]
    fn overfits_a_toy_set() {
        let layout = LabelLayout {
            n_units: 2,
            n_lines: 1,
            n_buses: 1,
            n_farms: 1,
        };
        let mut rng = stream_rng(9, "test", 0);
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let targets: Vec<ActiveSetLabels> = rows
            .iter()
            .map(|r| {
                ActiveSetLabels::from_fn(layout, |v| (r[v % 4] + 0.1 * v as f64).sin() > 0.2)
                    .unwrap()
            })
            .collect();
        let x: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let std = Standardizer::fit(x.iter().copied()).unwrap();
        let config = TrainConfig {
            epochs: 2000,
            seed: 3,
            patience: 2000,
            ..TrainConfig::default()
        };
        let mut model = MlpModel::new(layout, std.clone(), vec![1.0; layout.len()], 3).unwrap();
        let report = train(&mut model, &x, &targets, &config).unwrap();
        assert_eq!(report.loss.len(), 2000);
        assert!(report.best.windows(2).all(|w| w[1] <= w[0]));
        for (r, t) in x.iter().zip(&targets) {
            assert_eq!(&predict_labels(&model, r, 0.5).unwrap(), t);
        }

        let mut again = MlpModel::new(layout, std, vec![1.0; layout.len()], 3).unwrap();
        train(&mut again, &x, &targets, &config).unwrap();
        assert_eq!(again.parameters(), model.parameters());
    }

    #[test]
    fn prior_bias_holds_unweighted_labels() {
        let layout = micro_layout();
        let mut m = MlpModel::new(layout, identity(2), vec![1.0, 0.0], 2).unwrap();
        m.set_prior_bias(&[0.5, 0.0]).unwrap();
        let x: Vec<&[f64]> = vec![&[0.3, -1.0], &[1.0, 2.0]];
        let t = vec![bits(layout, &[1, 0]), bits(layout, &[0, 0])];
        let config = TrainConfig {
            epochs: 50,
            ..TrainConfig::default()
        };
        train(&mut m, &x, &t, &config).unwrap();
        for r in &x {
            assert!(m.forward(r).unwrap()[1] < 1e-3);
        }
    }

    #[test]
    fn misclassification_counts_by_category() {
        let layout = LabelLayout {
            n_units: 0,
            n_lines: 50,
            n_buses: 0,
            n_farms: 0,
        };
        let truth = ActiveSetLabels::from_fn(layout, |v| v < 3).unwrap();
        let mut r = Misclassification::default();
        r.add(&ActiveSetLabels::zeros(layout), &truth).unwrap();
        assert!((r.rate(Category::Lines) - 0.03).abs() < 1e-15);
        assert_eq!(r.rate(Category::Generators), 0.0);
        let mut perfect = Misclassification::default();
        perfect.add(&truth, &truth).unwrap();
        assert_eq!(perfect.rates(), [0.0; 4]);
    }

    #[test]
    fn model_file_round_trip() {
        let m = MlpModel::new(micro_layout(), identity(3), vec![1.0, 2.0], 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        let back = MlpModel::load(&path).unwrap();
        assert_eq!(back.parameters(), m.parameters());
        assert_eq!(
            back.forward(&[0.1, 0.2, 0.3]).unwrap(),
            m.forward(&[0.1, 0.2, 0.3]).unwrap()
        );
    }
}
