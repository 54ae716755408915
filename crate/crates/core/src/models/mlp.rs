//! Fully connected rectifier network trained with minibatch Adam.
//!
//! The same trainer serves two heads: a logistic output trained on
//! aggregated binary judgments (each dilemma contributes `n_save_left`
//! positive and `n - n_save_left` negative mass) and an identity output
//! trained on squared error for the regression demo.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::choice::{logistic, softplus};
use super::Predictor;
use crate::dilemma::{encode_dilemma, AggregatedJudgment, Dilemma, RegressionPoint, Side, ENCODING_WIDTH};
use crate::error::{Result, SrmError};
use crate::features::{axes, axis_id, AxisId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Logistic,
    Identity,
}

/// One affine layer; `weights` is `inputs x outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpTrainConfig {
    pub hidden_layers: Vec<usize>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Share of the training data held out for early stopping when the
    /// caller does not supply a validation set.
    pub validation_fraction: f64,
    /// Axes appended to the 42-wide encoding as signed side indicators.
    pub axis_inputs: Vec<String>,
    pub seed: u64,
}

impl Default for MlpTrainConfig {
    fn default() -> Self {
        MlpTrainConfig {
            hidden_layers: vec![32, 32, 32],
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 512,
            max_epochs: 100,
            patience: 3,
            validation_fraction: 0.1,
            axis_inputs: Vec::new(),
            seed: 0,
        }
    }
}

impl MlpTrainConfig {
    /// Defaults for the 1-100-50-1 regression network of the residual demo.
    pub fn regression() -> Self {
        MlpTrainConfig {
            hidden_layers: vec![100, 50],
            batch_size: 64,
            max_epochs: 200,
            patience: 5,
            ..MlpTrainConfig::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(SrmError::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(SrmError::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(SrmError::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(SrmError::Config("validation_fraction must lie in [0, 1)".into()));
        }
        if self.hidden_layers.contains(&0) {
            return Err(SrmError::Config("hidden layers must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedMLP {
    layers: Vec<DenseLayer>,
    output: OutputActivation,
    /// Identity outputs are reported as `shift + scale * raw`.
    output_shift: f64,
    output_scale: f64,
    axis_inputs: Vec<AxisId>,
}

/// Training targets for a batch, aligned with the rows of the input matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// Positive and negative judgment mass per row.
    Binary { pos: Vec<f64>, neg: Vec<f64> },
    Regression { y: Vec<f64> },
}

impl Targets {
    fn len(&self) -> usize {
        match self {
            Targets::Binary { pos, .. } => pos.len(),
            Targets::Regression { y } => y.len(),
        }
    }

    fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Binary { pos, neg } => Targets::Binary {
                pos: idx.iter().map(|&i| pos[i]).collect(),
                neg: idx.iter().map(|&i| neg[i]).collect(),
            },
            Targets::Regression { y } => Targets::Regression {
                y: idx.iter().map(|&i| y[i]).collect(),
            },
        }
    }
}

/// Parameter gradients, one `(weights, bias)` pair per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradient {
    /// Flattened in [`TrainedMLP::param`] order.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

impl TrainedMLP {
    /// Glorot-uniform weights and zero biases.
    pub fn init(layer_sizes: &[usize], output: OutputActivation, rng: &mut impl Rng) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(SrmError::Config(format!("invalid layer sizes {layer_sizes:?}")));
        }
        if layer_sizes[layer_sizes.len() - 1] != 1 {
            return Err(SrmError::Config("the output layer must have one unit".into()));
        }
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                DenseLayer {
                    weights: Array2::from_shape_simple_fn((fan_in, fan_out), || {
                        rng.random_range(-limit..limit)
                    }),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(TrainedMLP {
            layers,
            output,
            output_shift: 0.0,
            output_scale: 1.0,
            axis_inputs: Vec::new(),
        })
    }

    pub fn from_layers(
        layers: Vec<DenseLayer>,
        output: OutputActivation,
        output_shift: f64,
        output_scale: f64,
        axis_inputs: Vec<AxisId>,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(SrmError::Config("a network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].weights.ncols() != pair[1].weights.nrows() {
                return Err(SrmError::Config("inconsistent layer dimensions".into()));
            }
        }
        for l in &layers {
            if l.bias.len() != l.weights.ncols() {
                return Err(SrmError::Config("bias length does not match layer width".into()));
            }
            if l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(SrmError::Data("non-finite network parameter".into()));
            }
        }
        if layers[layers.len() - 1].weights.ncols() != 1 {
            return Err(SrmError::Config("the output layer must have one unit".into()));
        }
        Ok(TrainedMLP {
            layers,
            output,
            output_shift,
            output_scale,
            axis_inputs,
        })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn output(&self) -> OutputActivation {
        self.output
    }

    pub fn output_affine(&self) -> (f64, f64) {
        (self.output_shift, self.output_scale)
    }

    pub fn axis_inputs(&self) -> &[AxisId] {
        &self.axis_inputs
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].weights.nrows()];
        sizes.extend(self.layers.iter().map(|l| l.weights.ncols()));
        sizes
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn locate(&self, mut i: usize) -> (usize, Option<usize>, usize) {
        for (li, l) in self.layers.iter().enumerate() {
            if i < l.weights.len() {
                return (li, Some(i), 0);
            }
            i -= l.weights.len();
            if i < l.bias.len() {
                return (li, None, i);
            }
            i -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Flat parameter access: each layer's weights (row-major) then its bias.
    pub fn param(&self, i: usize) -> f64 {
        match self.locate(i) {
            (l, Some(w), _) => self.layers[l].weights.as_slice().expect("standard layout")[w],
            (l, None, b) => self.layers[l].bias[b],
        }
    }

    pub fn set_param(&mut self, i: usize, v: f64) {
        match self.locate(i) {
            (l, Some(w), _) => {
                self.layers[l].weights.as_slice_mut().expect("standard layout")[w] = v
            }
            (l, None, b) => self.layers[l].bias[b] = v,
        }
    }

    /// Pre-activations and post-activations of every layer.
    fn forward_cached(&self, x: ArrayView2<'_, f64>) -> (Vec<Array2<f64>>, Vec<Array2<f64>>) {
        let mut pre: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 { x } else { post[i - 1].view() };
            let mut z = input.dot(&layer.weights);
            z += &layer.bias;
            let a = if i == last {
                z.clone()
            } else {
                z.mapv(|v| v.max(0.0))
            };
            pre.push(z);
            post.push(a);
        }
        (pre, post)
    }

    /// Raw output unit (logit or unscaled regression value) per row.
    pub fn forward_raw(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        let mut a = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weights);
            z += &layer.bias;
            if i != last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            a = z;
        }
        a.column(0).to_owned()
    }

    /// Output in the model's units: probabilities for a logistic head,
    /// de-standardized values for an identity head.
    pub fn predict_batch(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        let raw = self.forward_raw(x);
        match self.output {
            OutputActivation::Logistic => raw.mapv(logistic),
            OutputActivation::Identity => raw.mapv(|r| self.output_shift + self.output_scale * r),
        }
    }

    pub fn predict_x(&self, xs: &[f64]) -> Vec<f64> {
        let x = Array2::from_shape_vec((xs.len(), 1), xs.to_vec()).expect("column vector");
        self.predict_batch(x.view()).to_vec()
    }

    /// Mean loss over the batch (mass-weighted binary cross-entropy in nats,
    /// or mean squared error on the raw output) and its exact gradient.
    pub fn loss_and_gradient(&self, x: ArrayView2<'_, f64>, targets: &Targets) -> (f64, Gradient) {
        let (pre, post) = self.forward_cached(x);
        let out = pre.last().expect("non-empty").column(0).to_owned();
        let rows = out.len();
        let mut delta = Array2::<f64>::zeros((rows, 1));
        let loss = match targets {
            Targets::Binary { pos, neg } => {
                let mass: f64 = pos.iter().sum::<f64>() + neg.iter().sum::<f64>();
                let mut total = 0.0;
                for i in 0..rows {
                    let z = out[i];
                    total += pos[i] * softplus(-z) + neg[i] * softplus(z);
                    delta[[i, 0]] = ((pos[i] + neg[i]) * logistic(z) - pos[i]) / mass;
                }
                total / mass
            }
            Targets::Regression { y } => {
                let mut total = 0.0;
                for i in 0..rows {
                    let r = out[i] - y[i];
                    total += r * r;
                    delta[[i, 0]] = 2.0 * r / rows as f64;
                }
                total / rows as f64
            }
        };
        let mut grads = Vec::with_capacity(self.layers.len());
        for li in (0..self.layers.len()).rev() {
            let input = if li == 0 { x } else { post[li - 1].view() };
            let gw = input.t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            if li > 0 {
                let mut back = delta.dot(&self.layers[li].weights.t());
                back.zip_mut_with(&pre[li - 1], |d, &z| {
                    if z <= 0.0 {
                        *d = 0.0
                    }
                });
                delta = back;
            }
            grads.push((gw, gb));
        }
        grads.reverse();
        (loss, Gradient { layers: grads })
    }

    fn encode(&self, d: &Dilemma) -> Vec<f64> {
        let mut v = encode_dilemma(d).to_vec();
        for &id in &self.axis_inputs {
            v.push(match axes::classify_id(d, id) {
                Some(Side::Left) => 1.0,
                Some(Side::Right) => -1.0,
                None => 0.0,
            });
        }
        v
    }

    fn encode_all<'a>(&self, ds: impl IntoIterator<Item = &'a Dilemma>) -> Array2<f64> {
        let width = ENCODING_WIDTH + self.axis_inputs.len();
        let flat: Vec<f64> = ds.into_iter().flat_map(|d| self.encode(d)).collect();
        Array2::from_shape_vec((flat.len() / width, width), flat).expect("rectangular encoding")
    }
}

impl Predictor for TrainedMLP {
    fn predict_save_left(&self, d: &Dilemma) -> f64 {
        self.predict_many(std::slice::from_ref(d))[0]
    }

    fn predict_many(&self, ds: &[Dilemma]) -> Vec<f64> {
        assert_eq!(
            self.input_width(),
            ENCODING_WIDTH + self.axis_inputs.len(),
            "network does not take dilemma encodings"
        );
        let mut out = Vec::with_capacity(ds.len());
        for chunk in ds.chunks(4096) {
            let x = self.encode_all(chunk);
            out.extend(self.predict_batch(x.view()).iter());
        }
        out
    }

    fn n_params(&self) -> usize {
        self.param_count()
    }
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<(Array2<f64>, Array1<f64>)>,
    v: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Adam {
    fn new(net: &TrainedMLP, cfg: &MlpTrainConfig) -> Self {
        let zeros: Vec<_> = net
            .layers
            .iter()
            .map(|l| (Array2::zeros(l.weights.raw_dim()), Array1::zeros(l.bias.len())))
            .collect();
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.epsilon,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn update(&mut self, net: &mut TrainedMLP, grad: &Gradient) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let (lr, eps) = (self.lr, self.eps);
        let apply = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (li, layer) in net.layers.iter_mut().enumerate() {
            let (gw, gb) = &grad.layers[li];
            let (mw, mb) = &mut self.m[li];
            let (vw, vb) = &mut self.v[li];
            ndarray::Zip::from(&mut layer.weights)
                .and(gw)
                .and(mw)
                .and(vw)
                .for_each(|p, &g, m, v| apply(p, g, m, v));
            ndarray::Zip::from(&mut layer.bias)
                .and(gb)
                .and(mb)
                .and(vb)
                .for_each(|p, &g, m, v| apply(p, g, m, v));
        }
    }
}

/// Per-epoch record of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct MlpFit {
    pub model: TrainedMLP,
    pub history: Vec<EpochRecord>,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
}

fn mean_loss(net: &TrainedMLP, x: &Array2<f64>, t: &Targets) -> f64 {
    net.loss_and_gradient(x.view(), t).0
}

/// Minibatch Adam with early stopping on the validation loss. The weights
/// from the best validation epoch are returned.
fn train_network(
    mut net: TrainedMLP,
    train: (&Array2<f64>, &Targets),
    validation: Option<(&Array2<f64>, &Targets)>,
    cfg: &MlpTrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<MlpFit> {
    let (x, t) = train;
    let rows = t.len();
    if rows == 0 {
        return Err(SrmError::Data("no training rows".into()));
    }
    let mut adam = Adam::new(&net, cfg);
    let mut order: Vec<usize> = (0..rows).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, TrainedMLP, usize)> = None;
    let mut stale = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for batch in order.chunks(cfg.batch_size) {
            let xb = x.select(Axis(0), batch);
            let tb = t.select(batch);
            let (loss, grad) = net.loss_and_gradient(xb.view(), &tb);
            if !loss.is_finite() {
                return Err(SrmError::Divergence(format!("loss became {loss} at epoch {epoch}")));
            }
            adam.update(&mut net, &grad);
            epoch_loss += loss;
            batches += 1;
        }
        let train_loss = epoch_loss / batches as f64;
        let validation_loss = validation.map(|(xv, tv)| mean_loss(&net, xv, tv));
        history.push(EpochRecord {
            epoch,
            train_loss,
            validation_loss,
        });
        if let Some(vl) = validation_loss {
            if !vl.is_finite() {
                return Err(SrmError::Divergence(format!("validation loss became {vl}")));
            }
            match &best {
                Some((b, _, _)) if vl >= *b => {
                    stale += 1;
                    if stale >= cfg.patience {
                        break;
                    }
                }
                _ => {
                    best = Some((vl, net.clone(), epoch));
                    stale = 0;
                }
            }
        }
    }
    let (model, best_epoch) = match best {
        Some((_, m, e)) => (m, e),
        None => {
            let e = history.len();
            (net, e)
        }
    };
    Ok(MlpFit {
        model,
        history,
        best_epoch,
    })
}

fn judgments_to_targets(data: &[AggregatedJudgment]) -> Targets {
    Targets::Binary {
        pos: data.iter().map(|j| j.n_save_left as f64).collect(),
        neg: data.iter().map(|j| j.n_save_right() as f64).collect(),
    }
}

/// Trains the reference network on aggregated judgments, early-stopping on
/// `validation` (pass an empty slice to train for `max_epochs`).
pub fn mlp_train(
    train: &[AggregatedJudgment],
    validation: &[AggregatedJudgment],
    cfg: &MlpTrainConfig,
) -> Result<MlpFit> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(SrmError::Data("cannot train on an empty dataset".into()));
    }
    let axis_inputs = cfg
        .axis_inputs
        .iter()
        .map(|n| axis_id(n))
        .collect::<Result<Vec<_>>>()?;
    let mut sizes = vec![ENCODING_WIDTH + axis_inputs.len()];
    sizes.extend(&cfg.hidden_layers);
    sizes.push(1);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = TrainedMLP::init(&sizes, OutputActivation::Logistic, &mut rng)?;
    net.axis_inputs = axis_inputs;

    let x = net.encode_all(train.iter().map(|j| &j.dilemma));
    let t = judgments_to_targets(train);
    let val = if validation.is_empty() {
        None
    } else {
        Some((
            net.encode_all(validation.iter().map(|j| &j.dilemma)),
            judgments_to_targets(validation),
        ))
    };
    train_network(net, (&x, &t), val.as_ref().map(|(a, b)| (a, b)), cfg, &mut rng)
}

/// Fits a scalar regression network (`1 -> hidden... -> 1`, identity output)
/// to `points` by squared error. Targets are standardized internally; a
/// `validation_fraction` share of the points drives early stopping.
pub fn mlp_fit_regression(points: &[RegressionPoint], cfg: &MlpTrainConfig) -> Result<TrainedMLP> {
    cfg.validate()?;
    if points.is_empty() {
        return Err(SrmError::Data("cannot fit a regression to no points".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sizes = vec![1];
    sizes.extend(&cfg.hidden_layers);
    sizes.push(1);
    let mut net = TrainedMLP::init(&sizes, OutputActivation::Identity, &mut rng)?;

    let n = points.len() as f64;
    let mean = points.iter().map(|p| p.y).sum::<f64>() / n;
    let var = points.iter().map(|p| (p.y - mean).powi(2)).sum::<f64>() / n;
    let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    net.output_shift = mean;
    net.output_scale = scale;

    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.shuffle(&mut rng);
    let n_val = ((points.len() as f64) * cfg.validation_fraction).floor() as usize;
    let n_val = if points.len() - n_val == 0 { 0 } else { n_val };
    let (val_idx, train_idx) = idx.split_at(n_val);

    let build = |ids: &[usize]| {
        let x = Array2::from_shape_vec((ids.len(), 1), ids.iter().map(|&i| points[i].x).collect())
            .expect("column");
        let t = Targets::Regression {
            y: ids.iter().map(|&i| (points[i].y - mean) / scale).collect(),
        };
        (x, t)
    };
    let (xt, tt) = build(train_idx);
    let val = (!val_idx.is_empty()).then(|| build(val_idx));
    Ok(train_network(net, (&xt, &tt), val.as_ref().map(|(a, b)| (a, b)), cfg, &mut rng)?.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dilemma::{AgentCounts, AgentType, Signal};
    use rand::Rng;

    fn tiny_net(seed: u64, output: OutputActivation) -> TrainedMLP {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = TrainedMLP::init(&[2, 4, 1], output, &mut rng).unwrap();
        // Biases away from zero keep every hidden unit off its kink.
        for b in net.layers[0].bias.iter_mut() {
            *b = rng.random_range(0.2..0.6);
        }
        net.layers[1].bias[0] = 0.1;
        net
    }

    fn central_differences(net: &TrainedMLP, x: &Array2<f64>, t: &Targets) -> Vec<f64> {
        let h = 1e-6;
        (0..net.param_count())
            .map(|i| {
                let mut plus = net.clone();
                plus.set_param(i, net.param(i) + h);
                let mut minus = net.clone();
                minus.set_param(i, net.param(i) - h);
                (mean_loss(&plus, x, t) - mean_loss(&minus, x, t)) / (2.0 * h)
            })
            .collect()
    }

    fn assert_gradients_match(net: &TrainedMLP, x: &Array2<f64>, t: &Targets) {
        let analytic = net.loss_and_gradient(x.view(), t).1.flat();
        let numeric = central_differences(net, x, t);
        assert_eq!(analytic.len(), 17);
        for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
            assert!(rel < 1e-4, "param {i}: analytic {a}, numeric {n}, rel {rel}");
        }
    }

    fn batch_of_eight(seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((8, 2), || rng.random_range(0.1..1.0))
    }

    #[test]
    fn binary_gradient_matches_finite_differences() {
        let net = tiny_net(3, OutputActivation::Logistic);
        let x = batch_of_eight(4);
        let t = Targets::Binary {
            pos: vec![3.0, 0.0, 5.0, 1.0, 2.0, 7.0, 0.0, 4.0],
            neg: vec![1.0, 2.0, 0.0, 6.0, 2.0, 1.0, 3.0, 4.0],
        };
        assert_gradients_match(&net, &x, &t);
    }

    #[test]
    fn regression_gradient_matches_finite_differences() {
        let net = tiny_net(5, OutputActivation::Identity);
        let x = batch_of_eight(6);
        let t = Targets::Regression {
            y: vec![0.3, -1.0, 2.0, 0.5, 0.0, 1.5, -0.2, 0.8],
        };
        assert_gradients_match(&net, &x, &t);
    }

    #[test]
    fn flat_parameter_access_round_trips() {
        let mut net = tiny_net(1, OutputActivation::Logistic);
        assert_eq!(net.param_count(), 2 * 4 + 4 + 4 + 1);
        assert_eq!(net.param(0), net.layers[0].weights[[0, 0]]);
        assert_eq!(net.param(8), net.layers[0].bias[0]);
        assert_eq!(net.param(16), net.layers[1].bias[0]);
        net.set_param(9, 42.0);
        assert_eq!(net.layers[0].bias[1], 42.0);
    }

    fn single_dilemma() -> AggregatedJudgment {
        let d = Dilemma {
            id: "one".into(),
            left: AgentCounts::from_pairs(&[(AgentType::Girl, 1)]),
            right: AgentCounts::from_pairs(&[(AgentType::Cat, 2)]),
            signal_left: Signal::None,
            car_side: Side::Right,
        };
        AggregatedJudgment::new(d, 100, 100).unwrap()
    }

    #[test]
    fn unanimous_dilemma_is_learned() {
        let data = vec![single_dilemma()];
        let cfg = MlpTrainConfig {
            max_epochs: 300,
            learning_rate: 1e-2,
            ..MlpTrainConfig::default()
        };
        let fit = mlp_train(&data, &[], &cfg).unwrap();
        assert!(fit.model.predict_save_left(&data[0].dilemma) > 0.95);
        assert_eq!(fit.model.layer_sizes(), vec![42, 32, 32, 32, 1]);
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let data = vec![single_dilemma()];
        let cfg = MlpTrainConfig {
            max_epochs: 5,
            seed: 11,
            ..MlpTrainConfig::default()
        };
        let a = mlp_train(&data, &data, &cfg).unwrap().model;
        let b = mlp_train(&data, &data, &cfg).unwrap().model;
        assert_eq!(a, b);
        let c = mlp_train(&data, &data, &MlpTrainConfig { seed: 12, ..cfg }).unwrap().model;
        assert_ne!(a, c);
    }

    #[test]
    fn constant_target_regression() {
        let points: Vec<_> = (0..200)
            .map(|i| RegressionPoint {
                x: -2.5 + 5.0 * i as f64 / 199.0,
                y: 7.0,
            })
            .collect();
        let net = mlp_fit_regression(&points, &MlpTrainConfig::regression()).unwrap();
        for y in net.predict_x(&[-2.5, -1.0, 0.0, 1.3, 2.5]) {
            assert!((y - 7.0).abs() < 7.0 * 0.01 + 0.1, "{y}");
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let data = vec![single_dilemma()];
        let bad = MlpTrainConfig {
            batch_size: 0,
            ..MlpTrainConfig::default()
        };
        assert!(mlp_train(&data, &[], &bad).is_err());
        assert!(mlp_train(&[], &[], &MlpTrainConfig::default()).is_err());
        let bad_axis = MlpTrainConfig {
            axis_inputs: vec!["nope".into()],
            ..MlpTrainConfig::default()
        };
        assert!(mlp_train(&data, &[], &bad_axis).is_err());
        assert!(mlp_fit_regression(&[], &MlpTrainConfig::regression()).is_err());
    }

    #[test]
    fn huge_learning_rate_reports_divergence_or_finite_loss() {
        let data = vec![single_dilemma()];
        let cfg = MlpTrainConfig {
            learning_rate: 1e300,
            max_epochs: 3,
            ..MlpTrainConfig::default()
        };
        match mlp_train(&data, &[], &cfg) {
            Err(SrmError::Divergence(_)) => {}
            Ok(fit) => assert!(fit.history.iter().all(|h| h.train_loss.is_finite())),
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn axis_inputs_widen_the_encoding() {
        let data = vec![single_dilemma()];
        let cfg = MlpTrainConfig {
            max_epochs: 1,
            axis_inputs: vec!["humans_vs_animals".into(), "more_vs_less".into()],
            ..MlpTrainConfig::default()
        };
        let net = mlp_train(&data, &[], &cfg).unwrap().model;
        assert_eq!(net.input_width(), 44);
        let p = net.predict_save_left(&data[0].dilemma);
        assert!(p > 0.0 && p < 1.0);
    }
}
