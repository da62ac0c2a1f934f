//! A small dense regressor used as the teacher model.
//!
//! Besides training, the model exposes the two differential primitives the
//! distillation objective needs: the input gradient (saliency) and the
//! Hessian-vector product of the output with respect to the input
//! (forward-over-reverse). ReLU has derivative 0 at 0 and second derivative 0
//! everywhere.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, AwdError, Result};
use crate::optim::Adam;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
    Tanh,
    /// `z^2`; lets tests build teachers with a known constant Hessian.
    Square,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
            Activation::Square => z * z,
        }
    }

    fn deriv(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Square => 2.0 * z,
        }
    }

    fn second_deriv(self, z: f64) -> f64 {
        match self {
            Activation::Relu | Activation::Identity => 0.0,
            Activation::Tanh => {
                let t = z.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Activation::Square => 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: DMatrix<f64>, bias: DVector<f64>, activation: Activation) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return shape_err(format!(
                "layer has {} output rows but {} biases",
                weights.nrows(),
                bias.len()
            ));
        }
        Ok(Self { weights, bias, activation })
    }

    fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherModel {
    layers: Vec<Layer>,
}

/// Forward activations kept for the backward passes.
struct Trace {
    /// `acts[0]` is the input; `acts[l + 1]` the output of layer `l`.
    acts: Vec<DVector<f64>>,
    pre: Vec<DVector<f64>>,
}

impl TeacherModel {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return shape_err("model needs at least one layer");
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].weights.nrows() != pair[1].weights.ncols() {
                return shape_err(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    pair[0].weights.nrows(),
                    i + 1,
                    pair[1].weights.ncols()
                ));
            }
        }
        if layers.last().unwrap().weights.nrows() != 1 {
            return shape_err("regression teacher must have a single output");
        }
        Ok(Self { layers })
    }

    /// Dense network with the given layer widths (`dims[0]` = input, last = 1).
    /// Hidden layers use `hidden`, the output layer is linear. Weights and
    /// biases start uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn mlp(dims: &[usize], hidden: Activation, seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return shape_err("need at least input and output widths");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_layers = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weights = DMatrix::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-bound..bound));
                let bias = DVector::from_fn(fan_out, |_, _| rng.gen_range(-bound..bound));
                let activation = if i + 1 == n_layers { Activation::Identity } else { hidden };
                Layer { weights, bias, activation }
            })
            .collect();
        Self::new(layers)
    }

    /// `f(x) = w^T x + b`.
    pub fn linear(weights: &[f64], bias: f64) -> Self {
        let layer = Layer {
            weights: DMatrix::from_row_slice(1, weights.len(), weights),
            bias: DVector::from_element(1, bias),
            activation: Activation::Identity,
        };
        Self { layers: vec![layer] }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        1
    }

    /// Returns a copy with every weight and bias multiplied by `c` in the last layer,
    /// i.e. the model `c * f`.
    pub fn scaled_output(&self, c: f64) -> Self {
        let mut out = self.clone();
        let last = out.layers.last_mut().unwrap();
        last.weights *= c;
        last.bias *= c;
        out
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return shape_err(format!("model expects {} inputs, got {}", self.input_dim(), x.len()));
        }
        Ok(())
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        acts.push(DVector::from_column_slice(x));
        for layer in &self.layers {
            let z = &layer.weights * acts.last().unwrap() + &layer.bias;
            let a = z.map(|v| layer.activation.apply(v));
            pre.push(z);
            acts.push(a);
        }
        Trace { acts, pre }
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.trace(x).acts.last().unwrap()[0])
    }

    /// `df/dx`.
    pub fn input_grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let tr = self.trace(x);
        let mut g = DVector::from_element(1, 1.0);
        for (layer, z) in self.layers.iter().zip(&tr.pre).rev() {
            let delta = g.zip_map(z, |gi, zi| gi * layer.activation.deriv(zi));
            g = layer.weights.tr_mul(&delta);
        }
        Ok(g.as_slice().to_vec())
    }

    /// Hessian-vector product `d/dx <df/dx, cotangent>`.
    pub fn grad_of_grad(&self, x: &[f64], cotangent: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if cotangent.len() != x.len() {
            return shape_err(format!(
                "cotangent has {} entries, model expects {}",
                cotangent.len(),
                x.len()
            ));
        }
        let tr = self.trace(x);
        // forward tangents of the pre-activations along `cotangent`
        let mut zdots = Vec::with_capacity(self.layers.len());
        let mut adot = DVector::from_column_slice(cotangent);
        for (layer, z) in self.layers.iter().zip(&tr.pre) {
            let zdot = &layer.weights * &adot;
            adot = zdot.zip_map(z, |d, zi| d * layer.activation.deriv(zi));
            zdots.push(zdot);
        }
        let mut g = DVector::from_element(1, 1.0);
        let mut gdot = DVector::from_element(1, 0.0);
        for ((layer, z), zdot) in self.layers.iter().zip(&tr.pre).zip(&zdots).rev() {
            let act = layer.activation;
            let delta = g.zip_map(z, |gi, zi| gi * act.deriv(zi));
            let mut delta_dot = gdot.zip_map(z, |gd, zi| gd * act.deriv(zi));
            for i in 0..delta_dot.len() {
                delta_dot[i] += g[i] * act.second_deriv(z[i]) * zdot[i];
            }
            g = layer.weights.tr_mul(&delta);
            gdot = layer.weights.tr_mul(&delta_dot);
        }
        Ok(gdot.as_slice().to_vec())
    }

    fn n_params(&self) -> usize {
        self.layers.iter().map(Layer::n_params).sum()
    }

    fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(l.bias.as_slice());
        }
        out
    }

    fn set_params(&mut self, flat: &[f64]) {
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.as_mut_slice().copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.as_mut_slice().copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
    }

    /// Accumulates `scale * d f(x) / d params` into `grad` (flat, same order as `params`)
    /// and returns `f(x)`.
    fn accumulate_param_grad(&self, x: &[f64], y: f64, scale: f64, grad: &mut [f64]) -> f64 {
        let tr = self.trace(x);
        let pred = tr.acts.last().unwrap()[0];
        let mut g = DVector::from_element(1, 2.0 * (pred - y) * scale);
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut at = 0;
        for l in &self.layers {
            offsets.push(at);
            at += l.n_params();
        }
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let z = &tr.pre[li];
            let a_in = &tr.acts[li];
            let delta = g.zip_map(z, |gi, zi| gi * layer.activation.deriv(zi));
            let (rows, cols) = layer.weights.shape();
            let base = offsets[li];
            // column-major weight storage
            for c in 0..cols {
                let av = a_in[c];
                for r in 0..rows {
                    grad[base + c * rows + r] += delta[r] * av;
                }
            }
            let bias_base = base + rows * cols;
            for r in 0..rows {
                grad[bias_base + r] += delta[r];
            }
            g = layer.weights.tr_mul(&delta);
        }
        pred
    }

    pub fn predict(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        xs.iter().map(|x| self.forward(x)).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let ckpt = Checkpoint::from(self);
        std::fs::write(path, serde_json::to_string(&ckpt)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        ckpt.into_model()
    }
}

/// Model checkpoint: layer dimensions and row-major weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub input_dim: usize,
    pub output_dim: usize,
    pub layers: Vec<LayerRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    pub rows: usize,
    pub cols: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl From<&TeacherModel> for Checkpoint {
    fn from(model: &TeacherModel) -> Self {
        let layers = model
            .layers
            .iter()
            .map(|l| LayerRecord {
                rows: l.weights.nrows(),
                cols: l.weights.ncols(),
                activation: l.activation,
                weights: l.weights.transpose().as_slice().to_vec(),
                bias: l.bias.as_slice().to_vec(),
            })
            .collect();
        Self { input_dim: model.input_dim(), output_dim: 1, layers }
    }
}

impl Checkpoint {
    pub fn into_model(self) -> Result<TeacherModel> {
        let layers = self
            .layers
            .into_iter()
            .map(|r| {
                if r.weights.len() != r.rows * r.cols {
                    return shape_err(format!(
                        "layer declares {}x{} but stores {} weights",
                        r.rows,
                        r.cols,
                        r.weights.len()
                    ));
                }
                Layer::new(
                    DMatrix::from_row_slice(r.rows, r.cols, &r.weights),
                    DVector::from_vec(r.bias),
                    r.activation,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let model = TeacherModel::new(layers)?;
        if model.input_dim() != self.input_dim || self.output_dim != 1 {
            return shape_err("checkpoint header does not match its layers");
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.01, epochs: 20, batch_size: 32, seed: 0 }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(AwdError::InvalidArgument("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(AwdError::InvalidArgument("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TeacherModel,
    /// Mean of the minibatch losses seen during each epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean squared error of the final model on the training set.
    pub final_mse: f64,
}

/// Minimizes mean squared error with Adam; deterministic given `config.seed`.
///
/// `epochs == 0` is accepted and returns the model unchanged.
pub fn train(
    model: &TeacherModel,
    xs: &[Vec<f64>],
    ys: &[f64],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if xs.len() != ys.len() || xs.is_empty() {
        return shape_err(format!("{} inputs but {} targets", xs.len(), ys.len()));
    }
    for x in xs {
        model.check_input(x)?;
    }
    let mut model = model.clone();
    let mut params = model.params();
    let mut opt = Adam::new(config.learning_rate, params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut grad = vec![0.0; params.len()];

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let pred = model.accumulate_param_grad(&xs[i], ys[i], scale, &mut grad);
                batch_loss += (pred - ys[i]).powi(2) * scale;
            }
            opt.step(&mut params, &grad);
            model.set_params(&params);
            loss_sum += batch_loss;
            n_batches += 1;
        }
        epoch_losses.push(loss_sum / n_batches as f64);
    }
    let final_mse = mse(&model.predict(xs)?, ys);
    Ok(TrainOutcome { model, epoch_losses, final_mse })
}

pub fn mse(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / y.len() as f64
}

/// Coefficient of determination.
pub fn r2_score(pred: &[f64], y: &[f64]) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|t| (t - mean).powi(2)).sum();
    let ss_res: f64 = pred.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum();
    1.0 - ss_res / ss_tot
}
