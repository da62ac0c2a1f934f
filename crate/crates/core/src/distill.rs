//! Distillation of a wavelet filter bank from a trained teacher.
//!
//! The objective over a batch of `m` signals is
//! `(1/m) sum ||x - x_hat||^2 + (1/m) sum W(h, g, x; lambda) + gamma sum ||saliency||_1`,
//! optimized over the lowpass taps only; the highpass is re-derived after every step.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{penalty_grad, wavelet_penalties, PenaltyBreakdown};
use crate::error::{shape_err, AwdError, Result};
use crate::evalkit::{cascade, wavelet_distance, WaveletCurve};
use crate::filters::{perturb, standard_bank, FilterPair};
use crate::nnet::TeacherModel;
use crate::optim::Adam;
use crate::transform::{dwt1d, dwt_grad, idwt1d, idwt_grad, TransformConfig};
use crate::trim::interp_pieces;

/// Loss above which a step is treated as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

/// Steps whose largest gradient entry is below this are skipped: Adam would
/// otherwise rescale rounding noise at a stationary point into full-size steps.
pub const GRADIENT_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AwdConfig {
    pub lambda: f64,
    pub gamma: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub levels: usize,
    /// Standard bank name or path to a filter file.
    pub init: String,
    /// Standard deviation of Gaussian noise added to the initial taps.
    pub init_noise: f64,
    pub seed: u64,
}

impl Default for AwdConfig {
    fn default() -> Self {
        Self {
            lambda: 0.005,
            gamma: 0.04,
            learning_rate: 0.001,
            epochs: 50,
            batch_size: 128,
            levels: 3,
            init: "db5".into(),
            init_noise: 0.0,
            seed: 0,
        }
    }
}

impl AwdConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AwdError::InvalidArgument(m));
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return bad(format!("gamma must be >= 0, got {}", self.gamma));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.init_noise >= 0.0) {
            return bad(format!("init_noise must be >= 0, got {}", self.init_noise));
        }
        TransformConfig::new(self.levels)?;
        Ok(())
    }

    pub fn transform(&self) -> Result<TransformConfig> {
        TransformConfig::new(self.levels)
    }

    /// Resolves `init` (bank name first, then file path) and applies `init_noise`.
    pub fn initial_filters(&self) -> Result<FilterPair> {
        let base = match standard_bank(&self.init) {
            Ok(f) => f,
            Err(AwdError::UnknownBank(_)) if Path::new(&self.init).exists() => FilterPair::load(&self.init)?,
            Err(e) => return Err(e),
        };
        perturb(&base, self.init_noise, self.seed)
    }
}

/// Value of the objective, split into its terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AwdLoss {
    /// Mean squared reconstruction error.
    pub reconstruction: f64,
    /// Penalties; `sparsity` is already weighted by lambda and averaged.
    pub wavelet: PenaltyBreakdown,
    /// Unweighted sum of saliency l1 norms over the batch.
    pub interpretation: f64,
    pub total: f64,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

struct SampleTerms {
    recon: f64,
    l1: f64,
    interp: f64,
    grad: Vec<f64>,
}

fn check_batch(batch: &[Vec<f64>], model: &TeacherModel) -> Result<()> {
    if batch.is_empty() {
        return Err(AwdError::InvalidArgument("empty batch".into()));
    }
    for x in batch {
        if x.len() != model.input_dim() {
            return shape_err(format!("signal has length {}, teacher expects {}", x.len(), model.input_dim()));
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn sample_terms(
    x: &[f64],
    filters: &FilterPair,
    model: &TeacherModel,
    config: TransformConfig,
    m: f64,
    lambda: f64,
    gamma: f64,
    with_grad: bool,
) -> Result<SampleTerms> {
    let coeffs = dwt1d(x, filters, config)?;
    let recon_x = idwt1d(&coeffs, filters)?;
    let err: Vec<f64> = recon_x.iter().zip(x).map(|(a, b)| a - b).collect();
    let recon = err.iter().map(|e| e * e).sum();
    let l1 = coeffs.l1_norm();
    let pieces = interp_pieces(model, filters, &coeffs, &recon_x)?;
    if !with_grad {
        return Ok(SampleTerms { recon, l1, interp: pieces.loss, grad: Vec::new() });
    }

    let up_synth: Vec<f64> = err.iter().zip(&pieces.hvp).map(|(e, q)| 2.0 * e / m + gamma * q).collect();
    let back_synth = idwt_grad(&coeffs, filters, &up_synth)?;
    let mut up_analysis = back_synth.grad_coeffs;
    for (u, c) in up_analysis.iter_mut().zip(coeffs.iter()) {
        *u += lambda / m * sign(*c);
    }
    let back_analysis = dwt_grad(x, filters, config, &up_analysis)?;
    let grad = back_synth
        .grad_lowpass
        .iter()
        .zip(&back_analysis.grad_lowpass)
        .zip(&pieces.grad_direct)
        .map(|((a, b), d)| a + b + gamma * d)
        .collect();
    Ok(SampleTerms { recon, l1, interp: pieces.loss, grad })
}

fn evaluate(
    filters: &FilterPair,
    batch: &[Vec<f64>],
    model: &TeacherModel,
    config: TransformConfig,
    lambda: f64,
    gamma: f64,
    with_grad: bool,
) -> Result<(AwdLoss, Vec<f64>)> {
    if !(lambda >= 0.0) || !(gamma >= 0.0) {
        return Err(AwdError::InvalidArgument("lambda and gamma must be >= 0".into()));
    }
    check_batch(batch, model)?;
    let m = batch.len() as f64;
    let terms: Vec<SampleTerms> = batch
        .par_iter()
        .map(|x| sample_terms(x, filters, model, config, m, lambda, gamma, with_grad))
        .collect::<Result<_>>()?;

    // sequential reduction keeps results independent of the thread count
    let mut recon = 0.0;
    let mut l1 = 0.0;
    let mut interp = 0.0;
    let mut grad = if with_grad { penalty_grad(filters) } else { Vec::new() };
    for t in &terms {
        recon += t.recon;
        l1 += t.l1;
        interp += t.interp;
        for (g, v) in grad.iter_mut().zip(&t.grad) {
            *g += v;
        }
    }
    let mut wavelet = wavelet_penalties(filters);
    wavelet.sparsity = lambda * l1 / m;
    wavelet.total = wavelet.sparsity + wavelet.validity();
    let reconstruction = recon / m;
    let total = reconstruction + wavelet.total + gamma * interp;
    Ok((AwdLoss { reconstruction, wavelet, interpretation: interp, total }, grad))
}

/// Objective value on `batch`.
pub fn awd_loss(
    filters: &FilterPair,
    batch: &[Vec<f64>],
    model: &TeacherModel,
    config: TransformConfig,
    lambda: f64,
    gamma: f64,
) -> Result<AwdLoss> {
    evaluate(filters, batch, model, config, lambda, gamma, false).map(|(l, _)| l)
}

/// Objective value and its exact gradient with respect to the lowpass taps.
pub fn awd_loss_grad(
    filters: &FilterPair,
    batch: &[Vec<f64>],
    model: &TeacherModel,
    config: TransformConfig,
    lambda: f64,
    gamma: f64,
) -> Result<(AwdLoss, Vec<f64>)> {
    evaluate(filters, batch, model, config, lambda, gamma, true)
}

/// Full-dataset loss at the start of an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: AwdLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AwdRunRecord {
    pub config: AwdConfig,
    pub initial_filters: FilterPair,
    pub history: Vec<EpochRecord>,
    pub final_filters: FilterPair,
    pub final_loss: AwdLoss,
    /// Set when the run diverged; the filters are then the ones the run started from.
    pub failure: Option<String>,
}

impl AwdRunRecord {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

/// Runs the optimizer from `config.init`.
pub fn distill(dataset: &[Vec<f64>], model: &TeacherModel, config: &AwdConfig) -> Result<AwdRunRecord> {
    config.validate()?;
    let init = config.initial_filters()?;
    distill_from(dataset, model, config, init)
}

/// Runs the optimizer from explicit starting filters, ignoring `config.init`.
pub fn distill_from(
    dataset: &[Vec<f64>],
    model: &TeacherModel,
    config: &AwdConfig,
    init: FilterPair,
) -> Result<AwdRunRecord> {
    config.validate()?;
    check_batch(dataset, model)?;
    let tcfg = config.transform()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut taps = init.lowpass().to_vec();
    let name = init.name().map(|n| format!("{n}+awd"));
    let mut filters = init.clone();
    let mut adam = Adam::new(config.learning_rate, taps.len());
    let mut history = Vec::with_capacity(config.epochs);
    let mut batch: Vec<Vec<f64>> = Vec::with_capacity(config.batch_size);
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        let loss = awd_loss(&filters, dataset, model, tcfg, config.lambda, config.gamma)?;
        if !loss.total.is_finite() {
            return Err(AwdError::Divergence { step, loss: loss.total });
        }
        history.push(EpochRecord { epoch, loss });
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| dataset[i].clone()));
            let (loss, grad) = awd_loss_grad(&filters, &batch, model, tcfg, config.lambda, config.gamma)?;
            if !loss.total.is_finite() || loss.total > DIVERGENCE_THRESHOLD {
                return Err(AwdError::Divergence { step, loss: loss.total });
            }
            if grad.iter().all(|g| g.abs() < GRADIENT_FLOOR) {
                step += 1;
                continue;
            }
            adam.step(&mut taps, &grad);
            filters = FilterPair::from_lowpass(taps.clone(), name.clone())
                .map_err(|_| AwdError::Divergence { step, loss: f64::NAN })?;
            step += 1;
        }
    }
    let final_loss = awd_loss(&filters, dataset, model, tcfg, config.lambda, config.gamma)?;
    Ok(AwdRunRecord {
        config: config.clone(),
        initial_filters: init,
        history,
        final_filters: filters,
        final_loss,
        failure: None,
    })
}

/// Grid cells in serpentine order: lambda outer, gamma alternating direction per row.
pub fn serpentine_order(n_lambda: usize, n_gamma: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n_lambda * n_gamma);
    for i in 0..n_lambda {
        for k in 0..n_gamma {
            let j = if i % 2 == 0 { k } else { n_gamma - 1 - k };
            out.push((i, j));
        }
    }
    out
}

/// Warm-started sweep over `(lambda, gamma)`. Records come back in visiting order.
///
/// A diverged cell is recorded with `failure` set and the sweep continues from
/// the last successful filters.
pub fn sweep(
    dataset: &[Vec<f64>],
    model: &TeacherModel,
    lambda_grid: &[f64],
    gamma_grid: &[f64],
    base: &AwdConfig,
) -> Result<Vec<AwdRunRecord>> {
    if lambda_grid.is_empty() || gamma_grid.is_empty() {
        return Err(AwdError::InvalidArgument("sweep grids must be nonempty".into()));
    }
    base.validate()?;
    sweep_from(dataset, model, lambda_grid, gamma_grid, base, base.initial_filters()?)
}

/// [`sweep`] with explicit starting filters for the first cell.
pub fn sweep_from(
    dataset: &[Vec<f64>],
    model: &TeacherModel,
    lambda_grid: &[f64],
    gamma_grid: &[f64],
    base: &AwdConfig,
    init: FilterPair,
) -> Result<Vec<AwdRunRecord>> {
    if lambda_grid.is_empty() || gamma_grid.is_empty() {
        return Err(AwdError::InvalidArgument("sweep grids must be nonempty".into()));
    }
    let mut current = init;
    let mut records = Vec::with_capacity(lambda_grid.len() * gamma_grid.len());
    for (i, j) in serpentine_order(lambda_grid.len(), gamma_grid.len()) {
        let cfg = AwdConfig { lambda: lambda_grid[i], gamma: gamma_grid[j], ..base.clone() };
        match distill_from(dataset, model, &cfg, current.clone()) {
            Ok(rec) => {
                current = rec.final_filters.clone();
                records.push(rec);
            }
            Err(e @ AwdError::Divergence { .. }) => {
                let tcfg = cfg.transform()?;
                let loss = awd_loss(&current, dataset, model, tcfg, cfg.lambda, cfg.gamma).unwrap_or_default();
                records.push(AwdRunRecord {
                    config: cfg,
                    initial_filters: current.clone(),
                    history: Vec::new(),
                    final_filters: current.clone(),
                    final_loss: loss,
                    failure: Some(e.to_string()),
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(records)
}

pub enum Selection<'a> {
    /// Smallest wavelet distance to a target wavelet curve.
    GroundtruthDistance(&'a WaveletCurve),
    /// Smallest score returned by a caller-supplied validation function.
    CvScore(&'a dyn Fn(&AwdRunRecord) -> Result<f64>),
}

/// Score of one record under `criterion`.
pub fn score(record: &AwdRunRecord, criterion: &Selection<'_>) -> Result<f64> {
    match criterion {
        Selection::GroundtruthDistance(target) => {
            let (_, psi) = cascade(&record.final_filters, target.iterations)?;
            wavelet_distance(&psi, target)
        }
        Selection::CvScore(f) => f(record),
    }
}

/// Index and score of the best non-failed record; ties go to the smaller `(lambda, gamma)`.
pub fn select_best(records: &[AwdRunRecord], criterion: &Selection<'_>) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (idx, rec) in records.iter().enumerate() {
        if rec.failed() {
            continue;
        }
        let s = score(rec, criterion)?;
        let better = match best {
            None => true,
            Some((b, bs)) => {
                let key = |r: &AwdRunRecord| (r.config.lambda, r.config.gamma);
                let (kr, kb) = (key(rec), key(&records[b]));
                s < bs || (s == bs && kr.partial_cmp(&kb) == Some(std::cmp::Ordering::Less))
            }
        };
        if better {
            best = Some((idx, s));
        }
    }
    best.ok_or_else(|| AwdError::InvalidArgument("no successful records to select from".into()))
}
