//! Wavelet-validity penalties and the sparsity term.
//!
//! Every penalty has weight 1; only the sparsity term carries a
//! hyperparameter (`lambda`).

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{AwdError, Result};
use crate::filters::FilterPair;
use crate::transform::{dwt1d, TransformConfig, WaveletCoeffs};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PenaltyBreakdown {
    pub sparsity: f64,
    pub sum_h: f64,
    pub sum_g: f64,
    pub unit_norm: f64,
    pub cmf: f64,
    pub shift_orth: f64,
    pub total: f64,
}

impl PenaltyBreakdown {
    /// Sum of the five validity penalties (everything except sparsity).
    pub fn validity(&self) -> f64 {
        self.sum_h + self.sum_g + self.unit_norm + self.cmf + self.shift_orth
    }

    fn with_total(mut self) -> Self {
        self.total = self.sparsity + self.validity();
        self
    }
}

/// Squared magnitude `|H(w_k)|^2` of the length-N DFT at `w_k = 2 pi k / N`, plus the
/// real and imaginary parts needed for the gradient.
fn dft_power(h: &[f64], k: usize) -> (f64, f64, f64) {
    let n = h.len() as f64;
    let w = 2.0 * PI * k as f64 / n;
    let (mut re, mut im) = (0.0, 0.0);
    for (i, &v) in h.iter().enumerate() {
        let (s, c) = (w * i as f64).sin_cos();
        re += v * c;
        im -= v * s;
    }
    (re * re + im * im, re, im)
}

/// Per-frequency residuals `|H(w)|^2 + |H(w + pi)|^2 - 2` for `k = 1..=N`.
fn cmf_residuals(h: &[f64]) -> Vec<(usize, f64)> {
    let n = h.len();
    (1..=n)
        .map(|k| {
            let (p, _, _) = dft_power(h, k % n);
            let (q, _, _) = dft_power(h, (k + n / 2) % n);
            (k, p + q - 2.0)
        })
        .collect()
}

/// Linear autocorrelation at even lag `2k`, for `k = 0 ..= (N-1)/2`.
fn even_lag_autocorr(h: &[f64]) -> Vec<f64> {
    let n = h.len();
    (0..=(n - 1) / 2)
        .map(|k| (2 * k..n).map(|i| h[i] * h[i - 2 * k]).sum())
        .collect()
}

pub fn wavelet_penalties(filters: &FilterPair) -> PenaltyBreakdown {
    let (h, g) = (filters.lowpass(), filters.highpass());
    let sum_h: f64 = h.iter().sum();
    let sum_g: f64 = g.iter().sum();
    let norm2: f64 = h.iter().map(|v| v * v).sum();
    let cmf = cmf_residuals(h).iter().map(|(_, r)| r * r).sum();
    let shift_orth = even_lag_autocorr(h)
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let r = c - if k == 0 { 1.0 } else { 0.0 };
            r * r
        })
        .sum();
    PenaltyBreakdown {
        sparsity: 0.0,
        sum_h: (sum_h - SQRT_2).powi(2),
        sum_g: sum_g * sum_g,
        unit_norm: (norm2 - 1.0).powi(2),
        cmf,
        shift_orth,
        total: 0.0,
    }
    .with_total()
}

/// `lambda * ||coeffs||_1` over the approximation and every detail band.
pub fn sparsity_term(coeffs: &WaveletCoeffs, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(AwdError::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    Ok(lambda * coeffs.l1_norm())
}

/// Full wavelet loss at one signal.
pub fn wavelet_loss(
    filters: &FilterPair,
    x: &[f64],
    config: TransformConfig,
    lambda: f64,
) -> Result<PenaltyBreakdown> {
    let coeffs = dwt1d(x, filters, config)?;
    let mut out = wavelet_penalties(filters);
    out.sparsity = sparsity_term(&coeffs, lambda)?;
    Ok(out.with_total())
}

/// Per-penalty gradients with respect to the lowpass taps.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyGrads {
    pub sum_h: Vec<f64>,
    pub sum_g: Vec<f64>,
    pub unit_norm: Vec<f64>,
    pub cmf: Vec<f64>,
    pub shift_orth: Vec<f64>,
}

impl PenaltyGrads {
    pub fn total(&self) -> Vec<f64> {
        (0..self.sum_h.len())
            .map(|m| self.sum_h[m] + self.sum_g[m] + self.unit_norm[m] + self.cmf[m] + self.shift_orth[m])
            .collect()
    }
}

pub fn penalty_grad_terms(filters: &FilterPair) -> PenaltyGrads {
    let h = filters.lowpass();
    let n = h.len();

    let sum_h: f64 = h.iter().sum();
    let sum_g: f64 = filters.highpass().iter().sum();
    let norm2: f64 = h.iter().map(|v| v * v).sum();

    let grad_sum_h = vec![2.0 * (sum_h - SQRT_2); n];
    // d(sum g)/dh[m] = (-1)^(N-1-m)
    let grad_sum_g = (0..n)
        .map(|m| if (n - 1 - m).is_multiple_of(2) { 2.0 * sum_g } else { -2.0 * sum_g })
        .collect();
    let grad_unit_norm = h.iter().map(|&v| 4.0 * (norm2 - 1.0) * v).collect();

    // d|H(w)|^2/dh[m] = 2 (re cos(w m) - im sin(w m))
    let mut grad_cmf = vec![0.0; n];
    let nf = n as f64;
    for (k, r) in cmf_residuals(h) {
        for idx in [k % n, (k + n / 2) % n] {
            let (_, re, im) = dft_power(h, idx);
            let w = 2.0 * PI * idx as f64 / nf;
            for (m, gm) in grad_cmf.iter_mut().enumerate() {
                let (s, c) = (w * m as f64).sin_cos();
                *gm += 4.0 * r * (re * c - im * s);
            }
        }
    }

    let mut grad_shift = vec![0.0; n];
    for (k, c) in even_lag_autocorr(h).into_iter().enumerate() {
        let r = c - if k == 0 { 1.0 } else { 0.0 };
        let lag = 2 * k;
        for (m, gm) in grad_shift.iter_mut().enumerate() {
            let mut d = 0.0;
            if m >= lag {
                d += h[m - lag];
            }
            if m + lag < n {
                d += h[m + lag];
            }
            *gm += 2.0 * r * d;
        }
    }

    PenaltyGrads {
        sum_h: grad_sum_h,
        sum_g: grad_sum_g,
        unit_norm: grad_unit_norm,
        cmf: grad_cmf,
        shift_orth: grad_shift,
    }
}

/// Exact gradient of the five validity penalties with respect to the lowpass taps
/// (the highpass dependence is chained through).
pub fn penalty_grad(filters: &FilterPair) -> Vec<f64> {
    penalty_grad_terms(filters).total()
}
