//! Periodized discrete wavelet transform built from the two-channel filter bank.
//!
//! One analysis level computes
//!
//! ```text
//! a_{j+1}[p] = sum_n h[n - 2p] a_j[n]
//! d_{j+1}[p] = sum_n g[n - 2p] a_j[n]
//! ```
//!
//! with every index taken modulo the current level length. Synthesis is the
//! exact adjoint of analysis, so it is the inverse precisely when `(h, g)` is
//! an orthogonal pair. For any other taps `idwt(dwt(x)) != x`, which is what
//! the reconstruction term of the distillation objective measures.

mod grad;
mod two_d;

pub use grad::{dwt2d_grad, dwt_grad, idwt_grad, Dwt2dGrad, DwtGrad, IdwtGrad};
pub use two_d::{dwt2d, idwt2d, WaveletCoeffs2d};

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, AwdError, Result};
use crate::filters::FilterPair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformConfig {
    pub levels: usize,
}

impl TransformConfig {
    pub fn new(levels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(AwdError::InvalidArgument("levels must be >= 1".into()));
        }
        Ok(Self { levels })
    }
}

/// Multi-level 1D decomposition.
///
/// `details[0]` is the finest band (level 1), `details[levels - 1]` the coarsest.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletCoeffs {
    pub approx: Vec<f64>,
    pub details: Vec<Vec<f64>>,
    pub original_length: usize,
}

impl WaveletCoeffs {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    /// Total coefficient count; equals `original_length` for a valid decomposition.
    pub fn total_len(&self) -> usize {
        self.approx.len() + self.details.iter().map(Vec::len).sum::<usize>()
    }

    pub fn zeros_like(&self) -> Self {
        self.map(|_| 0.0)
    }

    /// Zero decomposition of a length-`len` signal at `levels` levels.
    pub fn zeros(len: usize, levels: usize) -> Result<Self> {
        check_dyadic(len, levels)?;
        Ok(Self {
            approx: vec![0.0; len >> levels],
            details: (1..=levels).map(|j| vec![0.0; len >> j]).collect(),
            original_length: len,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            approx: self.approx.iter().map(|&v| f(v)).collect(),
            details: self
                .details
                .iter()
                .map(|b| b.iter().map(|&v| f(v)).collect())
                .collect(),
            original_length: self.original_length,
        }
    }

    /// Coefficients in a fixed order: approx, then detail bands coarse to fine.
    pub fn iter(&self) -> impl Iterator<Item = &f64> + '_ {
        self.approx.iter().chain(self.details.iter().rev().flatten())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.approx.iter_mut().chain(self.details.iter_mut().rev().flatten())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.iter().copied().collect()
    }

    /// Inverse of [`WaveletCoeffs::to_flat`] using `self` as the layout template.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.total_len() {
            return shape_err(format!(
                "flat vector has {} entries, layout needs {}",
                flat.len(),
                self.total_len()
            ));
        }
        let mut out = self.clone();
        for (dst, &src) in out.iter_mut().zip(flat) {
            *dst = src;
        }
        Ok(out)
    }

    pub fn l1_norm(&self) -> f64 {
        self.iter().map(|v| v.abs()).sum()
    }

    pub fn sum_squares(&self) -> f64 {
        self.iter().map(|v| v * v).sum()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.iter().zip(other.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.approx.len() == other.approx.len()
            && self.details.len() == other.details.len()
            && self
                .details
                .iter()
                .zip(&other.details)
                .all(|(a, b)| a.len() == b.len())
    }

    /// Checks that the band lengths describe a critically sampled periodic decomposition.
    pub fn validate(&self) -> Result<()> {
        let levels = self.levels();
        if levels == 0 {
            return shape_err("decomposition has no detail levels");
        }
        check_dyadic(self.original_length, levels)?;
        for (j, band) in self.details.iter().enumerate() {
            let want = self.original_length >> (j + 1);
            if band.len() != want {
                return shape_err(format!(
                    "detail band at level {} has length {}, expected {want}",
                    j + 1,
                    band.len()
                ));
            }
        }
        let want = self.original_length >> levels;
        if self.approx.len() != want {
            return shape_err(format!(
                "approximation band has length {}, expected {want}",
                self.approx.len()
            ));
        }
        Ok(())
    }
}

/// Ensures a length can be halved `levels` times while staying >= 2 before each split.
pub(crate) fn check_dyadic(len: usize, levels: usize) -> Result<()> {
    let mut cur = len;
    for level in 1..=levels {
        if cur < 2 || !cur.is_multiple_of(2) {
            return shape_err(format!(
                "length {len} cannot be split at level {level} (band length {cur} is not even and >= 2)"
            ));
        }
        cur /= 2;
    }
    Ok(())
}

/// One periodic analysis level: `lo[p] = sum_k h[k] a[(k + 2p) mod L]`.
pub(crate) fn analyze(a: &[f64], h: &[f64], g: &[f64], lo: &mut [f64], hi: &mut [f64]) {
    let len = a.len();
    for p in 0..len / 2 {
        let (mut sl, mut sh) = (0.0, 0.0);
        for (k, (&hk, &gk)) in h.iter().zip(g).enumerate() {
            let v = a[(k + 2 * p) % len];
            sl += hk * v;
            sh += gk * v;
        }
        lo[p] = sl;
        hi[p] = sh;
    }
}

/// One periodic synthesis level, the adjoint of [`analyze`]. Overwrites `out`.
pub(crate) fn synthesize(lo: &[f64], hi: &[f64], h: &[f64], g: &[f64], out: &mut [f64]) {
    let len = out.len();
    out.iter_mut().for_each(|v| *v = 0.0);
    for p in 0..len / 2 {
        let (l, d) = (lo[p], hi[p]);
        for (k, (&hk, &gk)) in h.iter().zip(g).enumerate() {
            out[(k + 2 * p) % len] += hk * l + gk * d;
        }
    }
}

/// Accumulates `gh[k] += sum_p wl[p] s[(k+2p) mod L]` and likewise for `gg`.
///
/// This is the filter derivative of both one analysis level (`s` = input,
/// weights = band cotangents) and one synthesis level (`s` = output cotangent,
/// weights = band values).
pub(crate) fn filter_correlation(s: &[f64], wl: &[f64], wh: &[f64], gh: &mut [f64], gg: &mut [f64]) {
    let len = s.len();
    for p in 0..len / 2 {
        let (l, d) = (wl[p], wh[p]);
        for k in 0..gh.len() {
            let v = s[(k + 2 * p) % len];
            gh[k] += l * v;
            gg[k] += d * v;
        }
    }
}

/// Runs the analysis cascade and also returns the intermediate approximations
/// `a_0 .. a_{J-1}` (needed by the backward pass).
pub(crate) fn dwt_with_trace(
    x: &[f64],
    filters: &FilterPair,
    levels: usize,
) -> Result<(WaveletCoeffs, Vec<Vec<f64>>)> {
    check_dyadic(x.len(), levels)?;
    let (h, g) = (filters.lowpass(), filters.highpass());
    let mut trace = Vec::with_capacity(levels);
    let mut details = Vec::with_capacity(levels);
    let mut cur = x.to_vec();
    for _ in 0..levels {
        let half = cur.len() / 2;
        let mut lo = vec![0.0; half];
        let mut hi = vec![0.0; half];
        analyze(&cur, h, g, &mut lo, &mut hi);
        details.push(hi);
        trace.push(std::mem::replace(&mut cur, lo));
    }
    Ok((
        WaveletCoeffs { approx: cur, details, original_length: x.len() },
        trace,
    ))
}

pub fn dwt1d(x: &[f64], filters: &FilterPair, config: TransformConfig) -> Result<WaveletCoeffs> {
    dwt_with_trace(x, filters, config.levels).map(|(c, _)| c)
}

/// Synthesis cascade; returns the intermediate approximations `a_J .. a_1`
/// alongside the reconstruction.
pub(crate) fn idwt_with_trace(
    coeffs: &WaveletCoeffs,
    filters: &FilterPair,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    coeffs.validate()?;
    let (h, g) = (filters.lowpass(), filters.highpass());
    let mut trace = Vec::with_capacity(coeffs.levels());
    let mut cur = coeffs.approx.clone();
    for band in coeffs.details.iter().rev() {
        let mut out = vec![0.0; cur.len() * 2];
        synthesize(&cur, band, h, g, &mut out);
        trace.push(std::mem::replace(&mut cur, out));
    }
    Ok((cur, trace))
}

pub fn idwt1d(coeffs: &WaveletCoeffs, filters: &FilterPair) -> Result<Vec<f64>> {
    idwt_with_trace(coeffs, filters).map(|(x, _)| x)
}
