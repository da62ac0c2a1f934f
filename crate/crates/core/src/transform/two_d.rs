//! Separable 2D transform: rows (axis 1) first, then columns (axis 0).
//!
//! Band naming follows the separable wavelets: `details[j][0]` is LH
//! (lowpass down columns, highpass along rows), `[1]` is HL, `[2]` is HH.

use nalgebra::DMatrix;

use super::{analyze, check_dyadic, synthesize, TransformConfig};
use crate::error::{shape_err, Result};
use crate::filters::FilterPair;

#[derive(Debug, Clone, PartialEq)]
pub struct WaveletCoeffs2d {
    pub approx: DMatrix<f64>,
    /// `details[0]` is the finest level; each entry holds `[LH, HL, HH]`.
    pub details: Vec<[DMatrix<f64>; 3]>,
    pub original_shape: (usize, usize),
}

impl WaveletCoeffs2d {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    pub fn zeros(shape: (usize, usize), levels: usize) -> Result<Self> {
        check_dyadic(shape.0, levels)?;
        check_dyadic(shape.1, levels)?;
        let band = |j: usize| DMatrix::zeros(shape.0 >> j, shape.1 >> j);
        Ok(Self {
            approx: band(levels),
            details: (1..=levels).map(|j| [band(j), band(j), band(j)]).collect(),
            original_shape: shape,
        })
    }

    pub fn total_len(&self) -> usize {
        self.approx.len() + self.details.iter().flatten().map(|m| m.len()).sum::<usize>()
    }

    /// Approx first, then each level coarse to fine as LH, HL, HH; column-major within a band.
    pub fn iter(&self) -> impl Iterator<Item = &f64> + '_ {
        self.approx
            .iter()
            .chain(self.details.iter().rev().flat_map(|b| b.iter().flat_map(|m| m.iter())))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.approx.iter_mut().chain(
            self.details
                .iter_mut()
                .rev()
                .flat_map(|b| b.iter_mut().flat_map(|m| m.iter_mut())),
        )
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.iter().copied().collect()
    }

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

    pub fn sum_squares(&self) -> f64 {
        self.iter().map(|v| v * v).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let (r, c) = self.original_shape;
        let levels = self.levels();
        if levels == 0 {
            return shape_err("decomposition has no detail levels");
        }
        check_dyadic(r, levels)?;
        check_dyadic(c, levels)?;
        for (j, bands) in self.details.iter().enumerate() {
            let want = (r >> (j + 1), c >> (j + 1));
            for m in bands {
                if m.shape() != want {
                    return shape_err(format!(
                        "detail band at level {} has shape {:?}, expected {want:?}",
                        j + 1,
                        m.shape()
                    ));
                }
            }
        }
        if self.approx.shape() != (r >> levels, c >> levels) {
            return shape_err(format!("approximation band has shape {:?}", self.approx.shape()));
        }
        Ok(())
    }
}

/// Applies one analysis level along the rows (each row is a signal).
pub(crate) fn analyze_rows(a: &DMatrix<f64>, h: &[f64], g: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let (r, c) = a.shape();
    let mut lo = DMatrix::zeros(r, c / 2);
    let mut hi = DMatrix::zeros(r, c / 2);
    let mut row = vec![0.0; c];
    let (mut l, mut d) = (vec![0.0; c / 2], vec![0.0; c / 2]);
    for i in 0..r {
        row.iter_mut().enumerate().for_each(|(j, v)| *v = a[(i, j)]);
        analyze(&row, h, g, &mut l, &mut d);
        for j in 0..c / 2 {
            lo[(i, j)] = l[j];
            hi[(i, j)] = d[j];
        }
    }
    (lo, hi)
}

/// Applies one analysis level down the columns.
pub(crate) fn analyze_cols(a: &DMatrix<f64>, h: &[f64], g: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let (lo, hi) = analyze_rows(&a.transpose(), h, g);
    (lo.transpose(), hi.transpose())
}

pub(crate) fn synthesize_rows(
    lo: &DMatrix<f64>,
    hi: &DMatrix<f64>,
    h: &[f64],
    g: &[f64],
) -> DMatrix<f64> {
    let (r, half) = lo.shape();
    let mut out = DMatrix::zeros(r, half * 2);
    let (mut l, mut d, mut o) = (vec![0.0; half], vec![0.0; half], vec![0.0; half * 2]);
    for i in 0..r {
        for j in 0..half {
            l[j] = lo[(i, j)];
            d[j] = hi[(i, j)];
        }
        synthesize(&l, &d, h, g, &mut o);
        o.iter().enumerate().for_each(|(j, &v)| out[(i, j)] = v);
    }
    out
}

pub(crate) fn synthesize_cols(
    lo: &DMatrix<f64>,
    hi: &DMatrix<f64>,
    h: &[f64],
    g: &[f64],
) -> DMatrix<f64> {
    synthesize_rows(&lo.transpose(), &hi.transpose(), h, g).transpose()
}

pub fn dwt2d(x: &DMatrix<f64>, filters: &FilterPair, config: TransformConfig) -> Result<WaveletCoeffs2d> {
    let (r, c) = x.shape();
    check_dyadic(r, config.levels)?;
    check_dyadic(c, config.levels)?;
    let (h, g) = (filters.lowpass(), filters.highpass());
    let mut cur = x.clone();
    let mut details = Vec::with_capacity(config.levels);
    for _ in 0..config.levels {
        let (row_lo, row_hi) = analyze_rows(&cur, h, g);
        let (ll, hl) = analyze_cols(&row_lo, h, g);
        let (lh, hh) = analyze_cols(&row_hi, h, g);
        details.push([lh, hl, hh]);
        cur = ll;
    }
    Ok(WaveletCoeffs2d { approx: cur, details, original_shape: (r, c) })
}

pub fn idwt2d(coeffs: &WaveletCoeffs2d, filters: &FilterPair) -> Result<DMatrix<f64>> {
    coeffs.validate()?;
    let (h, g) = (filters.lowpass(), filters.highpass());
    let mut cur = coeffs.approx.clone();
    for [lh, hl, hh] in coeffs.details.iter().rev() {
        let row_lo = synthesize_cols(&cur, hl, h, g);
        let row_hi = synthesize_cols(lh, hh, h, g);
        cur = synthesize_rows(&row_lo, &row_hi, h, g);
    }
    Ok(cur)
}
