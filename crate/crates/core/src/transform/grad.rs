//! Closed-form reverse-mode derivatives of the transform.
//!
//! The transform is bilinear in (signal, taps), so each level's backward pass
//! is one synthesis (for the signal cotangent) plus one periodic correlation
//! (for the tap cotangent). Highpass derivatives are folded back onto the
//! lowpass through the quadrature-mirror map.

use nalgebra::DMatrix;

use super::two_d::{analyze_cols, analyze_rows, synthesize_cols, synthesize_rows, WaveletCoeffs2d};
use super::{
    analyze, check_dyadic, dwt_with_trace, filter_correlation, idwt_with_trace, synthesize,
    TransformConfig, WaveletCoeffs,
};
use crate::error::{shape_err, Result};
use crate::filters::{highpass_grad_to_lowpass, FilterPair};

#[derive(Debug, Clone, PartialEq)]
pub struct DwtGrad {
    pub grad_x: Vec<f64>,
    pub grad_lowpass: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdwtGrad {
    pub grad_coeffs: WaveletCoeffs,
    pub grad_lowpass: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dwt2dGrad {
    pub grad_x: DMatrix<f64>,
    pub grad_lowpass: Vec<f64>,
}

/// Gradients of `<upstream, dwt1d(x)>` with respect to `x` and the lowpass taps.
pub fn dwt_grad(
    x: &[f64],
    filters: &FilterPair,
    config: TransformConfig,
    upstream: &WaveletCoeffs,
) -> Result<DwtGrad> {
    let (coeffs, trace) = dwt_with_trace(x, filters, config.levels)?;
    if !coeffs.same_layout(upstream) {
        return shape_err("upstream cotangent does not match the decomposition layout");
    }
    let (h, g) = (filters.lowpass(), filters.highpass());
    let mut gh = vec![0.0; h.len()];
    let mut gg = vec![0.0; g.len()];
    let mut ca = upstream.approx.clone();
    for (a_prev, cd) in trace.iter().zip(&upstream.details).rev() {
        filter_correlation(a_prev, &ca, cd, &mut gh, &mut gg);
        let mut next = vec![0.0; a_prev.len()];
        synthesize(&ca, cd, h, g, &mut next);
        ca = next;
    }
    highpass_grad_to_lowpass(&gg, &mut gh);
    Ok(DwtGrad { grad_x: ca, grad_lowpass: gh })
}

/// Gradients of `<upstream, idwt1d(coeffs)>` with respect to the coefficients and the lowpass taps.
pub fn idwt_grad(coeffs: &WaveletCoeffs, filters: &FilterPair, upstream: &[f64]) -> Result<IdwtGrad> {
    let (_, trace) = idwt_with_trace(coeffs, filters)?;
    if upstream.len() != coeffs.original_length {
        return shape_err(format!(
            "upstream has length {}, reconstruction has length {}",
            upstream.len(),
            coeffs.original_length
        ));
    }
    let (h, g) = (filters.lowpass(), filters.highpass());
    let levels = coeffs.levels();
    let mut gh = vec![0.0; h.len()];
    let mut gg = vec![0.0; g.len()];
    let mut grad_coeffs = coeffs.zeros_like();
    let mut u = upstream.to_vec();
    // trace[i] is the approximation fed into synthesis step i, which pairs with details[levels-1-i].
    for (i, lo) in trace.iter().enumerate().rev() {
        let band = levels - 1 - i;
        filter_correlation(&u, lo, &coeffs.details[band], &mut gh, &mut gg);
        let half = u.len() / 2;
        let mut clo = vec![0.0; half];
        let mut chi = vec![0.0; half];
        analyze(&u, h, g, &mut clo, &mut chi);
        grad_coeffs.details[band] = chi;
        u = clo;
    }
    grad_coeffs.approx = u;
    highpass_grad_to_lowpass(&gg, &mut gh);
    Ok(IdwtGrad { grad_coeffs, grad_lowpass: gh })
}

fn filter_correlation_rows(
    s: &DMatrix<f64>,
    wl: &DMatrix<f64>,
    wh: &DMatrix<f64>,
    gh: &mut [f64],
    gg: &mut [f64],
) {
    let row = |m: &DMatrix<f64>, i: usize| -> Vec<f64> { m.row(i).iter().copied().collect() };
    for i in 0..s.nrows() {
        filter_correlation(&row(s, i), &row(wl, i), &row(wh, i), gh, gg);
    }
}

/// 2D counterpart of [`dwt_grad`].
pub fn dwt2d_grad(
    x: &DMatrix<f64>,
    filters: &FilterPair,
    config: TransformConfig,
    upstream: &WaveletCoeffs2d,
) -> Result<Dwt2dGrad> {
    let (r, c) = x.shape();
    check_dyadic(r, config.levels)?;
    check_dyadic(c, config.levels)?;
    if upstream.original_shape != (r, c) || upstream.levels() != config.levels {
        return shape_err("upstream cotangent does not match the decomposition layout");
    }
    upstream.validate()?;
    let (h, g) = (filters.lowpass(), filters.highpass());

    let mut trace = Vec::with_capacity(config.levels);
    let mut cur = x.clone();
    for _ in 0..config.levels {
        let (row_lo, row_hi) = analyze_rows(&cur, h, g);
        let (ll, _) = analyze_cols(&row_lo, h, g);
        trace.push((std::mem::replace(&mut cur, ll), row_lo, row_hi));
    }

    let mut gh = vec![0.0; h.len()];
    let mut gg = vec![0.0; g.len()];
    let mut c_cur = upstream.approx.clone();
    for ((a, row_lo, row_hi), [c_lh, c_hl, c_hh]) in trace.iter().zip(&upstream.details).rev() {
        filter_correlation_rows(&row_lo.transpose(), &c_cur.transpose(), &c_hl.transpose(), &mut gh, &mut gg);
        filter_correlation_rows(&row_hi.transpose(), &c_lh.transpose(), &c_hh.transpose(), &mut gh, &mut gg);
        let c_row_lo = synthesize_cols(&c_cur, c_hl, h, g);
        let c_row_hi = synthesize_cols(c_lh, c_hh, h, g);
        filter_correlation_rows(a, &c_row_lo, &c_row_hi, &mut gh, &mut gg);
        c_cur = synthesize_rows(&c_row_lo, &c_row_hi, h, g);
    }
    highpass_grad_to_lowpass(&gg, &mut gh);
    Ok(Dwt2dGrad { grad_x: c_cur, grad_lowpass: gh })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::standard_bank;
    use crate::transform::{dwt1d, idwt1d};

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let db5 = standard_bank("db5").unwrap();
        let x: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let cfg = TransformConfig::new(2).unwrap();
        let up = WaveletCoeffs::zeros(16, 2).unwrap();
        let gr = dwt_grad(&x, &db5, cfg, &up).unwrap();
        assert!(gr.grad_x.iter().chain(&gr.grad_lowpass).all(|&v| v == 0.0));
    }

    #[test]
    fn signal_gradient_is_synthesis_of_upstream() {
        let sym5 = standard_bank("sym5").unwrap();
        let cfg = TransformConfig::new(3).unwrap();
        let x: Vec<f64> = (0..32).map(|i| (i as f64 * 0.7).cos()).collect();
        let up = dwt1d(&x.iter().map(|v| v * v - 0.3).collect::<Vec<_>>(), &sym5, cfg).unwrap();
        let gr = dwt_grad(&x, &sym5, cfg, &up).unwrap();
        let want = idwt1d(&up, &sym5).unwrap();
        for (a, b) in gr.grad_x.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn upstream_shape_checked() {
        let haar = standard_bank("haar").unwrap();
        let up = WaveletCoeffs::zeros(16, 1).unwrap();
        assert!(dwt_grad(&[0.0; 16], &haar, TransformConfig::new(2).unwrap(), &up).is_err());
        let c = WaveletCoeffs::zeros(16, 2).unwrap();
        assert!(idwt_grad(&c, &haar, &[0.0; 8]).is_err());
    }
}
