//! Evaluation metrics and derived artifacts for distilled wavelets.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, AwdError, Result};
use crate::filters::FilterPair;
use crate::nnet::TeacherModel;
use crate::transform::{dwt1d, dwt2d, idwt2d, TransformConfig, WaveletCoeffs};
use crate::trim::{saliency, AttributionMap};

pub const DEFAULT_CASCADE_ITERATIONS: usize = 8;
pub const MAX_CASCADE_ITERATIONS: usize = 16;

/// A sampled scaling or wavelet function on a grid of spacing `2^-iterations`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveletCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub iterations: usize,
}

impl WaveletCurve {
    fn from_values(values: Vec<f64>, iterations: usize) -> Self {
        let step = (0.5f64).powi(iterations as i32);
        let grid = (0..values.len()).map(|i| i as f64 * step).collect();
        Self { grid, values, iterations }
    }

    pub fn spacing(&self) -> f64 {
        (0.5f64).powi(self.iterations as i32)
    }

    /// Riemann sum of the samples.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.spacing()
    }
}

/// `out[m] = sqrt(2) sum_n taps[n] v[m - n * stride]`, the refinement step at one scale.
fn refine(v: &[f64], taps: &[f64], stride: usize, out_len: usize) -> Vec<f64> {
    let s2 = std::f64::consts::SQRT_2;
    let mut out = vec![0.0; out_len];
    for (n, &t) in taps.iter().enumerate() {
        let off = n * stride;
        for (i, &vi) in v.iter().enumerate() {
            if i + off < out_len {
                out[i + off] += s2 * t * vi;
            }
        }
    }
    out
}

fn cascade_len(support: usize, iterations: usize) -> usize {
    (support - 1) * ((1usize << iterations) - 1) + 1
}

/// Scaling function `phi` and wavelet `psi` sampled by the cascade algorithm.
///
/// Starting from the unit box, each pass applies `phi(t) <- sqrt(2) sum h[n] phi(2t - n)`
/// on a grid twice as fine; `psi` is one highpass refinement of the
/// second-to-last `phi` iterate. Both curves share the grid `m * 2^-iterations`.
pub fn cascade(filters: &FilterPair, iterations: usize) -> Result<(WaveletCurve, WaveletCurve)> {
    if !(1..=MAX_CASCADE_ITERATIONS).contains(&iterations) {
        return Err(AwdError::InvalidArgument(format!(
            "cascade iterations must be in 1..={MAX_CASCADE_ITERATIONS}, got {iterations}"
        )));
    }
    let n = filters.len();
    let mut phi = vec![1.0];
    let mut prev = phi.clone();
    for i in 0..iterations {
        prev = phi;
        phi = refine(&prev, filters.lowpass(), 1 << i, cascade_len(n, i + 1));
    }
    let len = cascade_len(n, iterations);
    let psi = refine(&prev, filters.highpass(), 1 << (iterations - 1), len);
    Ok((WaveletCurve::from_values(phi, iterations), WaveletCurve::from_values(psi, iterations)))
}

/// Maximum deviation from the two-scale relation `phi(t) = sqrt(2) sum h[n] phi(2t - n)`
/// evaluated on the curve's own grid.
pub fn two_scale_residual(phi: &WaveletCurve, filters: &FilterPair) -> f64 {
    let per_unit = 1usize << phi.iterations;
    let v = &phi.values;
    let s2 = std::f64::consts::SQRT_2;
    let mut worst: f64 = 0.0;
    for m in 0..v.len() {
        let mut rhs = 0.0;
        for (n, &h) in filters.lowpass().iter().enumerate() {
            let idx = 2 * m as isize - (n * per_unit) as isize;
            if idx >= 0 && (idx as usize) < v.len() {
                rhs += s2 * h * v[idx as usize];
            }
        }
        worst = worst.max((rhs - v[m]).abs());
    }
    worst
}

/// Minimum l2 distance between two sampled wavelets over circular shifts and
/// left/right flips, after zero-padding the shorter curve.
pub fn wavelet_distance(a: &WaveletCurve, b: &WaveletCurve) -> Result<f64> {
    if a.iterations != b.iterations {
        return Err(AwdError::InvalidArgument(format!(
            "grid spacing mismatch: 2^-{} vs 2^-{}",
            a.iterations, b.iterations
        )));
    }
    Ok(shift_flip_distance(&a.values, &b.values))
}

/// Exhaustive shift/flip search on raw sample vectors.
pub fn shift_flip_distance(a: &[f64], b: &[f64]) -> f64 {
    let len = a.len().max(b.len());
    let pad = |v: &[f64]| {
        let mut p = v.to_vec();
        p.resize(len, 0.0);
        p
    };
    let (a, b) = (pad(a), pad(b));
    let flipped: Vec<f64> = a.iter().rev().copied().collect();
    let mut best = f64::INFINITY;
    for cand in [&a, &flipped] {
        for k in 0..len {
            // candidate rolled right by k: c[i] = cand[(i + len - k) % len]
            let mut acc = 0.0;
            for i in 0..len {
                let d = cand[(i + len - k) % len] - b[i];
                acc += d * d;
                if acc >= best {
                    break;
                }
            }
            best = best.min(acc);
        }
    }
    best.sqrt()
}

/// Fraction of coefficients whose magnitude and attribution both exceed `threshold`.
pub fn compression_rate(
    coeff_sets: &[WaveletCoeffs],
    attributions: &[AttributionMap],
    threshold: f64,
) -> Result<f64> {
    if !(threshold > 0.0) {
        return Err(AwdError::InvalidArgument("threshold must be > 0".into()));
    }
    if coeff_sets.len() != attributions.len() {
        return shape_err(format!(
            "{} coefficient sets but {} attribution maps",
            coeff_sets.len(),
            attributions.len()
        ));
    }
    let (mut kept, mut total) = (0usize, 0usize);
    for (c, a) in coeff_sets.iter().zip(attributions) {
        if !c.same_layout(a) {
            return shape_err("attribution map layout differs from its coefficients");
        }
        for (cv, av) in c.iter().zip(a.iter()) {
            total += 1;
            if cv.abs() > threshold && av.abs() > threshold {
                kept += 1;
            }
        }
    }
    if total == 0 {
        return Ok(0.0);
    }
    Ok(kept as f64 / total as f64)
}

/// [`compression_rate`] over signals `xs`, attributing with saliency of `model` under `filters`.
pub fn dataset_compression_rate(
    xs: &[Vec<f64>],
    model: &TeacherModel,
    filters: &FilterPair,
    config: TransformConfig,
    threshold: f64,
) -> Result<f64> {
    let mut coeffs = Vec::with_capacity(xs.len());
    let mut attrs = Vec::with_capacity(xs.len());
    for x in xs {
        let c = dwt1d(x, filters, config)?;
        attrs.push(saliency(model, &c, filters)?);
        coeffs.push(c);
    }
    compression_rate(&coeffs, &attrs, threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxMode {
    /// Largest values, sorted descending.
    #[default]
    Signed,
    /// Largest magnitudes, reported as magnitudes sorted descending.
    Absolute,
}

/// The `per_scale` largest detail coefficients of every level, coarse to fine.
pub fn max_coeff_features(coeffs: &WaveletCoeffs, per_scale: usize, mode: MaxMode) -> Result<Vec<f64>> {
    if per_scale == 0 {
        return Err(AwdError::InvalidArgument("per_scale must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(per_scale * coeffs.levels());
    for (j, band) in coeffs.details.iter().enumerate().rev() {
        if band.len() < per_scale {
            return shape_err(format!(
                "detail band at level {} has {} entries, need {per_scale}",
                j + 1,
                band.len()
            ));
        }
        let mut vals: Vec<f64> = match mode {
            MaxMode::Signed => band.clone(),
            MaxMode::Absolute => band.iter().map(|v| v.abs()).collect(),
        };
        vals.sort_by(|a, b| b.total_cmp(a));
        out.extend_from_slice(&vals[..per_scale]);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl LinearHead {
    pub fn predict(&self, features: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(features).map(|(w, f)| w * f).sum::<f64>()
    }
}

/// Closed-form ridge regression with an unpenalized intercept.
pub fn linear_head_fit(features: &[Vec<f64>], targets: &[f64], ridge: f64) -> Result<LinearHead> {
    if features.is_empty() || features.len() != targets.len() {
        return shape_err(format!("{} feature rows but {} targets", features.len(), targets.len()));
    }
    if !(ridge >= 0.0) {
        return Err(AwdError::InvalidArgument("ridge must be >= 0".into()));
    }
    let p = features[0].len();
    if features.iter().any(|f| f.len() != p) {
        return shape_err("ragged feature matrix");
    }
    let n = features.len();
    let x = DMatrix::from_fn(n, p, |i, j| features[i][j]);
    let y = DVector::from_column_slice(targets);
    let x_mean = x.row_mean();
    let y_mean = y.mean();
    let xc = DMatrix::from_fn(n, p, |i, j| x[(i, j)] - x_mean[j]);
    let yc = y.add_scalar(-y_mean);
    let mut gram = xc.tr_mul(&xc);
    for d in 0..p {
        gram[(d, d)] += ridge;
    }
    let rhs = xc.tr_mul(&yc);
    let w = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .map_err(|e| AwdError::InvalidArgument(format!("ridge solve failed: {e}")))?,
    };
    let intercept = y_mean - (0..p).map(|j| x_mean[j] * w[j]).sum::<f64>();
    Ok(LinearHead { weights: w.as_slice().to_vec(), intercept })
}

/// Picks the ridge from `grid` by k-fold cross-validated mean squared error.
/// Folds are contiguous blocks; ties keep the earlier grid entry.
pub fn cv_select_ridge(features: &[Vec<f64>], targets: &[f64], grid: &[f64], folds: usize) -> Result<f64> {
    if grid.is_empty() || folds < 2 || folds > features.len() {
        return Err(AwdError::InvalidArgument("need a nonempty grid and 2 <= folds <= n".into()));
    }
    let n = features.len();
    let mut best = (f64::INFINITY, grid[0]);
    for &ridge in grid {
        let mut sse = 0.0;
        for f in 0..folds {
            let (lo, hi) = (f * n / folds, (f + 1) * n / folds);
            let train_x: Vec<Vec<f64>> = (0..n).filter(|i| !(lo..hi).contains(i)).map(|i| features[i].clone()).collect();
            let train_y: Vec<f64> = (0..n).filter(|i| !(lo..hi).contains(i)).map(|i| targets[i]).collect();
            let head = linear_head_fit(&train_x, &train_y, ridge)?;
            sse += (lo..hi).map(|i| (head.predict(&features[i]) - targets[i]).powi(2)).sum::<f64>();
        }
        if sse < best.0 {
            best = (sse, ridge);
        }
    }
    Ok(best.1)
}

pub const IG_STEPS: usize = 50;

fn flatten_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Integrated-gradients attributions of 2D wavelet coefficients (Riemann sum with
/// `steps` points, zero baseline), flattened in [`crate::transform::WaveletCoeffs2d::to_flat`] order.
///
/// The teacher reads the image flattened row-major.
pub fn integrated_gradients_2d(
    x: &DMatrix<f64>,
    model: &TeacherModel,
    filters: &FilterPair,
    config: TransformConfig,
    steps: usize,
) -> Result<Vec<f64>> {
    let (r, c) = x.shape();
    if model.input_dim() != r * c {
        return shape_err(format!("teacher expects {} inputs, image has {}", model.input_dim(), r * c));
    }
    if steps == 0 {
        return Err(AwdError::InvalidArgument("steps must be >= 1".into()));
    }
    let coeffs = dwt2d(x, filters, config)?;
    let residual = x - idwt2d(&coeffs, filters)?;
    let flat = coeffs.to_flat();
    let mut avg = vec![0.0; flat.len()];
    for s in 1..=steps {
        let alpha = s as f64 / steps as f64;
        let scaled = coeffs.with_flat(&flat.iter().map(|v| v * alpha).collect::<Vec<_>>())?;
        let u = idwt2d(&scaled, filters)? + &residual;
        let g = model.input_grad(&flatten_row_major(&u))?;
        let g_img = DMatrix::from_row_slice(r, c, &g);
        // adjoint of the synthesis operator is the analysis operator
        let g_coeffs = dwt2d(&g_img, filters, config)?.to_flat();
        for (a, v) in avg.iter_mut().zip(g_coeffs) {
            *a += v / steps as f64;
        }
    }
    Ok(flat.iter().zip(&avg).map(|(w, g)| w * g).collect())
}

/// Reconstruction from only the `top_k` coefficients with the largest |attribution|.
pub fn activation_map(
    x: &DMatrix<f64>,
    model: &TeacherModel,
    filters: &FilterPair,
    config: TransformConfig,
    top_k: usize,
) -> Result<DMatrix<f64>> {
    let coeffs = dwt2d(x, filters, config)?;
    let total = coeffs.total_len();
    if top_k > total {
        return Err(AwdError::InvalidArgument(format!("top_k {top_k} exceeds {total} coefficients")));
    }
    let attr = integrated_gradients_2d(x, model, filters, config, IG_STEPS)?;
    let keep = top_indices(&attr, top_k);
    let flat = coeffs.to_flat();
    let mut masked = vec![0.0; total];
    for i in keep {
        masked[i] = flat[i];
    }
    idwt2d(&coeffs.with_flat(&masked)?, filters)
}

/// Indices of the `k` largest |scores|; ties go to the lower index.
pub fn top_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].abs().total_cmp(&scores[a].abs()).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::standard_bank;
    use crate::transform::dwt1d;

    #[test]
    fn haar_cascade_is_exact() {
        let haar = standard_bank("haar").unwrap();
        for it in [1, 3, 8] {
            let (phi, psi) = cascade(&haar, it).unwrap();
            let n = 1 << it;
            assert!(phi.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
            assert_eq!(phi.values.len(), n);
            for (i, v) in psi.values.iter().enumerate() {
                let want = if i < n / 2 { 1.0 } else { -1.0 };
                assert!((v - want).abs() < 1e-12, "iter {it} idx {i}: {v}");
            }
            assert!((phi.spacing() - 1.0 / n as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn db5_cascade_integrals() {
        let (phi, psi) = cascade(&standard_bank("db5").unwrap(), 8).unwrap();
        assert!((phi.integral() - 1.0).abs() < 1e-3);
        assert!(psi.integral().abs() < 1e-3);
        assert_eq!(phi.grid.len(), phi.values.len());
    }

    #[test]
    fn cascade_iteration_bounds() {
        let haar = standard_bank("haar").unwrap();
        assert!(cascade(&haar, 0).is_err());
        assert!(cascade(&haar, 17).is_err());
    }

    #[test]
    fn two_scale_relation_holds() {
        let haar = standard_bank("haar").unwrap();
        let (phi, _) = cascade(&haar, 8).unwrap();
        assert!(two_scale_residual(&phi, &haar) < 1e-6);
        let db5 = standard_bank("db5").unwrap();
        let (phi, _) = cascade(&db5, 8).unwrap();
        assert!(two_scale_residual(&phi, &db5) < 1e-2);
    }

    #[test]
    fn distance_quotients_shift_and_flip() {
        let (_, psi) = cascade(&standard_bank("db5").unwrap(), 6).unwrap();
        assert_eq!(wavelet_distance(&psi, &psi).unwrap(), 0.0);
        let mut shifted = psi.clone();
        shifted.values.rotate_right(5);
        assert!(wavelet_distance(&shifted, &psi).unwrap() < 1e-12);
        let mut flipped = psi.clone();
        flipped.values.reverse();
        assert!(wavelet_distance(&flipped, &psi).unwrap() < 1e-12);
        let (_, haar) = cascade(&standard_bank("haar").unwrap(), 6).unwrap();
        assert!(wavelet_distance(&haar, &psi).unwrap() > 0.0);
        let (_, coarse) = cascade(&standard_bank("haar").unwrap(), 5).unwrap();
        assert!(wavelet_distance(&coarse, &psi).is_err());
    }

    #[test]
    fn compression_rate_edges() {
        let zeros = WaveletCoeffs::zeros(8, 2).unwrap();
        let ones = zeros.map(|_| 1.0);
        let attr = AttributionMap::new(ones.clone());
        assert_eq!(compression_rate(std::slice::from_ref(&zeros), std::slice::from_ref(&attr), 1e-3).unwrap(), 0.0);
        assert_eq!(compression_rate(std::slice::from_ref(&ones), std::slice::from_ref(&attr), 1e-3).unwrap(), 1.0);
        assert!(compression_rate(&[ones.clone(), ones], &[attr], 1e-3).is_err());
    }

    #[test]
    fn max_features_layout() {
        let db5 = standard_bank("db5").unwrap();
        let cfg = TransformConfig::new(5).unwrap();
        let x: Vec<f64> = (0..256).map(|i| ((i * 37) % 17) as f64).collect();
        let c = dwt1d(&x, &db5, cfg).unwrap();
        let f = max_coeff_features(&c, 6, MaxMode::Signed).unwrap();
        assert_eq!(f.len(), 30);
        for chunk in f.chunks(6) {
            assert!(chunk.windows(2).all(|w| w[0] >= w[1]));
        }
        let c_const = dwt1d(&[3.0; 256], &db5, cfg).unwrap();
        assert!(max_coeff_features(&c_const, 6, MaxMode::Signed).unwrap().iter().all(|v| v.abs() < 1e-10));
        // coarsest band at level 5 has 8 entries
        assert!(max_coeff_features(&c, 9, MaxMode::Signed).is_err());
        let abs = max_coeff_features(&c, 2, MaxMode::Absolute).unwrap();
        assert!(abs.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn ridge_exact_fit_and_limit() {
        let xs: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, ((i * i) % 7) as f64]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x[0] - 3.0 * x[1] + 0.5).collect();
        let head = linear_head_fit(&xs, &ys, 0.0).unwrap();
        let res: f64 = xs.iter().zip(&ys).map(|(x, y)| (head.predict(x) - y).powi(2)).sum::<f64>().sqrt();
        assert!(res < 1e-8);
        let heavy = linear_head_fit(&xs, &ys, 1e14).unwrap();
        assert!(heavy.weights.iter().all(|w| w.abs() < 1e-9));
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        assert!((heavy.predict(&xs[3]) - mean).abs() < 1e-6);
    }

    #[test]
    fn top_indices_tie_break() {
        assert_eq!(top_indices(&[1.0, -3.0, 3.0, 0.5], 2), vec![1, 2]);
        assert!(top_indices(&[1.0], 0).is_empty());
    }
}
