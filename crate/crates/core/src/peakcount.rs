//! Peak-count statistics on 2D maps and a minimum-Mahalanobis-distance classifier.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, AwdError, Result};
use crate::filters::FilterPair;

pub type Kernel3 = [[f64; 3]; 3];

/// Isotropic Laplace kernel, scaled so an isolated unit spike scores +10/3.
pub const LAPLACE_KERNEL: Kernel3 = {
    let s = 10.0 / 3.0;
    [
        [-0.05 * s, -0.2 * s, -0.05 * s],
        [-0.2 * s, 1.0 * s, -0.2 * s],
        [-0.05 * s, -0.2 * s, -0.05 * s],
    ]
};

pub const ROBERTS_X: [[f64; 2]; 2] = [[1.0, 0.0], [0.0, -1.0]];
pub const ROBERTS_Y: [[f64; 2]; 2] = [[0.0, 1.0], [-1.0, 0.0]];

/// Number of bins used when the bin range is tuned on validation data.
pub const TUNED_BIN_COUNT: usize = 22;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "kernel")]
pub enum PeakFilter {
    Height,
    Laplace,
    RobertsCross,
    Subfilter(Kernel3),
}

impl PeakFilter {
    /// Pixels needed on every side of a peak.
    fn margin(&self) -> usize {
        match self {
            PeakFilter::Height => 0,
            PeakFilter::RobertsCross => 2,
            _ => 1,
        }
    }
}

/// Interior pixels strictly greater than all 8 neighbours, in row-major order.
pub fn find_peaks(map: &DMatrix<f64>) -> Result<Vec<(usize, usize)>> {
    let (r, c) = map.shape();
    if r < 3 || c < 3 {
        return shape_err(format!("map must be at least 3x3, got {r}x{c}"));
    }
    let mut out = Vec::new();
    for i in 1..r - 1 {
        for j in 1..c - 1 {
            let v = map[(i, j)];
            let mut is_peak = true;
            'nb: for di in 0..3 {
                for dj in 0..3 {
                    if (di, dj) != (1, 1) && map[(i + di - 1, j + dj - 1)] >= v {
                        is_peak = false;
                        break 'nb;
                    }
                }
            }
            if is_peak {
                out.push((i, j));
            }
        }
    }
    Ok(out)
}

fn correlate3(map: &DMatrix<f64>, (i, j): (usize, usize), k: &Kernel3) -> f64 {
    let mut acc = 0.0;
    for (a, row) in k.iter().enumerate() {
        for (b, w) in row.iter().enumerate() {
            acc += w * map[(i + a - 1, j + b - 1)];
        }
    }
    acc
}

/// Gradient magnitude of the 2x2 block with top-left corner `(i, j)`.
fn roberts_block(map: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    let mut gx = 0.0;
    let mut gy = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            gx += ROBERTS_X[a][b] * map[(i + a, j + b)];
            gy += ROBERTS_Y[a][b] * map[(i + a, j + b)];
        }
    }
    gx.hypot(gy)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Steepness {
    pub values: Vec<f64>,
    /// Peaks dropped because the filter footprint left the map.
    pub skipped: usize,
}

pub fn steepness(map: &DMatrix<f64>, peaks: &[(usize, usize)], filter: &PeakFilter) -> Result<Steepness> {
    let (r, c) = map.shape();
    let m = filter.margin();
    let mut values = Vec::with_capacity(peaks.len());
    let mut skipped = 0;
    for &(i, j) in peaks {
        if i >= r || j >= c {
            return shape_err(format!("peak ({i}, {j}) lies outside the {r}x{c} map"));
        }
        if i < m || j < m || i + m >= r || j + m >= c {
            skipped += 1;
            continue;
        }
        let v = match filter {
            PeakFilter::Height => map[(i, j)],
            PeakFilter::Laplace => correlate3(map, (i, j), &LAPLACE_KERNEL),
            PeakFilter::Subfilter(k) => correlate3(map, (i, j), k),
            // the four 2x2 blocks that contain the peak
            PeakFilter::RobertsCross => {
                roberts_block(map, i - 1, j - 1)
                    + roberts_block(map, i - 1, j)
                    + roberts_block(map, i, j - 1)
                    + roberts_block(map, i, j)
            }
        };
        values.push(v);
    }
    Ok(Steepness { values, skipped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakHistogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl PeakHistogram {
    pub fn as_vector(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }
}

/// Uniform left-closed bins on `[lo, hi)`; values outside are dropped.
pub fn histogram(values: &[f64], lo: f64, hi: f64, width: f64) -> Result<PeakHistogram> {
    if !(hi > lo) || !(width > 0.0) {
        return Err(AwdError::InvalidArgument(format!("need hi > lo and width > 0, got [{lo}, {hi}) / {width}")));
    }
    let ratio = (hi - lo) / width;
    let n = ratio.round();
    if (ratio - n).abs() > 1e-9 * n.max(1.0) || n < 1.0 {
        return Err(AwdError::InvalidArgument(format!("(hi - lo) / width = {ratio} is not an integer")));
    }
    let n = n as usize;
    let bin_edges: Vec<f64> = (0..=n).map(|k| lo + k as f64 * width).collect();
    let mut counts = vec![0u64; n];
    for &v in values {
        if !(v >= lo && v < hi) {
            continue;
        }
        let mut k = (((v - lo) / width).floor() as usize).min(n - 1);
        // keep bin membership consistent with the stored edges under rounding
        if v < bin_edges[k] {
            k -= 1;
        } else if k + 1 < n && v >= bin_edges[k + 1] {
            k += 1;
        }
        counts[k] += 1;
    }
    Ok(PeakHistogram { bin_edges, counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassModel {
    pub label: String,
    pub mean: Vec<f64>,
    /// Row-major sample covariance.
    pub covariance: Vec<Vec<f64>>,
    #[serde(skip)]
    inverse: Option<DMatrix<f64>>,
}

impl ClassModel {
    /// `(h - mu)^T Sigma^-1 (h - mu)` with the regularized inverse.
    pub fn mahalanobis(&self, h: &[f64]) -> Result<f64> {
        if h.len() != self.mean.len() {
            return shape_err(format!("histogram has {} bins, class {} has {}", h.len(), self.label, self.mean.len()));
        }
        let d = DVector::from_iterator(h.len(), h.iter().zip(&self.mean).map(|(a, b)| a - b));
        match &self.inverse {
            Some(inv) => Ok(d.dot(&(inv * &d))),
            None => Ok(d.dot(&(regularized_inverse(&self.covariance)? * &d))),
        }
    }

    /// Restores the cached inverse after deserialization.
    pub fn prepare(mut self) -> Result<Self> {
        self.inverse = Some(regularized_inverse(&self.covariance)?);
        Ok(self)
    }
}

/// Inverse of `Sigma + eps I` with `eps = 1e-8 * trace / dim` (or 1e-8 for a zero matrix).
fn regularized_inverse(cov: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let dim = cov.len();
    let m = DMatrix::from_fn(dim, dim, |i, j| cov[i][j]);
    let trace = m.trace();
    let eps = if trace > 0.0 { 1e-8 * trace / dim as f64 } else { 1e-8 };
    let reg = m + DMatrix::identity(dim, dim) * eps;
    reg.clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| reg.try_inverse())
        .ok_or_else(|| AwdError::InvalidArgument("class covariance is not invertible".into()))
}

/// Per-label sample mean and covariance (denominator `n - 1`).
#[allow(clippy::needless_range_loop)]
pub fn fit_classes(groups: &[(String, Vec<Vec<f64>>)]) -> Result<Vec<ClassModel>> {
    let mut out = Vec::with_capacity(groups.len());
    let dim = groups.first().and_then(|(_, v)| v.first()).map(|h| h.len()).unwrap_or(0);
    for (label, hists) in groups {
        if hists.len() < 2 {
            return Err(AwdError::InvalidArgument(format!("class {label} has {} histogram(s), need 2", hists.len())));
        }
        if hists.iter().any(|h| h.len() != dim) {
            return shape_err(format!("class {label} has histograms of differing length"));
        }
        let n = hists.len() as f64;
        let mean: Vec<f64> = (0..dim).map(|k| hists.iter().map(|h| h[k]).sum::<f64>() / n).collect();
        let mut cov = vec![vec![0.0; dim]; dim];
        for h in hists {
            for a in 0..dim {
                let da = h[a] - mean[a];
                for b in a..dim {
                    cov[a][b] += da * (h[b] - mean[b]);
                }
            }
        }
        for a in 0..dim {
            for b in a..dim {
                cov[a][b] /= n - 1.0;
                cov[b][a] = cov[a][b];
            }
        }
        let model = ClassModel { label: label.clone(), mean, covariance: cov, inverse: None };
        out.push(model.prepare()?);
    }
    Ok(out)
}

/// Index of the class with the smallest Mahalanobis distance; ties keep the first.
pub fn classify(h: &[f64], classes: &[ClassModel]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in classes.iter().enumerate() {
        let d = c.mahalanobis(h)?;
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i).ok_or_else(|| AwdError::InvalidArgument("no classes".into()))
}

/// Separable 3x3 kernels `LL, LH, HL, HH` cropped to the window holding the most squared mass.
pub fn extract_subfilters(filters: &FilterPair) -> Result<[Kernel3; 4]> {
    let (h, g) = (filters.lowpass(), filters.highpass());
    if h.len() < 3 {
        return Err(AwdError::InvalidFilter(format!("support {} is shorter than 3", h.len())));
    }
    let mut out = [[[0.0; 3]; 3]; 4];
    for (slot, (rows, cols)) in [(h, h), (h, g), (g, h), (g, g)].into_iter().enumerate() {
        let (i0, j0) = best_window(rows, cols);
        for a in 0..3 {
            for b in 0..3 {
                out[slot][a][b] = rows[i0 + a] * cols[j0 + b];
            }
        }
    }
    Ok(out)
}

/// Top-left index of the 3x3 window of `outer(rows, cols)` with the largest squared mass.
fn best_window(rows: &[f64], cols: &[f64]) -> (usize, usize) {
    let n = rows.len();
    let mut best = (f64::NEG_INFINITY, (0, 0));
    for i in 0..=n - 3 {
        for j in 0..=cols.len() - 3 {
            let mut mass = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    mass += (rows[i + a] * cols[j + b]).powi(2);
                }
            }
            if mass > best.0 {
                best = (mass, (i, j));
            }
        }
    }
    best.1
}

/// Steepness values of every peak in `map`.
pub fn map_steepness(map: &DMatrix<f64>, filter: &PeakFilter) -> Result<Vec<f64>> {
    let peaks = find_peaks(map)?;
    Ok(steepness(map, &peaks, filter)?.values)
}

/// Histogram settings for one pipeline variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinRange {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl BinRange {
    /// The fixed range used for Laplace steepness: 22 bins of width 0.01 from 0.
    pub const LAPLACE: BinRange = BinRange { lo: 0.0, hi: 0.22, bins: 22 };

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins as f64
    }

    pub fn histogram(&self, values: &[f64]) -> Result<PeakHistogram> {
        histogram(values, self.lo, self.hi, self.width())
    }
}

/// Labelled maps, grouped by class in label order.
pub type LabelledMaps = Vec<(String, Vec<DMatrix<f64>>)>;

#[derive(Debug, Clone)]
pub struct PeakClassifier {
    pub filter: PeakFilter,
    pub range: BinRange,
    pub classes: Vec<ClassModel>,
}

impl PeakClassifier {
    pub fn fit(filter: PeakFilter, range: BinRange, train: &LabelledMaps) -> Result<Self> {
        let mut groups = Vec::with_capacity(train.len());
        for (label, maps) in train {
            let hists = maps
                .iter()
                .map(|m| Ok(range.histogram(&map_steepness(m, &filter)?)?.as_vector()))
                .collect::<Result<Vec<_>>>()?;
            groups.push((label.clone(), hists));
        }
        Ok(Self { filter, range, classes: fit_classes(&groups)? })
    }

    pub fn predict(&self, map: &DMatrix<f64>) -> Result<&str> {
        let h = self.range.histogram(&map_steepness(map, &self.filter)?)?.as_vector();
        Ok(&self.classes[classify(&h, &self.classes)?].label)
    }

    /// Fraction of correctly labelled maps.
    pub fn accuracy(&self, data: &LabelledMaps) -> Result<f64> {
        let (mut hit, mut total) = (0usize, 0usize);
        for (label, maps) in data {
            for m in maps {
                total += 1;
                if self.predict(m)? == label {
                    hit += 1;
                }
            }
        }
        Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
    }

    /// Fits on `train` for every `(lo, hi)` pair built from quantiles of the pooled
    /// training steepness and keeps the most accurate on `validation`
    /// (ties keep the earlier candidate).
    pub fn fit_tuned(filter: PeakFilter, train: &LabelledMaps, validation: &LabelledMaps) -> Result<Self> {
        let mut pooled = Vec::new();
        for (_, maps) in train {
            for m in maps {
                pooled.extend(map_steepness(m, &filter)?);
            }
        }
        if pooled.is_empty() {
            return Err(AwdError::InvalidArgument("no peaks in the training maps".into()));
        }
        pooled.sort_by(f64::total_cmp);
        let q = |p: f64| pooled[((pooled.len() - 1) as f64 * p).round() as usize];
        let mut best: Option<(f64, Self)> = None;
        for lo_q in [0.0, 0.05, 0.1, 0.25, 0.5] {
            for hi_q in [0.75, 0.9, 0.95, 0.99, 1.0] {
                let (lo, hi) = (q(lo_q), q(hi_q) * (1.0 + 1e-9) + 1e-12);
                if !(hi > lo) {
                    continue;
                }
                let range = BinRange { lo, hi, bins: TUNED_BIN_COUNT };
                let model = Self::fit(filter, range, train)?;
                let acc = model.accuracy(validation)?;
                if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                    best = Some((acc, model));
                }
            }
        }
        best.map(|(_, m)| m).ok_or_else(|| AwdError::InvalidArgument("degenerate steepness range".into()))
    }

    /// Tunes over the four subfilters of `filters` and their bin ranges.
    pub fn fit_subfilter_tuned(filters: &FilterPair, train: &LabelledMaps, validation: &LabelledMaps) -> Result<Self> {
        let mut best: Option<(f64, Self)> = None;
        for k in extract_subfilters(filters)? {
            let model = Self::fit_tuned(PeakFilter::Subfilter(k), train, validation)?;
            let acc = model.accuracy(validation)?;
            if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                best = Some((acc, model));
            }
        }
        Ok(best.expect("four subfilters").1)
    }
}

/// Generator of synthetic maps: Gaussian bumps with random amplitudes on a noisy background.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapClassSpec {
    pub size: usize,
    pub n_bumps: usize,
    pub bump_sigma: f64,
    pub amplitude_mean: f64,
    pub amplitude_sd: f64,
    pub noise_sd: f64,
}

impl MapClassSpec {
    pub fn with_amplitude(amplitude_mean: f64) -> Self {
        Self { size: 64, n_bumps: 40, bump_sigma: 1.2, amplitude_mean, amplitude_sd: 0.01, noise_sd: 0.002 }
    }

    pub fn generate(&self, rng: &mut impl Rng) -> Result<DMatrix<f64>> {
        let amp = Normal::new(self.amplitude_mean, self.amplitude_sd).map_err(|e| AwdError::InvalidArgument(e.to_string()))?;
        let noise = Normal::new(0.0, self.noise_sd).map_err(|e| AwdError::InvalidArgument(e.to_string()))?;
        let n = self.size;
        let mut m = DMatrix::from_fn(n, n, |_, _| noise.sample(rng));
        let reach = (4.0 * self.bump_sigma).ceil() as isize;
        let two_s2 = 2.0 * self.bump_sigma * self.bump_sigma;
        for _ in 0..self.n_bumps {
            let (ci, cj) = (rng.gen_range(0..n) as isize, rng.gen_range(0..n) as isize);
            let a = amp.sample(rng);
            for di in -reach..=reach {
                for dj in -reach..=reach {
                    let (i, j) = (ci + di, cj + dj);
                    if i >= 0 && j >= 0 && (i as usize) < n && (j as usize) < n {
                        m[(i as usize, j as usize)] += a * (-((di * di + dj * dj) as f64) / two_s2).exp();
                    }
                }
            }
        }
        Ok(m)
    }
}

/// `per_class` maps for each `(label, spec)`, deterministic in `seed`.
pub fn generate_maps(classes: &[(String, MapClassSpec)], per_class: usize, seed: u64) -> Result<LabelledMaps> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    classes
        .iter()
        .map(|(label, spec)| Ok((label.clone(), (0..per_class).map(|_| spec.generate(&mut rng)).collect::<Result<_>>()?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::standard_bank;

    #[test]
    fn peaks_basic() {
        assert!(find_peaks(&DMatrix::from_element(5, 5, 1.0)).unwrap().is_empty());
        let mut m = DMatrix::zeros(5, 5);
        m[(2, 2)] = 1.0;
        assert_eq!(find_peaks(&m).unwrap(), vec![(2, 2)]);
        assert!(find_peaks(&DMatrix::zeros(2, 5)).is_err());
    }

    #[test]
    fn peaks_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = DMatrix::from_fn(16, 16, |_, _| rng.gen::<f64>());
        let mut want = Vec::new();
        for i in 1..15 {
            for j in 1..15 {
                let nb = [(i - 1, j - 1), (i - 1, j), (i - 1, j + 1), (i, j - 1), (i, j + 1), (i + 1, j - 1), (i + 1, j), (i + 1, j + 1)];
                if nb.iter().all(|&p| m[p] < m[(i, j)]) {
                    want.push((i, j));
                }
            }
        }
        assert_eq!(find_peaks(&m).unwrap(), want);
        for &(i, j) in &want {
            let h = steepness(&m, &[(i, j)], &PeakFilter::Height).unwrap().values[0];
            assert!((i - 1..=i + 1).all(|a| (j - 1..=j + 1).all(|b| m[(a, b)] <= h)));
        }
    }

    #[test]
    fn steepness_hand_values() {
        let mut m = DMatrix::zeros(5, 5);
        m[(2, 2)] = 7.0;
        assert_eq!(steepness(&m, &[(2, 2)], &PeakFilter::Height).unwrap().values, vec![7.0]);
        m[(2, 2)] = 1.0;
        let lap = steepness(&m, &[(2, 2)], &PeakFilter::Laplace).unwrap().values[0];
        assert!((lap - 10.0 / 3.0).abs() < 1e-12);
        // every adjacent block holds the spike in one corner: |G| = 1 each
        let rob = steepness(&m, &[(2, 2)], &PeakFilter::RobertsCross).unwrap().values[0];
        assert!((rob - 4.0).abs() < 1e-12);
        let edge = steepness(&m, &[(0, 2), (2, 2)], &PeakFilter::Laplace).unwrap();
        assert_eq!((edge.values.len(), edge.skipped), (1, 1));
        let near = steepness(&m, &[(1, 2), (2, 2)], &PeakFilter::RobertsCross).unwrap();
        assert_eq!((near.values.len(), near.skipped), (1, 1));
    }

    #[test]
    fn roberts_matches_block_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = DMatrix::from_fn(6, 6, |_, _| rng.gen::<f64>());
        let (i, j) = (3, 2);
        let mut want = 0.0;
        for (bi, bj) in [(i - 1, j - 1), (i - 1, j), (i, j - 1), (i, j)] {
            let (a, b, c, d) = (m[(bi, bj)], m[(bi, bj + 1)], m[(bi + 1, bj)], m[(bi + 1, bj + 1)]);
            want += ((a - d).powi(2) + (b - c).powi(2)).sqrt();
        }
        let got = steepness(&m, &[(i, j)], &PeakFilter::RobertsCross).unwrap().values[0];
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn histogram_cases() {
        let h = histogram(&[0.005, 0.015], 0.0, 0.22, 0.01).unwrap();
        assert_eq!(h.counts.len(), 22);
        assert_eq!(&h.counts[..3], &[1, 1, 0]);
        assert!(histogram(&[], 0.0, 0.22, 0.01).unwrap().counts.iter().all(|&c| c == 0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..1000).map(|_| rng.gen_range(0.0..0.22)).collect();
        assert_eq!(histogram(&v, 0.0, 0.22, 0.01).unwrap().counts.iter().sum::<u64>(), 1000);
        assert!(histogram(&v, 0.0, 0.22, 0.03).is_err());
        // left-closed: an edge value lands in the bin it opens
        let e = histogram(&[0.0, 0.22, 0.1], 0.0, 0.2, 0.1).unwrap();
        assert_eq!(e.counts, vec![1, 1]);
    }

    #[test]
    fn class_fitting() {
        let same = vec![vec![1.0, 2.0], vec![1.0, 2.0]];
        let c = fit_classes(&[("a".into(), same)]).unwrap();
        assert_eq!(c[0].mean, vec![1.0, 2.0]);
        assert!(c[0].covariance.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(c[0].mahalanobis(&[1.0, 2.0]).unwrap(), 0.0);
        let two = fit_classes(&[("b".into(), vec![vec![0.0, 4.0], vec![2.0, 0.0]])]).unwrap();
        assert_eq!(two[0].mean, vec![1.0, 2.0]);
        assert!(fit_classes(&[("c".into(), vec![vec![1.0]])]).is_err());
    }

    #[test]
    fn covariance_matches_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let hs: Vec<Vec<f64>> = (0..50).map(|_| (0..5).map(|_| rng.gen_range(0.0..10.0)).collect()).collect();
        let c = &fit_classes(&[("x".into(), hs.clone())]).unwrap()[0];
        let x = DMatrix::from_fn(50, 5, |i, j| hs[i][j]);
        let mean = x.row_mean();
        let centered = DMatrix::from_fn(50, 5, |i, j| x[(i, j)] - mean[j]);
        let cov = centered.tr_mul(&centered) / 49.0;
        for a in 0..5 {
            assert!((c.mean[a] - mean[a]).abs() < 1e-10);
            for b in 0..5 {
                assert!((c.covariance[a][b] - cov[(a, b)]).abs() < 1e-10);
                assert_eq!(c.covariance[a][b], c.covariance[b][a]);
            }
        }
    }

    #[test]
    fn classification_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut draw = |mu: f64| (0..20).map(|_| (0..3).map(|_| mu + rng.gen::<f64>()).collect()).collect::<Vec<Vec<f64>>>();
        let groups = vec![("lo".to_string(), draw(0.0)), ("hi".to_string(), draw(5.0))];
        let classes = fit_classes(&groups).unwrap();
        assert_eq!(classify(&classes[1].mean, &classes).unwrap(), 1);
        assert_eq!(classify(&[100.0; 3], &classes[..1]).unwrap(), 0);
        assert!(classify(&[1.0; 2], &classes).is_err());
        let rev: Vec<ClassModel> = classes.iter().rev().cloned().collect();
        let h = [0.4, 0.6, 0.2];
        assert_eq!(classes[classify(&h, &classes).unwrap()].label, rev[classify(&h, &rev).unwrap()].label);
    }

    #[test]
    fn mahalanobis_invariant_under_rebinning() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let hs: Vec<Vec<f64>> = (0..40).map(|_| (0..4).map(|_| rng.gen_range(0.0..3.0)).collect()).collect();
        let a = DMatrix::from_fn(4, 4, |i, j| if i == j { 2.0 } else { rng.gen_range(-0.5..0.5) });
        let mapped: Vec<Vec<f64>> = hs.iter().map(|h| (&a * DVector::from_column_slice(h)).as_slice().to_vec()).collect();
        let c1 = &fit_classes(&[("a".into(), hs)]).unwrap()[0];
        let c2 = &fit_classes(&[("a".into(), mapped)]).unwrap()[0];
        let h = [1.0, 0.5, 2.0, 1.5];
        let ah = (&a * DVector::from_column_slice(&h)).as_slice().to_vec();
        let (d1, d2) = (c1.mahalanobis(&h).unwrap(), c2.mahalanobis(&ah).unwrap());
        assert!((d1 - d2).abs() < 1e-8 * d1.max(1.0), "{d1} vs {d2}");
    }

    #[test]
    fn subfilter_windows() {
        assert!(extract_subfilters(&standard_bank("haar").unwrap()).is_err());
        let db5 = standard_bank("db5").unwrap();
        let ks = extract_subfilters(&db5).unwrap();
        let (h, g) = (db5.lowpass(), db5.highpass());
        for (k, (rows, cols)) in ks.iter().zip([(h, h), (h, g), (g, h), (g, g)]) {
            let mass: f64 = k.iter().flatten().map(|v| v * v).sum();
            let mut max_mass: f64 = 0.0;
            for i in 0..8 {
                for j in 0..8 {
                    let m: f64 = (0..3).flat_map(|a| (0..3).map(move |b| (rows[i + a] * cols[j + b]).powi(2))).sum();
                    max_mass = max_mass.max(m);
                }
            }
            assert!((mass - max_mass).abs() < 1e-15);
        }
        // LL is the outer product of one 3-tap window of h with itself
        let (i0, _) = best_window(h, h);
        for a in 0..3 {
            for b in 0..3 {
                assert_eq!(ks[0][a][b], h[i0 + a] * h[i0 + b]);
            }
        }
    }

    #[test]
    fn class_model_serde_roundtrip() {
        let c = fit_classes(&[("a".into(), vec![vec![1.0, 2.0], vec![2.0, 1.0]])]).unwrap().remove(0);
        let text = serde_json::to_string(&c).unwrap();
        let back: ClassModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back.mahalanobis(&[0.0, 0.0]).unwrap(), c.mahalanobis(&[0.0, 0.0]).unwrap());
    }
}
