//! Synthetic regression data with a known sparse wavelet representation, and the
//! groundtruth-recovery experiment built on it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::distill::{sweep_from, AwdConfig, AwdLoss};
use crate::error::{AwdError, Result};
use crate::evalkit::{cascade, wavelet_distance, DEFAULT_CASCADE_ITERATIONS};
use crate::filters::{perturb, standard_bank, FilterPair};
use crate::nnet::{r2_score, train, Activation, TeacherModel, TrainConfig};
use crate::transform::{dwt1d, TransformConfig, WaveletCoeffs};

/// Test-set R² the teacher must exceed before distillation is attempted.
pub const TEACHER_R2_GATE: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub dim: usize,
    pub groundtruth: String,
    pub levels: usize,
    pub beta_value: f64,
    pub n_active: usize,
    /// Detail level (1 = finest) holding the active coefficients.
    pub active_scale: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self::desk()
    }
}

impl SynthSpec {
    /// Reduced sizes used for tests and the default configs.
    pub fn desk() -> Self {
        Self {
            n_train: 5000,
            n_test: 1000,
            dim: 64,
            groundtruth: "db5".into(),
            levels: 3,
            beta_value: 2.0,
            n_active: 3,
            active_scale: 2,
            noise_sigma: 0.1,
            seed: 0,
        }
    }

    /// Full-size dataset.
    pub fn full() -> Self {
        Self { n_train: 50_000, n_test: 5000, ..Self::desk() }
    }

    pub fn band_len(&self) -> usize {
        self.dim >> self.active_scale
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AwdError::InvalidArgument(m));
        let cfg = TransformConfig::new(self.levels)?;
        if self.dim == 0 || !self.dim.is_multiple_of(1 << cfg.levels) {
            return bad(format!("dim {} is not divisible by 2^{}", self.dim, self.levels));
        }
        if self.active_scale == 0 || self.active_scale > self.levels {
            return bad(format!("active_scale must be in 1..={}, got {}", self.levels, self.active_scale));
        }
        if self.n_active > self.band_len() {
            return bad(format!("n_active {} exceeds band length {}", self.n_active, self.band_len()));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return bad("n_train and n_test must be >= 1".into());
        }
        if !(self.noise_sigma >= 0.0) || !self.beta_value.is_finite() {
            return bad("noise_sigma must be >= 0 and beta_value finite".into());
        }
        standard_bank(&self.groundtruth)?;
        Ok(())
    }
}

/// Everything needed to recompute the noise-free response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Groundtruth {
    pub bank: String,
    pub levels: usize,
    pub active_scale: usize,
    /// Indices within the active detail band.
    pub locations: Vec<usize>,
    pub beta_value: f64,
}

impl Groundtruth {
    pub fn filters(&self) -> Result<FilterPair> {
        standard_bank(&self.bank)
    }

    /// `beta` laid out like the coefficients of a length-`dim` signal.
    pub fn beta(&self, dim: usize) -> Result<WaveletCoeffs> {
        let mut b = WaveletCoeffs::zeros(dim, self.levels)?;
        for &loc in &self.locations {
            b.details[self.active_scale - 1][loc] = self.beta_value;
        }
        Ok(b)
    }

    /// `<dwt(x), beta>` without noise.
    pub fn clean_response(&self, x: &[f64]) -> Result<f64> {
        let c = dwt1d(x, &self.filters()?, TransformConfig::new(self.levels)?)?;
        Ok(c.dot(&self.beta(x.len())?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthData {
    pub train: Dataset,
    pub test: Dataset,
    pub groundtruth: Groundtruth,
}

/// Evenly spaced indices in a band of length `band`, rotated by `shift`.
fn active_locations(band: usize, n_active: usize, shift: usize) -> Vec<usize> {
    if n_active == 0 {
        return Vec::new();
    }
    let step = band / n_active;
    let mut locs: Vec<usize> = (0..n_active).map(|k| (k * step + shift) % band).collect();
    locs.sort_unstable();
    locs
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let shift = rng.gen_range(0..spec.band_len());
    let groundtruth = Groundtruth {
        bank: spec.groundtruth.to_ascii_lowercase(),
        levels: spec.levels,
        active_scale: spec.active_scale,
        locations: active_locations(spec.band_len(), spec.n_active, shift),
        beta_value: spec.beta_value,
    };
    let filters = groundtruth.filters()?;
    let tcfg = TransformConfig::new(spec.levels)?;
    let beta = groundtruth.beta(spec.dim)?;
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| AwdError::InvalidArgument(e.to_string()))?;

    let mut draw = |n: usize| -> Result<Dataset> {
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = (0..spec.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let clean = dwt1d(&x, &filters, tcfg)?.dot(&beta);
            ys.push(clean + noise.sample(&mut rng));
            xs.push(x);
        }
        Ok(Dataset { xs, ys })
    };
    let train = draw(spec.n_train)?;
    let test = draw(spec.n_test)?;
    Ok(SynthData { train, test, groundtruth })
}

/// Three-layer ReLU regressor with 32 hidden units per layer.
pub fn default_teacher(dim: usize, seed: u64) -> Result<TeacherModel> {
    TeacherModel::mlp(&[dim, 32, 32, 1], Activation::Relu, seed)
}

/// Trains [`default_teacher`] and enforces the R² gate on the test split.
pub fn train_teacher(data: &SynthData, config: &TrainConfig) -> Result<(TeacherModel, f64)> {
    let dim = data.train.xs[0].len();
    let init = default_teacher(dim, config.seed)?;
    let out = train(&init, &data.train.xs, &data.train.ys, config)?;
    let r2 = r2_score(&out.model.predict(&data.test.xs)?, &data.test.ys);
    if !(r2 > TEACHER_R2_GATE) {
        return Err(AwdError::Precondition(format!(
            "teacher test R² {r2:.5} does not exceed the {TEACHER_R2_GATE} gate"
        )));
    }
    Ok((out.model, r2))
}

/// Starting point for a recovery run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// The groundtruth bank plus Gaussian tap noise.
    GroundtruthNoise { sigma: f64 },
    /// A named standard bank, used as is.
    Bank { name: String },
}

impl InitKind {
    pub fn filters(&self, groundtruth: &FilterPair, seed: u64) -> Result<FilterPair> {
        match self {
            InitKind::GroundtruthNoise { sigma } => perturb(groundtruth, *sigma, seed),
            InitKind::Bank { name } => standard_bank(name),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub lambda: f64,
    pub gamma: f64,
    pub distance: f64,
    pub final_loss: AwdLoss,
    pub failed: bool,
    pub final_lowpass: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub teacher_test_r2: f64,
    pub init_lowpass: Vec<f64>,
    pub init_distance: f64,
    /// Cells in sweep visiting order.
    pub cells: Vec<CellReport>,
    /// Index into `cells` of the smallest distance.
    pub best: usize,
}

impl RecoveryReport {
    pub fn best_distance(&self) -> f64 {
        self.cells[self.best].distance
    }

    /// Rows of `(lambda, log10 gamma, distance)` sorted by lambda then gamma.
    pub fn distance_table(&self) -> Vec<(f64, f64, f64)> {
        let mut rows: Vec<(f64, f64, f64)> =
            self.cells.iter().map(|c| (c.lambda, c.gamma.log10(), c.distance)).collect();
        rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        rows
    }
}

/// Sweeps `(lambda, gamma)` from `init` using an already trained teacher and
/// scores every cell by wavelet distance to the groundtruth bank.
pub fn recovery_sweep(
    data: &SynthData,
    teacher: &TeacherModel,
    teacher_r2: f64,
    init: &FilterPair,
    lambda_grid: &[f64],
    gamma_grid: &[f64],
    base: &AwdConfig,
) -> Result<RecoveryReport> {
    let truth = data.groundtruth.filters()?;
    let iters = DEFAULT_CASCADE_ITERATIONS;
    let (_, psi_truth) = cascade(&truth, iters)?;
    let distance = |f: &FilterPair| -> Result<f64> {
        let (_, psi) = cascade(f, iters)?;
        wavelet_distance(&psi, &psi_truth)
    };
    let cfg = AwdConfig { levels: data.groundtruth.levels, ..base.clone() };
    cfg.validate()?;
    let records = sweep_from(&data.train.xs, teacher, lambda_grid, gamma_grid, &cfg, init.clone())?;

    let mut cells = Vec::with_capacity(records.len());
    for rec in &records {
        cells.push(CellReport {
            lambda: rec.config.lambda,
            gamma: rec.config.gamma,
            distance: distance(&rec.final_filters)?,
            final_loss: rec.final_loss,
            failed: rec.failed(),
            final_lowpass: rec.final_filters.lowpass().to_vec(),
        });
    }
    let best = (0..cells.len())
        .filter(|&i| !cells[i].failed)
        .min_by(|&a, &b| {
            cells[a]
                .distance
                .total_cmp(&cells[b].distance)
                .then((cells[a].lambda, cells[a].gamma).partial_cmp(&(cells[b].lambda, cells[b].gamma)).unwrap())
        })
        .ok_or_else(|| AwdError::InvalidArgument("every sweep cell diverged".into()))?;
    Ok(RecoveryReport {
        teacher_test_r2: teacher_r2,
        init_lowpass: init.lowpass().to_vec(),
        init_distance: distance(init)?,
        cells,
        best,
    })
}

/// Generates data, trains and gates the teacher, then runs [`recovery_sweep`].
pub fn recovery_experiment(
    spec: &SynthSpec,
    init: &InitKind,
    lambda_grid: &[f64],
    gamma_grid: &[f64],
    base: &AwdConfig,
    teacher_config: &TrainConfig,
) -> Result<RecoveryReport> {
    let data = generate(spec)?;
    let (teacher, r2) = train_teacher(&data, teacher_config)?;
    let start = init.filters(&data.groundtruth.filters()?, base.seed)?;
    recovery_sweep(&data, &teacher, r2, &start, lambda_grid, gamma_grid, base)
}

/// Grid of `n` points evenly spaced in log10 between `lo` and `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n).map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalkit::linear_head_fit;

    fn small(seed: u64) -> SynthSpec {
        SynthSpec { n_train: 400, n_test: 100, seed, ..SynthSpec::desk() }
    }

    #[test]
    fn validation() {
        assert!(SynthSpec::desk().validate().is_ok());
        assert!(SynthSpec { dim: 60, ..SynthSpec::desk() }.validate().is_err());
        assert!(SynthSpec { n_active: 17, ..SynthSpec::desk() }.validate().is_err());
        assert!(SynthSpec { active_scale: 4, ..SynthSpec::desk() }.validate().is_err());
        assert!(SynthSpec { groundtruth: "nope".into(), ..SynthSpec::desk() }.validate().is_err());
    }

    #[test]
    fn locations_evenly_spaced_and_rotated() {
        assert_eq!(active_locations(16, 3, 0), vec![0, 5, 10]);
        assert_eq!(active_locations(16, 3, 7), vec![1, 7, 12]);
        let d = generate(&small(4)).unwrap();
        assert_eq!(d.groundtruth.locations.len(), 3);
        assert!(d.groundtruth.locations.iter().all(|&l| l < 16));
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(generate(&small(1)).unwrap(), generate(&small(1)).unwrap());
        assert_ne!(generate(&small(1)).unwrap().train.xs, generate(&small(2)).unwrap().train.xs);
    }

    #[test]
    fn noiseless_response_is_recoverable() {
        let spec = SynthSpec { noise_sigma: 0.0, ..small(3) };
        let d = generate(&spec).unwrap();
        for (x, y) in d.train.xs.iter().zip(&d.train.ys) {
            assert!((d.groundtruth.clean_response(x).unwrap() - y).abs() < 1e-12);
        }
        let filters = d.groundtruth.filters().unwrap();
        let cfg = TransformConfig::new(3).unwrap();
        let feats: Vec<Vec<f64>> = d.train.xs.iter().map(|x| dwt1d(x, &filters, cfg).unwrap().to_flat()).collect();
        let head = linear_head_fit(&feats, &d.train.ys, 0.0).unwrap();
        let beta = d.groundtruth.beta(64).unwrap().to_flat();
        for (w, b) in head.weights.iter().zip(&beta) {
            assert!((w - b).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_beta_is_pure_noise() {
        let d = generate(&SynthSpec { beta_value: 0.0, n_train: 5000, ..small(5) }).unwrap();
        let n = d.train.ys.len() as f64;
        let mean = d.train.ys.iter().sum::<f64>() / n;
        let var = d.train.ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - 0.01).abs() < 0.002, "{var}");
    }

    #[test]
    fn bayes_r2_matches_population_value() {
        let d = generate(&SynthSpec { n_train: 5000, ..small(6) }).unwrap();
        let pred: Vec<f64> = d.train.xs.iter().map(|x| d.groundtruth.clean_response(x).unwrap()).collect();
        let r2 = r2_score(&pred, &d.train.ys);
        assert!((r2 - 12.0 / 12.01).abs() < 0.002, "{r2}");
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(0.001, 0.1, 3);
        assert!((g[0] - 0.001).abs() < 1e-15 && (g[1] - 0.01).abs() < 1e-15 && (g[2] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn gate_failure_is_a_precondition_error() {
        let d = generate(&small(7)).unwrap();
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        assert!(matches!(train_teacher(&d, &cfg), Err(AwdError::Precondition(_))));
    }
}
