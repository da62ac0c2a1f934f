use std::path::Path;

use anyhow::{Context, Result};
use awd_core::distill::AwdConfig;
use awd_core::nnet::TrainConfig;
use awd_core::peakcount::MapClassSpec;
use awd_core::synth::SynthSpec;
use serde::{Deserialize, Serialize};

/// Default configuration shipped with the binary.
pub const BUNDLED: &str = include_str!("../default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub teacher: TeacherSection,
    #[serde(default)]
    pub distill: DistillSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub peakcount: PeakcountSection,
    #[serde(default)]
    pub bench: BenchSection,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("config {} does not match the schema", path.display()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub n_train: usize,
    pub n_test: usize,
    pub dim: usize,
    pub groundtruth: String,
    pub levels: usize,
    pub beta_value: f64,
    pub n_active: usize,
    pub active_scale: usize,
    pub noise_sigma: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        let s = SynthSpec::desk();
        Self {
            n_train: s.n_train,
            n_test: s.n_test,
            dim: s.dim,
            groundtruth: s.groundtruth,
            levels: s.levels,
            beta_value: s.beta_value,
            n_active: s.n_active,
            active_scale: s.active_scale,
            noise_sigma: s.noise_sigma,
        }
    }
}

impl DataSection {
    pub fn spec(&self, seed: u64) -> SynthSpec {
        SynthSpec {
            n_train: self.n_train,
            n_test: self.n_test,
            dim: self.dim,
            groundtruth: self.groundtruth.clone(),
            levels: self.levels,
            beta_value: self.beta_value,
            n_active: self.n_active,
            active_scale: self.active_scale,
            noise_sigma: self.noise_sigma,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherSection {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TeacherSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self { hidden: vec![32, 32], learning_rate: t.learning_rate, epochs: t.epochs, batch_size: t.batch_size }
    }
}

impl TeacherSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig { learning_rate: self.learning_rate, epochs: self.epochs, batch_size: self.batch_size, seed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionKind {
    GroundtruthDistance,
    CvScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillSection {
    pub lambda_grid: Vec<f64>,
    pub gamma_grid: Vec<f64>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Defaults to the data section's levels.
    pub levels: Option<usize>,
    pub init: String,
    pub init_noise: f64,
    pub selection: SelectionKind,
    /// Largest coefficients kept per scale for the cross-validated linear head.
    pub cv_per_scale: usize,
    pub cv_ridge_grid: Vec<f64>,
    pub cv_folds: usize,
}

impl Default for DistillSection {
    fn default() -> Self {
        let a = AwdConfig::default();
        Self {
            lambda_grid: vec![a.lambda],
            gamma_grid: vec![a.gamma],
            learning_rate: a.learning_rate,
            epochs: a.epochs,
            batch_size: a.batch_size,
            levels: None,
            init: a.init,
            init_noise: 0.05,
            selection: SelectionKind::GroundtruthDistance,
            cv_per_scale: 3,
            cv_ridge_grid: vec![1e-4, 1e-2, 1.0, 100.0],
            cv_folds: 5,
        }
    }
}

impl DistillSection {
    pub fn awd_config(&self, data_levels: usize, seed: u64) -> AwdConfig {
        AwdConfig {
            lambda: self.lambda_grid.first().copied().unwrap_or_default(),
            gamma: self.gamma_grid.first().copied().unwrap_or_default(),
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            levels: self.levels.unwrap_or(data_levels),
            init: self.init.clone(),
            init_noise: self.init_noise,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Filter file to evaluate; defaults to the selected sweep cell.
    pub learned: Option<String>,
    /// Filter file compared against; defaults to the data groundtruth.
    pub reference: Option<String>,
    /// Compute compression rates and attribution dumps with the teacher and test data.
    pub use_teacher: bool,
    pub cascade_iterations: usize,
    pub compression_threshold: f64,
    pub attribution_samples: usize,
    pub activation_levels: usize,
    pub activation_top_k: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            learned: None,
            reference: None,
            use_teacher: true,
            cascade_iterations: awd_core::evalkit::DEFAULT_CASCADE_ITERATIONS,
            compression_threshold: 1e-3,
            attribution_samples: 4,
            activation_levels: 2,
            activation_top_k: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapClass {
    pub label: String,
    pub amplitude_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PeakcountSection {
    pub size: usize,
    pub n_bumps: usize,
    pub bump_sigma: f64,
    pub amplitude_sd: f64,
    pub noise_sd: f64,
    pub classes: Vec<MapClass>,
    pub train_per_class: usize,
    pub validation_per_class: usize,
    pub test_per_class: usize,
    pub subfilter_bank: String,
}

impl Default for PeakcountSection {
    fn default() -> Self {
        let m = MapClassSpec::with_amplitude(0.0);
        Self {
            size: m.size,
            n_bumps: m.n_bumps,
            bump_sigma: m.bump_sigma,
            amplitude_sd: m.amplitude_sd,
            noise_sd: m.noise_sd,
            classes: vec![
                MapClass { label: "low".into(), amplitude_mean: 0.05 },
                MapClass { label: "high".into(), amplitude_mean: 0.075 },
            ],
            train_per_class: 100,
            validation_per_class: 50,
            test_per_class: 100,
            subfilter_bank: "db5".into(),
        }
    }
}

impl PeakcountSection {
    pub fn class_specs(&self) -> Vec<(String, MapClassSpec)> {
        self.classes
            .iter()
            .map(|c| {
                let spec = MapClassSpec {
                    size: self.size,
                    n_bumps: self.n_bumps,
                    bump_sigma: self.bump_sigma,
                    amplitude_mean: c.amplitude_mean,
                    amplitude_sd: self.amplitude_sd,
                    noise_sd: self.noise_sd,
                };
                (c.label.clone(), spec)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub repeats: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self { repeats: 200 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_config_parses() {
        let c = Config::parse(BUNDLED).unwrap();
        assert_eq!(c.distill.lambda_grid.len(), 4);
        assert_eq!(c.distill.gamma_grid.len(), 4);
    }

    #[test]
    fn seed_is_required() {
        assert!(Config::parse("[data]\nn_train = 10\n").is_err());
        assert_eq!(Config::parse("seed = 3").unwrap().seed, 3);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = Config::parse("seed = 1\n[distill]\nlamda_grid = [0.1]\n").unwrap_err();
        assert!(format!("{err:#}").contains("lamda_grid"), "{err:#}");
        let err = Config::parse("seed = 1\nsed = 2\n").unwrap_err();
        assert!(format!("{err:#}").contains("sed"), "{err:#}");
    }
}
