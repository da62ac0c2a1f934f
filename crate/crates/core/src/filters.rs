//! Orthogonal two-channel filter pairs.
//!
//! Only the lowpass taps `h` are free; the highpass `g` always follows the
//! quadrature-mirror relation `g[n] = (-1)^n h[N-1-n]`. Taps are stored in
//! natural order `n = 0..N-1`, which is the order the transform indexes against.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{AwdError, Result};

/// Noise level used for the "db5 + noise" initialization.
pub const DEFAULT_PERTURB_SIGMA: f64 = 0.05;

const HAAR: [f64; 2] = [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2];

const DB5: [f64; 10] = [
    0.16010239797419293,
    0.6038292697971896,
    0.7243085284377729,
    0.13842814590132074,
    -0.24229488706638203,
    -0.032244869584638375,
    0.07757149384004572,
    -0.006241490212798274,
    -0.012580751999081999,
    0.0033357252854737712,
];

const SYM5: [f64; 10] = [
    0.019538882735286728,
    -0.021101834024758855,
    -0.17532808990845047,
    0.01660210576452232,
    0.6339789634582119,
    0.7234076904024206,
    0.1993975339773936,
    -0.039134249302383094,
    0.029519490925774643,
    0.027333068345077982,
];

const COIF2: [f64; 12] = [
    0.01638733646320364,
    -0.04146493678687178,
    -0.0673725547237256,
    0.3861100668227629,
    0.8127236354494135,
    0.4170051844232391,
    -0.07648859907828076,
    -0.05943441864643109,
    0.02368017194684777,
    0.005611434819368834,
    -0.0018232088709110323,
    -0.000720549445520347,
];

/// Names accepted by [`standard_bank`].
pub const STANDARD_BANKS: [&str; 4] = ["haar", "db5", "sym5", "coif2"];

/// A lowpass/highpass analysis pair. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FilterFile", into = "FilterFile")]
pub struct FilterPair {
    lowpass: Vec<f64>,
    highpass: Vec<f64>,
    name: Option<String>,
}

impl FilterPair {
    /// Builds a pair from lowpass taps, deriving the highpass.
    pub fn from_lowpass(lowpass: Vec<f64>, name: Option<String>) -> Result<Self> {
        if lowpass.len() < 2 || !lowpass.len().is_multiple_of(2) {
            return Err(AwdError::InvalidFilter(format!(
                "support must be even and at least 2, got {}",
                lowpass.len()
            )));
        }
        if lowpass.iter().any(|v| !v.is_finite()) {
            return Err(AwdError::InvalidFilter("non-finite tap".into()));
        }
        let highpass = derive_highpass(&lowpass)?;
        Ok(Self { lowpass, highpass, name })
    }

    pub fn lowpass(&self) -> &[f64] {
        &self.lowpass
    }

    pub fn highpass(&self) -> &[f64] {
        &self.highpass
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    /// Filter support `N`.
    pub fn len(&self) -> usize {
        self.lowpass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lowpass.is_empty()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// Loads a filter file; the highpass is re-derived, never read.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// On-disk representation (`*.filt.json`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterFile {
    pub name: String,
    pub lowpass: Vec<f64>,
}

impl TryFrom<FilterFile> for FilterPair {
    type Error = AwdError;

    fn try_from(file: FilterFile) -> Result<Self> {
        let name = if file.name.is_empty() { None } else { Some(file.name) };
        Self::from_lowpass(file.lowpass, name)
    }
}

impl From<FilterPair> for FilterFile {
    fn from(pair: FilterPair) -> Self {
        FilterFile { name: pair.name.unwrap_or_default(), lowpass: pair.lowpass }
    }
}

/// Quadrature-mirror highpass: `g[n] = (-1)^n h[N-1-n]`.
pub fn derive_highpass(lowpass: &[f64]) -> Result<Vec<f64>> {
    let n = lowpass.len();
    if n < 2 {
        return Err(AwdError::InvalidFilter(format!("support {n} is shorter than 2")));
    }
    Ok((0..n)
        .map(|i| {
            let v = lowpass[n - 1 - i];
            if i % 2 == 0 {
                v
            } else {
                -v
            }
        })
        .collect())
}

/// Pulls a gradient with respect to the highpass back onto the lowpass taps,
/// i.e. the adjoint of [`derive_highpass`].
pub(crate) fn highpass_grad_to_lowpass(grad_highpass: &[f64], grad_lowpass: &mut [f64]) {
    let n = grad_highpass.len();
    for (i, &gg) in grad_highpass.iter().enumerate() {
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        grad_lowpass[n - 1 - i] += sign * gg;
    }
}

pub fn standard_bank(name: &str) -> Result<FilterPair> {
    let taps: &[f64] = match name.to_ascii_lowercase().as_str() {
        "haar" | "db1" => &HAAR,
        "db5" => &DB5,
        "sym5" => &SYM5,
        "coif2" => &COIF2,
        _ => return Err(AwdError::UnknownBank(name.to_string())),
    };
    FilterPair::from_lowpass(taps.to_vec(), Some(name.to_ascii_lowercase()))
}

/// Adds i.i.d. `N(0, sigma^2)` noise to every lowpass tap and re-derives the highpass.
pub fn perturb(pair: &FilterPair, sigma: f64, seed: u64) -> Result<FilterPair> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(AwdError::InvalidArgument(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(pair.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    let lowpass = pair.lowpass.iter().map(|&v| v + normal.sample(&mut rng)).collect();
    let name = pair.name.as_ref().map(|n| format!("{n}+noise"));
    FilterPair::from_lowpass(lowpass, name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    #[test]
    fn haar_highpass() {
        let g = derive_highpass(&[FRAC_1_SQRT_2, FRAC_1_SQRT_2]).unwrap();
        assert_eq!(g, vec![FRAC_1_SQRT_2, -FRAC_1_SQRT_2]);
    }

    #[test]
    fn zero_lowpass_gives_zero_highpass() {
        let g = derive_highpass(&[0.0; 4]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn db5_highpass_is_zero_mean() {
        let pair = standard_bank("db5").unwrap();
        let s: f64 = pair.highpass().iter().sum();
        assert!(s.abs() < 1e-12, "sum g = {s}");
    }

    #[test]
    fn short_filter_rejected() {
        assert!(matches!(derive_highpass(&[1.0]), Err(AwdError::InvalidFilter(_))));
        assert!(FilterPair::from_lowpass(vec![1.0, 2.0, 3.0], None).is_err());
    }

    #[test]
    fn bank_lookup() {
        assert_eq!(standard_bank("haar").unwrap().lowpass(), &[FRAC_1_SQRT_2, FRAC_1_SQRT_2]);
        assert_eq!(standard_bank("coif2").unwrap().len(), 12);
        assert!(matches!(standard_bank("db7"), Err(AwdError::UnknownBank(_))));
    }

    #[test]
    fn qmf_cross_orthogonality() {
        for name in STANDARD_BANKS {
            let pair = standard_bank(name).unwrap();
            let (h, g) = (pair.lowpass(), pair.highpass());
            let n = h.len() as isize;
            for k in -(n / 2)..=(n / 2) {
                let s: f64 = (0..n)
                    .filter(|&i| (0..n).contains(&(i - 2 * k)))
                    .map(|i| g[i as usize] * h[(i - 2 * k) as usize])
                    .sum();
                assert!(s.abs() < 1e-10, "{name} shift {k}: {s}");
            }
        }
    }

    #[test]
    fn highpass_twice_preserves_magnitudes() {
        let h = standard_bank("sym5").unwrap().lowpass().to_vec();
        let gg = derive_highpass(&derive_highpass(&h).unwrap()).unwrap();
        let mut a: Vec<f64> = h.iter().map(|v| v.abs()).collect();
        let mut b: Vec<f64> = gg.iter().map(|v| v.abs()).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
    }

    #[test]
    fn perturb_behaviour() {
        let haar = standard_bank("haar").unwrap();
        assert_eq!(perturb(&haar, 0.0, 1).unwrap(), haar);
        let db5 = standard_bank("db5").unwrap();
        let a = perturb(&db5, 0.05, 7).unwrap();
        let b = perturb(&db5, 0.05, 7).unwrap();
        assert_eq!(a.lowpass(), b.lowpass());
        assert_ne!(a.lowpass(), db5.lowpass());
        assert_eq!(a.highpass(), derive_highpass(a.lowpass()).unwrap().as_slice());
        assert!(matches!(perturb(&db5, -0.1, 7), Err(AwdError::InvalidArgument(_))));
    }

    #[test]
    fn file_roundtrip() {
        let dir = std::env::temp_dir().join(format!("awd-filt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("db5.filt.json");
        let pair = standard_bank("db5").unwrap();
        pair.save(&path).unwrap();
        assert_eq!(FilterPair::load(&path).unwrap(), pair);
        std::fs::remove_dir_all(dir).ok();
    }
}
