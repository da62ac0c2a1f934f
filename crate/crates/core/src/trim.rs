//! Attributions in the wavelet domain by reparameterizing the teacher.
//!
//! The teacher is evaluated as `f'(w) = f(idwt(w) + r)`. Saliency is the gradient
//! of `f'` with respect to every coefficient of `w = dwt(x)`; [`saliency`] and the
//! interpretation loss take `r = 0`, so the teacher sees the reconstruction of `x`.

use std::ops::Deref;

use crate::error::{shape_err, Result};
use crate::filters::FilterPair;
use crate::nnet::TeacherModel;
use crate::transform::{dwt1d, dwt_grad, idwt1d, idwt_grad, TransformConfig, WaveletCoeffs};

/// Per-coefficient attribution scores laid out like the coefficients they explain.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap(WaveletCoeffs);

impl AttributionMap {
    pub fn new(scores: WaveletCoeffs) -> Self {
        Self(scores)
    }

    pub fn into_inner(self) -> WaveletCoeffs {
        self.0
    }
}

impl Deref for AttributionMap {
    type Target = WaveletCoeffs;

    fn deref(&self) -> &WaveletCoeffs {
        &self.0
    }
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn check_model(model: &TeacherModel, len: usize) -> Result<()> {
    if model.input_dim() != len {
        return shape_err(format!(
            "teacher expects {} inputs, reconstruction has {len}",
            model.input_dim()
        ));
    }
    Ok(())
}

/// `f(idwt(coeffs) + residual)`.
pub fn reparam_forward(
    model: &TeacherModel,
    coeffs: &WaveletCoeffs,
    filters: &FilterPair,
    residual: &[f64],
) -> Result<f64> {
    let recon = idwt1d(coeffs, filters)?;
    if residual.len() != recon.len() {
        return shape_err("residual length differs from the reconstruction");
    }
    check_model(model, recon.len())?;
    model.forward(&add(&recon, residual))
}

/// Saliency of every coefficient with an explicit residual.
pub fn saliency_with_residual(
    model: &TeacherModel,
    coeffs: &WaveletCoeffs,
    filters: &FilterPair,
    residual: &[f64],
) -> Result<AttributionMap> {
    let recon = idwt1d(coeffs, filters)?;
    if residual.len() != recon.len() {
        return shape_err("residual length differs from the reconstruction");
    }
    check_model(model, recon.len())?;
    let grad_input = model.input_grad(&add(&recon, residual))?;
    // chain rule through the synthesis operator
    let back = idwt_grad(coeffs, filters, &grad_input)?;
    Ok(AttributionMap(back.grad_coeffs))
}

/// Saliency map for coefficients of an exactly reconstructed signal (zero residual).
pub fn saliency(model: &TeacherModel, coeffs: &WaveletCoeffs, filters: &FilterPair) -> Result<AttributionMap> {
    let zero = vec![0.0; coeffs.original_length];
    saliency_with_residual(model, coeffs, filters, &zero)
}

/// Value and filter gradient of `||saliency||_1` at one signal, split so a caller
/// can merge the transform back-propagations with other loss terms.
pub(crate) struct InterpPieces {
    pub loss: f64,
    /// Contribution from the synthesis operator acting on the sign pattern.
    pub grad_direct: Vec<f64>,
    /// Hessian-vector product; its filter derivative still has to be pulled
    /// back through `u = idwt(dwt(x)) + r`.
    pub hvp: Vec<f64>,
}

/// `coeffs = dwt(x)` and `u = idwt(coeffs) + r` are supplied by the caller.
pub(crate) fn interp_pieces(
    model: &TeacherModel,
    filters: &FilterPair,
    coeffs: &WaveletCoeffs,
    u: &[f64],
) -> Result<InterpPieces> {
    let v = model.input_grad(u)?;
    let sal = idwt_grad(coeffs, filters, &v)?.grad_coeffs;
    let loss = sal.l1_norm();
    let sign = sal.map(|s| if s > 0.0 { 1.0 } else if s < 0.0 { -1.0 } else { 0.0 });
    // d <idwt_h(sign), v> / dh with v held fixed
    let grad_direct = idwt_grad(&sign, filters, &v)?.grad_lowpass;
    let z = idwt1d(&sign, filters)?;
    let hvp = model.grad_of_grad(u, &z)?;
    Ok(InterpPieces { loss, grad_direct, hvp })
}

/// `||saliency||_1` and its gradient with respect to the lowpass taps, holding
/// `residual` fixed.
pub fn interpretation_loss_grad(
    model: &TeacherModel,
    x: &[f64],
    filters: &FilterPair,
    config: TransformConfig,
    residual: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let coeffs = dwt1d(x, filters, config)?;
    let recon = idwt1d(&coeffs, filters)?;
    if residual.len() != x.len() {
        return shape_err("residual length differs from the signal");
    }
    check_model(model, x.len())?;
    let u = add(&recon, residual);
    let pieces = interp_pieces(model, filters, &coeffs, &u)?;
    let via_synthesis = idwt_grad(&coeffs, filters, &pieces.hvp)?.grad_lowpass;
    let up = dwt1d(&pieces.hvp, filters, config)?;
    let via_analysis = dwt_grad(x, filters, config, &up)?.grad_lowpass;
    let grad = pieces
        .grad_direct
        .iter()
        .zip(&via_synthesis)
        .zip(&via_analysis)
        .map(|((a, b), c)| a + b + c)
        .collect();
    Ok((pieces.loss, grad))
}

/// Residual `x - idwt(dwt(x))`; zero up to rounding for orthogonal filters.
pub fn residual(x: &[f64], filters: &FilterPair, config: TransformConfig) -> Result<Vec<f64>> {
    let recon = idwt1d(&dwt1d(x, filters, config)?, filters)?;
    Ok(x.iter().zip(&recon).map(|(a, b)| a - b).collect())
}

/// Gradient of `sum |saliency(dwt(x))|` with respect to the lowpass taps (zero residual).
pub fn saliency_grad_filters(
    model: &TeacherModel,
    x: &[f64],
    filters: &FilterPair,
    config: TransformConfig,
) -> Result<Vec<f64>> {
    let zero = vec![0.0; x.len()];
    interpretation_loss_grad(model, x, filters, config, &zero).map(|(_, g)| g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::standard_bank;
    use crate::nnet::Activation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn exact_reconstruction_reduces_to_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let db5 = standard_bank("db5").unwrap();
        let cfg = TransformConfig::new(2).unwrap();
        let model = TeacherModel::mlp(&[16, 8, 1], Activation::Tanh, 1).unwrap();
        let x = randn(&mut rng, 16);
        let c = dwt1d(&x, &db5, cfg).unwrap();
        let want = model.forward(&x).unwrap();
        assert!((reparam_forward(&model, &c, &db5, &[0.0; 16]).unwrap() - want).abs() < 1e-10);
        assert!((reparam_forward(&model, &c.zeros_like(), &db5, &x).unwrap() - want).abs() < 1e-12);
        let x1 = randn(&mut rng, 16);
        let rest: Vec<f64> = x.iter().zip(&x1).map(|(a, b)| a - b).collect();
        let c1 = dwt1d(&x1, &db5, cfg).unwrap();
        assert!((reparam_forward(&model, &c1, &db5, &rest).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn linear_teacher_saliency_is_transformed_weights() {
        let sym5 = standard_bank("sym5").unwrap();
        let cfg = TransformConfig::new(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = randn(&mut rng, 16);
        let model = TeacherModel::linear(&w, 0.5);
        let want = dwt1d(&w, &sym5, cfg).unwrap();
        for _ in 0..3 {
            let x = randn(&mut rng, 16);
            let c = dwt1d(&x, &sym5, cfg).unwrap();
            let s = saliency(&model, &c, &sym5).unwrap();
            for (a, b) in s.iter().zip(want.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
            // completeness: <saliency, coeffs> = f(x) - f(0)
            let lhs = s.dot(&c);
            let rhs = model.forward(&x).unwrap() - model.forward(&[0.0; 16]).unwrap();
            assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_model_has_zero_saliency() {
        let db5 = standard_bank("db5").unwrap();
        let model = TeacherModel::linear(&[0.0; 8], 0.0);
        let c = dwt1d(&[1.0; 8], &db5, TransformConfig::new(1).unwrap()).unwrap();
        assert!(saliency(&model, &c, &db5).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn residual_vanishes_for_orthogonal_filters() {
        let coif2 = standard_bank("coif2").unwrap();
        let x: Vec<f64> = (0..32).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let r = residual(&x, &coif2, TransformConfig::new(3).unwrap()).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn filter_gradient_is_homogeneous_in_teacher_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let db5 = standard_bank("db5").unwrap();
        let cfg = TransformConfig::new(2).unwrap();
        let model = TeacherModel::mlp(&[16, 6, 1], Activation::Tanh, 2).unwrap();
        let x = randn(&mut rng, 16);
        let g1 = saliency_grad_filters(&model, &x, &db5, cfg).unwrap();
        let g3 = saliency_grad_filters(&model.scaled_output(3.0), &x, &db5, cfg).unwrap();
        for (a, b) in g1.iter().zip(&g3) {
            assert!((3.0 * a - b).abs() < 1e-10 * (1.0 + b.abs()));
        }
    }

    fn loss_at(model: &TeacherModel, x: &[f64], h: &[f64], cfg: TransformConfig, r: &[f64]) -> f64 {
        let f = FilterPair::from_lowpass(h.to_vec(), None).unwrap();
        let c = dwt1d(x, &f, cfg).unwrap();
        saliency_with_residual(model, &c, &f, r).unwrap().l1_norm()
    }

    #[test]
    fn interpretation_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cfg = TransformConfig::new(2).unwrap();
        let model = TeacherModel::mlp(&[16, 10, 1], Activation::Tanh, 5).unwrap();
        for base in ["haar", "db5"] {
            let f = crate::filters::perturb(&standard_bank(base).unwrap(), 0.1, 9).unwrap();
            let x = randn(&mut rng, 16);
            let r = randn(&mut rng, 16);
            let (loss, grad) = interpretation_loss_grad(&model, &x, &f, cfg, &r).unwrap();
            assert!((loss - loss_at(&model, &x, f.lowpass(), cfg, &r)).abs() < 1e-12);
            let eps = 1e-6;
            for m in 0..f.len() {
                let mut hp = f.lowpass().to_vec();
                let mut hm = hp.clone();
                hp[m] += eps;
                hm[m] -= eps;
                let fd = (loss_at(&model, &x, &hp, cfg, &r) - loss_at(&model, &x, &hm, cfg, &r)) / (2.0 * eps);
                assert!((fd - grad[m]).abs() < 1e-5 * (1.0 + fd.abs()), "{base} tap {m}: fd {fd} vs {}", grad[m]);
            }
        }
    }

    #[test]
    fn model_size_mismatch() {
        let haar = standard_bank("haar").unwrap();
        let model = TeacherModel::linear(&[1.0; 4], 0.0);
        let c = WaveletCoeffs::zeros(8, 1).unwrap();
        assert!(saliency(&model, &c, &haar).is_err());
    }
}
