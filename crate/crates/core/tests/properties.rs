use awd_core::constraints::wavelet_penalties;
use awd_core::evalkit::{compression_rate, max_coeff_features, shift_flip_distance, MaxMode};
use awd_core::filters::{perturb, standard_bank, FilterPair};
use awd_core::peakcount::{fit_classes, histogram};
use awd_core::transform::{dwt1d, dwt2d, idwt1d, idwt2d, TransformConfig, WaveletCoeffs};
use awd_core::trim::AttributionMap;
use nalgebra::DMatrix;
use proptest::prelude::*;

const BANKS: [&str; 4] = ["haar", "db5", "sym5", "coif2"];

fn bank() -> impl Strategy<Value = FilterPair> {
    prop::sample::select(BANKS.to_vec()).prop_map(|n| standard_bank(n).unwrap())
}

/// A dyadic signal and a level count it supports.
fn signal() -> impl Strategy<Value = (Vec<f64>, usize)> {
    (2u32..=7).prop_flat_map(|p| (prop::collection::vec(-10.0f64..10.0, 1usize << p), 1..=p.min(4) as usize))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reconstruction_and_energy((x, levels) in signal(), f in bank()) {
        let c = dwt1d(&x, &f, TransformConfig::new(levels).unwrap()).unwrap();
        let back = idwt1d(&c, &f).unwrap();
        let scale = 1.0 + dot(&x, &x);
        for (a, b) in back.iter().zip(&x) {
            prop_assert!((a - b).abs() < 1e-10 * scale.sqrt());
        }
        let e = c.to_flat();
        prop_assert!((dot(&e, &e) - dot(&x, &x)).abs() < 1e-10 * scale);
        prop_assert_eq!(e.len(), x.len());
    }

    #[test]
    fn analysis_is_linear((x, levels) in signal(), a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
        let f = perturb(&standard_bank("db5").unwrap(), 0.1, seed).unwrap();
        let tc = TransformConfig::new(levels).unwrap();
        let y: Vec<f64> = x.iter().rev().map(|v| v * 0.5 - 1.0).collect();
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let (cx, cy, cm) = (dwt1d(&x, &f, tc).unwrap().to_flat(), dwt1d(&y, &f, tc).unwrap().to_flat(), dwt1d(&mix, &f, tc).unwrap().to_flat());
        for i in 0..cm.len() {
            prop_assert!((cm[i] - a * cx[i] - b * cy[i]).abs() < 1e-9 * (1.0 + cm[i].abs()));
        }
    }

    #[test]
    fn synthesis_is_adjoint_for_any_filter((x, levels) in signal(), seed in 0u64..1000) {
        let f = perturb(&standard_bank("sym5").unwrap(), 0.2, seed).unwrap();
        let tc = TransformConfig::new(levels).unwrap();
        let c = dwt1d(&x, &f, tc).unwrap();
        let probe: Vec<f64> = (0..x.len()).map(|i| ((i * 7 + 3) % 11) as f64 - 5.0).collect();
        let cp = WaveletCoeffs::zeros(x.len(), levels).unwrap().with_flat(&probe).unwrap();
        let lhs = c.dot(&cp);
        let rhs = dot(&x, &idwt1d(&cp, &f).unwrap());
        prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn two_d_reconstruction(pr in 3u32..=5, pc in 3u32..=5, levels in 1usize..=3, f in bank(), seed in 0u64..1000) {
        let (r, c) = (1usize << pr, 1usize << pc);
        let x = DMatrix::from_fn(r, c, |i, j| (((i * 31 + j * 17) as u64 ^ seed) % 97) as f64 / 10.0 - 4.0);
        let co = dwt2d(&x, &f, TransformConfig::new(levels).unwrap()).unwrap();
        let back = idwt2d(&co, &f).unwrap();
        prop_assert!((&back - &x).amax() < 1e-10 * (1.0 + x.amax()));
    }

    #[test]
    fn penalties_are_nonnegative(h in prop::collection::vec(-1.0f64..1.0, 2..=12usize).prop_filter("even", |v| v.len() % 2 == 0)) {
        let f = FilterPair::from_lowpass(h, None).unwrap();
        let p = wavelet_penalties(&f);
        for v in [p.sum_h, p.sum_g, p.unit_norm, p.cmf, p.shift_orth] {
            prop_assert!(v >= 0.0);
        }
        prop_assert!((p.validity() - (p.sum_h + p.sum_g + p.unit_norm + p.cmf + p.shift_orth)).abs() < 1e-12 * (1.0 + p.validity()));
    }

    #[test]
    fn shift_flip_distance_is_a_pseudometric(
        abc in (1usize..12).prop_flat_map(|n| [prop::collection::vec(-2.0f64..2.0, n), prop::collection::vec(-2.0f64..2.0, n), prop::collection::vec(-2.0f64..2.0, n)]),
        s in 0usize..12,
    ) {
        let [a, b, c] = abc;
        prop_assert_eq!(shift_flip_distance(&a, &a), 0.0);
        let dab = shift_flip_distance(&a, &b);
        prop_assert!((dab - shift_flip_distance(&b, &a)).abs() < 1e-12);
        prop_assert!(dab <= shift_flip_distance(&a, &c) + shift_flip_distance(&c, &b) + 1e-9);
        let mut rolled = a.clone();
        rolled.rotate_left(s % a.len());
        let flipped: Vec<f64> = a.iter().rev().copied().collect();
        prop_assert!(shift_flip_distance(&a, &rolled) < 1e-12);
        prop_assert!(shift_flip_distance(&a, &flipped) < 1e-12);
    }

    #[test]
    fn compression_rate_is_monotone((x, levels) in signal(), t1 in 1e-4f64..1.0, t2 in 1e-4f64..1.0) {
        let f = standard_bank("db5").unwrap();
        let c = dwt1d(&x, &f, TransformConfig::new(levels).unwrap()).unwrap();
        let a = AttributionMap::new(c.map(|v| v.sin()));
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        let rl = compression_rate(std::slice::from_ref(&c), std::slice::from_ref(&a), lo).unwrap();
        let rh = compression_rate(&[c], &[a], hi).unwrap();
        prop_assert!(rh <= rl);
        prop_assert!((0.0..=1.0).contains(&rl));
    }

    #[test]
    fn max_features_ignore_dyadic_shifts((x, levels) in signal(), k in 0usize..4, mode in prop::sample::select(vec![MaxMode::Signed, MaxMode::Absolute])) {
        let f = standard_bank("coif2").unwrap();
        let tc = TransformConfig::new(levels).unwrap();
        let step = 1usize << levels;
        let mut shifted = x.clone();
        shifted.rotate_left((k * step) % x.len());
        let a = max_coeff_features(&dwt1d(&x, &f, tc).unwrap(), 1, mode).unwrap();
        let b = max_coeff_features(&dwt1d(&shifted, &f, tc).unwrap(), 1, mode).unwrap();
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn histogram_conserves_in_range_counts(values in prop::collection::vec(-0.1f64..0.3, 0..200)) {
        let h = histogram(&values, 0.0, 0.22, 0.01).unwrap();
        let inside = values.iter().filter(|&&v| (0.0..0.22).contains(&v)).count() as u64;
        prop_assert_eq!(h.counts.iter().sum::<u64>(), inside);
        prop_assert_eq!(h.bin_edges.len(), 23);
    }

    #[test]
    fn mahalanobis_is_nonnegative(rows in prop::collection::vec(prop::collection::vec(0.0f64..20.0, 4), 2..30), q in prop::collection::vec(0.0f64..20.0, 4)) {
        let c = fit_classes(&[("c".to_string(), rows)]).unwrap();
        prop_assert!(c[0].mahalanobis(&q).unwrap() >= 0.0);
        prop_assert!(c[0].mahalanobis(&c[0].mean).unwrap().abs() < 1e-6);
    }

    #[test]
    fn filter_files_roundtrip_exactly(seed in 0u64..10_000, f in bank()) {
        let p = perturb(&f, 0.3, seed).unwrap().with_name("probe");
        let text = serde_json::to_string(&p).unwrap();
        prop_assert!(!text.contains("highpass"));
        let back: FilterPair = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, p);
    }
}
