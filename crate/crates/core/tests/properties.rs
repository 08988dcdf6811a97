use std::f64::consts::PI;

use bitensor_core::bitensor::{bitensor_embedding, EmbeddingMap};
use bitensor_core::dynamics::{apply_db, OperatorConfig};
use bitensor_core::wavefield::{
    lagrangian_terms, mp_dispersion, read_binary, write_binary, GridSpec, LagrangianParams, WaveField,
};
use bitensor_core::MetricChart;
use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;

const CHARTS: [&str; 5] = ["sphere2:r=1.5", "schwarzschild:M=1", "desitter:l=4", "minkowski4:scale=2", "sphere2:r=1,pole=rotated"];

fn event(chart: &MetricChart, u: &[f64]) -> Vec<f64> {
    chart.sampling_box().iter().zip(u).map(|((lo, hi), t)| lo + t * (hi - lo)).collect()
}

/// Symmetrized N = 2 trig polynomial on a 4⁴ grid with modes in {-1, 0, 1}.
fn small_field(coefs: &[(f64, f64)]) -> WaveField {
    let spec = GridSpec::uniform(2, 2, 2.0 * PI, 4).unwrap();
    let modes: Vec<[f64; 4]> = (0..coefs.len())
        .map(|i| [(i % 3) as f64 - 1.0, (i / 3 % 3) as f64 - 1.0, (i / 9 % 3) as f64 - 1.0, 1.0])
        .collect();
    WaveField::from_fn(spec, |x| {
        modes
            .iter()
            .zip(coefs)
            .map(|(k, (re, im))| {
                let phase = k.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                Complex64::new(*re, *im) * Complex64::from_polar(1.0, phase)
            })
            .sum()
    })
    .unwrap()
    .symmetrize()
}

fn coefficients() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 3..8)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn metric_and_inverse_agree(c in 0..CHARTS.len(), u in prop::collection::vec(0.0..1.0f64, 4)) {
        let chart = MetricChart::parse(CHARTS[c]).unwrap();
        let x = event(&chart, &u);
        let (g, inv) = chart.metric_at(&x).unwrap();
        prop_assert!((&g - g.transpose()).amax() < 1e-14);
        let id = DMatrix::<f64>::identity(chart.dim(), chart.dim());
        prop_assert!((&g * &inv - id).amax() < 1e-10);
    }

    #[test]
    fn sibling_transition_pulls_back_the_metric(c in 0..CHARTS.len(), u in prop::collection::vec(0.0..1.0f64, 4)) {
        let chart = MetricChart::parse(CHARTS[c]).unwrap();
        let other = chart.sibling();
        let x = event(&chart, &u);
        let Ok((xp, j)) = chart.transition(&other, &x) else { return Ok(()) };
        let (g, _) = chart.metric_at(&x).unwrap();
        let (gp, _) = other.metric_at(&xp).unwrap();
        let pulled = j.transpose() * gp * &j;
        prop_assert!((pulled - &g).amax() < 1e-8 * g.amax().max(1.0));
        let (back, _) = other.transition(&chart, &xp).unwrap();
        prop_assert!(chart.coordinate_distance(&back, &x) < 1e-10);
    }

    #[test]
    fn embedding_bitensor_is_exchange_symmetric(u in prop::collection::vec(0.0..1.0f64, 4)) {
        let chart = MetricChart::sphere(2.0).unwrap();
        let emb = EmbeddingMap::for_chart(&chart).unwrap();
        let (x, y) = (event(&chart, &u[..2]), event(&chart, &u[2..]));
        let h = bitensor_embedding(&emb, &x, &y).unwrap().covariant;
        let k = bitensor_embedding(&emb, &y, &x).unwrap().covariant;
        prop_assert!((h - k.transpose()).amax() < 1e-12);
    }

    #[test]
    fn lagrangian_is_phase_invariant(coefs in coefficients(), alpha in 0.0..(2.0 * PI)) {
        let psi = small_field(&coefs);
        prop_assume!(psi.norm() > 1e-3);
        let params = LagrangianParams::new(0.7, -1.3, 2.0).unwrap();
        let before = lagrangian_terms(&psi, &params).unwrap();
        let after = lagrangian_terms(&psi.scaled(Complex64::from_polar(1.0, alpha)), &params).unwrap();
        let scale = 1.0 + before.a.abs() + before.b.abs() + before.c.abs();
        prop_assert!((before.total() - after.total()).abs() < 1e-10 * scale);
    }

    #[test]
    fn flat_limit_ratio_is_half(coefs in coefficients()) {
        let raw = small_field(&coefs);
        prop_assume!(raw.norm() > 1e-3);
        let psi = raw.scaled(Complex64::from(1.0 / raw.norm()));
        let mp = mp_dispersion(&psi);
        prop_assume!(matches!(mp, Ok(v) if v.abs() > 1e-3));
        let ratio = lagrangian_terms(&psi, &LagrangianParams::flat_limit(2, 1.0)).unwrap().total() / mp.unwrap();
        prop_assert!((ratio - 0.5).abs() < 1e-9, "ratio {}", ratio);
    }

    #[test]
    fn db_is_cubic(coefs in coefficients(), re in -2.0..2.0f64, im in -2.0..2.0f64) {
        let psi = small_field(&coefs);
        let cfg = OperatorConfig::flat(LagrangianParams::new(0.0, 1.0, 0.0).unwrap(), false);
        let lambda = Complex64::new(re, im);
        let lhs = apply_db(&psi.scaled(lambda), &cfg).unwrap();
        let rhs = apply_db(&psi, &cfg).unwrap().scaled(lambda * lambda.norm_sqr());
        let gap = lhs.values().iter().zip(rhs.values()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        let scale = 1.0 + rhs.values().iter().map(|v| v.norm()).fold(0.0, f64::max);
        prop_assert!(gap < 1e-11 * scale);
    }

    #[test]
    fn symmetrize_is_idempotent(coefs in coefficients()) {
        let psi = small_field(&coefs);
        prop_assert!(psi.exchange_defect() < 1e-14);
        let again = psi.symmetrize();
        let gap = psi.values().iter().zip(again.values()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        prop_assert!(gap < 1e-15);
    }

    #[test]
    fn binary_round_trip(coefs in coefficients()) {
        let psi = small_field(&coefs);
        let mut bytes = Vec::new();
        write_binary(&psi, &mut bytes).unwrap();
        let back = read_binary(&mut bytes.as_slice()).unwrap();
        prop_assert_eq!(back.values(), psi.values());
        prop_assert_eq!(back.spec(), psi.spec());
    }
}
