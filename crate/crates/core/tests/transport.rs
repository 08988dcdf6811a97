use std::f64::consts::FRAC_PI_2;

use bitensor_core::chart::{equator, orthonormal_frame};
use bitensor_core::geodesic::{connect, integrate_geodesic, Geodesic, SearchConfig};
use bitensor_core::transport::{propagator, propagator_fixed_step, transport_vector};
use bitensor_core::{Error, MetricChart, TangentVec};

fn unit(p: &[f64]) -> [f64; 3] {
    [p[0].sin() * p[1].cos(), p[0].sin() * p[1].sin(), p[0].cos()]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Spherical excess of the geodesic triangle, from the vertex angles.
fn girard_area(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    let angle = |p: [f64; 3], q: [f64; 3], r: [f64; 3]| {
        let (u, v) = (cross(p, q), cross(p, r));
        (dot(u, v) / (dot(u, u) * dot(v, v)).sqrt()).acos()
    };
    angle(a, b, c) + angle(b, c, a) + angle(c, a, b) - std::f64::consts::PI
}

fn shortest(chart: &MetricChart, x: &[f64], y: &[f64]) -> Geodesic {
    let bundle = connect(chart, x, y, &SearchConfig::default()).unwrap();
    bundle
        .geodesics
        .into_iter()
        .min_by(|a, b| a.arc_length(chart).total_cmp(&b.arc_length(chart)))
        .unwrap()
}

#[test]
fn loop_holonomy_matches_enclosed_area() {
    let chart = MetricChart::sphere(1.0).unwrap();
    let vertices = [equator(0.0).to_vec(), equator(FRAC_PI_2).to_vec(), vec![0.6, 0.8]];
    let mut vec = TangentVec::new(vertices[0].clone(), vec![1.0, 0.0]);
    for i in 0..3 {
        let geo = shortest(&chart, &vertices[i], &vertices[(i + 1) % 3]);
        vec = transport_vector(&chart, &geo, &TangentVec::new(vertices[i].clone(), vec.components)).unwrap();
    }
    // on the equator at φ = 0 the coordinate basis is already orthonormal
    let turned = vec.components[1].atan2(vec.components[0]).abs();
    let area = girard_area(unit(&vertices[0]), unit(&vertices[1]), unit(&vertices[2]));
    assert!((turned - area).abs() < 1e-6, "rotation {turned} vs area {area}");
    assert!((vec.components[0].hypot(vec.components[1]) - 1.0).abs() < 1e-9);
}

#[test]
fn propagators_compose_along_a_geodesic() {
    for name in ["sphere2:r=2", "schwarzschild:M=1", "desitter:l=5"] {
        let chart = MetricChart::parse(name).unwrap();
        let x = chart.sampling_box().iter().map(|(lo, hi)| 0.6 * lo + 0.4 * hi).collect::<Vec<_>>();
        let (g, _) = chart.metric_at(&x).unwrap();
        let (frame, _) = orthonormal_frame(&g).unwrap();
        let v: Vec<f64> = (&frame * nalgebra::DVector::from_fn(chart.dim(), |i, _| 0.3 - 0.1 * i as f64))
            .iter()
            .copied()
            .collect();
        let geo = integrate_geodesic(&chart, &x, &v, 1.0, 32).unwrap();
        let whole = propagator(&chart, &geo).unwrap().matrix;
        let first = propagator(&chart, &geo.restrict(0, 13)).unwrap().matrix;
        let second = propagator(&chart, &geo.restrict(13, 32)).unwrap().matrix;
        assert!((&whole - second * first).amax() < 1e-8, "{name}");
        let back = propagator(&chart, &geo.reversed()).unwrap().matrix;
        let id = nalgebra::DMatrix::<f64>::identity(chart.dim(), chart.dim());
        assert!((back * &whole - id).amax() < 1e-8, "{name}");
    }
}

#[test]
fn fixed_step_propagator_is_second_order() {
    let chart = MetricChart::schwarzschild(1.0).unwrap();
    let geo = integrate_geodesic(&chart, &[0.0, 8.0, 1.2, 0.3], &[1.0, 0.2, 0.05, 0.08], 2.0, 32).unwrap();
    let exact = propagator(&chart, &geo).unwrap().matrix;
    let err = |n| (propagator_fixed_step(&chart, &geo, n).unwrap() - &exact).amax();
    let (e1, e2, e3) = (err(20), err(40), err(80));
    for ratio in [e1 / e2, e2 / e3] {
        assert!((ratio - 4.0).abs() < 0.4, "ratio {ratio}");
    }
}

#[test]
fn transport_rejects_a_foreign_base_point() {
    let chart = MetricChart::sphere(1.0).unwrap();
    let geo = integrate_geodesic(&chart, &[1.0, 0.5], &[0.1, 0.2], 1.0, 16).unwrap();
    let stray = TangentVec::new(vec![1.1, 0.5], vec![1.0, 0.0]);
    assert!(matches!(transport_vector(&chart, &geo, &stray), Err(Error::MismatchedBase)));
}
