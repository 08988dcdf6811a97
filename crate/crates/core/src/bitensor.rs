//! Two-point tensors h_{μν}(x, y) reducing to the metric at coincidence.
//!
//! Two constructions are provided. The geodesic average transports vectors
//! along every geodesic joining the events and averages the resulting inner
//! products over both transport directions. The embedding construction pulls
//! back the flat ambient metric through a closed-form isometric embedding.
//! The two generally differ; both satisfy the coincidence, tensoriality and
//! exchange-symmetry axioms.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::chart::{ChartKind, MetricChart, PoleOrientation};
use crate::error::{Error, Result};
use crate::geodesic::{connect, SearchConfig};
use crate::transport::PropagatorCache;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Construction {
    GeodesicAverage,
    Embedding,
}

impl Construction {
    pub fn as_str(self) -> &'static str {
        match self {
            Construction::GeodesicAverage => "geodesic-average",
            Construction::Embedding => "embedding",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BitensorValue {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// h_{μν}: first index at x, second at y.
    pub covariant: DMatrix<f64>,
    /// h^{μν} = g^{μα}(x) h_{αβ} g^{βν}(y).
    pub contravariant: DMatrix<f64>,
    pub construction: Construction,
    /// Number of contributing geodesics (1 at coincidence and for embeddings).
    pub count: usize,
    /// Largest disagreement between the two transport directions.
    pub redundancy: f64,
}

fn raise(chart: &MetricChart, x: &[f64], y: &[f64], h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (_, gx) = chart.metric_at(x)?;
    let (_, gy) = chart.metric_at(y)?;
    Ok(gx * h * gy)
}

/// Geodesic-average bitensor. Propagators are memoised in `cache` when given.
pub fn bitensor_geodesic(
    chart: &MetricChart,
    x: &[f64],
    y: &[f64],
    search: &SearchConfig,
    cache: Option<&PropagatorCache>,
) -> Result<BitensorValue> {
    let (gx, _) = chart.metric_at(x)?;
    let (gy, _) = chart.metric_at(y)?;
    if chart.coordinate_distance(x, y) == 0.0 {
        return Ok(BitensorValue {
            x: x.to_vec(),
            y: y.to_vec(),
            contravariant: raise(chart, x, y, &gx)?,
            covariant: gx,
            construction: Construction::GeodesicAverage,
            count: 1,
            redundancy: 0.0,
        });
    }
    let bundle = connect(chart, x, y, search)?;
    let local = PropagatorCache::new();
    let cache = cache.unwrap_or(&local);
    let d = chart.dim();
    let mut sum = DMatrix::zeros(d, d);
    let mut redundancy: f64 = 0.0;
    for geo in &bundle.geodesics {
        let forward = cache.get_or_compute(chart, geo)?.matrix;
        let backward = cache.get_or_compute(chart, &geo.reversed())?.matrix;
        // g(y)(P X, Y) and g(x)(X, Q Y) as bilinear forms on T_x × T_y.
        let first = forward.transpose() * &gy;
        let second = &gx * backward;
        redundancy = redundancy.max((&first - &second).amax());
        sum += first + second;
    }
    let n = bundle.count();
    let covariant = sum / (2.0 * n as f64);
    Ok(BitensorValue {
        x: x.to_vec(),
        y: y.to_vec(),
        contravariant: raise(chart, x, y, &covariant)?,
        covariant,
        construction: Construction::GeodesicAverage,
        count: n,
        redundancy,
    })
}

/// Closed-form isometric embedding F of a chart into a flat space with
/// diagonal signature `signs`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMap {
    chart: MetricChart,
    signs: Vec<f64>,
}

impl EmbeddingMap {
    /// Available for flat charts (the identity up to scale) and the sphere.
    pub fn for_chart(chart: &MetricChart) -> Result<Self> {
        let signs = match chart.kind() {
            ChartKind::Minkowski { .. } => chart.signature(),
            ChartKind::Sphere { .. } => vec![1.0; 3],
            _ => {
                return Err(Error::UnsupportedGeometry(format!(
                    "no closed-form embedding for `{}`",
                    chart.name()
                )))
            }
        };
        Ok(EmbeddingMap {
            chart: chart.clone(),
            signs,
        })
    }

    pub fn chart(&self) -> &MetricChart {
        &self.chart
    }

    pub fn ambient_dim(&self) -> usize {
        self.signs.len()
    }

    pub fn signs(&self) -> &[f64] {
        &self.signs
    }

    /// Undo the pole rotation so every sphere chart lands on the same ambient point.
    fn unrotate(&self, v: [f64; 3]) -> [f64; 3] {
        match self.chart.kind() {
            ChartKind::Sphere {
                pole: PoleOrientation::Rotated,
                ..
            } => [v[0], v[2], -v[1]],
            _ => v,
        }
    }

    pub fn map(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.chart.check_domain(x)?;
        Ok(match self.chart.kind() {
            ChartKind::Minkowski { scale, .. } => x.iter().map(|c| c / scale).collect(),
            ChartKind::Sphere { radius, .. } => {
                let (st, ct) = x[0].sin_cos();
                let (sp, cp) = x[1].sin_cos();
                self.unrotate([st * cp, st * sp, ct])
                    .iter()
                    .map(|c| radius * c)
                    .collect()
            }
            _ => unreachable!("embedding exists only for flat charts and the sphere"),
        })
    }

    /// Jacobian ∂F^k/∂x^μ as a k×d matrix.
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.chart.check_domain(x)?;
        Ok(match self.chart.kind() {
            ChartKind::Minkowski { dim, scale } => DMatrix::identity(dim, dim) / scale,
            ChartKind::Sphere { radius, .. } => {
                let (st, ct) = x[0].sin_cos();
                let (sp, cp) = x[1].sin_cos();
                let dtheta = self.unrotate([ct * cp, ct * sp, -st]);
                let dphi = self.unrotate([-st * sp, st * cp, 0.0]);
                let mut j = DMatrix::zeros(3, 2);
                for k in 0..3 {
                    j[(k, 0)] = radius * dtheta[k];
                    j[(k, 1)] = radius * dphi[k];
                }
                j
            }
            _ => unreachable!("embedding exists only for flat charts and the sphere"),
        })
    }

    fn pullback(&self, jx: &DMatrix<f64>, jy: &DMatrix<f64>) -> DMatrix<f64> {
        let s = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.signs));
        jx.transpose() * s * jy
    }

    /// Largest deviation of the induced metric from the chart metric at `x`.
    pub fn isometry_defect(&self, x: &[f64]) -> Result<f64> {
        let j = self.jacobian(x)?;
        let (g, _) = self.chart.metric_at(x)?;
        Ok((self.pullback(&j, &j) - g).amax())
    }
}

/// Embedding bitensor h_{μν}(x, y) = Σ_k ∂_μF^k(x) s_k ∂_νF^k(y).
pub fn bitensor_embedding(embedding: &EmbeddingMap, x: &[f64], y: &[f64]) -> Result<BitensorValue> {
    let covariant = embedding.pullback(&embedding.jacobian(x)?, &embedding.jacobian(y)?);
    Ok(BitensorValue {
        x: x.to_vec(),
        y: y.to_vec(),
        contravariant: raise(embedding.chart(), x, y, &covariant)?,
        covariant,
        construction: Construction::Embedding,
        count: 1,
        redundancy: 0.0,
    })
}

/// Evaluates one construction on one chart.
pub fn evaluate(
    construction: Construction,
    chart: &MetricChart,
    x: &[f64],
    y: &[f64],
    search: &SearchConfig,
    cache: Option<&PropagatorCache>,
) -> Result<BitensorValue> {
    match construction {
        Construction::GeodesicAverage => bitensor_geodesic(chart, x, y, search, cache),
        Construction::Embedding => bitensor_embedding(&EmbeddingMap::for_chart(chart)?, x, y),
    }
}

/// Worst-case axiom violations over a random sample of event pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct AxiomReport {
    pub construction: Construction,
    pub chart: String,
    pub pairs: usize,
    /// max |h(x, x) - g(x)|
    pub coincidence: f64,
    /// max |h_{μν}(x, y) - h_{νμ}(y, x)|
    pub symmetry: f64,
    /// max |h'(x', y') - J_x^{-T} h(x, y) J_y^{-1}|, when a sibling chart is given.
    pub joint_transform: Option<f64>,
    /// Same comparison with only the first argument transformed.
    pub first_argument_transform: Option<f64>,
    /// Largest disagreement between the two transport directions.
    pub redundancy: f64,
    /// Pairs skipped as exceptional (no geodesic, or too many).
    pub exceptional: usize,
    /// Pairs skipped because they, or their geodesics, leave the chart overlap.
    pub outside_overlap: usize,
    pub tolerance: f64,
}

impl AxiomReport {
    pub fn passes(&self) -> bool {
        let ok = |v: f64| v < self.tolerance;
        ok(self.coincidence)
            && ok(self.symmetry)
            && self.joint_transform.is_none_or(ok)
            && self.first_argument_transform.is_none_or(ok)
    }
}

/// Samples `sample` random pairs and measures the coincidence, exchange
/// symmetry and (with `sibling`) tensorial transformation axioms.
pub fn validate_bitensor_axioms(
    construction: Construction,
    chart: &MetricChart,
    sibling: Option<&MetricChart>,
    sample: usize,
    seed: u64,
    search: &SearchConfig,
) -> Result<AxiomReport> {
    if let Some(other) = sibling {
        // Fail early when no transition is registered.
        let probe = chart.sample_event(&mut ChaCha8Rng::seed_from_u64(seed));
        match chart.transition(other, &probe) {
            Err(e @ Error::NoTransition { .. }) => return Err(e),
            _ => {}
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cache = PropagatorCache::new();
    let mut report = AxiomReport {
        construction,
        chart: chart.name().to_string(),
        pairs: 0,
        coincidence: 0.0,
        symmetry: 0.0,
        joint_transform: sibling.map(|_| 0.0),
        first_argument_transform: sibling.map(|_| 0.0),
        redundancy: 0.0,
        exceptional: 0,
        outside_overlap: 0,
        tolerance: 1e-6,
    };
    let skip = |err: &Error, report: &mut AxiomReport| match err {
        Error::ExceptionalPair { .. } => {
            report.exceptional += 1;
            true
        }
        Error::LeftDomain { .. } | Error::OutOfOverlap { .. } => {
            report.outside_overlap += 1;
            true
        }
        _ => false,
    };

    while report.pairs < sample {
        let x = chart.sample_event(&mut rng);
        let y = chart.sample_event(&mut rng);

        let at_x = evaluate(construction, chart, &x, &x, search, Some(&cache))?;
        let (g, _) = chart.metric_at(&x)?;
        report.coincidence = report.coincidence.max((at_x.covariant - g).amax());

        let forward = match evaluate(construction, chart, &x, &y, search, Some(&cache)) {
            Ok(h) => h,
            Err(e) if skip(&e, &mut report) => continue,
            Err(e) => return Err(e),
        };
        let backward = match evaluate(construction, chart, &y, &x, search, Some(&cache)) {
            Ok(h) => h,
            Err(e) if skip(&e, &mut report) => continue,
            Err(e) => return Err(e),
        };
        report.redundancy = report.redundancy.max(forward.redundancy).max(backward.redundancy);
        let symmetry = (&forward.covariant - backward.covariant.transpose()).amax();

        if let Some(other) = sibling {
            let moved = chart
                .transition(other, &x)
                .and_then(|(xp, jx)| chart.transition(other, &y).map(|(yp, jy)| (xp, jx, yp, jy)));
            let (xp, jx, yp, jy) = match moved {
                Ok(m) => m,
                Err(e) if skip(&e, &mut report) => continue,
                Err(e) => return Err(e),
            };
            let there = match evaluate(construction, other, &xp, &yp, search, Some(&cache)) {
                Ok(h) => h,
                Err(e) if skip(&e, &mut report) => continue,
                Err(e) => return Err(e),
            };
            if there.count != forward.count {
                // Some connecting geodesic leaves one of the two charts.
                report.outside_overlap += 1;
                continue;
            }
            let jx_inv = jx.try_inverse().ok_or(Error::SingularMetric {
                chart: chart.name().to_string(),
                point: x.to_vec(),
            })?;
            let jy_inv = jy.clone().try_inverse().ok_or(Error::SingularMetric {
                chart: chart.name().to_string(),
                point: y.to_vec(),
            })?;
            let expected = jx_inv.transpose() * &forward.covariant * &jy_inv;
            let joint = (&there.covariant - expected).amax();
            let first = (jx_inv.transpose() * &forward.covariant - &there.covariant * &jy).amax();
            report.joint_transform = report.joint_transform.map(|v| v.max(joint));
            report.first_argument_transform = report.first_argument_transform.map(|v| v.max(first));
        }
        report.symmetry = report.symmetry.max(symmetry);
        report.pairs += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn coincidence_is_exact() {
        let chart = MetricChart::sphere(1.0).unwrap();
        let x = [0.7, 1.3];
        let h = bitensor_geodesic(&chart, &x, &x, &SearchConfig::default(), None).unwrap();
        let (g, _) = chart.metric_at(&x).unwrap();
        assert!((h.covariant - &g).amax() < 1e-12);
        let e = bitensor_embedding(&EmbeddingMap::for_chart(&chart).unwrap(), &x, &x).unwrap();
        assert!((e.covariant - g).amax() < 1e-12);
    }

    #[test]
    fn flat_space_gives_eta() {
        let chart = MetricChart::minkowski(4);
        let eta = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, 1.0, 1.0, 1.0]));
        let h = bitensor_geodesic(&chart, &[0.0; 4], &[0.5, 1.0, -1.0, 0.2], &SearchConfig::default(), None)
            .unwrap();
        assert!((&h.covariant - &eta).amax() < 1e-12);
        assert!((&h.contravariant - &eta).amax() < 1e-12);
        let e = bitensor_embedding(&EmbeddingMap::for_chart(&chart).unwrap(), &[0.0; 4], &[1.0; 4]).unwrap();
        assert!((e.covariant - eta).amax() < 1e-15);
    }

    #[test]
    fn quarter_equator_values() {
        let chart = MetricChart::sphere(1.0).unwrap();
        let (x, y) = ([FRAC_PI_2, 0.0], [FRAC_PI_2, FRAC_PI_2]);
        let h = bitensor_geodesic(&chart, &x, &y, &SearchConfig::default(), None).unwrap();
        assert_eq!(h.count, 2);
        assert!((&h.covariant - DMatrix::identity(2, 2)).amax() < 1e-8);
        let e = bitensor_embedding(&EmbeddingMap::for_chart(&chart).unwrap(), &x, &y).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!((&e.covariant - expected).amax() < 1e-14);
    }

    #[test]
    fn embeddings_are_isometric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for chart in [
            MetricChart::sphere(2.0).unwrap(),
            MetricChart::sphere(2.0).unwrap().sibling(),
            MetricChart::minkowski_scaled(4, 3.0).unwrap(),
        ] {
            let emb = EmbeddingMap::for_chart(&chart).unwrap();
            for _ in 0..20 {
                let x = chart.sample_event(&mut rng);
                assert!(emb.isometry_defect(&x).unwrap() < 1e-12);
            }
        }
        assert!(EmbeddingMap::for_chart(&MetricChart::schwarzschild(1.0).unwrap()).is_err());
    }

    #[test]
    fn transformation_needs_a_transition() {
        let err = validate_bitensor_axioms(
            Construction::Embedding,
            &MetricChart::sphere(1.0).unwrap(),
            Some(&MetricChart::minkowski(2)),
            1,
            0,
            &SearchConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NoTransition { .. }));
    }
}
