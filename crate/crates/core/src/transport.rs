//! Parallel transport along geodesics.
//!
//! Transport is integrated together with the geodesic itself: the state
//! [x, ẋ, P] evolves with dP^μ_α/ds = -Γ^μ_{βν} ẋ^β P^ν_α from the identity,
//! so P maps the tangent space at the start to the tangent space at s.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use dashmap::DashMap;
use nalgebra::DMatrix;

use crate::chart::{inner, MetricChart, TangentVec};
use crate::error::{Error, Result};
use crate::geodesic::{ode_error, Geodesic};
use crate::ode::{midpoint, DormandPrince, Rhs, Tolerance};

const MAX_DIM: usize = 4;

/// Geodesic equation augmented with `cols` transported vectors.
struct TransportRhs<'a> {
    chart: &'a MetricChart,
    cols: usize,
}

impl Rhs for TransportRhs<'_> {
    fn dim(&self) -> usize {
        let d = self.chart.dim();
        2 * d + d * self.cols
    }

    fn eval(&self, y: &[f64], dy: &mut [f64]) -> bool {
        let d = self.chart.dim();
        let x = &y[..d];
        let v = &y[d..2 * d];
        if !self.chart.contains(x) {
            return false;
        }
        let mut gamma = [0.0; MAX_DIM * MAX_DIM * MAX_DIM];
        self.chart.christoffel_into(x, &mut gamma);
        // contracted[a][c] = Γ^a_{bc} v^b
        let mut contracted = [0.0; MAX_DIM * MAX_DIM];
        for a in 0..d {
            for b in 0..d {
                for c in 0..d {
                    contracted[a * d + c] += gamma[(a * d + b) * d + c] * v[b];
                }
            }
        }
        dy[..d].copy_from_slice(v);
        for a in 0..d {
            dy[d + a] = -(0..d).map(|c| contracted[a * d + c] * v[c]).sum::<f64>();
        }
        let p = &y[2 * d..];
        let dp = &mut dy[2 * d..];
        for a in 0..d {
            for col in 0..self.cols {
                dp[a * self.cols + col] = -(0..d)
                    .map(|c| contracted[a * d + c] * p[c * self.cols + col])
                    .sum::<f64>();
            }
        }
        true
    }
}

/// Parallel-transport map P^μ_α from the tangent space at the start of a
/// geodesic to the tangent space at its end.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagator {
    pub from: Vec<f64>,
    pub to: Vec<f64>,
    pub matrix: DMatrix<f64>,
}

impl Propagator {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.matrix.nrows())
            .map(|i| (0..x.len()).map(|j| self.matrix[(i, j)] * x[j]).sum())
            .collect()
    }

    /// Largest |g(y)(PX, PY) - g(x)(X, Y)| over the given vector pairs.
    pub fn isometry_defect(&self, chart: &MetricChart, pairs: &[(Vec<f64>, Vec<f64>)]) -> f64 {
        let d = chart.dim();
        let mut gx = vec![0.0; d * d];
        let mut gy = vec![0.0; d * d];
        chart.metric_into(&self.from, &mut gx);
        chart.metric_into(&self.to, &mut gy);
        pairs
            .iter()
            .map(|(a, b)| (inner(&gy, &self.apply(a), &self.apply(b)) - inner(&gx, a, b)).abs())
            .fold(0.0, f64::max)
    }
}

fn initial_state(geo: &Geodesic, columns: &[f64], cols: usize) -> Vec<f64> {
    let mut state = Vec::with_capacity(2 * geo.start().len() + columns.len());
    state.extend_from_slice(geo.start());
    state.extend_from_slice(geo.start_velocity());
    debug_assert_eq!(columns.len(), geo.start().len() * cols);
    state.extend_from_slice(columns);
    state
}

fn identity_columns(d: usize) -> Vec<f64> {
    let mut id = vec![0.0; d * d];
    for i in 0..d {
        id[i * d + i] = 1.0;
    }
    id
}

/// Propagator along `geo`, integrated adaptively.
pub fn propagator(chart: &MetricChart, geo: &Geodesic) -> Result<Propagator> {
    let d = chart.dim();
    let rhs = TransportRhs { chart, cols: d };
    let mut state = initial_state(geo, &identity_columns(d), d);
    let mut dp = DormandPrince::new(&rhs, Tolerance::default());
    dp.advance(0.0, geo.span(), &mut state).map_err(|f| ode_error(chart, f))?;
    Ok(Propagator {
        from: geo.start().to_vec(),
        to: state[..d].to_vec(),
        matrix: DMatrix::from_row_slice(d, d, &state[2 * d..]),
    })
}

/// Propagator from a fixed-step second-order integration with `steps` steps;
/// used for convergence studies.
pub fn propagator_fixed_step(chart: &MetricChart, geo: &Geodesic, steps: usize) -> Result<DMatrix<f64>> {
    let d = chart.dim();
    let rhs = TransportRhs { chart, cols: d };
    let mut state = initial_state(geo, &identity_columns(d), d);
    midpoint(&rhs, 0.0, geo.span(), steps, &mut state).map_err(|f| ode_error(chart, f))?;
    Ok(DMatrix::from_row_slice(d, d, &state[2 * d..]))
}

/// Transported vector at every stored node of `geo`.
pub fn transport_along(chart: &MetricChart, geo: &Geodesic, x: &[f64]) -> Result<Vec<Vec<f64>>> {
    let d = chart.dim();
    let rhs = TransportRhs { chart, cols: 1 };
    let mut state = initial_state(geo, x, 1);
    let mut dp = DormandPrince::new(&rhs, Tolerance::default());
    let s0 = geo.nodes()[0].s;
    let mut out = vec![x.to_vec()];
    let mut s = 0.0;
    for node in &geo.nodes()[1..] {
        let next = node.s - s0;
        dp.advance(s, next, &mut state).map_err(|f| ode_error(chart, f))?;
        s = next;
        out.push(state[2 * d..].to_vec());
    }
    Ok(out)
}

/// Parallel transport of `x` to the end of `geo`.
pub fn transport_vector(chart: &MetricChart, geo: &Geodesic, x: &TangentVec) -> Result<TangentVec> {
    let scale = geo.start().iter().map(|c| c.abs()).fold(1.0, f64::max);
    if x.base.len() != geo.start().len()
        || chart.coordinate_distance(&x.base, geo.start()) > 1e-12 * scale
    {
        return Err(Error::MismatchedBase);
    }
    let path = transport_along(chart, geo, &x.components)?;
    Ok(TangentVec::new(
        geo.end().to_vec(),
        path.last().expect("geodesic has nodes").clone(),
    ))
}

/// Largest |Ẋ + Γ(ẋ, X)| over interior nodes, with Ẋ from a sixth-order
/// central difference of the transported values.
pub fn transport_residual(chart: &MetricChart, geo: &Geodesic, path: &[Vec<f64>]) -> f64 {
    const W: [f64; 3] = [3.0 / 4.0, -3.0 / 20.0, 1.0 / 60.0];
    let d = chart.dim();
    let nodes = geo.nodes();
    let n = nodes.len();
    if n < 7 {
        return 0.0;
    }
    let h = nodes[1].s - nodes[0].s;
    let mut gamma = [0.0; MAX_DIM * MAX_DIM * MAX_DIM];
    let mut worst: f64 = 0.0;
    for k in 3..n - 3 {
        chart.christoffel_into(&nodes[k].x, &mut gamma);
        for a in 0..d {
            let deriv = W
                .iter()
                .enumerate()
                .map(|(j, w)| w * (path[k + j + 1][a] - path[k - j - 1][a]))
                .sum::<f64>()
                / h;
            let mut conn = 0.0;
            for b in 0..d {
                for c in 0..d {
                    conn += gamma[(a * d + b) * d + c] * nodes[k].v[b] * path[k][c];
                }
            }
            worst = worst.max((deriv + conn).abs());
        }
    }
    worst
}

/// Concurrent memo of propagators keyed by chart and geodesic initial data.
#[derive(Debug, Default)]
pub struct PropagatorCache {
    map: DashMap<u64, Propagator>,
}

impl PropagatorCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn key(chart: &MetricChart, geo: &Geodesic) -> u64 {
        let mut h = DefaultHasher::new();
        chart.name().hash(&mut h);
        for v in geo.start().iter().chain(geo.start_velocity()) {
            v.to_bits().hash(&mut h);
        }
        geo.span().to_bits().hash(&mut h);
        h.finish()
    }

    pub fn get_or_compute(&self, chart: &MetricChart, geo: &Geodesic) -> Result<Propagator> {
        let key = Self::key(chart, geo);
        if let Some(p) = self.map.get(&key) {
            return Ok(p.clone());
        }
        let p = propagator(chart, geo)?;
        self.map.insert(key, p.clone());
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesic::integrate_geodesic;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn flat_transport_is_trivial() {
        let chart = MetricChart::minkowski(4);
        let geo = integrate_geodesic(&chart, &[0.0; 4], &[1.0, 0.3, 0.2, -0.5], 1.0, 16).unwrap();
        let p = propagator(&chart, &geo).unwrap();
        assert!((p.matrix - DMatrix::identity(4, 4)).amax() < 1e-14);
    }

    #[test]
    fn equator_carries_e_theta_to_itself() {
        let chart = MetricChart::sphere(1.0).unwrap();
        let geo = integrate_geodesic(&chart, &[FRAC_PI_2, 0.0], &[0.0, FRAC_PI_2], 1.0, 32).unwrap();
        let out = transport_vector(&chart, &geo, &TangentVec::new(vec![FRAC_PI_2, 0.0], vec![1.0, 0.0])).unwrap();
        assert!((out.components[0] - 1.0).abs() < 1e-12);
        assert!(out.components[1].abs() < 1e-12);
    }

    #[test]
    fn wrong_base_is_rejected() {
        let chart = MetricChart::sphere(1.0).unwrap();
        let geo = integrate_geodesic(&chart, &[1.0, 0.0], &[0.0, 1.0], 1.0, 16).unwrap();
        let err = transport_vector(&chart, &geo, &TangentVec::new(vec![1.1, 0.0], vec![1.0, 0.0])).unwrap_err();
        assert_eq!(err, Error::MismatchedBase);
    }

    #[test]
    fn reversed_propagator_is_inverse() {
        let chart = MetricChart::schwarzschild(1.0).unwrap();
        let geo = integrate_geodesic(&chart, &[0.0, 7.0, 1.2, 0.4], &[0.5, -0.8, 0.1, 0.05], 1.0, 32).unwrap();
        let p = propagator(&chart, &geo).unwrap();
        let q = propagator(&chart, &geo.reversed()).unwrap();
        assert!((&q.matrix * &p.matrix - DMatrix::identity(4, 4)).amax() < 1e-7);
    }

    #[test]
    fn cache_reuses_entries() {
        let chart = MetricChart::sphere(1.0).unwrap();
        let geo = integrate_geodesic(&chart, &[1.0, 0.0], &[0.2, 1.0], 1.0, 16).unwrap();
        let cache = PropagatorCache::new();
        let a = cache.get_or_compute(&chart, &geo).unwrap();
        let b = cache.get_or_compute(&chart, &geo).unwrap();
        assert_eq!(a, b);
        assert_eq!(cache.len(), 1);
    }
}
