//! Geodesic integration and the two-point connection problem.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::chart::{inner, orthonormal_frame, CausalType, ChartKind, MetricChart};
use crate::error::{Error, Result};
use crate::ode::{DormandPrince, OdeFailure, Rhs, Tolerance};

/// Largest chart dimension supported by the stack buffers below.
const MAX_DIM: usize = 4;

/// First-order geodesic system on the state [x, v].
pub(crate) struct GeodesicRhs<'a> {
    pub chart: &'a MetricChart,
}

impl Rhs for GeodesicRhs<'_> {
    fn dim(&self) -> usize {
        2 * self.chart.dim()
    }

    fn eval(&self, y: &[f64], dy: &mut [f64]) -> bool {
        let d = self.chart.dim();
        let (x, v) = y.split_at(d);
        if !self.chart.contains(x) {
            return false;
        }
        let mut gamma = [0.0; MAX_DIM * MAX_DIM * MAX_DIM];
        self.chart.christoffel_into(x, &mut gamma);
        dy[..d].copy_from_slice(v);
        for a in 0..d {
            let mut acc = 0.0;
            for b in 0..d {
                for c in 0..d {
                    acc += gamma[(a * d + b) * d + c] * v[b] * v[c];
                }
            }
            dy[d + a] = -acc;
        }
        true
    }
}

pub(crate) fn ode_error(chart: &MetricChart, failure: OdeFailure) -> Error {
    match failure {
        OdeFailure::LeftDomain(s) => Error::LeftDomain {
            chart: chart.name().to_string(),
            s,
        },
        OdeFailure::StepFailure(s) => Error::StepFailure { s },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicNode {
    pub s: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

/// An affinely parametrised geodesic sampled at uniformly spaced parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Geodesic {
    chart: String,
    nodes: Vec<GeodesicNode>,
}

impl Geodesic {
    pub fn chart_name(&self) -> &str {
        &self.chart
    }

    pub fn nodes(&self) -> &[GeodesicNode] {
        &self.nodes
    }

    pub fn start(&self) -> &[f64] {
        &self.nodes[0].x
    }

    pub fn end(&self) -> &[f64] {
        &self.nodes.last().unwrap().x
    }

    pub fn start_velocity(&self) -> &[f64] {
        &self.nodes[0].v
    }

    pub fn end_velocity(&self) -> &[f64] {
        &self.nodes.last().unwrap().v
    }

    /// Affine length s_end - s_start of the stored segment.
    pub fn span(&self) -> f64 {
        self.nodes.last().unwrap().s - self.nodes[0].s
    }

    /// g(ẋ, ẋ) at the start.
    pub fn norm_sq(&self, chart: &MetricChart) -> f64 {
        let d = chart.dim();
        let mut g = [0.0; MAX_DIM * MAX_DIM];
        chart.metric_into(self.start(), &mut g[..d * d]);
        inner(&g[..d * d], self.start_velocity(), self.start_velocity())
    }

    /// Proper length (or proper time) √|g(ẋ,ẋ)| · span.
    pub fn arc_length(&self, chart: &MetricChart) -> f64 {
        self.norm_sq(chart).abs().sqrt() * self.span()
    }

    pub fn causal_type(&self, chart: &MetricChart) -> CausalType {
        let v = self.start_velocity();
        let scale = v.iter().map(|c| c * c).sum::<f64>();
        CausalType::classify(self.norm_sq(chart), scale)
    }

    /// The same path traversed from end to start.
    pub fn reversed(&self) -> Geodesic {
        let s_end = self.nodes.last().unwrap().s;
        let s0 = self.nodes[0].s;
        let nodes = self
            .nodes
            .iter()
            .rev()
            .map(|n| GeodesicNode {
                s: s0 + s_end - n.s,
                x: n.x.clone(),
                v: n.v.iter().map(|c| -c).collect(),
            })
            .collect();
        Geodesic {
            chart: self.chart.clone(),
            nodes,
        }
    }

    /// Sub-path between node indices `from` and `to` inclusive.
    pub fn restrict(&self, from: usize, to: usize) -> Geodesic {
        assert!(from < to && to < self.nodes.len(), "invalid node range");
        Geodesic {
            chart: self.chart.clone(),
            nodes: self.nodes[from..=to].to_vec(),
        }
    }

    /// Largest |ẍ + Γ(ẋ, ẋ)| over interior nodes, with ẍ from a sixth-order
    /// central difference of the stored velocities.
    pub fn equation_residual(&self, chart: &MetricChart) -> f64 {
        const W: [f64; 3] = [3.0 / 4.0, -3.0 / 20.0, 1.0 / 60.0];
        let d = chart.dim();
        let n = self.nodes.len();
        if n < 7 {
            return 0.0;
        }
        let h = self.nodes[1].s - self.nodes[0].s;
        let mut gamma = [0.0; MAX_DIM * MAX_DIM * MAX_DIM];
        let mut worst: f64 = 0.0;
        for k in 3..n - 3 {
            let node = &self.nodes[k];
            chart.christoffel_into(&node.x, &mut gamma);
            for a in 0..d {
                let accel: f64 = W
                    .iter()
                    .enumerate()
                    .map(|(j, w)| w * (self.nodes[k + j + 1].v[a] - self.nodes[k - j - 1].v[a]))
                    .sum::<f64>()
                    / h;
                let mut force = 0.0;
                for b in 0..d {
                    for c in 0..d {
                        force += gamma[(a * d + b) * d + c] * node.v[b] * node.v[c];
                    }
                }
                worst = worst.max((accel + force).abs());
            }
        }
        worst
    }

    /// Largest deviation of g(ẋ, ẋ) from its initial value, per unit affine parameter.
    pub fn norm_drift(&self, chart: &MetricChart) -> f64 {
        let d = chart.dim();
        let mut g = [0.0; MAX_DIM * MAX_DIM];
        let initial = self.norm_sq(chart);
        let mut worst: f64 = 0.0;
        for node in &self.nodes {
            chart.metric_into(&node.x, &mut g[..d * d]);
            worst = worst.max((inner(&g[..d * d], &node.v, &node.v) - initial).abs());
        }
        worst / self.span().max(1e-300)
    }
}

/// Integrates the geodesic through `x` with initial velocity `v` for affine
/// parameter `s_end`, storing `steps + 1` uniformly spaced nodes.
pub fn integrate_geodesic(
    chart: &MetricChart,
    x: &[f64],
    v: &[f64],
    s_end: f64,
    steps: usize,
) -> Result<Geodesic> {
    chart.check_domain(x)?;
    if steps < 16 {
        return Err(Error::InvalidArgument(format!("steps must be at least 16, got {steps}")));
    }
    if v.len() != chart.dim() || v.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidArgument("velocity must be finite with chart dimension".into()));
    }
    let d = chart.dim();
    let rhs = GeodesicRhs { chart };
    let mut dp = DormandPrince::new(&rhs, Tolerance::default());
    let mut state = [x, v].concat();
    let mut nodes = Vec::with_capacity(steps + 1);
    nodes.push(GeodesicNode {
        s: 0.0,
        x: x.to_vec(),
        v: v.to_vec(),
    });
    let mut s = 0.0;
    for k in 1..=steps {
        let s_next = s_end * k as f64 / steps as f64;
        dp.advance(s, s_next, &mut state).map_err(|f| ode_error(chart, f))?;
        s = s_next;
        nodes.push(GeodesicNode {
            s,
            x: state[..d].to_vec(),
            v: state[d..].to_vec(),
        });
    }
    Ok(Geodesic {
        chart: chart.name().to_string(),
        nodes,
    })
}

/// Endpoint position and velocity after affine parameter `s_end`.
pub fn shoot(chart: &MetricChart, x: &[f64], v: &[f64], s_end: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = chart.dim();
    let rhs = GeodesicRhs { chart };
    let mut dp = DormandPrince::new(&rhs, Tolerance::default());
    let mut state = [x, v].concat();
    dp.advance(0.0, s_end, &mut state).map_err(|f| ode_error(chart, f))?;
    let vel = state.split_off(d);
    Ok((state, vel))
}

/// Multistart shooting parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    /// Number of lattice directions; `None` picks 64 in 2D and 256 in 4D.
    pub directions: Option<usize>,
    /// Stored nodes per geodesic (at least 16).
    pub steps: usize,
    /// More distinct solutions than this marks the pair as exceptional.
    pub cap: usize,
    /// Two paths closer than this (max node distance) are the same geodesic.
    pub dedup_tol: f64,
    /// Required endpoint accuracy in chart coordinates.
    pub endpoint_tol: f64,
    pub max_newton: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            directions: None,
            steps: 32,
            cap: 16,
            dedup_tol: 1e-4,
            endpoint_tol: 1e-7,
            max_newton: 40,
        }
    }
}

/// All distinct geodesics found between two events.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicBundle {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub geodesics: Vec<Geodesic>,
}

impl GeodesicBundle {
    pub fn count(&self) -> usize {
        self.geodesics.len()
    }
}

/// Frame speed above which solutions are discarded: on the sphere this
/// excludes paths that wrap a full great circle.
fn max_speed(chart: &MetricChart) -> f64 {
    match chart.kind() {
        ChartKind::Minkowski { .. } => f64::INFINITY,
        ChartKind::Sphere { radius, .. } => TAU * radius,
        ChartKind::Schwarzschild { .. } | ChartKind::DeSitter { .. } => 50.0,
    }
}

/// Unit directions in `dim` dimensions, evenly spread and deterministic.
fn direction_lattice(dim: usize, count: usize) -> Vec<Vec<f64>> {
    match dim {
        2 => (0..count)
            .map(|k| {
                let a = TAU * (k as f64 + 0.5) / count as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        4 => {
            // Rank-1 lattice on the unit cube mapped through Hopf coordinates,
            // which carry the uniform measure on the 3-sphere.
            let gen = [1usize, 75, 101];
            (0..count)
                .map(|k| {
                    let u: Vec<f64> = gen
                        .iter()
                        .map(|g| ((k * g) % count) as f64 / count as f64 + 0.5 / count as f64)
                        .collect();
                    let eta = u[0].sqrt().asin();
                    let (x1, x2) = (TAU * u[1], TAU * u[2]);
                    vec![
                        x1.cos() * eta.sin(),
                        x1.sin() * eta.sin(),
                        x2.cos() * eta.cos(),
                        x2.sin() * eta.cos(),
                    ]
                })
                .collect()
        }
        _ => unreachable!("charts are 2- or 4-dimensional"),
    }
}

/// For each lattice direction, the indices of its nearest lattice neighbours.
fn lattice_neighbours(directions: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let n = directions.len();
    let want = if directions[0].len() == 2 { 2 } else { 8 }.min(n.saturating_sub(1));
    (0..n)
        .map(|i| {
            let mut order: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let dot: f64 = directions[i].iter().zip(&directions[j]).map(|(a, b)| a * b).sum();
                    (-dot, j)
                })
                .collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            order.into_iter().take(want).map(|(_, j)| j).collect()
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Seeds refined together before the list of known solutions is updated.
const SEED_CHUNK: usize = 8;
/// Lowest-mismatch seeds per speed tier always refined, besides the local
/// minima. The 4D lattices need more: a missed solution breaks the exchange
/// symmetry of the average.
fn best_per_tier(dim: usize) -> usize {
    if dim == 2 { 8 } else { 24 }
}

struct Shooter<'a> {
    chart: &'a MetricChart,
    x: &'a [f64],
    y: &'a [f64],
    frame_inv: DMatrix<f64>,
    speed_cap: f64,
}

enum Shot {
    Converged(Vec<f64>),
    /// Heading for a solution that is already known.
    Known,
    Failed,
}

impl Shooter<'_> {
    fn mismatch(&self, v: &[f64], tol: Tolerance) -> Option<Vec<f64>> {
        let rhs = GeodesicRhs { chart: self.chart };
        let mut dp = DormandPrince::new(&rhs, tol);
        // Exploratory shots that need this many steps skim a coordinate
        // singularity and are abandoned.
        if tol.rtol > 1e-12 {
            dp.max_steps = 1000;
        }
        let mut state = [self.x, v].concat();
        dp.advance(0.0, 1.0, &mut state).ok()?;
        Some(self.residual(&state[..v.len()]))
    }

    /// Endpoint mismatch with the angular pair (θ, φ) replaced by the unit
    /// vector it labels, which stays well conditioned near the poles.
    fn residual(&self, end: &[f64]) -> Vec<f64> {
        let Some(k) = self.chart.angular_index() else {
            return self.chart.wrapped_difference(self.y, end);
        };
        let unit = |p: &[f64]| {
            let (st, ct) = p[k].sin_cos();
            let (sp, cp) = p[k + 1].sin_cos();
            [st * cp, st * sp, ct]
        };
        let (a, b) = (unit(end), unit(self.y));
        let mut out: Vec<f64> = (0..k).map(|i| end[i] - self.y[i]).collect();
        out.extend((0..3).map(|i| a[i] - b[i]));
        out
    }

    fn frame_speed(&self, v: &[f64]) -> f64 {
        (&self.frame_inv * DVector::from_column_slice(v)).norm()
    }

    /// Damped Gauss–Newton on the endpoint mismatch from the initial guess
    /// `v`. Iterates run with a loose integrator until the mismatch is small and
    /// are then polished at full accuracy.
    fn refine(&self, mut v: Vec<f64>, config: &SearchConfig, known: &[Vec<f64>]) -> Shot {
        let loose = Tolerance { rtol: 1e-8, atol: 1e-8 };
        let mut tol = loose;
        let d = v.len();
        let Some(mut f) = self.mismatch(&v, tol) else { return Shot::Failed };
        let mut fnorm = norm(&f);
        let mut mu = 1e-3;
        for _ in 0..config.max_newton {
            if fnorm < 1e-6 && tol.rtol > 1e-12 {
                tol = Tolerance::default();
                match self.mismatch(&v, tol) {
                    Some(ft) => {
                        fnorm = norm(&ft);
                        f = ft;
                    }
                    None => return Shot::Failed,
                }
            }
            if fnorm < 1e-11 {
                break;
            }
            // Distinct solutions from the same event have well separated
            // initial velocities unless the pair is nearly conjugate.
            let scale = 1.0 + self.frame_speed(&v);
            let close = known.iter().any(|k| {
                let diff: Vec<f64> = k.iter().zip(&v).map(|(a, b)| a - b).collect();
                self.frame_speed(&diff) < 2e-2 * scale
            });
            if close {
                return Shot::Known;
            }
            let mut jac = DMatrix::zeros(f.len(), d);
            for j in 0..d {
                let h = 1e-7 * v[j].abs().max(1.0);
                let mut vp = v.clone();
                vp[j] += h;
                let Some(fp) = self.mismatch(&vp, tol) else { return Shot::Failed };
                for i in 0..f.len() {
                    jac[(i, j)] = (fp[i] - f[i]) / h;
                }
            }
            // Levenberg–Marquardt step: stays well defined when the Jacobian
            // degenerates near conjugate points.
            let jt = jac.transpose();
            let jtj = &jt * &jac;
            let grad = &jt * DVector::from_column_slice(&f);
            let floor = 1e-9 * jtj.diagonal().max().max(1e-300);
            let radius = 0.5 * self.frame_speed(&v).max(1.0);
            let mut improved = None;
            for _ in 0..16 {
                let mut damped = jtj.clone();
                for i in 0..d {
                    damped[(i, i)] += mu * (jtj[(i, i)] + floor);
                }
                let Some(step) = damped.lu().solve(&(-&grad)) else {
                    mu *= 4.0;
                    continue;
                };
                let shrink = (radius / self.frame_speed(step.as_slice()).max(1e-300)).min(1.0);
                let trial: Vec<f64> = v.iter().zip(step.iter()).map(|(a, b)| a + shrink * b).collect();
                if self.frame_speed(&trial) < 2.0 * self.speed_cap {
                    if let Some(ft) = self.mismatch(&trial, tol) {
                        let n = norm(&ft);
                        if n < fnorm {
                            improved = Some((trial, ft, n));
                            mu = (mu / 3.0).max(1e-12);
                            break;
                        }
                    }
                }
                mu *= 4.0;
            }
            // A stalled iteration still counts if it already met the tolerance.
            let Some((nv, nf, nn)) = improved else { break };
            v = nv;
            f = nf;
            fnorm = nn;
        }
        if tol.rtol > 1e-12 || fnorm >= config.endpoint_tol {
            return Shot::Failed;
        }
        Shot::Converged(v)
    }
}

/// Finds the geodesics joining `x` to `y` with affine parameter on [0, 1].
///
/// Pairs joined by no geodesic, or by more than `search.cap` of them, are
/// reported as [`Error::ExceptionalPair`].
pub fn connect(chart: &MetricChart, x: &[f64], y: &[f64], search: &SearchConfig) -> Result<GeodesicBundle> {
    chart.check_domain(x)?;
    chart.check_domain(y)?;
    let delta = chart.wrapped_difference(x, y);
    if norm(&delta) == 0.0 {
        return Err(Error::InvalidArgument("connect needs two distinct events".into()));
    }
    let d = chart.dim();
    let (g, _) = chart.metric_at(x)?;
    let (frame, _) = orthonormal_frame(&g)?;
    let frame_inv = frame.clone().try_inverse().expect("orthonormal frame is invertible");
    let shooter = Shooter {
        chart,
        x,
        y,
        frame_inv,
        speed_cap: max_speed(chart),
    };

    let speeds: Vec<f64> = match chart.kind() {
        ChartKind::Sphere { radius, .. } => (1..=5).map(|k| k as f64 * PI * radius / 3.0).collect(),
        ChartKind::Minkowski { .. } => vec![shooter.frame_speed(&delta)],
        // Paths that go the long way round the centre are much faster than
        // the straight guess; seed them at fractions of the speed cap.
        _ => {
            let cap = shooter.speed_cap;
            vec![shooter.frame_speed(&delta), 0.25 * cap, 0.5 * cap, 0.75 * cap]
        }
    };
    let count = search.directions.unwrap_or(if d == 2 { 64 } else { 256 });
    let directions = direction_lattice(d, count);
    let neighbours = lattice_neighbours(&directions);
    let nspeed = speeds.len();
    // Seed i >= 1 is direction (i - 1) / nspeed at speed (i - 1) % nspeed.
    let mut seeds = vec![delta.clone()];
    for dir in &directions {
        let v = &frame * DVector::from_column_slice(dir);
        for &speed in &speeds {
            seeds.push(v.iter().map(|c| c * speed).collect());
        }
    }

    // Scan the lattice once and refine only from seed 0 and from local
    // minima of the mismatch over neighbouring lattice points.
    let coarse = Tolerance { rtol: 1e-4, atol: 1e-4 };
    let scan: Vec<f64> = seeds
        .par_iter()
        .map(|v| shooter.mismatch(v, coarse).map_or(f64::INFINITY, |f| norm(&f)))
        .collect();
    // Fast paths start with larger mismatches, so rank within each speed tier.
    let mut ranked: Vec<usize> = Vec::new();
    for tier in 0..nspeed {
        let mut in_tier: Vec<usize> = (0..directions.len())
            .map(|dir| 1 + dir * nspeed + tier)
            .filter(|&i| scan[i].is_finite())
            .collect();
        in_tier.sort_by(|&a, &b| scan[a].total_cmp(&scan[b]).then(a.cmp(&b)));
        ranked.extend(in_tier.into_iter().take(best_per_tier(d)));
    }
    let candidates: Vec<Vec<f64>> = seeds
        .iter()
        .enumerate()
        .filter(|&(i, _)| {
            if i == 0 || ranked.contains(&i) {
                return true;
            }
            if !scan[i].is_finite() {
                return false;
            }
            let (dir, sp) = ((i - 1) / nspeed, (i - 1) % nspeed);
            let mut near: Vec<usize> = neighbours[dir].iter().map(|&n| 1 + n * nspeed + sp).collect();
            if sp > 0 {
                near.push(i - 1);
            }
            if sp + 1 < nspeed {
                near.push(i + 1);
            }
            near.iter().all(|&j| scan[i] <= scan[j])
        })
        .map(|(_, v)| v.clone())
        .collect();

    let mut distinct: Vec<Geodesic> = Vec::new();
    for chunk in candidates.chunks(SEED_CHUNK) {
        let known: Vec<Vec<f64>> = distinct.iter().map(|g| g.start_velocity().to_vec()).collect();
        let solutions: Vec<Option<Geodesic>> = chunk
            .par_iter()
            .map(|seed| {
                let shot = shooter.refine(seed.clone(), search, &known);
                let Shot::Converged(v) = shot else {
                    return None;
                };
                if shooter.frame_speed(&v) >= shooter.speed_cap {
                    return None;
                }
                let geo = integrate_geodesic(chart, x, &v, 1.0, search.steps).ok()?;
                (norm(&chart.wrapped_difference(y, geo.end())) < search.endpoint_tol).then_some(geo)
            })
            .collect();
        for geo in solutions.into_iter().flatten() {
            let duplicate = distinct.iter().any(|other| {
                geo.nodes
                    .iter()
                    .zip(&other.nodes)
                    .map(|(a, b)| chart.coordinate_distance(&a.x, &b.x))
                    .fold(0.0, f64::max)
                    < search.dedup_tol
            });
            if !duplicate {
                distinct.push(geo);
            }
        }
        if distinct.len() > search.cap {
            break;
        }
    }
    if distinct.is_empty() || distinct.len() > search.cap {
        return Err(Error::ExceptionalPair {
            found: distinct.len(),
            cap: search.cap,
        });
    }
    Ok(GeodesicBundle {
        x: x.to_vec(),
        y: y.to_vec(),
        geodesics: distinct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn flat_geodesics_are_straight() {
        let chart = MetricChart::minkowski(4);
        let x = [0.1, 0.2, -0.3, 0.4];
        let v = [1.0, 0.5, -0.25, 2.0];
        let geo = integrate_geodesic(&chart, &x, &v, 1.0, 16).unwrap();
        for node in geo.nodes() {
            for i in 0..4 {
                assert!((node.x[i] - (x[i] + node.s * v[i])).abs() < 1e-13);
            }
        }
        assert_eq!(geo.start_velocity(), &v);
    }

    #[test]
    fn equator_is_a_great_circle() {
        let chart = MetricChart::sphere(1.0).unwrap();
        let geo = integrate_geodesic(&chart, &[FRAC_PI_2, 0.0], &[0.0, 1.0], FRAC_PI_2, 32).unwrap();
        assert!((geo.end()[0] - FRAC_PI_2).abs() < 1e-12);
        assert!((geo.end()[1] - FRAC_PI_2).abs() < 1e-12);
        assert!(geo.equation_residual(&chart) < 1e-6);
    }

    #[test]
    fn schwarzschild_circular_orbit_holds_radius() {
        let chart = MetricChart::schwarzschild(1.0).unwrap();
        let r: f64 = 6.0;
        let omega = (1.0 / r.powi(3)).sqrt();
        // Normalise to a unit-speed timelike orbit: -f ṫ² + r² Ω² ṫ² = -1.
        let f = 1.0 - 2.0 / r;
        let tdot = 1.0 / (f - r * r * omega * omega).sqrt();
        let period = TAU / omega / tdot;
        let geo = integrate_geodesic(
            &chart,
            &[0.0, r, FRAC_PI_2, 0.0],
            &[tdot, 0.0, 0.0, omega * tdot],
            period,
            64,
        )
        .unwrap();
        for node in geo.nodes() {
            assert!((node.x[1] - r).abs() < 1e-5);
        }
        assert!(geo.norm_drift(&chart) < 1e-6);
        assert!(geo.equation_residual(&chart) < 1e-6);
    }

    #[test]
    fn leaving_the_chart_is_an_error() {
        let chart = MetricChart::schwarzschild(1.0).unwrap();
        let err = integrate_geodesic(&chart, &[0.0, 4.0, FRAC_PI_2, 0.0], &[1.0, -10.0, 0.0, 0.0], 1.0, 16)
            .unwrap_err();
        assert!(matches!(err, Error::LeftDomain { .. }));
    }

    #[test]
    fn minkowski_has_one_connection() {
        let chart = MetricChart::minkowski(4);
        let x = [0.0, 0.0, 0.0, 0.0];
        let y = [1.0, 0.5, -0.2, 0.3];
        let bundle = connect(&chart, &x, &y, &SearchConfig::default()).unwrap();
        assert_eq!(bundle.count(), 1);
        let geo = &bundle.geodesics[0];
        let mid = &geo.nodes()[16].x;
        for i in 0..4 {
            assert!((mid[i] - 0.5 * (x[i] + y[i])).abs() < 1e-8);
        }
    }

    #[test]
    fn quarter_equator_has_minor_and_major_arcs() {
        let chart = MetricChart::sphere(1.0).unwrap();
        let bundle = connect(&chart, &[FRAC_PI_2, 0.0], &[FRAC_PI_2, FRAC_PI_2], &SearchConfig::default()).unwrap();
        assert_eq!(bundle.count(), 2);
        let mut lengths: Vec<f64> = bundle.geodesics.iter().map(|g| g.arc_length(&chart)).collect();
        lengths.sort_by(f64::total_cmp);
        assert!((lengths[0] - FRAC_PI_2).abs() < 1e-8);
        assert!((lengths[1] - 3.0 * FRAC_PI_2).abs() < 1e-8);
    }

    #[test]
    fn antipodes_are_exceptional() {
        let chart = MetricChart::sphere(1.0).unwrap();
        let err = connect(&chart, &[FRAC_PI_2, 0.0], &[FRAC_PI_2, PI], &SearchConfig::default()).unwrap_err();
        assert!(matches!(err, Error::ExceptionalPair { .. }));
    }

    #[test]
    fn reversal_swaps_endpoints() {
        let chart = MetricChart::sphere(1.0).unwrap();
        let geo = integrate_geodesic(&chart, &[1.0, 0.0], &[0.3, 0.8], 1.0, 16).unwrap();
        let rev = geo.reversed();
        assert_eq!(rev.start(), geo.end());
        assert_eq!(rev.end(), geo.start());
        let back = integrate_geodesic(&chart, rev.start(), rev.start_velocity(), 1.0, 16).unwrap();
        assert!(chart.coordinate_distance(back.end(), geo.start()) < 1e-10);
    }

    #[test]
    fn lattice_directions_are_unit() {
        for dir in direction_lattice(4, 256) {
            assert!((norm(&dir) - 1.0).abs() < 1e-14);
        }
    }
}
