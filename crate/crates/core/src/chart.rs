//! Coordinate charts with closed-form metrics.
//!
//! Every chart carries an analytic metric and analytic Christoffel symbols.
//! Curvature is obtained by differentiating the Christoffels numerically with
//! a fourth-order central stencil. Sign conventions: Lorentzian charts use
//! signature (-,+,+,+) with time as coordinate 0, and the Riemann tensor is
//! normalised so that the unit 2-sphere has Ricci scalar +2.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;
use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

/// Distance kept between sphere-like domains and the coordinate poles.
pub const POLE_MARGIN: f64 = 1e-3;
/// Relative distance kept from the Schwarzschild horizon, r >= 2M(1 + margin).
pub const HORIZON_MARGIN: f64 = 0.05;

const METRIC_FD_STEP: f64 = 1e-5;
const CURVATURE_FD_STEP: f64 = 1e-3;

/// Coordinates of a single event in some chart.
#[derive(Debug, Clone, PartialEq)]
pub struct EventCoords(Vec<f64>);

impl EventCoords {
    pub fn new(coords: Vec<f64>) -> Self {
        EventCoords(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for EventCoords {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for EventCoords {
    fn from(coords: Vec<f64>) -> Self {
        EventCoords(coords)
    }
}

impl From<&[f64]> for EventCoords {
    fn from(coords: &[f64]) -> Self {
        EventCoords(coords.to_vec())
    }
}

/// Contravariant vector attached to an event.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVec {
    pub base: EventCoords,
    pub components: Vec<f64>,
}

impl TangentVec {
    pub fn new(base: impl Into<EventCoords>, components: Vec<f64>) -> Self {
        TangentVec {
            base: base.into(),
            components,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CausalType {
    Timelike,
    Null,
    Spacelike,
}

impl CausalType {
    /// Classify from the squared norm g(v, v), relative to the vector scale.
    pub fn classify(norm_sq: f64, scale: f64) -> Self {
        let tol = 1e-10 * scale.max(1e-300);
        if norm_sq < -tol {
            CausalType::Timelike
        } else if norm_sq > tol {
            CausalType::Spacelike
        } else {
            CausalType::Null
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CausalType::Timelike => "timelike",
            CausalType::Null => "null",
            CausalType::Spacelike => "spacelike",
        }
    }
}

/// Which axis the angular coordinates (θ, φ) are measured from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoleOrientation {
    /// Pole on the ambient z axis.
    Standard,
    /// Pole on the ambient y axis: the standard frame rotated by π/2 about x.
    Rotated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChartKind {
    /// Minkowski space in coordinates x' = scale · x.
    Minkowski { dim: usize, scale: f64 },
    /// Round 2-sphere of the given radius, coordinates (θ, φ).
    Sphere { radius: f64, pole: PoleOrientation },
    /// Schwarzschild exterior, coordinates (t, r, θ, φ).
    Schwarzschild { mass: f64, pole: PoleOrientation },
    /// Static patch of de Sitter space, coordinates (t, r, θ, φ).
    DeSitter { radius: f64, pole: PoleOrientation },
}

/// One coordinate axis of a chart's domain box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    /// Period of a cyclic coordinate; cyclic axes are unbounded.
    pub period: Option<f64>,
}

impl Axis {
    fn bounded(lo: f64, hi: f64) -> Self {
        Axis {
            lo,
            hi,
            period: None,
        }
    }

    fn cyclic(period: f64) -> Self {
        Axis {
            lo: 0.0,
            hi: period,
            period: Some(period),
        }
    }

    fn contains(&self, value: f64) -> bool {
        value.is_finite() && (self.period.is_some() || (self.lo..=self.hi).contains(&value))
    }
}

/// Christoffel symbols Γ^a_{bc}, stored as `data[(a * d + b) * d + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Christoffel {
    dim: usize,
    data: Vec<f64>,
}

impl Christoffel {
    pub fn zeros(dim: usize) -> Self {
        Christoffel {
            dim,
            data: vec![0.0; dim * dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize, c: usize) -> f64 {
        self.data[(a * self.dim + b) * self.dim + c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs_diff(&self, other: &Christoffel) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Riemann tensor R^a_{bmn}, Ricci tensor R_{bn} = R^a_{ban} and Ricci scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureBundle {
    dim: usize,
    riemann: Vec<f64>,
    pub ricci: DMatrix<f64>,
    pub scalar: f64,
}

impl CurvatureBundle {
    #[inline]
    pub fn riemann(&self, a: usize, b: usize, m: usize, n: usize) -> f64 {
        let d = self.dim;
        self.riemann[((a * d + b) * d + m) * d + n]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variance {
    Up,
    Down,
}

/// Components of a tensor of arbitrary rank, row-major over its indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorComponents {
    pub variance: Vec<Variance>,
    pub data: Vec<f64>,
}

impl TensorComponents {
    pub fn new(variance: Vec<Variance>, data: Vec<f64>) -> Self {
        TensorComponents { variance, data }
    }

    pub fn from_matrix(m: &DMatrix<f64>, variance: [Variance; 2]) -> Self {
        let d = m.nrows();
        let data = (0..d * d).map(|k| m[(k / d, k % d)]).collect();
        TensorComponents {
            variance: variance.to_vec(),
            data,
        }
    }

    pub fn to_matrix(&self, dim: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(dim, dim, &self.data)
    }
}

/// An immutable coordinate chart with closed-form metric.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricChart {
    kind: ChartKind,
    name: String,
    axes: Vec<Axis>,
}

impl fmt::Display for MetricChart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

impl MetricChart {
    pub fn new(kind: ChartKind) -> Result<Self> {
        let pole_axes = || {
            [
                Axis::bounded(POLE_MARGIN, PI - POLE_MARGIN),
                Axis::cyclic(TAU),
            ]
        };
        let pole_suffix = |pole: PoleOrientation| match pole {
            PoleOrientation::Standard => "",
            PoleOrientation::Rotated => ",pole=rotated",
        };
        let positive = |label: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidChart(format!("{label} must be positive, got {v}")))
            }
        };

        let (name, axes) = match kind {
            ChartKind::Minkowski { dim, scale } => {
                if dim != 2 && dim != 4 {
                    return Err(Error::InvalidChart(format!(
                        "minkowski dimension must be 2 or 4, got {dim}"
                    )));
                }
                positive("scale", scale)?;
                let name = if scale == 1.0 {
                    format!("minkowski{dim}")
                } else {
                    format!("minkowski{dim}:scale={scale}")
                };
                let half = 1e6 * scale;
                (name, vec![Axis::bounded(-half, half); dim])
            }
            ChartKind::Sphere { radius, pole } => {
                positive("r", radius)?;
                (
                    format!("sphere2:r={radius}{}", pole_suffix(pole)),
                    pole_axes().to_vec(),
                )
            }
            ChartKind::Schwarzschild { mass, pole } => {
                positive("M", mass)?;
                let mut axes = vec![
                    Axis::bounded(-1e4 * mass, 1e4 * mass),
                    Axis::bounded(2.0 * mass * (1.0 + HORIZON_MARGIN), 1e3 * mass),
                ];
                axes.extend(pole_axes());
                (format!("schwarzschild:M={mass}{}", pole_suffix(pole)), axes)
            }
            ChartKind::DeSitter { radius, pole } => {
                positive("l", radius)?;
                let mut axes = vec![
                    Axis::bounded(-1e4 * radius, 1e4 * radius),
                    Axis::bounded(0.05 * radius, 0.95 * radius),
                ];
                axes.extend(pole_axes());
                (format!("desitter:l={radius}{}", pole_suffix(pole)), axes)
            }
        };
        Ok(MetricChart { kind, name, axes })
    }

    pub fn minkowski(dim: usize) -> Self {
        Self::new(ChartKind::Minkowski { dim, scale: 1.0 }).expect("valid minkowski chart")
    }

    pub fn minkowski_scaled(dim: usize, scale: f64) -> Result<Self> {
        Self::new(ChartKind::Minkowski { dim, scale })
    }

    pub fn sphere(radius: f64) -> Result<Self> {
        Self::new(ChartKind::Sphere {
            radius,
            pole: PoleOrientation::Standard,
        })
    }

    pub fn schwarzschild(mass: f64) -> Result<Self> {
        Self::new(ChartKind::Schwarzschild {
            mass,
            pole: PoleOrientation::Standard,
        })
    }

    pub fn de_sitter(radius: f64) -> Result<Self> {
        Self::new(ChartKind::DeSitter {
            radius,
            pole: PoleOrientation::Standard,
        })
    }

    /// Parse a registry string such as `minkowski4`, `sphere2:r=1`,
    /// `schwarzschild:M=1,pole=rotated` or `desitter:l=10`.
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        let (family, params) = match spec.split_once(':') {
            Some((f, p)) => (f, p),
            None => (spec, ""),
        };
        let mut values = std::collections::BTreeMap::new();
        for item in params.split(',').filter(|s| !s.trim().is_empty()) {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::InvalidChart(format!("expected key=value, got `{item}`")))?;
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        let mut take_num = |key: &str, default: f64| -> Result<f64> {
            match values.remove(key) {
                None => Ok(default),
                Some(v) => v
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidChart(format!("`{key}` is not a number: `{v}`"))),
            }
        };
        let kind = match family {
            "minkowski2" | "minkowski4" => ChartKind::Minkowski {
                dim: if family == "minkowski2" { 2 } else { 4 },
                scale: take_num("scale", 1.0)?,
            },
            "sphere2" => ChartKind::Sphere {
                radius: take_num("r", 1.0)?,
                pole: PoleOrientation::Standard,
            },
            "schwarzschild" => ChartKind::Schwarzschild {
                mass: take_num("M", 1.0)?,
                pole: PoleOrientation::Standard,
            },
            "desitter" => ChartKind::DeSitter {
                radius: take_num("l", 1.0)?,
                pole: PoleOrientation::Standard,
            },
            other => return Err(Error::InvalidChart(format!("unknown chart family `{other}`"))),
        };
        let pole = match values.remove("pole").as_deref() {
            None | Some("standard") => PoleOrientation::Standard,
            Some("rotated") => PoleOrientation::Rotated,
            Some(other) => {
                return Err(Error::InvalidChart(format!("unknown pole orientation `{other}`")))
            }
        };
        if let Some(key) = values.keys().next() {
            return Err(Error::InvalidChart(format!(
                "unknown parameter `{key}` for `{family}`"
            )));
        }
        let kind = match (kind, pole) {
            (k, PoleOrientation::Standard) => k,
            (ChartKind::Minkowski { .. }, PoleOrientation::Rotated) => {
                return Err(Error::InvalidChart("minkowski charts have no pole".into()))
            }
            (ChartKind::Sphere { radius, .. }, pole) => ChartKind::Sphere { radius, pole },
            (ChartKind::Schwarzschild { mass, .. }, pole) => ChartKind::Schwarzschild { mass, pole },
            (ChartKind::DeSitter { radius, .. }, pole) => ChartKind::DeSitter { radius, pole },
        };
        Self::new(kind)
    }

    /// The same geometry with the angular coordinates measured from another pole.
    pub fn with_pole(&self, pole: PoleOrientation) -> Option<Self> {
        let kind = match self.kind {
            ChartKind::Minkowski { .. } => return None,
            ChartKind::Sphere { radius, .. } => ChartKind::Sphere { radius, pole },
            ChartKind::Schwarzschild { mass, .. } => ChartKind::Schwarzschild { mass, pole },
            ChartKind::DeSitter { radius, .. } => ChartKind::DeSitter { radius, pole },
        };
        Self::new(kind).ok()
    }

    /// A sibling chart reachable through a registered transition, used for
    /// covariance checks: the rotated-pole chart for angular charts and the
    /// doubled-coordinate chart for flat space.
    pub fn sibling(&self) -> Self {
        match self.kind {
            ChartKind::Minkowski { dim, scale } => {
                Self::new(ChartKind::Minkowski { dim, scale: 2.0 * scale }).expect("valid")
            }
            _ => {
                let other = match self.pole() {
                    Some(PoleOrientation::Standard) => PoleOrientation::Rotated,
                    _ => PoleOrientation::Standard,
                };
                self.with_pole(other).expect("angular chart")
            }
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> ChartKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            ChartKind::Minkowski { dim, .. } => dim,
            ChartKind::Sphere { .. } => 2,
            ChartKind::Schwarzschild { .. } | ChartKind::DeSitter { .. } => 4,
        }
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn is_lorentzian(&self) -> bool {
        !matches!(self.kind, ChartKind::Sphere { .. })
    }

    pub fn signature(&self) -> Vec<f64> {
        let mut sig = vec![1.0; self.dim()];
        if self.is_lorentzian() {
            sig[0] = -1.0;
        }
        sig
    }

    fn pole(&self) -> Option<PoleOrientation> {
        match self.kind {
            ChartKind::Minkowski { .. } => None,
            ChartKind::Sphere { pole, .. }
            | ChartKind::Schwarzschild { pole, .. }
            | ChartKind::DeSitter { pole, .. } => Some(pole),
        }
    }

    /// Index of the θ coordinate for angular charts; φ follows it.
    pub fn angular_index(&self) -> Option<usize> {
        match self.kind {
            ChartKind::Minkowski { .. } => None,
            ChartKind::Sphere { .. } => Some(0),
            _ => Some(2),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && self.axes.iter().zip(x).all(|(axis, &v)| axis.contains(v))
    }

    pub fn check_domain(&self, x: &[f64]) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(self.out_of_domain(x))
        }
    }

    fn out_of_domain(&self, x: &[f64]) -> Error {
        Error::OutOfDomain {
            chart: self.name.clone(),
            point: x.to_vec(),
        }
    }

    /// Coordinate difference `to - from`, reduced on cyclic axes to (-P/2, P/2].
    pub fn wrapped_difference(&self, from: &[f64], to: &[f64]) -> Vec<f64> {
        self.axes
            .iter()
            .zip(from.iter().zip(to))
            .map(|(axis, (a, b))| match axis.period {
                Some(p) => {
                    let mut d = (b - a).rem_euclid(p);
                    if d > 0.5 * p {
                        d -= p;
                    }
                    d
                }
                None => b - a,
            })
            .collect()
    }

    /// Chart-coordinate Euclidean distance, respecting cyclic axes.
    pub fn coordinate_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        self.wrapped_difference(a, b)
            .iter()
            .map(|d| d * d)
            .sum::<f64>()
            .sqrt()
    }

    /// Reduce cyclic coordinates into their canonical range.
    pub fn canonicalize(&self, x: &[f64]) -> Vec<f64> {
        self.axes
            .iter()
            .zip(x)
            .map(|(axis, &v)| match axis.period {
                Some(p) => v.rem_euclid(p),
                None => v,
            })
            .collect()
    }

    /// Box from which random test events are drawn; well inside the domain.
    pub fn sampling_box(&self) -> Vec<(f64, f64)> {
        let angular = [(0.35, PI - 0.35), (0.0, TAU)];
        match self.kind {
            ChartKind::Minkowski { dim, scale } => vec![(-2.0 * scale, 2.0 * scale); dim],
            ChartKind::Sphere { .. } => angular.to_vec(),
            ChartKind::Schwarzschild { mass, .. } => {
                let mut b = vec![(-2.0 * mass, 2.0 * mass), (6.0 * mass, 12.0 * mass)];
                b.extend(angular);
                b
            }
            ChartKind::DeSitter { radius, .. } => {
                let mut b = vec![(-0.2 * radius, 0.2 * radius), (0.2 * radius, 0.6 * radius)];
                b.extend(angular);
                b
            }
        }
    }

    pub fn sample_event<R: Rng + ?Sized>(&self, rng: &mut R) -> EventCoords {
        EventCoords(
            self.sampling_box()
                .into_iter()
                .map(|(lo, hi)| rng.random_range(lo..hi))
                .collect(),
        )
    }

    /// Writes the covariant metric at `x` into `g` (row-major, d×d) without
    /// any domain check.
    pub fn metric_into(&self, x: &[f64], g: &mut [f64]) {
        let d = self.dim();
        g[..d * d].iter_mut().for_each(|v| *v = 0.0);
        match self.kind {
            ChartKind::Minkowski { dim, scale } => {
                let s2 = 1.0 / (scale * scale);
                for i in 0..dim {
                    g[i * d + i] = s2;
                }
                g[0] = -s2;
            }
            ChartKind::Sphere { radius, .. } => {
                let r2 = radius * radius;
                let s = x[0].sin();
                g[0] = r2;
                g[3] = r2 * s * s;
            }
            ChartKind::Schwarzschild { .. } | ChartKind::DeSitter { .. } => {
                let r = x[1];
                let (f, _) = self.lapse(r);
                let s = x[2].sin();
                g[0] = -f;
                g[5] = 1.0 / f;
                g[10] = r * r;
                g[15] = r * r * s * s;
            }
        }
    }

    /// f(r) and f'(r) for the static spherical charts.
    fn lapse(&self, r: f64) -> (f64, f64) {
        match self.kind {
            ChartKind::Schwarzschild { mass, .. } => (1.0 - 2.0 * mass / r, 2.0 * mass / (r * r)),
            ChartKind::DeSitter { radius, .. } => {
                let l2 = radius * radius;
                (1.0 - r * r / l2, -2.0 * r / l2)
            }
            _ => (1.0, 0.0),
        }
    }

    /// Writes the analytic Christoffel symbols at `x` into `out` without any
    /// domain check.
    pub fn christoffel_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        out[..d * d * d].iter_mut().for_each(|v| *v = 0.0);
        let idx = |a: usize, b: usize, c: usize| (a * d + b) * d + c;
        match self.kind {
            ChartKind::Minkowski { .. } => {}
            ChartKind::Sphere { .. } => {
                let (s, c) = x[0].sin_cos();
                out[idx(0, 1, 1)] = -s * c;
                let cot = c / s;
                out[idx(1, 0, 1)] = cot;
                out[idx(1, 1, 0)] = cot;
            }
            ChartKind::Schwarzschild { .. } | ChartKind::DeSitter { .. } => {
                let r = x[1];
                let (f, fp) = self.lapse(r);
                let (s, c) = x[2].sin_cos();
                let a = fp / (2.0 * f);
                out[idx(0, 0, 1)] = a;
                out[idx(0, 1, 0)] = a;
                out[idx(1, 0, 0)] = 0.5 * f * fp;
                out[idx(1, 1, 1)] = -a;
                out[idx(1, 2, 2)] = -r * f;
                out[idx(1, 3, 3)] = -r * f * s * s;
                out[idx(2, 1, 2)] = 1.0 / r;
                out[idx(2, 2, 1)] = 1.0 / r;
                out[idx(2, 3, 3)] = -s * c;
                out[idx(3, 1, 3)] = 1.0 / r;
                out[idx(3, 3, 1)] = 1.0 / r;
                out[idx(3, 2, 3)] = c / s;
                out[idx(3, 3, 2)] = c / s;
            }
        }
    }

    fn metric_matrix_unchecked(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        let mut g = vec![0.0; d * d];
        self.metric_into(x, &mut g);
        DMatrix::from_row_slice(d, d, &g)
    }

    /// Covariant metric and its inverse at `x`.
    pub fn metric_at(&self, x: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_domain(x)?;
        let g = self.metric_matrix_unchecked(x);
        let inv = g.clone().try_inverse().ok_or_else(|| Error::SingularMetric {
            chart: self.name.clone(),
            point: x.to_vec(),
        })?;
        Ok((g, inv))
    }

    pub fn volume_density_at(&self, x: &[f64]) -> Result<f64> {
        self.check_domain(x)?;
        Ok(self.metric_matrix_unchecked(x).determinant().abs().sqrt())
    }

    fn stencil_step(&self, base: f64, x: &[f64], axis: usize) -> f64 {
        base * x[axis].abs().max(1.0)
    }

    /// Checks that `x ± reach·h` stays inside the domain on every axis.
    fn check_stencil(&self, x: &[f64], base: f64, reach: f64) -> Result<()> {
        self.check_domain(x)?;
        for axis in 0..self.dim() {
            let h = self.stencil_step(base, x, axis);
            for sign in [-1.0, 1.0] {
                let mut probe = x.to_vec();
                probe[axis] += sign * reach * h;
                if !self.contains(&probe) {
                    return Err(Error::StencilClipped {
                        chart: self.name.clone(),
                        point: x.to_vec(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Analytic Christoffel symbols Γ^a_{bc} at `x`.
    pub fn christoffel_at(&self, x: &[f64]) -> Result<Christoffel> {
        self.check_stencil(x, METRIC_FD_STEP, 1.0)?;
        let mut c = Christoffel::zeros(self.dim());
        self.christoffel_into(x, &mut c.data);
        Ok(c)
    }

    /// Christoffel symbols from central differences of the metric.
    pub fn numeric_christoffel_at(&self, x: &[f64]) -> Result<Christoffel> {
        self.check_stencil(x, METRIC_FD_STEP, 1.0)?;
        let d = self.dim();
        let (_, ginv) = self.metric_at(x)?;
        // dg[c][a][b] = ∂_c g_ab
        let mut dg = vec![DMatrix::<f64>::zeros(d, d); d];
        for (c, slot) in dg.iter_mut().enumerate() {
            let h = self.stencil_step(METRIC_FD_STEP, x, c);
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[c] += h;
            xm[c] -= h;
            *slot = (self.metric_matrix_unchecked(&xp) - self.metric_matrix_unchecked(&xm))
                / (2.0 * h);
        }
        let mut out = Christoffel::zeros(d);
        for a in 0..d {
            for b in 0..d {
                for c in 0..d {
                    let mut sum = 0.0;
                    for e in 0..d {
                        sum += ginv[(a, e)] * (dg[b][(e, c)] + dg[c][(e, b)] - dg[e][(b, c)]);
                    }
                    out.data[(a * d + b) * d + c] = 0.5 * sum;
                }
            }
        }
        Ok(out)
    }

    /// Covariant derivative of the inverse metric, ∇_a g^{mn}, assembled from
    /// finite differences of g^{mn} and the analytic connection.
    pub fn inverse_metric_compatibility(&self, x: &[f64]) -> Result<f64> {
        self.check_stencil(x, METRIC_FD_STEP, 1.0)?;
        let d = self.dim();
        let (_, ginv) = self.metric_at(x)?;
        let gamma = self.christoffel_at(x)?;
        let mut worst: f64 = 0.0;
        for a in 0..d {
            let h = self.stencil_step(METRIC_FD_STEP, x, a);
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[a] += h;
            xm[a] -= h;
            let dginv = (self.metric_matrix_unchecked(&xp).try_inverse().unwrap()
                - self.metric_matrix_unchecked(&xm).try_inverse().unwrap())
                / (2.0 * h);
            for m in 0..d {
                for n in 0..d {
                    let mut v = dginv[(m, n)];
                    for b in 0..d {
                        v += gamma.get(m, b, a) * ginv[(b, n)] + gamma.get(n, b, a) * ginv[(m, b)];
                    }
                    worst = worst.max(v.abs());
                }
            }
        }
        Ok(worst)
    }

    /// Riemann, Ricci and scalar curvature at `x`.
    pub fn curvature_at(&self, x: &[f64]) -> Result<CurvatureBundle> {
        self.check_stencil(x, CURVATURE_FD_STEP, 2.0)?;
        let d = self.dim();
        let gamma = self.christoffel_at(x)?;
        let (_, ginv) = self.metric_at(x)?;

        // dgamma[m] = ∂_m Γ, fourth-order central stencil
        let mut dgamma = Vec::with_capacity(d);
        let mut buf = vec![0.0; d * d * d];
        for m in 0..d {
            let h = self.stencil_step(CURVATURE_FD_STEP, x, m);
            let mut acc = vec![0.0; d * d * d];
            for (offset, weight) in [(-2.0, 1.0), (-1.0, -8.0), (1.0, 8.0), (2.0, -1.0)] {
                let mut probe = x.to_vec();
                probe[m] += offset * h;
                self.christoffel_into(&probe, &mut buf);
                for (a, b) in acc.iter_mut().zip(&buf) {
                    *a += weight * b;
                }
            }
            acc.iter_mut().for_each(|v| *v /= 12.0 * h);
            dgamma.push(acc);
        }
        let g3 = |a: usize, b: usize, c: usize| (a * d + b) * d + c;

        let mut riemann = vec![0.0; d * d * d * d];
        for a in 0..d {
            for b in 0..d {
                for m in 0..d {
                    for n in 0..d {
                        let mut v = dgamma[m][g3(a, n, b)] - dgamma[n][g3(a, m, b)];
                        for l in 0..d {
                            v += gamma.get(a, m, l) * gamma.get(l, n, b)
                                - gamma.get(a, n, l) * gamma.get(l, m, b);
                        }
                        riemann[((a * d + b) * d + m) * d + n] = v;
                    }
                }
            }
        }
        let mut ricci = DMatrix::zeros(d, d);
        for b in 0..d {
            for n in 0..d {
                ricci[(b, n)] = (0..d).map(|a| riemann[((a * d + b) * d + a) * d + n]).sum();
            }
        }
        let scalar = ginv.component_mul(&ricci).sum();
        Ok(CurvatureBundle {
            dim: d,
            riemann,
            ricci,
            scalar,
        })
    }

    /// Transition map into `to`: the image of `x` and the Jacobian ∂x'/∂x.
    pub fn transition(&self, to: &MetricChart, x: &[f64]) -> Result<(EventCoords, DMatrix<f64>)> {
        self.check_domain(x)?;
        let no_transition = || Error::NoTransition {
            from: self.name.clone(),
            to: to.name.clone(),
        };
        let d = self.dim();
        let (image, jac) = match (self.kind, to.kind) {
            _ if self == to => (x.to_vec(), DMatrix::identity(d, d)),
            (
                ChartKind::Minkowski { dim: d1, scale: s1 },
                ChartKind::Minkowski { dim: d2, scale: s2 },
            ) if d1 == d2 => {
                let k = s2 / s1;
                (x.iter().map(|v| k * v).collect(), DMatrix::identity(d, d) * k)
            }
            (ChartKind::Sphere { radius: r1, .. }, ChartKind::Sphere { radius: r2, .. })
                if r1 == r2 =>
            {
                self.rotate_angles(to, x)
            }
            (
                ChartKind::Schwarzschild { mass: m1, .. },
                ChartKind::Schwarzschild { mass: m2, .. },
            ) if m1 == m2 => self.rotate_angles(to, x),
            (ChartKind::DeSitter { radius: l1, .. }, ChartKind::DeSitter { radius: l2, .. })
                if l1 == l2 =>
            {
                self.rotate_angles(to, x)
            }
            _ => return Err(no_transition()),
        };
        if !to.contains(&image) {
            return Err(Error::OutOfOverlap {
                from: self.name.clone(),
                to: to.name.clone(),
                point: x.to_vec(),
            });
        }
        Ok((EventCoords(image), jac))
    }

    fn rotate_angles(&self, to: &MetricChart, x: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let d = self.dim();
        let k = self.angular_index().expect("angular chart");
        let (from_pole, to_pole) = (self.pole().unwrap(), to.pole().unwrap());
        let mut image = x.to_vec();
        let mut jac = DMatrix::identity(d, d);
        if from_pole == to_pole {
            return (image, jac);
        }
        let (theta, phi) = (x[k], x[k + 1]);
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        let p = [st * cp, st * sp, ct];
        let dp_dtheta = [ct * cp, ct * sp, -st];
        let dp_dphi = [-st * sp, st * cp, 0.0];
        // Rotated = R·Standard with R a rotation by π/2 about x: (x, y, z) -> (x, -z, y).
        let rot = |v: [f64; 3]| match to_pole {
            PoleOrientation::Rotated => [v[0], -v[2], v[1]],
            PoleOrientation::Standard => [v[0], v[2], -v[1]],
        };
        let q = rot(p);
        let dq_t = rot(dp_dtheta);
        let dq_p = rot(dp_dphi);
        let rho2 = q[0] * q[0] + q[1] * q[1];
        let rho = rho2.sqrt();
        let theta2 = q[2].clamp(-1.0, 1.0).acos();
        let phi2 = q[1].atan2(q[0]).rem_euclid(TAU);
        image[k] = theta2;
        image[k + 1] = phi2;
        let dtheta = |dq: [f64; 3]| -dq[2] / rho;
        let dphi = |dq: [f64; 3]| (q[0] * dq[1] - q[1] * dq[0]) / rho2;
        jac[(k, k)] = dtheta(dq_t);
        jac[(k, k + 1)] = dtheta(dq_p);
        jac[(k + 1, k)] = dphi(dq_t);
        jac[(k + 1, k + 1)] = dphi(dq_p);
        (image, jac)
    }

    /// Transforms tensor components at `x` into chart `to`.
    pub fn transform_tensor(
        &self,
        to: &MetricChart,
        x: &[f64],
        tensor: &TensorComponents,
    ) -> Result<TensorComponents> {
        let (_, jac) = self.transition(to, x)?;
        let inv = jac.clone().try_inverse().ok_or_else(|| Error::SingularMetric {
            chart: self.name.clone(),
            point: x.to_vec(),
        })?;
        Ok(apply_jacobian(tensor, &jac, &inv))
    }
}

/// Contracts every index of `tensor` with the Jacobian: upper indices pick up
/// ∂x'/∂x, lower indices ∂x/∂x'.
pub fn apply_jacobian(
    tensor: &TensorComponents,
    jac: &DMatrix<f64>,
    inv: &DMatrix<f64>,
) -> TensorComponents {
    let d = jac.nrows();
    let rank = tensor.variance.len();
    let mut data = tensor.data.clone();
    for (slot, variance) in tensor.variance.iter().enumerate() {
        let stride = d.pow((rank - slot - 1) as u32);
        let mut next = vec![0.0; data.len()];
        for (flat, out) in next.iter_mut().enumerate() {
            let i_new = (flat / stride) % d;
            let base = flat - i_new * stride;
            *out = (0..d)
                .map(|i_old| {
                    let factor = match variance {
                        Variance::Up => jac[(i_new, i_old)],
                        Variance::Down => inv[(i_old, i_new)],
                    };
                    factor * data[base + i_old * stride]
                })
                .sum();
        }
        data = next;
    }
    TensorComponents {
        variance: tensor.variance.clone(),
        data,
    }
}

/// A frame e_a (columns of the returned matrix) with g(e_a, e_b) = diag(signs),
/// built by Gram–Schmidt from the coordinate basis in index order.
pub fn orthonormal_frame(g: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let d = g.nrows();
    let mut frame = DMatrix::<f64>::zeros(d, d);
    let mut signs = Vec::with_capacity(d);
    let dot = |u: &DVector<f64>, v: &DVector<f64>| (u.transpose() * g * v)[(0, 0)];
    for k in 0..d {
        let mut v = DVector::<f64>::zeros(d);
        v[k] = 1.0;
        for (j, &s) in signs.iter().enumerate() {
            let e = frame.column(j).into_owned();
            v -= &e * (s * dot(&v, &e));
        }
        let n = dot(&v, &v);
        if n.abs() < 1e-300 {
            return Err(Error::InvalidArgument("degenerate metric in frame construction".into()));
        }
        let s = n.signum();
        frame.set_column(k, &(v / n.abs().sqrt()));
        signs.push(s);
    }
    Ok((frame, signs))
}

/// g(u, v) for a row-major metric buffer.
#[inline]
pub fn inner(g: &[f64], u: &[f64], v: &[f64]) -> f64 {
    let d = u.len();
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            s += g[i * d + j] * u[i] * v[j];
        }
    }
    s
}

/// Equatorial point of an angular chart: θ = π/2 at the given φ.
pub fn equator(phi: f64) -> [f64; 2] {
    [FRAC_PI_2, phi]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_4;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() < tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn metric_values() {
        let (g, gi) = MetricChart::minkowski(4).metric_at(&[0.3, 1.0, -2.0, 5.0]).unwrap();
        assert_eq!(g, DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 1.0, 1.0, 1.0])));
        assert_eq!(g, gi);

        let (g, _) = MetricChart::sphere(1.0).unwrap().metric_at(&[FRAC_PI_4, 0.0]).unwrap();
        close(g[(0, 0)], 1.0, 1e-15);
        close(g[(1, 1)], 0.5, 1e-15);

        let (g, gi) = MetricChart::schwarzschild(1.0)
            .unwrap()
            .metric_at(&[0.0, 4.0, FRAC_PI_2, 0.0])
            .unwrap();
        close(g[(0, 0)], -0.5, 1e-15);
        assert!(((&g * &gi) - DMatrix::identity(4, 4)).amax() < 1e-12);
    }

    #[test]
    fn out_of_domain_and_stencil_errors() {
        let s = MetricChart::sphere(1.0).unwrap();
        assert!(matches!(s.metric_at(&[0.0, 1.0]), Err(Error::OutOfDomain { .. })));
        let sch = MetricChart::schwarzschild(1.0).unwrap();
        assert!(matches!(
            sch.metric_at(&[0.0, 2.05, 1.0, 0.0]),
            Err(Error::OutOfDomain { .. })
        ));
        let edge = [POLE_MARGIN + 1e-4, 0.3];
        assert!(matches!(s.curvature_at(&edge), Err(Error::StencilClipped { .. })));
    }

    #[test]
    fn christoffel_examples() {
        let m = MetricChart::minkowski(4).christoffel_at(&[0.0, 1.0, 2.0, 3.0]).unwrap();
        assert!(m.as_slice().iter().all(|&v| v == 0.0));

        let s = MetricChart::sphere(1.0).unwrap().christoffel_at(&[FRAC_PI_4, 0.2]).unwrap();
        close(s.get(0, 1, 1), -0.5, 1e-12);
        close(s.get(1, 0, 1), 1.0, 1e-12);

        let sch = MetricChart::schwarzschild(1.0)
            .unwrap()
            .christoffel_at(&[0.0, 4.0, FRAC_PI_2, 0.0])
            .unwrap();
        close(sch.get(1, 0, 0), 0.03125, 1e-14);
    }

    #[test]
    fn volume_density_examples() {
        close(MetricChart::minkowski(4).volume_density_at(&[0.0; 4]).unwrap(), 1.0, 1e-15);
        let s = MetricChart::sphere(1.0).unwrap();
        close(s.volume_density_at(&[PI / 6.0, 1.0]).unwrap(), 0.5, 1e-14);
        let sch = MetricChart::schwarzschild(1.0).unwrap();
        close(sch.volume_density_at(&[0.0, 4.0, FRAC_PI_2, 0.0]).unwrap(), 16.0, 1e-12);
    }

    #[test]
    fn curvature_examples() {
        let flat = MetricChart::minkowski(4).curvature_at(&[0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(flat.scalar.abs() < 1e-12 && flat.ricci.amax() < 1e-12);

        let s = MetricChart::sphere(1.0).unwrap().curvature_at(&[PI / 3.0, 0.4]).unwrap();
        close(s.scalar, 2.0, 1e-8);
        let s2 = MetricChart::sphere(2.0).unwrap().curvature_at(&[1.0, 0.4]).unwrap();
        close(s2.scalar, 0.5, 1e-8);

        let sch = MetricChart::schwarzschild(1.0)
            .unwrap()
            .curvature_at(&[0.0, 5.0, 1.1, 0.3])
            .unwrap();
        assert!(sch.ricci.amax() < 1e-5, "ricci {}", sch.ricci.amax());

        // de Sitter: R = 12/l² in four dimensions
        let ds = MetricChart::de_sitter(10.0).unwrap().curvature_at(&[0.0, 4.0, 1.0, 0.3]).unwrap();
        close(ds.scalar, 0.12, 1e-7);
    }

    #[test]
    fn riemann_antisymmetry_and_ricci_symmetry() {
        let sch = MetricChart::schwarzschild(1.0).unwrap();
        let c = sch.curvature_at(&[0.3, 7.0, 1.2, 2.0]).unwrap();
        let d = c.dim();
        for a in 0..d {
            for b in 0..d {
                for m in 0..d {
                    for n in 0..d {
                        assert_eq!(c.riemann(a, b, m, n), -c.riemann(a, b, n, m));
                    }
                }
                assert!((c.ricci[(a, b)] - c.ricci[(b, a)]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn analytic_christoffels_match_numeric() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for chart in [
            MetricChart::minkowski_scaled(4, 2.0).unwrap(),
            MetricChart::sphere(1.5).unwrap(),
            MetricChart::schwarzschild(1.0).unwrap(),
            MetricChart::de_sitter(10.0).unwrap(),
        ] {
            for _ in 0..100 {
                let x = chart.sample_event(&mut rng);
                let a = chart.christoffel_at(&x).unwrap();
                let n = chart.numeric_christoffel_at(&x).unwrap();
                assert!(a.max_abs_diff(&n) < 1e-6, "{}: {}", chart, a.max_abs_diff(&n));
                assert!(chart.inverse_metric_compatibility(&x).unwrap() < 1e-6);
                for i in 0..chart.dim() {
                    for j in 0..chart.dim() {
                        for k in 0..chart.dim() {
                            assert_eq!(a.get(i, j, k), a.get(i, k, j));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn rescaled_minkowski_doubles_vectors() {
        let a = MetricChart::minkowski(4);
        let b = MetricChart::minkowski_scaled(4, 2.0).unwrap();
        let v = TensorComponents::new(vec![Variance::Up], vec![1.0, -2.0, 0.5, 3.0]);
        let out = a.transform_tensor(&b, &[0.1, 0.2, 0.3, 0.4], &v).unwrap();
        assert_eq!(out.data, vec![2.0, -4.0, 1.0, 6.0]);
        let same = a.transform_tensor(&a, &[0.1, 0.2, 0.3, 0.4], &v).unwrap();
        assert_eq!(same, v);
    }

    #[test]
    fn rotated_pole_carries_round_metric() {
        let std_chart = MetricChart::sphere(1.0).unwrap();
        let rot = std_chart.sibling();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let x = std_chart.sample_event(&mut rng);
            let Ok((xr, _)) = std_chart.transition(&rot, &x) else { continue };
            let (g, _) = std_chart.metric_at(&x).unwrap();
            let gt = std_chart
                .transform_tensor(&rot, &x, &TensorComponents::from_matrix(&g, [Variance::Down; 2]))
                .unwrap()
                .to_matrix(2);
            let (expected, _) = rot.metric_at(&xr).unwrap();
            assert!((gt - expected).amax() < 1e-10);
        }
    }

    #[test]
    fn unrelated_charts_have_no_transition() {
        let err = MetricChart::sphere(1.0)
            .unwrap()
            .transition(&MetricChart::minkowski(2), &[1.0, 1.0])
            .unwrap_err();
        assert!(matches!(err, Error::NoTransition { .. }));
    }

    #[test]
    fn parse_registry_strings() {
        assert_eq!(MetricChart::parse("minkowski4").unwrap().dim(), 4);
        assert_eq!(MetricChart::parse("sphere2:r=1").unwrap(), MetricChart::sphere(1.0).unwrap());
        let p = MetricChart::parse("schwarzschild:M=1,pole=rotated").unwrap();
        assert_eq!(p.name(), "schwarzschild:M=1,pole=rotated");
        assert!(MetricChart::parse("sphere2:r=-1").is_err());
        assert!(MetricChart::parse("sphere2:q=2").is_err());
        assert!(MetricChart::parse("torus").is_err());
    }

    #[test]
    fn frame_is_orthonormal() {
        let sch = MetricChart::schwarzschild(1.0).unwrap();
        let (g, _) = sch.metric_at(&[0.0, 7.0, 1.0, 0.5]).unwrap();
        let (e, signs) = orthonormal_frame(&g).unwrap();
        let eta = e.transpose() * &g * &e;
        let expected = DMatrix::from_diagonal(&DVector::from_vec(signs.clone()));
        assert!((eta - expected).amax() < 1e-12);
        assert_eq!(signs, vec![-1.0, 1.0, 1.0, 1.0]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn round_trip_transition_is_identity(
                theta in 0.4f64..(PI - 0.4),
                phi in 0.0f64..TAU,
                c0 in -3.0f64..3.0,
                c1 in -3.0f64..3.0,
            ) {
                let a = MetricChart::sphere(1.0).unwrap();
                let b = a.sibling();
                let x = [theta, phi];
                prop_assume!(a.transition(&b, &x).is_ok());
                let (y, _) = a.transition(&b, &x).unwrap();
                prop_assume!(b.transition(&a, &y).is_ok());
                let (back, _) = b.transition(&a, &y).unwrap();
                prop_assert!(a.coordinate_distance(&x, &back) < 1e-10);

                let t = TensorComponents::new(vec![Variance::Up, Variance::Down], vec![c0, c1, c1 * c0, 1.0]);
                let there = a.transform_tensor(&b, &x, &t).unwrap();
                let again = b.transform_tensor(&a, &y, &there).unwrap();
                for (u, v) in again.data.iter().zip(&t.data) {
                    prop_assert!((u - v).abs() < 1e-10);
                }
            }
        }
    }
}
