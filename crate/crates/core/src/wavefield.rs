//! Complex wavefunctions ψ(x_1, …, x_N) of N space-time arguments sampled on
//! periodic boxes, with spectral derivatives, reduced inner products and the
//! quadratic and quartic Lagrangian functionals built from them.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::ops::Add;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::chart::MetricChart;
use crate::error::{Error, Result};

/// Largest grid (total points) accepted unless a caller raises the cap.
pub const DEFAULT_MEMORY_CAP: usize = 1 << 22;

/// Imaginary residual at which a supposedly real functional is rejected.
pub const HERMITICITY_TOL: f64 = 1e-6;

const SERIAL_SUM: usize = 64;
const PARALLEL_SUM: usize = 1 << 14;

/// Deterministic pairwise sum of `f(i)` over `range`: the split points depend
/// only on the range, so the result is identical however rayon schedules it.
pub(crate) fn pairwise_sum_by<T, F>(lo: usize, hi: usize, f: &F) -> T
where
    T: Copy + Default + Send + Add<Output = T>,
    F: Fn(usize) -> T + Sync,
{
    let n = hi - lo;
    if n <= SERIAL_SUM {
        return (lo..hi).fold(T::default(), |acc, i| acc + f(i));
    }
    let mid = lo + n / 2;
    let (l, r) = if n >= PARALLEL_SUM {
        rayon::join(|| pairwise_sum_by(lo, mid, f), || pairwise_sum_by(mid, hi, f))
    } else {
        (pairwise_sum_by(lo, mid, f), pairwise_sum_by(mid, hi, f))
    };
    l + r
}

/// Minkowski metric diag(-1, 1, …, 1) in `dim` dimensions.
pub fn eta(dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(dim, dim, |i, j| match (i, j) {
        (0, 0) => -1.0,
        (i, j) if i == j => 1.0,
        _ => 0.0,
    })
}

/// Sampling of an N-argument field: every argument block shares the same
/// d-dimensional periodic box.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    n_args: usize,
    lengths: Vec<f64>,
    points: Vec<usize>,
}

impl GridSpec {
    pub fn new(n_args: usize, lengths: Vec<f64>, points: Vec<usize>) -> Result<Self> {
        Self::with_cap(n_args, lengths, points, DEFAULT_MEMORY_CAP)
    }

    /// Same box length and point count along all `dim` coordinates.
    pub fn uniform(n_args: usize, dim: usize, length: f64, points: usize) -> Result<Self> {
        Self::new(n_args, vec![length; dim], vec![points; dim])
    }

    pub fn with_cap(n_args: usize, lengths: Vec<f64>, points: Vec<usize>, cap: usize) -> Result<Self> {
        if !(1..=2).contains(&n_args) {
            return Err(Error::InvalidArgument(format!("argument count {n_args} not in 1..=2")));
        }
        if lengths.is_empty() || lengths.len() != points.len() || lengths.len() > 4 {
            return Err(Error::InvalidArgument("box lengths and point counts must match, 1 to 4 coordinates".into()));
        }
        if let Some(l) = lengths.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::InvalidArgument(format!("box length {l} must be positive")));
        }
        if let Some(p) = points.iter().find(|p| !p.is_power_of_two() || **p < 2) {
            return Err(Error::InvalidArgument(format!("point count {p} must be a power of two ≥ 2")));
        }
        let block: usize = points.iter().product();
        let total = block
            .checked_pow(n_args as u32)
            .filter(|t| *t <= cap)
            .ok_or_else(|| Error::InvalidArgument(format!("grid exceeds the memory cap of {cap} points")))?;
        debug_assert!(total > 0);
        Ok(GridSpec { n_args, lengths, points })
    }

    pub fn n_args(&self) -> usize {
        self.n_args
    }

    pub fn dim(&self) -> usize {
        self.points.len()
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    /// Points in one argument block.
    pub fn block_len(&self) -> usize {
        self.points.iter().product()
    }

    /// Points in the full grid.
    pub fn len(&self) -> usize {
        self.block_len().pow(self.n_args as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self, mu: usize) -> f64 {
        self.lengths[mu] / self.points[mu] as f64
    }

    /// Volume of one cell of a single argument block.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|mu| self.spacing(mu)).product()
    }

    /// Volume of one argument block's box.
    pub fn box_volume(&self) -> f64 {
        self.lengths.iter().product()
    }

    /// Stride of coordinate `mu` of argument `arg` in the flat value array.
    pub fn stride(&self, arg: usize, mu: usize) -> usize {
        let inner: usize = self.points[mu + 1..].iter().product();
        inner * self.block_len().pow((self.n_args - 1 - arg) as u32)
    }

    /// Grid coordinates (index × spacing) of point `b` of a block.
    pub fn block_coords(&self, b: usize) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d];
        let mut rem = b;
        for mu in (0..d).rev() {
            out[mu] = (rem % self.points[mu]) as f64 * self.spacing(mu);
            rem /= self.points[mu];
        }
        out
    }

    /// Splits a flat index into its per-argument block indices.
    pub fn split_index(&self, index: usize) -> Vec<usize> {
        let block = self.block_len();
        let mut out = vec![0; self.n_args];
        let mut rem = index;
        for arg in (0..self.n_args).rev() {
            out[arg] = rem % block;
            rem /= block;
        }
        out
    }

    /// Signed integer wavenumber of FFT bin `m` along `mu`; the Nyquist bin maps to 0.
    fn mode(&self, mu: usize, m: usize) -> f64 {
        let n = self.points[mu];
        match m.cmp(&(n / 2)) {
            std::cmp::Ordering::Less => m as f64,
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Greater => m as f64 - n as f64,
        }
    }

    fn check_same(&self, other: &GridSpec) -> Result<()> {
        if self != other {
            return Err(Error::SpecMismatch(format!("{self:?} vs {other:?}")));
        }
        Ok(())
    }
}

/// Where a field lives: the flat box with metric η, or a coordinate box of a
/// chart anchored at `origin`.
#[derive(Debug, Clone)]
pub enum Geometry {
    Flat,
    Chart { chart: MetricChart, origin: Vec<f64> },
}

impl Geometry {
    pub fn is_flat(&self) -> bool {
        matches!(self, Geometry::Flat)
    }

    pub fn check(&self, spec: &GridSpec) -> Result<()> {
        if let Geometry::Chart { chart, origin } = self {
            if chart.dim() != spec.dim() || origin.len() != spec.dim() {
                return Err(Error::SpecMismatch(format!(
                    "chart `{}` has dimension {}, grid has {}",
                    chart.name(),
                    chart.dim(),
                    spec.dim()
                )));
            }
        }
        Ok(())
    }

    /// Chart coordinates of block point `b`.
    pub fn coords(&self, spec: &GridSpec, b: usize) -> Vec<f64> {
        let mut x = spec.block_coords(b);
        if let Geometry::Chart { origin, .. } = self {
            for (xi, o) in x.iter_mut().zip(origin) {
                *xi += o;
            }
        }
        x
    }

    /// Whether each coordinate of the box wraps around: always on the flat
    /// box, and on a chart only where a cyclic axis spans exactly one period.
    pub fn periodic_axes(&self, spec: &GridSpec) -> Vec<bool> {
        match self {
            Geometry::Flat => vec![true; spec.dim()],
            Geometry::Chart { chart, .. } => chart
                .axes()
                .iter()
                .zip(spec.lengths())
                .map(|(axis, l)| axis.period.is_some_and(|p| (p - l).abs() <= 1e-9 * p))
                .collect(),
        }
    }

    /// Fails with `StencilClipped` if any grid point of the box lies outside
    /// the chart's domain.
    pub fn check_grid(&self, spec: &GridSpec) -> Result<()> {
        self.check(spec)?;
        if let Geometry::Chart { chart, .. } = self {
            for b in 0..spec.block_len() {
                let x = self.coords(spec, b);
                if !chart.contains(&x) {
                    return Err(Error::StencilClipped {
                        chart: chart.name().to_string(),
                        point: x,
                    });
                }
            }
        }
        Ok(())
    }

    /// (g, g⁻¹) at block point `b`.
    pub fn metric(&self, spec: &GridSpec, b: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        match self {
            Geometry::Flat => Ok((eta(spec.dim()), eta(spec.dim()))),
            Geometry::Chart { chart, .. } => chart.metric_at(&self.coords(spec, b)),
        }
    }

    /// √|g| at every block point; `None` on the flat box where it is 1.
    pub fn density(&self, spec: &GridSpec) -> Result<Option<Vec<f64>>> {
        match self {
            Geometry::Flat => Ok(None),
            Geometry::Chart { chart, .. } => (0..spec.block_len())
                .map(|b| chart.volume_density_at(&self.coords(spec, b)))
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }
}

/// Complex values of ψ on the full N·d grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveField {
    spec: GridSpec,
    values: Vec<Complex64>,
    symmetrized: bool,
}

impl WaveField {
    pub fn new(spec: GridSpec, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::SpecMismatch(format!(
                "{} values for a grid of {} points",
                values.len(),
                spec.len()
            )));
        }
        if values.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::InvalidArgument("field values must be finite".into()));
        }
        Ok(WaveField {
            spec,
            values,
            symmetrized: false,
        })
    }

    pub fn zeros(spec: GridSpec) -> Self {
        let n = spec.len();
        WaveField {
            spec,
            values: vec![Complex64::default(); n],
            symmetrized: false,
        }
    }

    /// Samples `f` at every grid point; `f` receives the N·d grid coordinates
    /// with argument blocks concatenated.
    pub fn from_fn<F>(spec: GridSpec, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Complex64 + Sync,
    {
        let coords: Vec<Vec<f64>> = (0..spec.block_len()).map(|b| spec.block_coords(b)).collect();
        let values = (0..spec.len())
            .into_par_iter()
            .map(|i| {
                let x: Vec<f64> = spec
                    .split_index(i)
                    .into_iter()
                    .flat_map(|b| coords[b].iter().copied())
                    .collect();
                f(&x)
            })
            .collect();
        Self::new(spec, values)
    }

    /// amplitude · Π_j exp(i k_j · x_j), optionally symmetrized over the
    /// argument blocks. Without an amplitude the result has unit norm.
    pub fn plane_wave(
        spec: GridSpec,
        wavevectors: &[Vec<f64>],
        amplitude: Option<Complex64>,
        symmetrize: bool,
    ) -> Result<Self> {
        if wavevectors.len() != spec.n_args() || wavevectors.iter().any(|k| k.len() != spec.dim()) {
            return Err(Error::SpecMismatch(format!(
                "need {} wavevectors of dimension {}",
                spec.n_args(),
                spec.dim()
            )));
        }
        for k in wavevectors {
            for (mu, &kmu) in k.iter().enumerate() {
                let length = spec.lengths()[mu];
                let m = kmu * length / (2.0 * PI);
                if !kmu.is_finite() || (m - m.round()).abs() > 1e-9 * m.abs().max(1.0) {
                    return Err(Error::IncommensurateWavevector { value: kmu, length });
                }
            }
        }
        let d = spec.dim();
        let phase = |x: &[f64], order: &[usize]| -> Complex64 {
            let arg: f64 = order
                .iter()
                .enumerate()
                .map(|(slot, &j)| (0..d).map(|mu| wavevectors[j][mu] * x[slot * d + mu]).sum::<f64>())
                .sum();
            Complex64::from_polar(1.0, arg)
        };
        let n = spec.n_args();
        let field = Self::from_fn(spec, |x| {
            let direct: Vec<usize> = (0..n).collect();
            if symmetrize && n == 2 {
                phase(x, &direct) + phase(x, &[1, 0])
            } else {
                phase(x, &direct)
            }
        })?;
        let mut field = match amplitude {
            Some(a) => field.scaled(a),
            None => {
                let norm = field.norm();
                if norm == 0.0 {
                    return Err(Error::InvalidArgument("plane wave has zero norm".into()));
                }
                field.scaled(Complex64::from(1.0 / norm))
            }
        };
        field.symmetrized = symmetrize;
        Ok(field)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn is_symmetrized(&self) -> bool {
        self.symmetrized
    }

    /// Field with values mapped pointwise; the symmetrized flag is kept.
    pub fn map(&self, f: impl Fn(Complex64) -> Complex64 + Sync) -> Self {
        WaveField {
            spec: self.spec.clone(),
            values: self.values.par_iter().map(|&v| f(v)).collect(),
            symmetrized: self.symmetrized,
        }
    }

    pub fn scaled(&self, lambda: Complex64) -> Self {
        self.map(|v| lambda * v)
    }

    /// Pointwise `self + lambda · other`.
    pub fn axpy(&self, lambda: Complex64, other: &WaveField) -> Result<Self> {
        self.spec.check_same(&other.spec)?;
        Ok(WaveField {
            spec: self.spec.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + lambda * b).collect(),
            symmetrized: self.symmetrized && other.symmetrized,
        })
    }

    /// ψ(x, y) → ψ(y, x); the identity for N = 1.
    pub fn swap_arguments(&self) -> Self {
        if self.spec.n_args() == 1 {
            return self.clone();
        }
        let block = self.spec.block_len();
        let mut values = vec![Complex64::default(); self.values.len()];
        for x in 0..block {
            for y in 0..block {
                values[y * block + x] = self.values[x * block + y];
            }
        }
        WaveField {
            spec: self.spec.clone(),
            values,
            symmetrized: self.symmetrized,
        }
    }

    /// Average over argument permutations.
    pub fn symmetrize(&self) -> Self {
        let swapped = self.swap_arguments();
        let mut out = self.axpy(Complex64::from(1.0), &swapped).expect("same spec").scaled(Complex64::from(0.5));
        out.symmetrized = true;
        out
    }

    /// Largest |ψ(x, y) − ψ(y, x)|.
    pub fn exchange_defect(&self) -> f64 {
        let swapped = self.swap_arguments();
        self.values
            .iter()
            .zip(&swapped.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Spectral ∂/∂x_arg^mu.
    pub fn partial(&self, arg: usize, mu: usize) -> Self {
        let spec = &self.spec;
        let n = spec.points[mu];
        let stride = spec.stride(arg, mu);
        let mut planner = FftPlanner::<f64>::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let unit = 2.0 * PI / spec.lengths[mu];
        let factors: Vec<Complex64> = (0..n)
            .map(|m| Complex64::new(0.0, unit * spec.mode(mu, m) / n as f64))
            .collect();
        let mut values = self.values.clone();
        values.par_chunks_mut(stride * n).for_each(|chunk| {
            let mut line = vec![Complex64::default(); n];
            let mut scratch = vec![Complex64::default(); forward.get_inplace_scratch_len().max(inverse.get_inplace_scratch_len())];
            for offset in 0..stride {
                for (j, l) in line.iter_mut().enumerate() {
                    *l = chunk[offset + j * stride];
                }
                forward.process_with_scratch(&mut line, &mut scratch);
                for (l, f) in line.iter_mut().zip(&factors) {
                    *l *= f;
                }
                inverse.process_with_scratch(&mut line, &mut scratch);
                for (j, l) in line.iter().enumerate() {
                    chunk[offset + j * stride] = *l;
                }
            }
        });
        WaveField {
            spec: spec.clone(),
            values,
            symmetrized: false,
        }
    }

    /// Second-order central difference along coordinate `mu` of argument
    /// `arg`. Periodic axes wrap; otherwise the end points use one-sided
    /// second-order stencils.
    pub fn central_difference(&self, arg: usize, mu: usize, periodic: bool) -> Self {
        let spec = &self.spec;
        let n = spec.points[mu];
        let stride = spec.stride(arg, mu);
        let h = spec.spacing(mu);
        let mut values = vec![Complex64::default(); self.values.len()];
        values.par_chunks_mut(stride * n).enumerate().for_each(|(c, chunk)| {
            let src = &self.values[c * stride * n..(c + 1) * stride * n];
            for offset in 0..stride {
                let at = |j: usize| src[offset + j * stride];
                for j in 0..n {
                    chunk[offset + j * stride] = if periodic {
                        (at((j + 1) % n) - at((j + n - 1) % n)) / (2.0 * h)
                    } else if j == 0 {
                        (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
                    } else if j == n - 1 {
                        (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3)) / (2.0 * h)
                    } else {
                        (at(j + 1) - at(j - 1)) / (2.0 * h)
                    };
                }
            }
        });
        WaveField {
            spec: spec.clone(),
            values,
            symmetrized: false,
        }
    }

    /// All first derivatives, indexed `arg * d + mu`.
    pub fn gradient(&self) -> Vec<WaveField> {
        let d = self.spec.dim();
        (0..self.spec.n_args() * d)
            .map(|k| self.partial(k / d, k % d))
            .collect()
    }

    /// √⟨ψ|ψ⟩ with the flat measure.
    pub fn norm(&self) -> f64 {
        full_inner(self, self).map(|z| z.re.max(0.0).sqrt()).unwrap_or(0.0)
    }

    /// Values along coordinate `mu` of argument `arg`, all other indices 0.
    pub fn slice(&self, arg: usize, mu: usize) -> Vec<(f64, Complex64)> {
        let stride = self.spec.stride(arg, mu);
        let h = self.spec.spacing(mu);
        (0..self.spec.points[mu])
            .map(|j| (j as f64 * h, self.values[j * stride]))
            .collect()
    }
}

/// ⟨A|B⟩ over the whole grid with the flat measure.
pub fn full_inner(a: &WaveField, b: &WaveField) -> Result<Complex64> {
    full_inner_weighted(a, b, None)
}

/// ⟨A|B⟩ over the whole grid; `density` holds √|g| per block point.
pub fn full_inner_weighted(a: &WaveField, b: &WaveField, density: Option<&[f64]>) -> Result<Complex64> {
    a.spec.check_same(&b.spec)?;
    let spec = &a.spec;
    let block = spec.block_len();
    let weight = |i: usize| -> f64 {
        match density {
            None => 1.0,
            Some(w) => {
                let mut rem = i;
                let mut p = 1.0;
                for _ in 0..spec.n_args() {
                    p *= w[rem % block];
                    rem /= block;
                }
                p
            }
        }
    };
    let sum = pairwise_sum_by(0, spec.len(), &|i| a.values[i].conj() * b.values[i] * weight(i));
    Ok(sum * spec.cell_volume().powi(spec.n_args() as i32))
}

/// ⟨A|B⟩ integrated over every argument slot except `keep`, returned as a
/// function on one block. For N = 1 this is the pointwise product A*·B.
pub fn reduced_inner(a: &WaveField, b: &WaveField, keep: usize) -> Result<Vec<Complex64>> {
    reduced_inner_weighted(a, b, keep, None)
}

/// Reduced inner product keeping the last argument slot.
pub fn reduced_inner_1(a: &WaveField, b: &WaveField) -> Result<Vec<Complex64>> {
    reduced_inner(a, b, a.spec.n_args() - 1)
}

pub fn reduced_inner_weighted(
    a: &WaveField,
    b: &WaveField,
    keep: usize,
    density: Option<&[f64]>,
) -> Result<Vec<Complex64>> {
    a.spec.check_same(&b.spec)?;
    let spec = &a.spec;
    if keep >= spec.n_args() {
        return Err(Error::InvalidArgument(format!("slot {keep} out of range")));
    }
    let block = spec.block_len();
    if spec.n_args() == 1 {
        return Ok(a.values.iter().zip(&b.values).map(|(x, y)| x.conj() * y).collect());
    }
    let dv = spec.cell_volume();
    let w = |j: usize| density.map_or(1.0, |w| w[j]);
    Ok((0..block)
        .into_par_iter()
        .map(|z| {
            let term = |j: usize| {
                let i = if keep == 1 { j * block + z } else { z * block + j };
                a.values[i].conj() * b.values[i] * w(j)
            };
            pairwise_sum_by(0, block, &term) * dv
        })
        .collect())
}

/// Coefficients of the three Lagrangian terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LagrangianParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl LagrangianParams {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && c.is_finite()) {
            return Err(Error::InvalidArgument("Lagrangian coefficients must be finite".into()));
        }
        Ok(LagrangianParams { a, b, c })
    }

    /// The flat-space ratios b = −N·c, a = (N − 1)·c.
    pub fn flat_limit(n_args: usize, c: f64) -> Self {
        let n = n_args as f64;
        LagrangianParams {
            a: (n - 1.0) * c,
            b: -n * c,
            c,
        }
    }

    pub fn c_only(c: f64) -> Self {
        LagrangianParams { a: 0.0, b: 0.0, c }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LagrangianTerms {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl LagrangianTerms {
    pub fn total(&self) -> f64 {
        self.a + self.b + self.c
    }
}

fn require_real(z: Complex64) -> Result<f64> {
    let residual = z.im.abs() / z.re.abs().max(1.0);
    if residual > HERMITICITY_TOL {
        return Err(Error::NumericalHermiticityFailure { residual });
    }
    Ok(z.re)
}

/// η^{μν} M_{μν} for a d×d table of complex values.
fn contract_eta(d: usize, m: impl Fn(usize, usize) -> Complex64) -> Complex64 {
    (0..d).map(|mu| if mu == 0 { -m(0, 0) } else { m(mu, mu) }).sum()
}

/// Flat-box values of the a, b and c terms. L_a and L_b pair the two
/// argument slots and vanish for N = 1; L_c is the single-slot kinetic
/// term averaged over slots.
pub fn lagrangian_terms(field: &WaveField, params: &LagrangianParams) -> Result<LagrangianTerms> {
    let spec = field.spec();
    let d = spec.dim();
    let n = spec.n_args();
    let grad = field.gradient();
    let g = |arg: usize, mu: usize| &grad[arg * d + mu];
    let mut kinetic = Complex64::default();
    for arg in 0..n {
        kinetic += contract_eta(d, |mu, nu| full_inner(g(arg, mu), g(arg, nu)).expect("same spec"));
    }
    let l_c = params.c * require_real(kinetic / n as f64)?;
    if n == 1 {
        return Ok(LagrangianTerms { a: 0.0, b: 0.0, c: l_c });
    }
    let mixed = contract_eta(d, |mu, nu| full_inner(g(0, mu), g(1, nu)).expect("same spec"));
    let quartic = contract_eta(d, |mu, nu| {
        full_inner(g(0, mu), field).expect("same spec") * full_inner(field, g(1, nu)).expect("same spec")
    });
    Ok(LagrangianTerms {
        a: params.a * require_real(mixed)?,
        b: params.b * require_real(quartic)?,
        c: l_c,
    })
}

/// Spread of the total energy-momentum of ψ:
/// Σ_{i,j} η^{μν} (⟨P_{iμ}ψ|P_{jν}ψ⟩ − ⟨P_{iμ}ψ|ψ⟩⟨ψ|P_{jν}ψ⟩), with
/// expectations taken in the normalized state.
pub fn mp_dispersion(field: &WaveField) -> Result<f64> {
    let spec = field.spec();
    let d = spec.dim();
    let n = spec.n_args();
    let norm2 = full_inner(field, field)?.re;
    if norm2 <= 0.0 {
        return Err(Error::InvalidArgument("dispersion of the zero field".into()));
    }
    let grad = field.gradient();
    let expect: Vec<Complex64> = grad.iter().map(|g| full_inner(field, g).expect("same spec") / norm2).collect();
    let mut total = Complex64::default();
    for i in 0..n {
        for j in 0..n {
            total += contract_eta(d, |mu, nu| {
                let second = full_inner(&grad[i * d + mu], &grad[j * d + nu]).expect("same spec") / norm2;
                // ⟨Pψ|ψ⟩ = −i⟨∂ψ|ψ⟩ = −i·conj⟨ψ|∂ψ⟩ and ⟨ψ|Pψ⟩ = i⟨ψ|∂ψ⟩.
                second - expect[i * d + mu].conj() * expect[j * d + nu]
            });
        }
    }
    require_real(total)
}

/// Writes a grid in the flat binary layout: N, d, the point counts and box
/// lengths as little-endian 64-bit values, then interleaved re/im pairs.
pub fn write_grid_binary<W: Write>(
    w: &mut W,
    n_args: usize,
    points: &[usize],
    lengths: &[f64],
    values: &[Complex64],
) -> Result<()> {
    let mut buf = Vec::with_capacity(16 * (values.len() + points.len() + 1));
    buf.extend_from_slice(&(n_args as u64).to_le_bytes());
    buf.extend_from_slice(&(points.len() as u64).to_le_bytes());
    for &p in points {
        buf.extend_from_slice(&(p as u64).to_le_bytes());
    }
    for &l in lengths {
        buf.extend_from_slice(&l.to_le_bytes());
    }
    for v in values {
        buf.extend_from_slice(&v.re.to_le_bytes());
        buf.extend_from_slice(&v.im.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn write_binary<W: Write>(field: &WaveField, w: &mut W) -> Result<()> {
    let spec = field.spec();
    write_grid_binary(w, spec.n_args(), spec.points(), spec.lengths(), field.values())
}

pub fn read_binary<R: Read>(r: &mut R) -> Result<WaveField> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut words = bytes.chunks_exact(8).map(|c| <[u8; 8]>::try_from(c).expect("8 bytes"));
    let mut next = || words.next().ok_or_else(|| Error::Io("truncated field file".into()));
    let n_args = u64::from_le_bytes(next()?) as usize;
    let d = u64::from_le_bytes(next()?) as usize;
    if d == 0 || d > 4 {
        return Err(Error::Io(format!("bad dimension {d} in field header")));
    }
    let points = (0..d).map(|_| next().map(|w| u64::from_le_bytes(w) as usize)).collect::<Result<Vec<_>>>()?;
    let lengths = (0..d).map(|_| next().map(f64::from_le_bytes)).collect::<Result<Vec<_>>>()?;
    let spec = GridSpec::new(n_args, lengths, points)?;
    let values = (0..spec.len())
        .map(|_| Ok(Complex64::new(f64::from_le_bytes(next()?), f64::from_le_bytes(next()?))))
        .collect::<Result<Vec<_>>>()?;
    WaveField::new(spec, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec2(n: usize) -> GridSpec {
        GridSpec::uniform(2, 2, 2.0 * PI, n).unwrap()
    }

    #[test]
    fn layout_strides() {
        let spec = GridSpec::new(2, vec![1.0, 2.0], vec![4, 8]).unwrap();
        assert_eq!(spec.stride(1, 1), 1);
        assert_eq!(spec.stride(1, 0), 8);
        assert_eq!(spec.stride(0, 1), 32);
        assert_eq!(spec.stride(0, 0), 256);
        assert_eq!(spec.split_index(3 * 32 + 5), vec![3, 5]);
        assert_eq!(spec.block_coords(9), vec![0.25, 0.25]);
    }

    #[test]
    fn spec_validation() {
        assert!(GridSpec::uniform(3, 2, 1.0, 4).is_err());
        assert!(GridSpec::uniform(1, 2, 1.0, 6).is_err());
        assert!(GridSpec::uniform(1, 2, -1.0, 4).is_err());
        assert!(GridSpec::with_cap(2, vec![1.0; 2], vec![64; 2], 1 << 20).is_err());
    }

    #[test]
    fn plane_wave_derivative_is_ik() {
        let spec = GridSpec::new(1, vec![2.0, 3.0], vec![8, 16]).unwrap();
        let k = vec![2.0 * PI / 2.0 * 2.0, -2.0 * PI / 3.0 * 3.0];
        let psi = WaveField::plane_wave(spec, &[k.clone()], None, false).unwrap();
        for mu in 0..2 {
            let d = psi.partial(0, mu);
            let expect = psi.scaled(Complex64::new(0.0, k[mu]));
            let err = d.values().iter().zip(expect.values()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-12, "{err}");
        }
        assert!((psi.norm() - 1.0).abs() < 1e-12);
        assert!((psi.values()[0].norm() - 1.0 / 6f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn incommensurate_wavevector_is_rejected() {
        let err = WaveField::plane_wave(spec2(8), &[vec![0.5, 0.0], vec![0.0, 0.0]], None, false).unwrap_err();
        assert!(matches!(err, Error::IncommensurateWavevector { .. }));
    }

    #[test]
    fn reduced_inner_of_product_wave() {
        let l = 2.0 * PI;
        let psi = WaveField::plane_wave(spec2(8), &[vec![1.0, 2.0], vec![-1.0, 1.0]], None, false).unwrap();
        let density = reduced_inner_1(&psi, &psi).unwrap();
        assert!(density.iter().all(|z| (z - 1.0 / (l * l)).norm() < 1e-12));
        let dy = psi.partial(1, 1);
        let r = reduced_inner_1(&psi, &dy).unwrap();
        assert!(r.iter().all(|z| (z - Complex64::new(0.0, 1.0 / (l * l))).norm() < 1e-12));
        let full = full_inner(&psi, &dy).unwrap();
        assert!((full - Complex64::new(0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn symmetrized_wave_is_exchange_symmetric() {
        let psi = WaveField::plane_wave(spec2(8), &[vec![1.0, 2.0], vec![3.0, -1.0]], None, true).unwrap();
        assert!(psi.exchange_defect() < 1e-12);
        assert!((psi.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_waves() {
        let a = WaveField::plane_wave(spec2(8), &[vec![1.0, 0.0], vec![0.0, 0.0]], None, false).unwrap();
        let b = WaveField::plane_wave(spec2(8), &[vec![2.0, 0.0], vec![0.0, 0.0]], None, false).unwrap();
        assert!(full_inner(&a, &b).unwrap().norm() < 1e-12);
    }

    #[test]
    fn lagrangian_of_product_wave() {
        let k = [1.0, 2.0];
        let l = [3.0, -1.0];
        let psi = WaveField::plane_wave(spec2(8), &[k.to_vec(), l.to_vec()], None, false).unwrap();
        let terms = lagrangian_terms(&psi, &LagrangianParams::new(1.0, 1.0, 1.0).unwrap()).unwrap();
        let kl = -k[0] * l[0] + k[1] * l[1];
        assert!((terms.a - kl).abs() < 1e-10, "{terms:?}");
        let constant = WaveField::plane_wave(spec2(8), &[vec![0.0; 2], vec![0.0; 2]], None, false).unwrap();
        let zero = lagrangian_terms(&constant, &LagrangianParams::new(1.0, 1.0, 1.0).unwrap()).unwrap();
        assert!(zero.a.abs() < 1e-12 && zero.b.abs() < 1e-12 && zero.c.abs() < 1e-12);
    }

    #[test]
    fn dispersion_of_two_wave_superposition() {
        let spec = GridSpec::uniform(1, 2, 2.0 * PI, 16).unwrap();
        let (k1, k2) = ([1.0, 3.0], [-2.0, 1.0]);
        let psi = WaveField::from_fn(spec, |x| {
            Complex64::from_polar(1.0, k1[0] * x[0] + k1[1] * x[1]) + Complex64::from_polar(1.0, k2[0] * x[0] + k2[1] * x[1])
        })
        .unwrap();
        let dk = [k1[0] - k2[0], k1[1] - k2[1]];
        let expect = (-dk[0] * dk[0] + dk[1] * dk[1]) / 4.0;
        assert!((mp_dispersion(&psi).unwrap() - expect).abs() < 1e-9);
        let rotated = psi.scaled(Complex64::from_polar(1.0, 0.7));
        assert!((mp_dispersion(&rotated).unwrap() - expect).abs() < 1e-10);
    }

    #[test]
    fn binary_round_trip() {
        let psi = WaveField::plane_wave(spec2(4), &[vec![1.0, 1.0], vec![2.0, 0.0]], None, true).unwrap();
        let mut buf = Vec::new();
        write_binary(&psi, &mut buf).unwrap();
        assert_eq!(buf.len(), 8 * (2 + 2 + 2) + 16 * 256);
        let back = read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(back.values(), psi.values());
        assert_eq!(back.spec(), psi.spec());
    }
}
