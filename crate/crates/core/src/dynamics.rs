//! The a, b and c dynamical operators, residual certification of candidate
//! solutions, and a leapfrog integrator for the single-argument wave equation.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::wavefield::{
    full_inner, pairwise_sum_by, write_grid_binary, Geometry, LagrangianParams, WaveField,
};

/// How the operators are applied.
#[derive(Debug, Clone)]
pub struct OperatorConfig {
    pub params: LagrangianParams,
    pub geometry: Geometry,
    /// Average every operator over the ordered argument pairs (x, y) = (x_i, x_j).
    pub symmetrize: bool,
}

impl OperatorConfig {
    pub fn flat(params: LagrangianParams, symmetrize: bool) -> Self {
        OperatorConfig {
            params,
            geometry: Geometry::Flat,
            symmetrize,
        }
    }
}

/// Ordered argument pairs the operators are evaluated on.
fn pairs(n: usize, symmetrize: bool) -> Vec<(usize, usize)> {
    match (n, symmetrize) {
        (1, _) => vec![],
        (_, false) => vec![(0, 1)],
        (_, true) => vec![(0, 1), (1, 0)],
    }
}

fn require_flat(config: &OperatorConfig, what: &str) -> Result<()> {
    if config.geometry.is_flat() {
        Ok(())
    } else {
        Err(Error::UnsupportedGeometry(format!("{what} is only implemented on the flat box")))
    }
}

/// Σ_k w_k · f_k, all on the same spec.
fn combine(zero: &WaveField, terms: &[(Complex64, &WaveField)]) -> WaveField {
    terms
        .iter()
        .fold(zero.clone(), |acc, (w, f)| acc.axpy(*w, f).expect("same spec"))
}

/// η^{μν} with the time coordinate first.
fn eta_diag(mu: usize) -> f64 {
    if mu == 0 {
        -1.0
    } else {
        1.0
    }
}

/// a · η^{μν} ∂_{x,μ} ∂_{y,ν} ψ.
pub fn apply_da(field: &WaveField, config: &OperatorConfig) -> Result<WaveField> {
    require_flat(config, "the a operator")?;
    let spec = field.spec();
    let d = spec.dim();
    let zero = WaveField::zeros(spec.clone());
    let pairs = pairs(spec.n_args(), config.symmetrize);
    if pairs.is_empty() {
        return Ok(zero);
    }
    let weight = config.params.a / pairs.len() as f64;
    let mut out = zero.clone();
    for (x, y) in pairs {
        for mu in 0..d {
            let term = field.partial(y, mu).partial(x, mu);
            out = out.axpy(Complex64::from(weight * eta_diag(mu)), &term)?;
        }
    }
    Ok(out)
}

/// b · η^{μν} (−⟨ψ|∂_{y,μ}ψ⟩ ∂_{x,ν}ψ + ⟨ψ|∂_{x,μ}ψ⟩ ∂_{y,ν}ψ), with
/// unnormalized expectations so the result is cubic in ψ.
pub fn apply_db(field: &WaveField, config: &OperatorConfig) -> Result<WaveField> {
    require_flat(config, "the b operator")?;
    let spec = field.spec();
    let d = spec.dim();
    let zero = WaveField::zeros(spec.clone());
    let pairs = pairs(spec.n_args(), config.symmetrize);
    if pairs.is_empty() {
        return Ok(zero);
    }
    let grad = field.gradient();
    let expect: Vec<Complex64> = grad.iter().map(|g| full_inner(field, g)).collect::<Result<_>>()?;
    let weight = config.params.b / pairs.len() as f64;
    let mut terms = Vec::new();
    for (x, y) in pairs {
        for mu in 0..d {
            let s = weight * eta_diag(mu);
            terms.push((-s * expect[y * d + mu], &grad[x * d + mu]));
            terms.push((s * expect[x * d + mu], &grad[y * d + mu]));
        }
    }
    Ok(combine(&zero, &terms))
}

/// c · g^{μν} ∇_μ ∇_ν ψ acting on the x slot (on every slot, averaged, when
/// symmetrized). On a chart the divergence form (1/√|g|) ∂_μ(√|g| g^{μν} ∂_ν ψ)
/// is evaluated with second-order differences.
pub fn apply_dc(field: &WaveField, config: &OperatorConfig) -> Result<WaveField> {
    let spec = field.spec();
    let n = spec.n_args();
    let slots: Vec<usize> = if config.symmetrize { (0..n).collect() } else { vec![0] };
    let weight = Complex64::from(config.params.c / slots.len() as f64);
    let mut out = WaveField::zeros(spec.clone());
    for slot in slots {
        let term = match &config.geometry {
            Geometry::Flat => flat_box(field, slot),
            geometry => curved_box(field, slot, geometry)?,
        };
        out = out.axpy(weight, &term)?;
    }
    Ok(out)
}

fn flat_box(field: &WaveField, slot: usize) -> WaveField {
    let d = field.spec().dim();
    let zero = WaveField::zeros(field.spec().clone());
    let seconds: Vec<WaveField> = (0..d).map(|mu| field.partial(slot, mu).partial(slot, mu)).collect();
    let terms: Vec<(Complex64, &WaveField)> =
        seconds.iter().enumerate().map(|(mu, f)| (Complex64::from(eta_diag(mu)), f)).collect();
    combine(&zero, &terms)
}

/// Laplace–Beltrami operator on one argument slot over a chart box.
fn curved_box(field: &WaveField, slot: usize, geometry: &Geometry) -> Result<WaveField> {
    let spec = field.spec().clone();
    geometry.check_grid(&spec)?;
    let d = spec.dim();
    let block = spec.block_len();
    let periodic = geometry.periodic_axes(&spec);
    let density = geometry.density(&spec)?.expect("chart geometry has a density");
    let inverse: Vec<_> = (0..block).map(|b| geometry.metric(&spec, b).map(|(_, inv)| inv)).collect::<Result<_>>()?;
    let grad: Vec<WaveField> = (0..d).map(|mu| field.central_difference(slot, mu, periodic[mu])).collect();
    let slot_block = |i: usize| spec.split_index(i)[slot];
    let mut out = WaveField::zeros(spec.clone());
    for mu in 0..d {
        let values: Vec<Complex64> = (0..spec.len())
            .into_par_iter()
            .map(|i| {
                let b = slot_block(i);
                (0..d).map(|nu| grad[nu].values()[i] * inverse[b][(mu, nu)]).sum::<Complex64>() * density[b]
            })
            .collect();
        let flux = WaveField::new(spec.clone(), values)?;
        out = out.axpy(Complex64::from(1.0), &flux.central_difference(slot, mu, periodic[mu]))?;
    }
    let values = out
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| v / density[slot_block(i)])
        .collect();
    WaveField::new(spec, values)
}

/// (D_a + D_b + D_c) ψ.
pub fn apply_total(field: &WaveField, config: &OperatorConfig) -> Result<WaveField> {
    let mut out = apply_dc(field, config)?;
    if config.params.a != 0.0 {
        out = out.axpy(Complex64::from(1.0), &apply_da(field, config)?)?;
    }
    if config.params.b != 0.0 {
        out = out.axpy(Complex64::from(1.0), &apply_db(field, config)?)?;
    }
    Ok(out)
}

/// Grid 2-norm √(Σ |f|² ΔV) of a field.
pub fn grid_norm(field: &WaveField) -> f64 {
    let spec = field.spec();
    let dv = spec.cell_volume().powi(spec.n_args() as i32);
    let v = field.values();
    (pairwise_sum_by(0, v.len(), &|i| v[i].norm_sqr()) * dv).sqrt()
}

/// ‖(D_a + D_b + D_c) ψ‖.
pub fn residual(field: &WaveField, config: &OperatorConfig) -> Result<f64> {
    Ok(grid_norm(&apply_total(field, config)?))
}

/// The pair-symmetric flat form
/// Σ_{i,j} η^{μν} ∂_{i,μ} (∂_{j,ν} − γ_{ij} ⟨ψ|∂_{j,ν}ψ⟩) ψ with γ_{ij} = 1
/// for i > j and γ_{ij} = −γ_{ji}.
pub fn gamma_form(field: &WaveField) -> Result<WaveField> {
    let spec = field.spec();
    let d = spec.dim();
    let n = spec.n_args();
    let grad = field.gradient();
    let mut out = WaveField::zeros(spec.clone());
    for i in 0..n {
        for j in 0..n {
            let gamma = match i.cmp(&j) {
                std::cmp::Ordering::Greater => 1.0,
                std::cmp::Ordering::Less => -1.0,
                std::cmp::Ordering::Equal => 0.0,
            };
            for mu in 0..d {
                let s = Complex64::from(eta_diag(mu));
                out = out.axpy(s, &grad[j * d + mu].partial(i, mu))?;
                if gamma != 0.0 {
                    let e = full_inner(field, &grad[j * d + mu])?;
                    out = out.axpy(-s * gamma * e, &grad[i * d + mu])?;
                }
            }
        }
    }
    Ok(out)
}

/// Space-time history of a single-argument field on a periodic line.
#[derive(Debug, Clone)]
pub struct Evolution {
    pub length: f64,
    pub dt: f64,
    rows: Vec<Vec<Complex64>>,
}

impl Evolution {
    /// ψ(t_n, ·) for n = 0..=steps.
    pub fn rows(&self) -> &[Vec<Complex64>] {
        &self.rows
    }

    pub fn dx(&self) -> f64 {
        self.length / self.rows[0].len() as f64
    }

    pub fn final_time(&self) -> f64 {
        self.dt * (self.rows.len() - 1) as f64
    }

    /// Largest |(−∂_t² + ∂_x²) ψ| over rows at least three steps from either
    /// end, with ∂_x² spectral and ∂_t² a sixth-order central difference.
    pub fn residual(&self) -> f64 {
        const W: [f64; 4] = [-49.0 / 18.0, 3.0 / 2.0, -3.0 / 20.0, 1.0 / 90.0];
        let n = self.rows[0].len();
        let mut planner = FftPlanner::<f64>::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let unit = 2.0 * PI / self.length;
        let dt2 = self.dt * self.dt;
        (3..self.rows.len().saturating_sub(3))
            .into_par_iter()
            .map(|k| {
                let mut line = self.rows[k].clone();
                forward.process(&mut line);
                for (m, v) in line.iter_mut().enumerate() {
                    let mode = if m < n / 2 { m as f64 } else if m == n / 2 { 0.0 } else { m as f64 - n as f64 };
                    *v *= -(unit * mode).powi(2) / n as f64;
                }
                inverse.process(&mut line);
                (0..n)
                    .map(|j| {
                        let tt = W[0] * self.rows[k][j]
                            + (1..4).map(|s| W[s] * (self.rows[k + s][j] + self.rows[k - s][j])).sum::<Complex64>();
                        (line[j] - tt / dt2).norm()
                    })
                    .fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max)
    }

    /// Conserved discrete energy of the scheme between rows n and n + 1.
    pub fn energy(&self, step: usize) -> f64 {
        let (a, b) = (&self.rows[step], &self.rows[step + 1]);
        let n = a.len();
        let dx = self.dx();
        let grad = |r: &[Complex64], j: usize| (r[(j + 1) % n] - r[j]) / dx;
        0.5 * dx
            * (0..n)
                .map(|j| ((b[j] - a[j]) / self.dt).norm_sqr() + (grad(b, j).conj() * grad(a, j)).re)
                .sum::<f64>()
    }

    /// Largest relative change of the discrete energy over the run.
    pub fn energy_drift(&self) -> f64 {
        let e0 = self.energy(0);
        let scale = e0.abs().max(f64::MIN_POSITIVE);
        (1..self.rows.len() - 1).map(|k| (self.energy(k) - e0).abs() / scale).fold(0.0, f64::max)
    }

    /// Writes the history as an N = 1, d = 2 field over (t, x).
    pub fn write_binary<W: std::io::Write>(&self, w: &mut W) -> Result<()> {
        let values: Vec<Complex64> = self.rows.iter().flatten().copied().collect();
        write_grid_binary(
            w,
            1,
            &[self.rows.len(), self.rows[0].len()],
            &[self.final_time(), self.length],
            &values,
        )
    }
}

/// Leapfrog integration of −∂_t²ψ + ∂_x²ψ = 0 on a periodic line of length
/// `length` from ψ(0, ·) = `initial` and ∂_tψ(0, ·) = `velocity`, using the
/// three-point Laplacian.
pub fn evolve_n1_flat(
    initial: &[Complex64],
    velocity: &[Complex64],
    length: f64,
    steps: usize,
    dt: f64,
) -> Result<Evolution> {
    let n = initial.len();
    if n < 4 || velocity.len() != n {
        return Err(Error::SpecMismatch("initial data slices must have equal length ≥ 4".into()));
    }
    if !(length.is_finite() && length > 0.0 && dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidArgument("length and time step must be positive".into()));
    }
    let dx = length / n as f64;
    if dt > dx {
        return Err(Error::CflViolation { dt, dx });
    }
    let lap = |r: &[Complex64], j: usize| (r[(j + 1) % n] - 2.0 * r[j] + r[(j + n - 1) % n]) / (dx * dx);
    let mut rows = Vec::with_capacity(steps + 1);
    rows.push(initial.to_vec());
    if steps > 0 {
        let first: Vec<Complex64> = (0..n)
            .map(|j| initial[j] + dt * velocity[j] + 0.5 * dt * dt * lap(initial, j))
            .collect();
        rows.push(first);
    }
    for k in 1..steps {
        let (prev, cur) = (&rows[k - 1], &rows[k]);
        let next: Vec<Complex64> = (0..n).map(|j| 2.0 * cur[j] - prev[j] + dt * dt * lap(cur, j)).collect();
        rows.push(next);
    }
    Ok(Evolution { length, dt, rows })
}
