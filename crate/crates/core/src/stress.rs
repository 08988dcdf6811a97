//! Stress-energy tensors of space-time wavefunctions, their divergence, and
//! observer-sampled energy-condition audits.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::chart::orthonormal_frame;
use crate::error::{Error, Result};
use crate::wavefield::{
    full_inner, reduced_inner, reduced_inner_weighted, GridSpec, Geometry, LagrangianParams, WaveField,
};

/// Margin at or above which a condition passes.
pub const PASS_MARGIN: f64 = -1e-8;
/// Margin below which a condition fails outright.
pub const FAIL_MARGIN: f64 = -1e-6;
/// Largest rapidity of sampled observers.
pub const MAX_RAPIDITY: f64 = 3.0;

/// Which contributions a stress field contains.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Pieces {
    pub kinetic: bool,
    pub i_a: bool,
    pub i_b: bool,
    pub i_c: bool,
}

/// T_{αβ} (lower indices) at every point z of one argument block.
#[derive(Debug, Clone)]
pub struct StressField {
    block: GridSpec,
    geometry: Geometry,
    samples: Vec<DMatrix<f64>>,
    pieces: Pieces,
}

impl StressField {
    /// Wraps precomputed samples on the block grid of `block` (an N = 1 spec).
    pub fn from_samples(block: GridSpec, geometry: Geometry, samples: Vec<DMatrix<f64>>, pieces: Pieces) -> Result<Self> {
        if block.n_args() != 1 || samples.len() != block.block_len() {
            return Err(Error::SpecMismatch("one sample per point of a single-argument grid".into()));
        }
        let d = block.dim();
        if samples.iter().any(|t| t.nrows() != d || t.ncols() != d || t.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidArgument("samples must be finite d×d matrices".into()));
        }
        geometry.check(&block)?;
        Ok(StressField {
            block,
            geometry,
            samples,
            pieces,
        })
    }

    pub fn samples(&self) -> &[DMatrix<f64>] {
        &self.samples
    }

    pub fn block(&self) -> &GridSpec {
        &self.block
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn pieces(&self) -> Pieces {
        self.pieces
    }

    pub fn dim(&self) -> usize {
        self.block.dim()
    }

    /// Chart coordinates of sample `b`.
    pub fn point(&self, b: usize) -> Vec<f64> {
        self.geometry.coords(&self.block, b)
    }

    /// Largest |T_{αβ} − T_{βα}|.
    pub fn asymmetry(&self) -> f64 {
        self.samples.iter().map(|t| (t - t.transpose()).amax()).fold(0.0, f64::max)
    }

    /// Largest |T_{αβ} − S_{αβ}| against another stress field.
    pub fn max_difference(&self, other: &StressField) -> f64 {
        self.samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max)
    }
}

fn block_spec(spec: &GridSpec) -> GridSpec {
    GridSpec::new(1, spec.lengths().to_vec(), spec.points().to_vec()).expect("block of a valid spec")
}

/// First derivatives of ψ in slot `slot`, spectral on the flat box and
/// second-order differences on a chart.
fn slot_gradient(field: &WaveField, slot: usize, geometry: &Geometry) -> Vec<WaveField> {
    let spec = field.spec();
    let periodic = geometry.periodic_axes(spec);
    (0..spec.dim())
        .map(|mu| match geometry {
            Geometry::Flat => field.partial(slot, mu),
            Geometry::Chart { .. } => field.central_difference(slot, mu, periodic[mu]),
        })
        .collect()
}

/// The single-slot reduced table R_{αβ}(z) = Re ⟨∂_αψ|∂_βψ⟩^{(1)}(z).
fn kinetic_table(grad: &[WaveField], density: Option<&[f64]>) -> Result<Vec<DMatrix<f64>>> {
    let d = grad.len();
    let n = grad[0].spec().n_args();
    let block = grad[0].spec().block_len();
    let mut out = vec![DMatrix::<f64>::zeros(d, d); block];
    for alpha in 0..d {
        for beta in alpha..d {
            let r = reduced_inner_weighted(&grad[alpha], &grad[beta], n - 1, density)?;
            for (t, v) in out.iter_mut().zip(&r) {
                t[(alpha, beta)] = v.re;
                t[(beta, alpha)] = v.re;
            }
        }
    }
    Ok(out)
}

/// I_c(z) = c ∫ dv(x) g^{μν}(x) ∂_{x,μ}ψ*(z, x) ∂_{x,ν}ψ(z, x) for N = 2; zero for N = 1.
fn i_c_values(field: &WaveField, geometry: &Geometry, c: f64) -> Result<Vec<f64>> {
    let spec = field.spec();
    let block = spec.block_len();
    if spec.n_args() == 1 {
        return Ok(vec![0.0; block]);
    }
    let d = spec.dim();
    let grad = slot_gradient(field, 1, geometry);
    let density = geometry.density(spec)?;
    let inverse: Vec<DMatrix<f64>> = (0..block)
        .map(|b| geometry.metric(spec, b).map(|(_, inv)| inv))
        .collect::<Result<_>>()?;
    let dv = spec.cell_volume();
    Ok((0..block)
        .into_par_iter()
        .map(|z| {
            let mut acc = 0.0;
            for x in 0..block {
                let i = z * block + x;
                let w = density.as_ref().map_or(1.0, |w| w[x]);
                let mut s = 0.0;
                for mu in 0..d {
                    for nu in 0..d {
                        let g = inverse[x][(mu, nu)];
                        if g != 0.0 {
                            s += g * (grad[mu].values()[i].conj() * grad[nu].values()[i]).re;
                        }
                    }
                }
                acc += w * s;
            }
            c * acc * dv
        })
        .collect())
}

/// T_{αβ} = c (R_{αβ} − ½ g_{αβ} g^{μν} R_{μν}) − g_{αβ} I_c on the flat box or a chart.
pub fn stress_c(field: &WaveField, geometry: &Geometry, c: f64) -> Result<StressField> {
    let spec = field.spec();
    geometry.check_grid(spec)?;
    let n = spec.n_args();
    let grad = slot_gradient(field, n - 1, geometry);
    let density = geometry.density(spec)?;
    let table = kinetic_table(&grad, density.as_deref())?;
    let i_c = i_c_values(field, geometry, c)?;
    let samples = table
        .into_iter()
        .enumerate()
        .map(|(b, r)| {
            let (g, inv) = geometry.metric(spec, b)?;
            let trace = (&inv.component_mul(&r)).sum();
            Ok((r - &g * (0.5 * trace)) * c - &g * i_c[b])
        })
        .collect::<Result<Vec<_>>>()?;
    StressField::from_samples(
        block_spec(spec),
        geometry.clone(),
        samples,
        Pieces {
            kinetic: true,
            i_c: true,
            ..Pieces::default()
        },
    )
}

/// The trace-multiplying integrals on the flat box.
#[derive(Debug, Clone, PartialEq)]
pub struct ITerms {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl ITerms {
    pub fn total(&self) -> Vec<f64> {
        (0..self.a.len()).map(|z| self.a[z] + self.b[z] + self.c[z]).collect()
    }
}

fn eta_sign(mu: usize) -> f64 {
    if mu == 0 {
        -1.0
    } else {
        1.0
    }
}

/// I_a, I_b and I_c at every z for an N = 2 field on the flat box. Each is
/// real on exchange-symmetric fields; the real part is returned.
pub fn compute_i_terms(field: &WaveField, params: &LagrangianParams) -> Result<ITerms> {
    let spec = field.spec();
    if spec.n_args() != 2 {
        return Err(Error::SpecMismatch("the I integrals need N = 2".into()));
    }
    let d = spec.dim();
    let block = spec.block_len();
    let grad = field.gradient();
    let dx = |mu: usize| &grad[mu];
    let dy = |mu: usize| &grad[d + mu];
    let mut i_a = vec![Complex64::default(); block];
    let mut i_b = vec![Complex64::default(); block];
    for mu in 0..d {
        let s = eta_sign(mu);
        // a: x pinned to z with y integrated, plus y pinned to z with x integrated
        let first = reduced_inner(dx(mu), dy(mu), 0)?;
        let second = reduced_inner(dx(mu), dy(mu), 1)?;
        // b: A, B pin the first slot, C, D the second; E = ⟨ψ|∂_yψ⟩ and F = conj(E)
        let a_mu = reduced_inner(dy(mu), field, 0)?;
        let b_mu = reduced_inner(field, dy(mu), 0)?;
        let c_mu = reduced_inner(dy(mu), field, 1)?;
        let d_mu = reduced_inner(field, dy(mu), 1)?;
        let e = full_inner(field, dy(mu))?;
        let f = e.conj();
        for z in 0..block {
            i_a[z] += s * (first[z] + second[z]);
            i_b[z] += s * (a_mu[z] * e + b_mu[z] * f + c_mu[z] * e + f * d_mu[z]);
        }
    }
    let i_c = i_c_values(field, &Geometry::Flat, params.c)?;
    Ok(ITerms {
        a: i_a.iter().map(|v| params.a * v.re).collect(),
        b: i_b.iter().map(|v| params.b * v.re).collect(),
        c: i_c,
    })
}

/// Full flat-box tensor for N = 2: the kinetic c structure minus η_{αβ}(I_a + I_b + I_c).
pub fn stress_total_flat(field: &WaveField, params: &LagrangianParams) -> Result<StressField> {
    let spec = field.spec();
    if spec.n_args() != 2 {
        return Err(Error::SpecMismatch("the full tensor needs N = 2".into()));
    }
    let grad = slot_gradient(field, 1, &Geometry::Flat);
    let table = kinetic_table(&grad, None)?;
    let total = compute_i_terms(field, params)?.total();
    let eta = crate::wavefield::eta(spec.dim());
    let samples = table
        .into_iter()
        .zip(total)
        .map(|(r, i)| {
            let trace = (&eta.component_mul(&r)).sum();
            (r - &eta * (0.5 * trace)) * params.c - &eta * i
        })
        .collect();
    StressField::from_samples(
        block_spec(spec),
        Geometry::Flat,
        samples,
        Pieces {
            kinetic: true,
            i_a: true,
            i_b: true,
            i_c: true,
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeScheme {
    Spectral,
    Central,
}

/// ∇^β T_{αβ} at every sample, as d-vectors indexed by α.
pub fn divergence(stress: &StressField, scheme: DerivativeScheme) -> Result<Vec<Vec<f64>>> {
    let block = &stress.block;
    let d = block.dim();
    let periodic = stress.geometry.periodic_axes(block);
    if scheme == DerivativeScheme::Spectral && periodic.iter().any(|p| !p) {
        return Err(Error::InvalidArgument("spectral divergence needs a periodic box".into()));
    }
    // ∂_γ T_{αβ}, indexed [(α d + β) d + γ][point]
    let mut partials = Vec::with_capacity(d * d * d);
    for alpha in 0..d {
        for beta in 0..d {
            let values = stress.samples.iter().map(|t| Complex64::from(t[(alpha, beta)])).collect();
            let comp = WaveField::new(block.clone(), values)?;
            for gamma in 0..d {
                let deriv = match scheme {
                    DerivativeScheme::Spectral => comp.partial(0, gamma),
                    DerivativeScheme::Central => comp.central_difference(0, gamma, periodic[gamma]),
                };
                partials.push(deriv.into_values());
            }
        }
    }
    (0..block.block_len())
        .map(|p| {
            let (_, inv) = stress.geometry.metric(block, p)?;
            let gamma_table = match &stress.geometry {
                Geometry::Flat => None,
                Geometry::Chart { chart, .. } => Some(chart.christoffel_at(&stress.point(p))?),
            };
            let t = &stress.samples[p];
            Ok((0..d)
                .map(|alpha| {
                    let mut acc = 0.0;
                    for beta in 0..d {
                        for gamma in 0..d {
                            let g = inv[(beta, gamma)];
                            if g == 0.0 {
                                continue;
                            }
                            let mut cov = partials[(alpha * d + beta) * d + gamma][p].re;
                            if let Some(ch) = &gamma_table {
                                for l in 0..d {
                                    cov -= ch.get(l, gamma, alpha) * t[(l, beta)] + ch.get(l, gamma, beta) * t[(alpha, l)];
                                }
                            }
                            acc += g * cov;
                        }
                    }
                    acc
                })
                .collect())
        })
        .collect()
}

/// Largest Euclidean norm of the divergence over all samples.
pub fn max_divergence(stress: &StressField, scheme: DerivativeScheme) -> Result<f64> {
    Ok(divergence(stress, scheme)?
        .iter()
        .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max))
}

/// Frame components of a sampled observer: a boost of rapidity χ along a
/// spatial unit direction.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverSample {
    pub rapidity: f64,
    pub direction: Vec<f64>,
}

/// `count` observers with rapidity uniform in [0, 3] and uniformly random
/// spatial direction, reproducible from `seed`.
pub fn sample_observer_boosts(dim: usize, count: usize, seed: u64) -> Vec<ObserverSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let rapidity = rng.random_range(0.0..=MAX_RAPIDITY);
            let direction = loop {
                let v: Vec<f64> = (1..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if dim == 1 || (n > 1e-3 && n <= 1.0) {
                    break v.into_iter().map(|x| x / n.max(f64::MIN_POSITIVE)).collect();
                }
            };
            ObserverSample { rapidity, direction }
        })
        .collect()
}

/// The timelike frame index and the orthonormal frame of `g`.
fn lorentz_frame(g: &DMatrix<f64>) -> Result<(DMatrix<f64>, usize)> {
    let (frame, signs) = orthonormal_frame(g)?;
    let time = signs
        .iter()
        .position(|s| *s < 0.0)
        .ok_or_else(|| Error::UnsupportedGeometry("energy conditions need a Lorentzian metric".into()))?;
    Ok((frame, time))
}

/// Unit timelike vectors at a point with metric `g`, one per boost sample.
pub fn observers_at(g: &DMatrix<f64>, boosts: &[ObserverSample]) -> Result<Vec<DVector<f64>>> {
    let (frame, time) = lorentz_frame(g)?;
    let d = g.nrows();
    Ok(boosts
        .iter()
        .map(|o| {
            let mut comps = DVector::<f64>::zeros(d);
            comps[time] = o.rapidity.cosh();
            let mut k = 0;
            for a in (0..d).filter(|a| *a != time) {
                comps[a] = o.rapidity.sinh() * o.direction[k];
                k += 1;
            }
            &frame * comps
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    Wec,
    Dec,
    Sec,
}

impl Condition {
    pub fn as_str(&self) -> &'static str {
        match self {
            Condition::Wec => "WEC",
            Condition::Dec => "DEC",
            Condition::Sec => "SEC",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    Indeterminate,
}

impl Verdict {
    pub fn from_margin(margin: f64) -> Self {
        if margin >= PASS_MARGIN {
            Verdict::Pass
        } else if margin < FAIL_MARGIN {
            Verdict::Fail
        } else {
            Verdict::Indeterminate
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Indeterminate => "indeterminate",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub condition: Condition,
    /// Minimum over observers at each sample point.
    pub margins: Vec<f64>,
    pub min_margin: f64,
    pub verdict: Verdict,
    pub seed: u64,
    pub observers: usize,
}

/// W^α W^β T_{αβ}.
pub fn energy_density(t: &DMatrix<f64>, w: &DVector<f64>) -> f64 {
    (w.transpose() * t * w)[(0, 0)]
}

/// W^α W^β T_{αβ} − ½ (W·W) g^{αβ} T_{αβ}.
pub fn sec_combination(t: &DMatrix<f64>, g: &DMatrix<f64>, inv: &DMatrix<f64>, w: &DVector<f64>) -> f64 {
    let ww = (w.transpose() * g * w)[(0, 0)];
    energy_density(t, w) - 0.5 * ww * inv.component_mul(t).sum()
}

/// Dominant-energy margin at one point: the weak margin, −g(V, V) for the
/// flux V^β = −T^β_α W^α, and T^{00} − |T^{ab}| in the orthonormal frame.
fn dec_margin(t: &DMatrix<f64>, g: &DMatrix<f64>, inv: &DMatrix<f64>, observers: &[DVector<f64>]) -> Result<f64> {
    let mut margin = f64::INFINITY;
    for w in observers {
        let v = -(inv * t * w);
        let norm = (v.transpose() * g * &v)[(0, 0)];
        margin = margin.min(energy_density(t, w)).min(-norm);
    }
    let (frame, time) = lorentz_frame(g)?;
    let framed = frame.transpose() * t * &frame;
    let d = g.nrows();
    let energy = framed[(time, time)];
    for a in 0..d {
        for b in 0..d {
            if (a, b) != (time, time) {
                margin = margin.min(energy - framed[(a, b)].abs());
            }
        }
    }
    Ok(margin)
}

/// Evaluates each condition at every sample against `observers` sampled
/// observers drawn from `seed`.
pub fn audit_conditions(
    stress: &StressField,
    conditions: &[Condition],
    observers: usize,
    seed: u64,
) -> Result<Vec<ConditionReport>> {
    let block = &stress.block;
    let boosts = sample_observer_boosts(block.dim(), observers, seed);
    let per_point: Vec<Vec<f64>> = (0..block.block_len())
        .into_par_iter()
        .map(|p| {
            let (g, inv) = stress.geometry.metric(block, p)?;
            let ws = observers_at(&g, &boosts)?;
            let t = &stress.samples[p];
            conditions
                .iter()
                .map(|c| match c {
                    Condition::Wec => Ok(ws.iter().map(|w| energy_density(t, w)).fold(f64::INFINITY, f64::min)),
                    Condition::Sec => Ok(ws.iter().map(|w| sec_combination(t, &g, &inv, w)).fold(f64::INFINITY, f64::min)),
                    Condition::Dec => dec_margin(t, &g, &inv, &ws),
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(conditions
        .iter()
        .enumerate()
        .map(|(k, &condition)| {
            let margins: Vec<f64> = per_point.iter().map(|m| m[k]).collect();
            let min_margin = margins.iter().copied().fold(f64::INFINITY, f64::min);
            ConditionReport {
                condition,
                margins,
                min_margin,
                verdict: Verdict::from_margin(min_margin),
                seed,
                observers,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::MetricChart;
    use std::f64::consts::PI;

    fn flat_block(n: usize) -> GridSpec {
        GridSpec::uniform(1, 2, 2.0 * PI, n).unwrap()
    }

    #[test]
    fn null_plane_wave_tensor() {
        let l = 2.0 * PI;
        let k = [2.0, 2.0];
        let amp = Complex64::new(0.6, 0.8) * 1.5;
        let psi = WaveField::plane_wave(flat_block(8), &[k.to_vec()], Some(amp), false).unwrap();
        let t = stress_c(&psi, &Geometry::Flat, 0.7).unwrap();
        // ψ = A e^{ik·x} is unnormalized here; ⟨∂_αψ|∂_βψ⟩^{(1)} is the pointwise product for N = 1
        for s in t.samples() {
            for a in 0..2 {
                for b in 0..2 {
                    let expect = 0.7 * amp.norm_sqr() * k[a] * k[b];
                    assert!((s[(a, b)] - expect).abs() < 1e-10, "{s}");
                }
            }
        }
        let normalized = WaveField::plane_wave(flat_block(8), &[k.to_vec()], None, false).unwrap();
        let t = stress_c(&normalized, &Geometry::Flat, 1.0).unwrap();
        assert!((t.samples()[5][(0, 1)] - k[0] * k[1] / (l * l)).abs() < 1e-12);
        assert!(t.asymmetry() == 0.0);
    }

    #[test]
    fn constant_field_has_no_stress() {
        let psi = WaveField::from_fn(GridSpec::uniform(2, 2, 1.0, 4).unwrap(), |_| Complex64::new(0.5, 0.1)).unwrap();
        let t = stress_total_flat(&psi, &LagrangianParams::flat_limit(2, 1.0)).unwrap();
        assert!(t.samples().iter().all(|s| s.amax() < 1e-14));
    }

    #[test]
    fn i_b_vanishes_for_real_fields() {
        let psi = WaveField::from_fn(GridSpec::uniform(2, 2, 2.0 * PI, 8).unwrap(), |x| {
            Complex64::from((x[0] + 2.0 * x[1]).cos() * (x[2] - x[3]).sin() + (x[1] + x[3]).cos())
        })
        .unwrap();
        let i = compute_i_terms(&psi, &LagrangianParams::new(1.0, 1.0, 1.0).unwrap()).unwrap();
        assert!(i.b.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn i_b_takes_both_signs_on_generic_field() {
        let psi = WaveField::from_fn(GridSpec::uniform(2, 2, 2.0 * PI, 8).unwrap(), |x| {
            Complex64::from_polar(1.0, x[0] + 2.0 * x[3]) * (1.0 + 0.5 * x[2].cos())
                + Complex64::from_polar(0.7, -x[1] + x[2]) * (1.0 + 0.3 * x[1].sin())
        })
        .unwrap()
        .symmetrize();
        let i = compute_i_terms(&psi, &LagrangianParams::new(1.0, 1.0, 1.0).unwrap()).unwrap();
        assert!(i.b.iter().any(|v| *v > 1e-6) && i.b.iter().any(|v| *v < -1e-6));
    }

    #[test]
    fn scaling_degrees() {
        let psi = WaveField::from_fn(GridSpec::uniform(2, 2, 2.0 * PI, 8).unwrap(), |x| {
            Complex64::from_polar(1.0, x[0] + 2.0 * x[3]) + Complex64::from_polar(0.7, -x[1] + x[2]) * x[2].cos()
        })
        .unwrap()
        .symmetrize();
        let p = LagrangianParams::new(0.4, -1.3, 0.9).unwrap();
        let lambda = Complex64::new(0.8, 0.9);
        let s2 = lambda.norm_sqr();
        let base = compute_i_terms(&psi, &p).unwrap();
        let scaled = compute_i_terms(&psi.scaled(lambda), &p).unwrap();
        for z in 0..base.a.len() {
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-10 * b.abs().max(1.0);
            assert!(close(scaled.a[z], s2 * base.a[z]));
            assert!(close(scaled.b[z], s2 * s2 * base.b[z]));
            assert!(close(scaled.c[z], s2 * base.c[z]));
        }
    }

    #[test]
    fn dominant_energy_component_check() {
        let dust = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let fast = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, -2.0, 0.0]);
        let block = flat_block(2);
        let field = |t: &DMatrix<f64>| {
            StressField::from_samples(block.clone(), Geometry::Flat, vec![t.clone(); 4], Pieces::default()).unwrap()
        };
        let pass = audit_conditions(&field(&dust), &[Condition::Dec], 50, 1).unwrap();
        assert_eq!(pass[0].verdict, Verdict::Pass);
        let fail = audit_conditions(&field(&fast), &[Condition::Dec], 50, 1).unwrap();
        assert_eq!(fail[0].verdict, Verdict::Fail);
    }

    #[test]
    fn observers_are_unit_timelike() {
        let chart = MetricChart::schwarzschild(1.0).unwrap();
        let (g, _) = chart.metric_at(&[0.0, 7.0, 1.0, 0.3]).unwrap();
        let boosts = sample_observer_boosts(4, 64, 9);
        for w in observers_at(&g, &boosts).unwrap() {
            let n = (w.transpose() * &g * &w)[(0, 0)];
            assert!((n + 1.0).abs() < 1e-10, "{n}");
        }
        assert_eq!(boosts, sample_observer_boosts(4, 64, 9));
    }

    #[test]
    fn riemannian_chart_has_no_observers() {
        let g = DMatrix::<f64>::identity(2, 2);
        assert!(matches!(observers_at(&g, &sample_observer_boosts(2, 3, 0)), Err(Error::UnsupportedGeometry(_))));
    }

    #[test]
    fn spectral_divergence_of_null_wave_vanishes() {
        let psi = WaveField::plane_wave(flat_block(16), &[vec![3.0, -3.0]], None, false).unwrap();
        let t = stress_c(&psi, &Geometry::Flat, 1.0).unwrap();
        assert!(max_divergence(&t, DerivativeScheme::Spectral).unwrap() < 1e-12);
    }

    #[test]
    fn curved_stress_on_scaled_minkowski() {
        // η/4 on coordinates doubled: ψ(x) = e^{i k·x/2} with null k is a solution
        let chart = MetricChart::minkowski_scaled(2, 2.0).unwrap();
        let spec = GridSpec::uniform(1, 2, 4.0 * PI, 16).unwrap();
        let geometry = Geometry::Chart { chart, origin: vec![0.0, 0.0] };
        let psi = WaveField::from_fn(spec, |x| Complex64::from_polar(1.0, 0.5 * (x[0] + x[1]))).unwrap();
        let t = stress_c(&psi, &geometry, 1.0).unwrap();
        // the box is not periodic in the chart, so skip the one-sided edge layers
        let div = divergence(&t, DerivativeScheme::Central).unwrap();
        let interior = (0..256).filter(|p| (2..14).contains(&(p / 16)) && (2..14).contains(&(p % 16)));
        let worst = interior.map(|p| div[p][0].abs().max(div[p][1].abs())).fold(0.0, f64::max);
        assert!(worst < 1e-12, "{worst}");
    }
}
