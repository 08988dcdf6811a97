use std::f64::consts::PI;
use std::fmt;

use bitensor_core::bitensor::{evaluate, validate_bitensor_axioms, Construction, EmbeddingMap};
use bitensor_core::chart::{inner, orthonormal_frame, ChartKind};
use bitensor_core::dynamics::{apply_da, apply_db, apply_dc, evolve_n1_flat, grid_norm, residual, OperatorConfig};
use bitensor_core::geodesic::{connect, integrate_geodesic, Geodesic};
use bitensor_core::stress::{
    audit_conditions, compute_i_terms, divergence, observers_at, sample_observer_boosts, sec_combination, stress_c,
    stress_total_flat, DerivativeScheme, StressField, Verdict,
};
use bitensor_core::transport::{propagator, transport_vector};
use bitensor_core::wavefield::{
    eta, lagrangian_terms, mp_dispersion, reduced_inner_1, write_binary, Geometry, GridSpec, LagrangianParams, WaveField,
};
use bitensor_core::{Error, MetricChart, TangentVec};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ConfigError, Expectation, FieldSpec, ScenarioConfig, ScenarioKind};
use crate::report::{floats, names, Cell, Csv, Report};

/// Failures of a run, each tied to an exit code.
#[derive(Debug)]
pub enum RunError {
    Config(Vec<ConfigError>),
    Scenario(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Scenario(_) => 3,
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Config(errs) => {
                writeln!(f, "invalid configuration:")?;
                for e in errs {
                    writeln!(f, "  {e}")?;
                }
                Ok(())
            }
            RunError::Scenario(msg) => write!(f, "scenario failed: {msg}"),
        }
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        RunError::Scenario(e.to_string())
    }
}

type Run<T> = Result<T, RunError>;

/// Runs one configured scenario. Invariant failures are part of the report;
/// errors are reserved for runs that could not complete.
pub fn run_scenario(cfg: &ScenarioConfig) -> Run<Report> {
    let mut report = Report::new(cfg.scenario.as_str(), cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    match cfg.scenario {
        ScenarioKind::Geometry => geometry(cfg, &mut rng, &mut report)?,
        ScenarioKind::Connect => census(cfg, &mut rng, &mut report)?,
        ScenarioKind::Transport => transport(cfg, &mut rng, &mut report)?,
        ScenarioKind::Bitensor => bitensor(cfg, &mut report)?,
        ScenarioKind::Dynamics => dynamics(cfg, &mut rng, &mut report)?,
        ScenarioKind::Reassemble => reassemble(cfg, &mut rng, &mut report)?,
        ScenarioKind::Audit => audit(cfg, &mut rng, &mut report)?,
    }
    report.apply_expectations(&cfg.expect);
    Ok(report)
}

fn required_chart(cfg: &ScenarioConfig) -> MetricChart {
    cfg.chart().expect("validated configs carry a chart for this scenario")
}

fn max_abs(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn geometry(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng, report: &mut Report) -> Run<()> {
    let chart = required_chart(cfg);
    let sibling = chart.sibling();
    let d = chart.dim();
    let mut header = names("x", d);
    header.extend(["ricci_scalar", "inverse_defect", "christoffel_defect", "transition_defect"].map(String::from));
    let mut csv = Csv::new(&header);
    let (mut inv_max, mut gamma_max, mut trans_max) = (0.0f64, 0.0f64, 0.0f64);
    let mut outside = 0;
    let events: Vec<Vec<f64>> = cfg
        .explicit_pairs
        .iter()
        .flat_map(|(x, y)| [x.clone(), y.clone()])
        .chain((0..cfg.pairs).map(|_| chart.sample_event(rng).to_vec()))
        .collect();
    for x in &events {
        let (g, ginv) = chart.metric_at(x)?;
        let inverse = (&g * &ginv - DMatrix::<f64>::identity(d, d)).amax();
        let analytic = chart.christoffel_at(x)?;
        let gamma = analytic.max_abs_diff(&chart.numeric_christoffel_at(x)?);
        let scalar = chart.curvature_at(x)?.scalar;
        let transition = match chart.transition(&sibling, x) {
            Ok((xp, _)) => {
                let (back, _) = sibling.transition(&chart, &xp)?;
                chart.coordinate_distance(&back, x)
            }
            Err(Error::OutOfOverlap { .. }) => {
                outside += 1;
                f64::NAN
            }
            Err(e) => return Err(e.into()),
        };
        inv_max = inv_max.max(inverse);
        gamma_max = gamma_max.max(gamma);
        if transition.is_finite() {
            trans_max = trans_max.max(transition);
        }
        let mut row: Vec<Cell> = floats(x).collect();
        row.extend([Cell::F(scalar), Cell::F(inverse), Cell::F(gamma), Cell::F(transition)]);
        csv.row(&row);
    }
    report.table("events.csv", csv.finish());
    report.metric("events", events.len() as f64);
    report.metric("outside_overlap", outside as f64);
    report.check("max_inverse_defect", inv_max, Expectation::Bound(1e-10));
    report.check("max_christoffel_defect", gamma_max, Expectation::Bound(1e-5));
    report.check("max_transition_defect", trans_max, Expectation::Bound(1e-9));
    Ok(())
}

/// Cosine of the angle between two sphere events, or `None` off the sphere.
fn sphere_cosine(chart: &MetricChart, x: &[f64], y: &[f64]) -> Option<f64> {
    let ChartKind::Sphere { radius, .. } = chart.kind() else { return None };
    let emb = EmbeddingMap::for_chart(chart).ok()?;
    let (a, b) = (emb.map(x).ok()?, emb.map(y).ok()?);
    Some(a.iter().zip(&b).map(|(p, q)| p * q).sum::<f64>() / (radius * radius))
}

fn census(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng, report: &mut Report) -> Run<()> {
    let chart = required_chart(cfg);
    let d = chart.dim();
    let mut pairs = cfg.explicit_pairs.clone();
    let mut drawn = 0;
    while drawn < cfg.pairs {
        let x = chart.sample_event(rng).to_vec();
        let y = chart.sample_event(rng).to_vec();
        // Random sphere pairs stay clear of the antipodal and coincident sets.
        if sphere_cosine(&chart, &x, &y).is_some_and(|c| c.abs() > 1.0 - 1e-4) || chart.coordinate_distance(&x, &y) == 0.0 {
            continue;
        }
        pairs.push((x, y));
        drawn += 1;
    }
    let mut header = vec!["pair".to_string()];
    header.extend(names("x", d));
    header.extend(names("y", d));
    header.extend(["n", "geodesic", "arc_length", "causal_type", "endpoint_residual"].map(String::from));
    let mut csv = Csv::new(&header);
    let (mut min_count, mut max_count, mut exceptional, mut residual_max) = (usize::MAX, 0, 0, 0.0f64);
    let emit = |csv: &mut Csv, index: usize, x: &[f64], y: &[f64], n: usize, rest: Vec<Cell>| {
        let mut row = vec![Cell::I(index)];
        row.extend(floats(x));
        row.extend(floats(y));
        row.push(Cell::I(n));
        row.extend(rest);
        csv.row(&row);
    };
    for (i, (x, y)) in pairs.iter().enumerate() {
        match connect(&chart, x, y, &cfg.search) {
            Ok(bundle) => {
                let n = bundle.count();
                min_count = min_count.min(n);
                max_count = max_count.max(n);
                for (k, geo) in bundle.geodesics.iter().enumerate() {
                    let res = chart.coordinate_distance(geo.end(), y);
                    residual_max = residual_max.max(res);
                    let rest = vec![
                        Cell::I(k),
                        Cell::F(geo.arc_length(&chart)),
                        Cell::S(geo.causal_type(&chart).as_str().to_string()),
                        Cell::F(res),
                    ];
                    emit(&mut csv, i, x, y, n, rest);
                }
            }
            Err(Error::ExceptionalPair { .. }) => {
                exceptional += 1;
                emit(&mut csv, i, x, y, 0, vec![Cell::S(String::new()), Cell::S(String::new()), Cell::S("exceptional".into()), Cell::S(String::new())]);
            }
            Err(e) => return Err(e.into()),
        }
    }
    let mut detected = 0;
    for (j, (x, y)) in cfg.exceptional_pairs.iter().enumerate() {
        let outcome = connect(&chart, x, y, &cfg.search);
        let flagged = matches!(outcome, Err(Error::ExceptionalPair { .. }));
        detected += flagged as usize;
        let n = outcome.map(|b| b.count()).unwrap_or(0);
        let label = if flagged { "exceptional" } else { "regular" };
        emit(&mut csv, pairs.len() + j, x, y, n, vec![Cell::S(String::new()), Cell::S(String::new()), Cell::S(label.into()), Cell::S(String::new())]);
    }
    report.table("geodesics.csv", csv.finish());
    report.metric("pairs", pairs.len() as f64);
    report.metric("min_count", if min_count == usize::MAX { 0.0 } else { min_count as f64 });
    report.metric("max_count", max_count as f64);
    report.metric("exceptional", exceptional as f64);
    report.check("max_endpoint_residual", residual_max, Expectation::Bound(cfg.search.endpoint_tol));
    if !cfg.exceptional_pairs.is_empty() {
        let want = cfg.exceptional_pairs.len() as f64;
        report.check("exceptional_detected", detected as f64, Expectation::Target { target: want, tol: 0.0 });
    }
    Ok(())
}

fn frame_vector(chart: &MetricChart, x: &[f64], coeffs: &[f64]) -> Run<Vec<f64>> {
    let (g, _) = chart.metric_at(x)?;
    let (frame, _) = orthonormal_frame(&g)?;
    Ok((frame * DVector::from_column_slice(coeffs)).iter().copied().collect())
}

fn shortest(chart: &MetricChart, x: &[f64], y: &[f64], cfg: &ScenarioConfig) -> Run<Geodesic> {
    let bundle = connect(chart, x, y, &cfg.search)?;
    Ok(bundle
        .geodesics
        .into_iter()
        .min_by(|a, b| a.arc_length(chart).total_cmp(&b.arc_length(chart)))
        .expect("bundles are non-empty"))
}

fn transport(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng, report: &mut Report) -> Run<()> {
    let charts: Vec<MetricChart> = if cfg.charts.is_empty() {
        vec![required_chart(cfg)]
    } else {
        cfg.charts.iter().map(|c| MetricChart::parse(c).expect("validated")).collect()
    };
    let mut csv = Csv::new(&["triple", "chart", "isometry_defect", "redundancy"].map(String::from));
    let (mut isometry, mut redundancy) = (0.0f64, 0.0f64);
    let (mut done, mut rejected) = (0, 0);
    while done < cfg.triples {
        let chart = &charts[done % charts.len()];
        let d = chart.dim();
        let x = chart.sample_event(rng).to_vec();
        let mut coeffs = |scale: f64| -> Vec<f64> { (0..d).map(|_| rng.random_range(-scale..scale)).collect() };
        let (cv, cx, cy) = (coeffs(0.8), coeffs(1.0), coeffs(1.0));
        let v = frame_vector(chart, &x, &cv)?;
        let geo = match integrate_geodesic(chart, &x, &v, 1.0, cfg.search.steps) {
            Ok(g) => g,
            Err(Error::LeftDomain { .. } | Error::OutOfDomain { .. } | Error::StepFailure { .. }) => {
                rejected += 1;
                if rejected > 100 * (cfg.triples + 1) {
                    return Err(RunError::Scenario("random geodesics keep leaving the chart".into()));
                }
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let (xs, ys) = (frame_vector(chart, &x, &cx)?, frame_vector(chart, &x, &cy)?);
        let forward = propagator(chart, &geo)?;
        let backward = propagator(chart, &geo.reversed())?;
        let iso = forward.isometry_defect(chart, &[(xs.clone(), ys), (xs.clone(), xs)]);
        let (g, _) = chart.metric_at(&x)?;
        let (gy, _) = chart.metric_at(geo.end())?;
        let red = (forward.matrix.transpose() * gy - g * backward.matrix).amax();
        isometry = isometry.max(iso);
        redundancy = redundancy.max(red);
        csv.row(&[Cell::I(done), Cell::S(chart.name().to_string()), Cell::F(iso), Cell::F(red)]);
        done += 1;
    }
    report.table("triples.csv", csv.finish());
    report.metric("triples", done as f64);
    report.metric("rejected_geodesics", rejected as f64);
    report.check("max_isometry_defect", isometry, Expectation::Bound(1e-7));
    report.check("max_redundancy", redundancy, Expectation::Bound(2e-7));

    if !cfg.loop_vertices.is_empty() {
        let chart = &charts[0];
        let d = chart.dim();
        let verts = &cfg.loop_vertices;
        let mut first = vec![0.0; d];
        first[d - 1] = 1.0;
        let start = frame_vector(chart, &verts[0], &first)?;
        let mut header = vec!["leg".to_string()];
        header.extend(names("before", d));
        header.extend(names("after", d));
        let mut legs = Csv::new(&header);
        let mut vec = start.clone();
        for i in 0..verts.len() {
            let (a, b) = (&verts[i], &verts[(i + 1) % verts.len()]);
            let geo = shortest(chart, a, b, cfg)?;
            let moved = transport_vector(chart, &geo, &TangentVec::new(a.clone(), vec.clone()))?;
            let mut row = vec![Cell::I(i)];
            row.extend(floats(&vec));
            row.extend(floats(&moved.components));
            legs.row(&row);
            vec = moved.components;
        }
        let (g, _) = chart.metric_at(&verts[0])?;
        let gs = g.as_slice();
        let (aa, bb, ab) = (inner(gs, &start, &start), inner(gs, &vec, &vec), inner(gs, &start, &vec));
        let cos = (ab / (aa * bb).abs().sqrt()).clamp(-1.0, 1.0);
        report.table("holonomy.csv", legs.finish());
        report.metric("holonomy_angle", cos.acos());
        report.check("holonomy_norm_drift", (bb - aa).abs(), Expectation::Bound(1e-8));
    }
    Ok(())
}

fn bitensor(cfg: &ScenarioConfig, report: &mut Report) -> Run<()> {
    let chart = required_chart(cfg);
    let sibling = chart.sibling();
    if cfg.pairs > 0 {
        for &construction in &cfg.constructions {
            let r = validate_bitensor_axioms(construction, &chart, Some(&sibling), cfg.pairs, cfg.seed, &cfg.search)?;
            let tag = construction.as_str();
            report.metric(format!("{tag}_pairs"), r.pairs as f64);
            report.metric(format!("{tag}_exceptional"), r.exceptional as f64);
            report.metric(format!("{tag}_outside_overlap"), r.outside_overlap as f64);
            report.metric(format!("{tag}_redundancy"), r.redundancy);
            let bound = Expectation::Bound(r.tolerance);
            report.check(format!("{tag}_coincidence"), r.coincidence, bound);
            report.check(format!("{tag}_symmetry"), r.symmetry, bound);
            if let Some(v) = r.joint_transform {
                report.check(format!("{tag}_joint_transform"), v, bound);
            }
            if let Some(v) = r.first_argument_transform {
                report.check(format!("{tag}_first_argument_transform"), v, bound);
            }
        }
    }
    if cfg.explicit_pairs.is_empty() {
        return Ok(());
    }
    let d = chart.dim();
    let mut header = names("x", d);
    header.extend(names("y", d));
    header.extend(["construction", "n"].map(String::from));
    header.extend((0..d * d).map(|k| format!("h{}{}", k / d, k % d)));
    header.extend(["symmetry", "redundancy"].map(String::from));
    let mut csv = Csv::new(&header);
    for (i, (x, y)) in cfg.explicit_pairs.iter().enumerate() {
        let mut values: Vec<(Construction, DMatrix<f64>)> = Vec::new();
        for &construction in &cfg.constructions {
            let h = evaluate(construction, &chart, x, y, &cfg.search, None)?;
            let back = evaluate(construction, &chart, y, x, &cfg.search, None)?;
            let symmetry = (&h.covariant - back.covariant.transpose()).amax();
            let mut row: Vec<Cell> = floats(x).chain(floats(y)).collect();
            row.push(Cell::S(construction.as_str().to_string()));
            row.push(Cell::I(h.count));
            row.extend((0..d * d).map(|k| Cell::F(h.covariant[(k / d, k % d)])));
            row.extend([Cell::F(symmetry), Cell::F(h.redundancy)]);
            csv.row(&row);
            values.push((construction, h.covariant));
        }
        let find = |c| values.iter().find(|(k, _)| *k == c).map(|(_, m)| m);
        if let (Some(geo), Some(emb)) = (find(Construction::GeodesicAverage), find(Construction::Embedding)) {
            for m in 0..d {
                for n in 0..d {
                    report.metric(format!("pair{i}_gap_{m}{n}"), geo[(m, n)] - emb[(m, n)]);
                }
            }
        }
    }
    report.table("bitensor.csv", csv.finish());
    Ok(())
}

fn mode_field(spec: GridSpec, modes: &[(Complex64, Vec<f64>)]) -> Run<WaveField> {
    Ok(WaveField::from_fn(spec, |x| {
        modes
            .iter()
            .map(|(c, k)| c * Complex64::from_polar(1.0, k.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()))
            .sum()
    })?)
}

fn grid_spec(cfg: &ScenarioConfig) -> Run<GridSpec> {
    let g = &cfg.grid;
    Ok(GridSpec::uniform(g.n_args, g.dim, g.length, g.points)?)
}

/// The configured field: symmetrized when asked and normalized unless disabled.
fn build_field(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Run<WaveField> {
    let spec = grid_spec(cfg)?;
    let symmetrize = cfg.symmetrize && cfg.grid.n_args == 2;
    let mut field = match &cfg.field.spec {
        FieldSpec::PlaneWave { wavevectors, amplitude } => {
            let amp = amplitude.map(|(re, im)| Complex64::new(re, im));
            WaveField::plane_wave(spec, wavevectors, amp, symmetrize)?
        }
        FieldSpec::Modes(modes) => {
            let modes: Vec<_> = modes.iter().map(|m| (Complex64::new(m.coef.0, m.coef.1), m.k.clone())).collect();
            mode_field(spec, &modes)?
        }
        FieldSpec::Random { count, max_mode } => {
            let width = cfg.grid.n_args * cfg.grid.dim;
            let unit = 2.0 * PI / cfg.grid.length;
            let modes: Vec<_> = (0..*count)
                .map(|_| {
                    let c = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                    let k = (0..width).map(|_| rng.random_range(-max_mode..=*max_mode) as f64 * unit).collect();
                    (c, k)
                })
                .collect();
            mode_field(spec, &modes)?
        }
    };
    if symmetrize && !field.is_symmetrized() {
        field = field.symmetrize();
    }
    let amplitude_given = matches!(cfg.field.spec, FieldSpec::PlaneWave { amplitude: Some(_), .. });
    if cfg.field.normalize && !amplitude_given {
        let norm = field.norm();
        if norm == 0.0 {
            return Err(RunError::Scenario("the configured field vanishes on the grid".into()));
        }
        field = field.scaled(Complex64::from(1.0 / norm));
    }
    Ok(field)
}

fn geometry_of(cfg: &ScenarioConfig) -> Geometry {
    match cfg.chart() {
        None => Geometry::Flat,
        Some(chart) if matches!(chart.kind(), ChartKind::Minkowski { dim: 2, scale } if scale == 1.0) => Geometry::Flat,
        Some(chart) => {
            let origin = cfg.origin.clone().unwrap_or_else(|| chart.sampling_box().iter().map(|(lo, _)| *lo).collect());
            Geometry::Chart { chart, origin }
        }
    }
}

fn slice_table(field: &WaveField) -> String {
    let mu = field.spec().dim() - 1;
    let mut csv = Csv::new(&["coordinate", "re", "im"].map(String::from));
    for (x, v) in field.slice(0, mu) {
        csv.row(&[Cell::F(x), Cell::F(v.re), Cell::F(v.im)]);
    }
    csv.finish()
}

fn field_bytes(field: &WaveField) -> Run<Vec<u8>> {
    let mut bytes = Vec::new();
    write_binary(field, &mut bytes)?;
    Ok(bytes)
}

fn max_gap(a: &WaveField, b: &WaveField) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn dynamics(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng, report: &mut Report) -> Run<()> {
    let psi = build_field(cfg, rng)?;
    let geometry = geometry_of(cfg);
    let op = OperatorConfig { params: cfg.params, geometry: geometry.clone(), symmetrize: cfg.symmetrize };
    let mut terms = Csv::new(&["term", "norm"].map(String::from));
    let p = cfg.params;
    let parts: [(&str, f64, fn(&WaveField, &OperatorConfig) -> bitensor_core::Result<WaveField>); 3] =
        [("D_a", p.a, apply_da), ("D_b", p.b, apply_db), ("D_c", p.c, apply_dc)];
    for (name, coef, apply) in parts {
        if coef != 0.0 {
            let norm = grid_norm(&apply(&psi, &op)?);
            terms.row(&[Cell::S(name.to_string()), Cell::F(norm)]);
            report.metric(format!("norm_{}", name.to_lowercase()), norm);
        }
    }
    let res = residual(&psi, &op)?;
    terms.row(&[Cell::S("total".into()), Cell::F(res)]);
    report.table("operator.csv", terms.finish());
    if cfg.on_shell {
        report.check("residual", res, Expectation::Bound(1e-8));
    } else {
        report.metric("residual", res);
    }

    if geometry.is_flat() && cfg.grid.n_args == 2 {
        // Structural checks on a second, independent field.
        let other_cfg = ScenarioConfig { field: crate::config::FieldSettings { spec: FieldSpec::Random { count: 4, max_mode: 1 }, normalize: true }, ..cfg.clone() };
        let phi = build_field(&other_cfg, rng)?;
        let probe = OperatorConfig::flat(LagrangianParams::new(1.0, 1.0, 1.0)?, cfg.symmetrize);
        let lambda = Complex64::new(0.7, 1.1);
        let cubic = max_gap(&apply_db(&psi.scaled(lambda), &probe)?, &apply_db(&psi, &probe)?.scaled(lambda * lambda.norm_sqr()));
        let (alpha, beta) = (Complex64::new(0.3, -0.8), Complex64::new(-1.2, 0.4));
        let combo = psi.scaled(alpha).axpy(beta, &phi)?;
        let linear = |apply: fn(&WaveField, &OperatorConfig) -> bitensor_core::Result<WaveField>| -> Run<f64> {
            let lhs = apply(&combo, &probe)?;
            let rhs = apply(&psi, &probe)?.scaled(alpha).axpy(beta, &apply(&phi, &probe)?)?;
            Ok(max_gap(&lhs, &rhs))
        };
        let (lin_a, lin_c) = (linear(apply_da)?, linear(apply_dc)?);
        report.check("db_cubic_defect", cubic, Expectation::Bound(1e-9));
        report.check("da_linear_defect", lin_a, Expectation::Bound(1e-9));
        report.check("dc_linear_defect", lin_c, Expectation::Bound(1e-9));
    }
    report.table("field_slice.csv", slice_table(&psi));
    report.binary("field.bin", field_bytes(&psi)?);

    if let Some(evo) = &cfg.evolution {
        let mut csv = Csv::new(&["points", "dx", "dt", "steps", "residual", "ratio", "energy_drift"].map(String::from));
        let mut previous: Option<f64> = None;
        let mut finest = None;
        for (i, &n) in evo.grids.iter().enumerate() {
            let length = 2.0 * PI;
            let dx = length / n as f64;
            let steps = (evo.time / (evo.courant * dx)).ceil() as usize;
            let dt = evo.time / steps as f64;
            let sample = |modes: &[(f64, f64, f64)]| -> Vec<Complex64> {
                (0..n)
                    .map(|j| {
                        let x = j as f64 * dx;
                        modes.iter().map(|&(re, im, k)| Complex64::new(re, im) * Complex64::from_polar(1.0, k * x)).sum()
                    })
                    .collect()
            };
            let run = evolve_n1_flat(&sample(&evo.initial), &sample(&evo.velocity), length, steps, dt)?;
            let r = run.residual();
            let ratio = previous.map_or(f64::NAN, |p| p / r);
            csv.row(&[Cell::I(n), Cell::F(dx), Cell::F(dt), Cell::I(steps), Cell::F(r), Cell::F(ratio), Cell::F(run.energy_drift())]);
            if previous.is_some() {
                report.check(format!("convergence_ratio_{i}"), ratio, Expectation::Target { target: 4.0, tol: 0.5 });
            }
            previous = Some(r);
            finest = Some(run);
        }
        report.table("convergence.csv", csv.finish());
        if let Some(run) = finest {
            let mut bytes = Vec::new();
            run.write_binary(&mut bytes)?;
            report.binary("evolution.bin", bytes);
            let last = run.rows().last().expect("evolution has rows");
            let mut slice = Csv::new(&["x", "re", "im"].map(String::from));
            for (j, v) in last.iter().enumerate() {
                slice.row(&[Cell::F(j as f64 * run.dx()), Cell::F(v.re), Cell::F(v.im)]);
            }
            report.table("evolution_final.csv", slice.finish());
        }
    }
    Ok(())
}

fn reassemble(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng, report: &mut Report) -> Run<()> {
    let mut csv = Csv::new(&["field", "l_a", "l_b", "l_c", "total", "dispersion", "ratio"].map(String::from));
    let mut ratios = Vec::new();
    for i in 0..cfg.fields {
        let psi = build_field(cfg, rng)?;
        let l = lagrangian_terms(&psi, &cfg.params)?;
        let mp = mp_dispersion(&psi)?;
        let ratio = l.total() / mp;
        csv.row(&[Cell::I(i), Cell::F(l.a), Cell::F(l.b), Cell::F(l.c), Cell::F(l.total()), Cell::F(mp), Cell::F(ratio)]);
        ratios.push(ratio);
    }
    report.table("fields.csv", csv.finish());
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let spread = max_abs(ratios.iter().map(|r| r - mean)) / mean.abs();
    report.metric("ratio_mean", mean);
    report.check("ratio_spread", spread, Expectation::Bound(1e-6));
    if cfg.params_preset.as_deref() == Some("flat-limit") {
        let expected = cfg.params.c / cfg.grid.n_args as f64;
        report.check("ratio_offset", mean - expected, Expectation::Bound(1e-6));
    }
    Ok(())
}

fn stress_for(cfg: &ScenarioConfig, psi: &WaveField, geometry: &Geometry) -> Run<StressField> {
    let p = cfg.params;
    if !geometry.is_flat() && (p.a != 0.0 || p.b != 0.0) {
        return Err(RunError::Scenario("the a and b terms are only available on the flat box".into()));
    }
    if geometry.is_flat() && psi.spec().n_args() == 2 {
        Ok(stress_total_flat(psi, &p)?)
    } else {
        Ok(stress_c(psi, geometry, p.c)?)
    }
}

fn audit(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng, report: &mut Report) -> Run<()> {
    let psi = build_field(cfg, rng)?;
    let geometry = geometry_of(cfg);
    let stress = stress_for(cfg, &psi, &geometry)?;
    let reports = audit_conditions(&stress, &cfg.conditions, cfg.observers, cfg.seed)?;
    let d = stress.dim();

    let scheme = if geometry.is_flat() { DerivativeScheme::Spectral } else { DerivativeScheme::Central };
    let div = divergence(&stress, scheme)?;
    let div_max = max_abs(div.iter().flatten().copied());
    if cfg.on_shell {
        report.check("max_divergence", div_max, Expectation::Bound(1e-7));
    } else {
        report.metric("max_divergence", div_max);
    }
    if geometry.is_flat() && psi.spec().n_args() == 2 {
        let i = compute_i_terms(&psi, &cfg.params)?;
        report.metric("max_i_a", max_abs(i.a));
        report.metric("max_i_b", max_abs(i.b));
        report.metric("max_i_c", max_abs(i.c));
    }
    if geometry.is_flat() && cfg.params.a == 0.0 && cfg.params.b == 0.0 {
        // W^αW^βT_αβ − ½W·W T against c⟨|W^α∂_αψ|²⟩ on the kept slot.
        let g = eta(d);
        let observers = observers_at(&g, &sample_observer_boosts(d, cfg.observers, cfg.seed))?;
        let last = psi.spec().n_args() - 1;
        let partials: Vec<WaveField> = (0..d).map(|mu| psi.partial(last, mu)).collect();
        let mut gap = 0.0f64;
        for w in &observers {
            let mut directional = WaveField::zeros(psi.spec().clone());
            for (mu, p) in partials.iter().enumerate() {
                directional = directional.axpy(Complex64::from(w[mu]), p)?;
            }
            let density = reduced_inner_1(&directional, &directional)?;
            for (t, rho) in stress.samples().iter().zip(&density) {
                gap = gap.max((sec_combination(t, &g, &g, w) - cfg.params.c * rho.re).abs());
            }
        }
        report.metric("sec_identity_gap", gap);
    }

    let mut header = names("z", d);
    header.extend((0..d * d).map(|k| format!("t{}{}", k / d, k % d)));
    header.extend(reports.iter().map(|r| format!("{}_margin", r.condition.as_str().to_lowercase())));
    let mut csv = Csv::new(&header);
    for (b, t) in stress.samples().iter().enumerate() {
        let mut row: Vec<Cell> = floats(&stress.point(b)).collect();
        row.extend((0..d * d).map(|k| Cell::F(t[(k / d, k % d)])));
        row.extend(reports.iter().map(|r| Cell::F(r.margins[b])));
        csv.row(&row);
    }
    report.table("points.csv", csv.finish());
    for r in &reports {
        let name = r.condition.as_str().to_lowercase();
        report.metric(format!("{name}_min_margin"), r.min_margin);
        report.flag(format!("{name}_verdict"), r.verdict != Verdict::Fail, "not fail");
        report.note(format!(
            "{name}: {} (min margin {:.3e} over {} observers, seed {})",
            r.verdict.as_str(),
            r.min_margin,
            r.observers,
            r.seed
        ));
    }
    report.table("field_slice.csv", slice_table(&psi));
    report.binary("field.bin", field_bytes(&psi)?);
    Ok(())
}
