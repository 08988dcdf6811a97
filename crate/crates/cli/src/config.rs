//! Scenario configuration: a JSON document checked against the published
//! schema (`presets/schema.json`) by hand, so that every violation is
//! reported with its path.

use std::f64::consts::PI;
use std::fmt;
use std::path::PathBuf;

use bitensor_core::bitensor::Construction;
use bitensor_core::geodesic::SearchConfig;
use bitensor_core::stress::Condition;
use bitensor_core::wavefield::{LagrangianParams, DEFAULT_MEMORY_CAP};
use bitensor_core::MetricChart;
use serde_json::{Map, Value};

pub const SCHEMA: &str = include_str!("../presets/schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    Geometry,
    Connect,
    Transport,
    Bitensor,
    Dynamics,
    Reassemble,
    Audit,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 7] = [
        ScenarioKind::Geometry,
        ScenarioKind::Connect,
        ScenarioKind::Transport,
        ScenarioKind::Bitensor,
        ScenarioKind::Dynamics,
        ScenarioKind::Reassemble,
        ScenarioKind::Audit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::Geometry => "geometry",
            ScenarioKind::Connect => "connect",
            ScenarioKind::Transport => "transport",
            ScenarioKind::Bitensor => "bitensor",
            ScenarioKind::Dynamics => "dynamics",
            ScenarioKind::Reassemble => "reassemble",
            ScenarioKind::Audit => "audit",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    fn uses_grid(self) -> bool {
        matches!(self, ScenarioKind::Dynamics | ScenarioKind::Reassemble | ScenarioKind::Audit)
    }
}

/// One violated constraint, located by a JSON pointer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let path = if self.path.is_empty() { "/" } else { &self.path };
        write!(f, "{path}: {}", self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSettings {
    pub n_args: usize,
    pub dim: usize,
    pub points: usize,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mode {
    pub coef: (f64, f64),
    /// Concatenated wavevectors of all arguments.
    pub k: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldSpec {
    PlaneWave { wavevectors: Vec<Vec<f64>>, amplitude: Option<(f64, f64)> },
    Modes(Vec<Mode>),
    Random { count: usize, max_mode: i64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSettings {
    pub spec: FieldSpec,
    pub normalize: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionSettings {
    pub grids: Vec<usize>,
    pub time: f64,
    pub courant: f64,
    pub initial: Vec<(f64, f64, f64)>,
    pub velocity: Vec<(f64, f64, f64)>,
}

/// Acceptance test on a named metric of the run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Expectation {
    /// |value| ≤ bound.
    Bound(f64),
    /// |value − target| ≤ tol.
    Target { target: f64, tol: f64 },
    AtLeast(f64),
    AtMost(f64),
}

impl Expectation {
    pub fn holds(&self, value: f64) -> bool {
        match *self {
            Expectation::Bound(b) => value.abs() <= b,
            Expectation::Target { target, tol } => (value - target).abs() <= tol,
            Expectation::AtLeast(m) => value >= m,
            Expectation::AtMost(m) => value <= m,
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            Expectation::Bound(b) => format!("|v| <= {b:e}"),
            Expectation::Target { target, tol } => format!("|v - {target}| <= {tol:e}"),
            Expectation::AtLeast(m) => format!("v >= {m:e}"),
            Expectation::AtMost(m) => format!("v <= {m:e}"),
        }
    }
}

pub type Pair = (Vec<f64>, Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    pub chart: Option<String>,
    pub charts: Vec<String>,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub search: SearchConfig,
    pub pairs: usize,
    pub explicit_pairs: Vec<Pair>,
    pub exceptional_pairs: Vec<Pair>,
    pub triples: usize,
    pub constructions: Vec<Construction>,
    pub loop_vertices: Vec<Vec<f64>>,
    pub grid: GridSettings,
    pub origin: Option<Vec<f64>>,
    pub params: LagrangianParams,
    pub params_preset: Option<String>,
    pub field: FieldSettings,
    pub symmetrize: bool,
    pub evolution: Option<EvolutionSettings>,
    pub fields: usize,
    pub observers: usize,
    pub conditions: Vec<Condition>,
    pub on_shell: bool,
    pub expect: Vec<(String, Expectation)>,
}

impl ScenarioConfig {
    pub fn chart(&self) -> Option<MetricChart> {
        self.chart.as_deref().map(|c| MetricChart::parse(c).expect("validated"))
    }
}

struct Checker {
    errors: Vec<ConfigError>,
}

impl Checker {
    fn err(&mut self, path: &str, message: impl Into<String>) {
        self.errors.push(ConfigError { path: path.to_string(), message: message.into() });
    }

    fn object<'a>(&mut self, path: &str, v: &'a Value, allowed: &[&str]) -> Option<&'a Map<String, Value>> {
        let Some(obj) = v.as_object() else {
            self.err(path, "expected an object");
            return None;
        };
        for key in obj.keys() {
            if !allowed.contains(&key.as_str()) {
                self.err(&format!("{path}/{key}"), "unknown key");
            }
        }
        Some(obj)
    }

    fn number(&mut self, path: &str, v: &Value) -> Option<f64> {
        match v.as_f64() {
            Some(x) if x.is_finite() => Some(x),
            _ => {
                self.err(path, "expected a finite number");
                None
            }
        }
    }

    fn number_in(&mut self, path: &str, v: &Value, lo: f64, hi: f64, open_lo: bool) -> Option<f64> {
        let x = self.number(path, v)?;
        let below = if open_lo { x <= lo } else { x < lo };
        if below || x > hi {
            let bracket = if open_lo { "(" } else { "[" };
            self.err(path, format!("must lie in {bracket}{lo}, {hi}]"));
            return None;
        }
        Some(x)
    }

    fn uint(&mut self, path: &str, v: &Value, lo: u64, hi: u64) -> Option<usize> {
        let Some(x) = v.as_u64() else {
            self.err(path, "expected a non-negative integer");
            return None;
        };
        if x < lo || x > hi {
            self.err(path, format!("must lie in [{lo}, {hi}]"));
            return None;
        }
        Some(x as usize)
    }

    fn boolean(&mut self, path: &str, v: &Value) -> Option<bool> {
        let b = v.as_bool();
        if b.is_none() {
            self.err(path, "expected a boolean");
        }
        b
    }

    fn string<'a>(&mut self, path: &str, v: &'a Value) -> Option<&'a str> {
        let s = v.as_str();
        if s.is_none() {
            self.err(path, "expected a string");
        }
        s
    }

    fn array<'a>(&mut self, path: &str, v: &'a Value) -> Option<&'a Vec<Value>> {
        let a = v.as_array();
        if a.is_none() {
            self.err(path, "expected an array");
        }
        a
    }

    fn vector(&mut self, path: &str, v: &Value, len: Option<usize>) -> Option<Vec<f64>> {
        let items = self.array(path, v)?;
        if let Some(n) = len {
            if items.len() != n {
                self.err(path, format!("expected {n} components"));
                return None;
            }
        }
        let out: Vec<Option<f64>> = items.iter().enumerate().map(|(i, x)| self.number(&format!("{path}/{i}"), x)).collect();
        out.into_iter().collect()
    }

    fn complex(&mut self, path: &str, v: &Value) -> Option<(f64, f64)> {
        self.vector(path, v, Some(2)).map(|c| (c[0], c[1]))
    }

    fn chart(&mut self, path: &str, v: &Value) -> Option<(String, MetricChart)> {
        let s = self.string(path, v)?;
        match MetricChart::parse(s) {
            Ok(c) => Some((s.to_string(), c)),
            Err(e) => {
                self.err(path, e.to_string());
                None
            }
        }
    }

    fn pairs(&mut self, path: &str, v: &Value, chart: Option<&MetricChart>) -> Vec<Pair> {
        let Some(items) = self.array(path, v) else { return Vec::new() };
        let dim = chart.map(|c| c.dim());
        let mut out = Vec::new();
        for (i, item) in items.iter().enumerate() {
            let p = format!("{path}/{i}");
            let Some(ends) = self.array(&p, item) else { continue };
            if ends.len() != 2 {
                self.err(&p, "a pair holds exactly two events");
                continue;
            }
            let x = self.event(&format!("{p}/0"), &ends[0], dim, chart);
            let y = self.event(&format!("{p}/1"), &ends[1], dim, chart);
            if let (Some(x), Some(y)) = (x, y) {
                out.push((x, y));
            }
        }
        out
    }

    fn event(&mut self, path: &str, v: &Value, dim: Option<usize>, chart: Option<&MetricChart>) -> Option<Vec<f64>> {
        let x = self.vector(path, v, dim)?;
        if let Some(c) = chart {
            if !c.contains(&x) {
                self.err(path, format!("event lies outside the domain of `{}`", c.name()));
                return None;
            }
        }
        Some(x)
    }
}

fn default_grid(kind: ScenarioKind) -> GridSettings {
    let points = match kind {
        ScenarioKind::Reassemble => 8,
        _ => 16,
    };
    let n_args = if kind == ScenarioKind::Reassemble { 2 } else { 1 };
    GridSettings { n_args, dim: 2, points, length: 2.0 * PI }
}

const TOP_KEYS: [&str; 24] = [
    "scenario",
    "chart",
    "charts",
    "seed",
    "output",
    "search",
    "pairs",
    "explicit_pairs",
    "exceptional_pairs",
    "triples",
    "constructions",
    "loop",
    "grid",
    "origin",
    "params",
    "field",
    "symmetrize",
    "evolution",
    "fields",
    "observers",
    "conditions",
    "on_shell",
    "expect",
    "description",
];

/// Parses and checks a configuration document, filling defaults. On failure
/// every violation found is returned.
pub fn validate_config(raw: &str) -> Result<ScenarioConfig, Vec<ConfigError>> {
    let doc: Value = serde_json::from_str(raw).map_err(|e| {
        vec![ConfigError { path: String::new(), message: format!("not valid JSON: {e}") }]
    })?;
    let mut ck = Checker { errors: Vec::new() };
    let Some(obj) = ck.object("", &doc, &TOP_KEYS) else { return Err(ck.errors) };

    let scenario = match obj.get("scenario") {
        None => {
            ck.err("/scenario", "required key is missing");
            None
        }
        Some(v) => ck.string("/scenario", v).and_then(|s| {
            let kind = ScenarioKind::parse(s);
            if kind.is_none() {
                let names: Vec<&str> = ScenarioKind::ALL.iter().map(|k| k.as_str()).collect();
                ck.err("/scenario", format!("unknown scenario `{s}`; expected one of {}", names.join(", ")));
            }
            kind
        }),
    };
    let kind = scenario.unwrap_or(ScenarioKind::Geometry);

    let chart = obj.get("chart").and_then(|v| ck.chart("/chart", v));
    let mut charts = Vec::new();
    if let Some(v) = obj.get("charts") {
        if let Some(items) = ck.array("/charts", v) {
            for (i, item) in items.iter().enumerate() {
                if let Some((s, _)) = ck.chart(&format!("/charts/{i}"), item) {
                    charts.push(s);
                }
            }
        }
    }
    let needs_chart = matches!(kind, ScenarioKind::Geometry | ScenarioKind::Connect | ScenarioKind::Bitensor);
    if scenario.is_some() && needs_chart && obj.get("chart").is_none() {
        ck.err("/chart", format!("required for the {} scenario", kind.as_str()));
    }
    if kind == ScenarioKind::Transport && obj.get("chart").is_none() && obj.get("charts").is_none() {
        ck.err("/charts", "transport needs `chart` or `charts`");
    }
    let chart_obj = chart.as_ref().map(|(_, c)| c.clone());

    let seed = match obj.get("seed") {
        None => 0,
        Some(v) => match v.as_u64() {
            Some(s) => s,
            None => {
                ck.err("/seed", "expected an unsigned 64-bit integer");
                0
            }
        },
    };
    let output = obj.get("output").and_then(|v| ck.string("/output", v)).map(PathBuf::from);

    let mut search = SearchConfig::default();
    if let Some(v) = obj.get("search") {
        if let Some(s) = ck.object("/search", v, &["directions", "steps", "cap", "endpoint_tol", "max_newton"]) {
            if let Some(x) = s.get("directions") {
                search.directions = ck.uint("/search/directions", x, 4, 65536);
            }
            if let Some(x) = s.get("steps") {
                search.steps = ck.uint("/search/steps", x, 16, 4096).unwrap_or(search.steps);
            }
            if let Some(x) = s.get("cap") {
                search.cap = ck.uint("/search/cap", x, 1, 1024).unwrap_or(search.cap);
            }
            if let Some(x) = s.get("endpoint_tol") {
                search.endpoint_tol = ck.number_in("/search/endpoint_tol", x, 0.0, 1e-2, true).unwrap_or(search.endpoint_tol);
            }
            if let Some(x) = s.get("max_newton") {
                search.max_newton = ck.uint("/search/max_newton", x, 1, 1000).unwrap_or(search.max_newton);
            }
        }
    }

    let default_pairs = match kind {
        ScenarioKind::Geometry | ScenarioKind::Connect | ScenarioKind::Bitensor => 10,
        _ => 0,
    };
    let pairs = obj.get("pairs").and_then(|v| ck.uint("/pairs", v, 0, 10_000)).unwrap_or(default_pairs);
    let explicit_pairs = obj.get("explicit_pairs").map(|v| ck.pairs("/explicit_pairs", v, chart_obj.as_ref())).unwrap_or_default();
    let exceptional_pairs =
        obj.get("exceptional_pairs").map(|v| ck.pairs("/exceptional_pairs", v, chart_obj.as_ref())).unwrap_or_default();
    let triples = obj.get("triples").and_then(|v| ck.uint("/triples", v, 0, 10_000)).unwrap_or(if kind == ScenarioKind::Transport { 20 } else { 0 });

    let mut constructions = Vec::new();
    if let Some(v) = obj.get("constructions") {
        if let Some(items) = ck.array("/constructions", v) {
            for (i, item) in items.iter().enumerate() {
                let p = format!("/constructions/{i}");
                match ck.string(&p, item) {
                    Some("geodesic-average") => constructions.push(Construction::GeodesicAverage),
                    Some("embedding") => constructions.push(Construction::Embedding),
                    Some(other) => ck.err(&p, format!("unknown construction `{other}`")),
                    None => {}
                }
            }
        }
    }
    if constructions.is_empty() {
        constructions.push(Construction::GeodesicAverage);
    }

    let mut loop_vertices = Vec::new();
    if let Some(v) = obj.get("loop") {
        let loop_chart = chart_obj.clone().or_else(|| charts.first().map(|c| MetricChart::parse(c).expect("checked")));
        if let Some(items) = ck.array("/loop", v) {
            if items.len() < 3 {
                ck.err("/loop", "a loop needs at least three vertices");
            }
            for (i, item) in items.iter().enumerate() {
                let dim = loop_chart.as_ref().map(|c| c.dim());
                if let Some(x) = ck.event(&format!("/loop/{i}"), item, dim, loop_chart.as_ref()) {
                    loop_vertices.push(x);
                }
            }
        }
    }

    let mut grid = default_grid(kind);
    if let Some(v) = obj.get("grid") {
        if let Some(g) = ck.object("/grid", v, &["n_args", "dim", "points", "length"]) {
            if let Some(x) = g.get("n_args") {
                grid.n_args = ck.uint("/grid/n_args", x, 1, 2).unwrap_or(grid.n_args);
            }
            if let Some(x) = g.get("dim") {
                match ck.uint("/grid/dim", x, 2, 4) {
                    Some(d) if d == 2 || d == 4 => grid.dim = d,
                    Some(_) => ck.err("/grid/dim", "must be 2 or 4"),
                    None => {}
                }
            }
            if let Some(x) = g.get("points") {
                match ck.uint("/grid/points", x, 2, 4096) {
                    Some(p) if p.is_power_of_two() => grid.points = p,
                    Some(_) => ck.err("/grid/points", "must be a power of two"),
                    None => {}
                }
            }
            if let Some(x) = g.get("length") {
                grid.length = ck.number_in("/grid/length", x, 0.0, 1e6, true).unwrap_or(grid.length);
            }
        }
    }
    if kind.uses_grid() {
        let total = (grid.points as f64).powi((grid.n_args * grid.dim) as i32);
        if total > DEFAULT_MEMORY_CAP as f64 {
            ck.err("/grid/points", format!("grid of {total} points exceeds the cap of {DEFAULT_MEMORY_CAP}"));
        }
        if kind == ScenarioKind::Reassemble && grid.n_args != 2 {
            ck.err("/grid/n_args", "reassembly compares two-argument fields");
        }
        if let Some(c) = &chart_obj {
            if c.dim() != grid.dim {
                ck.err("/grid/dim", format!("chart `{}` has dimension {}", c.name(), c.dim()));
            }
        }
    }
    let origin = obj.get("origin").and_then(|v| ck.event("/origin", v, chart_obj.as_ref().map(|c| c.dim()), chart_obj.as_ref()));

    let (params, params_preset) = read_params(&mut ck, obj.get("params"), kind, grid.n_args);
    let field = read_field(&mut ck, obj.get("field"), &grid);
    let symmetrize = obj.get("symmetrize").and_then(|v| ck.boolean("/symmetrize", v)).unwrap_or(grid.n_args > 1);
    let evolution = obj.get("evolution").and_then(|v| read_evolution(&mut ck, v));
    let fields = obj.get("fields").and_then(|v| ck.uint("/fields", v, 1, 100)).unwrap_or(5);
    let observers = obj.get("observers").and_then(|v| ck.uint("/observers", v, 1, 100_000)).unwrap_or(50);

    let mut conditions = Vec::new();
    if let Some(v) = obj.get("conditions") {
        if let Some(items) = ck.array("/conditions", v) {
            for (i, item) in items.iter().enumerate() {
                let p = format!("/conditions/{i}");
                match ck.string(&p, item) {
                    Some("wec") => conditions.push(Condition::Wec),
                    Some("dec") => conditions.push(Condition::Dec),
                    Some("sec") => conditions.push(Condition::Sec),
                    Some(other) => ck.err(&p, format!("unknown condition `{other}`")),
                    None => {}
                }
            }
        }
    } else {
        conditions = vec![Condition::Wec, Condition::Dec, Condition::Sec];
    }
    let on_shell = obj.get("on_shell").and_then(|v| ck.boolean("/on_shell", v)).unwrap_or(false);

    let mut expect = Vec::new();
    if let Some(v) = obj.get("expect") {
        if let Some(map) = v.as_object() {
            for (name, e) in map {
                let p = format!("/expect/{name}");
                if let Some(x) = read_expectation(&mut ck, &p, e) {
                    expect.push((name.clone(), x));
                }
            }
        } else {
            ck.err("/expect", "expected an object");
        }
    }
    if let Some(v) = obj.get("description") {
        ck.string("/description", v);
    }

    if !ck.errors.is_empty() {
        return Err(ck.errors);
    }
    Ok(ScenarioConfig {
        scenario: scenario.expect("checked"),
        chart: chart.map(|(s, _)| s),
        charts,
        seed,
        output,
        search,
        pairs,
        explicit_pairs,
        exceptional_pairs,
        triples,
        constructions,
        loop_vertices,
        grid,
        origin,
        params,
        params_preset,
        field,
        symmetrize,
        evolution,
        fields,
        observers,
        conditions,
        on_shell,
        expect,
    })
}

fn read_params(ck: &mut Checker, v: Option<&Value>, kind: ScenarioKind, n_args: usize) -> (LagrangianParams, Option<String>) {
    let default_preset = (kind == ScenarioKind::Reassemble).then(|| "flat-limit".to_string());
    let Some(v) = v else {
        let params = match default_preset {
            Some(_) => LagrangianParams::flat_limit(n_args, 1.0),
            None => LagrangianParams::c_only(1.0),
        };
        return (params, default_preset);
    };
    let Some(p) = ck.object("/params", v, &["preset", "a", "b", "c"]) else {
        return (LagrangianParams::c_only(1.0), None);
    };
    let coef = |ck: &mut Checker, key: &str| p.get(key).and_then(|x| ck.number(&format!("/params/{key}"), x));
    let c = coef(ck, "c").unwrap_or(1.0);
    match p.get("preset").map(|x| ck.string("/params/preset", x)) {
        None => {
            let a = coef(ck, "a").unwrap_or(0.0);
            let b = coef(ck, "b").unwrap_or(0.0);
            match LagrangianParams::new(a, b, c) {
                Ok(params) => (params, None),
                Err(e) => {
                    ck.err("/params", e.to_string());
                    (LagrangianParams::c_only(1.0), None)
                }
            }
        }
        Some(Some(name @ ("flat-limit" | "c-only"))) => {
            for key in ["a", "b"] {
                if p.contains_key(key) {
                    ck.err(&format!("/params/{key}"), format!("fixed by the `{name}` preset"));
                }
            }
            let params = if name == "flat-limit" { LagrangianParams::flat_limit(n_args, c) } else { LagrangianParams::c_only(c) };
            (params, Some(name.to_string()))
        }
        Some(Some(other)) => {
            ck.err("/params/preset", format!("unknown preset `{other}`; expected flat-limit or c-only"));
            (LagrangianParams::c_only(1.0), None)
        }
        Some(None) => (LagrangianParams::c_only(1.0), None),
    }
}

fn read_field(ck: &mut Checker, v: Option<&Value>, grid: &GridSettings) -> FieldSettings {
    let width = grid.n_args * grid.dim;
    let fallback = FieldSettings { spec: FieldSpec::Random { count: 3, max_mode: 3.min(grid.points as i64 / 2 - 1).max(1) }, normalize: true };
    let Some(v) = v else { return fallback };
    let Some(f) = ck.object("/field", v, &["kind", "wavevectors", "amplitude", "modes", "count", "max_mode", "normalize"]) else {
        return fallback;
    };
    let normalize = f.get("normalize").and_then(|x| ck.boolean("/field/normalize", x)).unwrap_or(true);
    let kind = match f.get("kind") {
        None => {
            ck.err("/field/kind", "required key is missing");
            return fallback;
        }
        Some(x) => ck.string("/field/kind", x),
    };
    let spec = match kind {
        Some("plane-wave") => {
            let mut wavevectors = Vec::new();
            match f.get("wavevectors").and_then(|x| ck.array("/field/wavevectors", x)) {
                Some(items) if items.len() == grid.n_args => {
                    for (i, item) in items.iter().enumerate() {
                        if let Some(k) = ck.vector(&format!("/field/wavevectors/{i}"), item, Some(grid.dim)) {
                            wavevectors.push(k);
                        }
                    }
                }
                Some(_) => ck.err("/field/wavevectors", format!("expected one wavevector per argument ({})", grid.n_args)),
                None => {
                    if f.get("wavevectors").is_none() {
                        ck.err("/field/wavevectors", "required for a plane wave");
                    }
                }
            }
            let amplitude = f.get("amplitude").and_then(|x| ck.complex("/field/amplitude", x));
            FieldSpec::PlaneWave { wavevectors, amplitude }
        }
        Some("modes") => {
            let mut modes = Vec::new();
            match f.get("modes").and_then(|x| ck.array("/field/modes", x)) {
                Some(items) if !items.is_empty() => {
                    for (i, item) in items.iter().enumerate() {
                        let p = format!("/field/modes/{i}");
                        let Some(m) = ck.object(&p, item, &["coef", "k"]) else { continue };
                        let coef = m.get("coef").and_then(|x| ck.complex(&format!("{p}/coef"), x));
                        let k = m.get("k").and_then(|x| ck.vector(&format!("{p}/k"), x, Some(width)));
                        if m.get("coef").is_none() || m.get("k").is_none() {
                            ck.err(&p, "a mode needs `coef` and `k`");
                        }
                        if let (Some(coef), Some(k)) = (coef, k) {
                            modes.push(Mode { coef, k });
                        }
                    }
                }
                Some(_) => ck.err("/field/modes", "at least one mode is required"),
                None => {
                    if f.get("modes").is_none() {
                        ck.err("/field/modes", "required for kind `modes`");
                    }
                }
            }
            FieldSpec::Modes(modes)
        }
        Some("random") => {
            let count = f.get("count").and_then(|x| ck.uint("/field/count", x, 1, 64)).unwrap_or(3);
            let limit = (grid.points / 2).saturating_sub(1).max(1) as u64;
            let max_mode = f
                .get("max_mode")
                .and_then(|x| ck.uint("/field/max_mode", x, 1, limit))
                .unwrap_or(3.min(limit as usize)) as i64;
            FieldSpec::Random { count, max_mode }
        }
        Some(other) => {
            ck.err("/field/kind", format!("unknown field kind `{other}`; expected plane-wave, modes or random"));
            return fallback;
        }
        None => return fallback,
    };
    FieldSettings { spec, normalize }
}

fn read_modes_1d(ck: &mut Checker, path: &str, v: &Value) -> Vec<(f64, f64, f64)> {
    let mut out = Vec::new();
    if let Some(items) = ck.array(path, v) {
        for (i, item) in items.iter().enumerate() {
            let p = format!("{path}/{i}");
            let Some(m) = ck.object(&p, item, &["coef", "k"]) else { continue };
            let coef = m.get("coef").and_then(|x| ck.complex(&format!("{p}/coef"), x));
            let k = m.get("k").and_then(|x| ck.number(&format!("{p}/k"), x));
            match (coef, k) {
                (Some((re, im)), Some(k)) => out.push((re, im, k)),
                _ if m.get("coef").is_none() || m.get("k").is_none() => ck.err(&p, "a mode needs `coef` and `k`"),
                _ => {}
            }
        }
    }
    out
}

fn read_evolution(ck: &mut Checker, v: &Value) -> Option<EvolutionSettings> {
    let e = ck.object("/evolution", v, &["grids", "time", "courant", "initial", "velocity"])?;
    let mut grids = vec![32, 64, 128, 256];
    if let Some(x) = e.get("grids") {
        if let Some(items) = ck.array("/evolution/grids", x) {
            let parsed: Vec<Option<usize>> =
                items.iter().enumerate().map(|(i, g)| ck.uint(&format!("/evolution/grids/{i}"), g, 8, 1 << 16)).collect();
            if items.len() < 2 {
                ck.err("/evolution/grids", "at least two grids are needed for a convergence ratio");
            }
            if let Some(g) = parsed.into_iter().collect::<Option<Vec<_>>>() {
                if g.iter().any(|n| !n.is_power_of_two()) {
                    ck.err("/evolution/grids", "grid sizes must be powers of two");
                }
                grids = g;
            }
        }
    }
    let time = e.get("time").and_then(|x| ck.number_in("/evolution/time", x, 0.0, 1e4, true)).unwrap_or(PI);
    let courant = e.get("courant").and_then(|x| ck.number_in("/evolution/courant", x, 0.0, 1.0, true)).unwrap_or(0.5);
    let initial = match e.get("initial") {
        Some(x) => read_modes_1d(ck, "/evolution/initial", x),
        None => vec![(0.0, -0.5, 1.0), (0.0, 0.5, -1.0), (0.25, 0.0, 2.0), (0.25, 0.0, -2.0)],
    };
    let velocity = match e.get("velocity") {
        Some(x) => read_modes_1d(ck, "/evolution/velocity", x),
        None => vec![(0.0, 0.5, 1.0), (0.0, 0.5, -1.0)],
    };
    Some(EvolutionSettings { grids, time, courant, initial, velocity })
}

fn read_expectation(ck: &mut Checker, path: &str, v: &Value) -> Option<Expectation> {
    if v.is_number() {
        return ck.number_in(path, v, 0.0, f64::MAX, false).map(Expectation::Bound);
    }
    let e = ck.object(path, v, &["target", "tol", "min", "max"])?;
    match (e.get("target"), e.get("tol"), e.get("min"), e.get("max")) {
        (Some(t), Some(tol), None, None) => {
            let target = ck.number(&format!("{path}/target"), t);
            let tol = ck.number_in(&format!("{path}/tol"), tol, 0.0, f64::MAX, false);
            Some(Expectation::Target { target: target?, tol: tol? })
        }
        (None, None, Some(m), None) => ck.number(&format!("{path}/min"), m).map(Expectation::AtLeast),
        (None, None, None, Some(m)) => ck.number(&format!("{path}/max"), m).map(Expectation::AtMost),
        _ => {
            ck.err(path, "use a bound, {target, tol}, {min} or {max}");
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_geometry_config_gets_defaults() {
        let cfg = validate_config(r#"{"scenario": "geometry", "chart": "sphere2:r=1"}"#).unwrap();
        assert_eq!(cfg.scenario, ScenarioKind::Geometry);
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.pairs, 10);
        assert_eq!(cfg.search, SearchConfig::default());
        assert_eq!(cfg.constructions, vec![Construction::GeodesicAverage]);
    }

    #[test]
    fn missing_scenario_is_one_error() {
        let errs = validate_config(r#"{"seed": 3}"#).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].path, "/scenario");
    }

    #[test]
    fn flat_limit_preset_fills_coefficients() {
        let cfg = validate_config(r#"{"scenario": "reassemble", "grid": {"n_args": 2}, "params": {"preset": "flat-limit", "c": 1.5}}"#)
            .unwrap();
        assert_eq!((cfg.params.a, cfg.params.b, cfg.params.c), (1.5, -3.0, 1.5));
    }

    #[test]
    fn errors_carry_paths() {
        let errs = validate_config(
            r#"{"scenario": "bitensor", "chart": "sphere2:r=-1", "search": {"cap": 0}, "grid": {"points": 6}, "extra": 1}"#,
        )
        .unwrap_err();
        let paths: Vec<&str> = errs.iter().map(|e| e.path.as_str()).collect();
        for p in ["/chart", "/search/cap", "/grid/points", "/extra"] {
            assert!(paths.contains(&p), "{p} missing from {paths:?}");
        }
    }

    #[test]
    fn oversized_grid_is_rejected() {
        let errs = validate_config(r#"{"scenario": "dynamics", "grid": {"n_args": 2, "points": 64}}"#).unwrap_err();
        assert_eq!(errs[0].path, "/grid/points");
    }

    #[test]
    fn preset_conflicts_are_reported() {
        let errs = validate_config(r#"{"scenario": "dynamics", "params": {"preset": "c-only", "a": 1}}"#).unwrap_err();
        assert_eq!(errs[0].path, "/params/a");
    }

    #[test]
    fn schema_is_valid_json() {
        let schema: Value = serde_json::from_str(SCHEMA).unwrap();
        let props = schema["properties"].as_object().unwrap();
        for key in TOP_KEYS {
            assert!(props.contains_key(key), "schema lacks {key}");
        }
    }
}
