use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::config::Expectation;

#[derive(Debug, Clone, Serialize)]
pub struct Invariant {
    pub name: String,
    pub value: f64,
    pub requirement: String,
    pub pass: bool,
}

/// Everything a scenario produces. Written out by [`Report::write`].
#[derive(Debug, Default, Clone)]
pub struct Report {
    pub scenario: String,
    pub seed: u64,
    pub metrics: Vec<(String, f64)>,
    pub invariants: Vec<Invariant>,
    pub notes: Vec<String>,
    pub tables: Vec<(String, String)>,
    pub binaries: Vec<(String, Vec<u8>)>,
}

#[derive(Serialize)]
struct ResultFile<'a> {
    scenario: &'a str,
    seed: u64,
    ok: bool,
    invariants: &'a [Invariant],
    metrics: serde_json::Map<String, serde_json::Value>,
    notes: &'a [String],
    files: Vec<&'a str>,
}

impl Report {
    pub fn new(scenario: &str, seed: u64) -> Self {
        Report { scenario: scenario.to_string(), seed, ..Default::default() }
    }

    pub fn metric(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.push((name.into(), value));
    }

    pub fn metric_value(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    /// Records `name` as a metric and checks it.
    pub fn check(&mut self, name: impl Into<String>, value: f64, expectation: Expectation) {
        let name = name.into();
        self.metric(name.clone(), value);
        self.invariant(name, value, expectation);
    }

    pub fn invariant(&mut self, name: impl Into<String>, value: f64, expectation: Expectation) {
        let name = name.into();
        let pass = value.is_finite() && expectation.holds(value);
        self.invariants.retain(|i| i.name != name);
        self.invariants.push(Invariant { name, value, requirement: expectation.describe(), pass });
    }

    pub fn flag(&mut self, name: impl Into<String>, pass: bool, requirement: &str) {
        self.invariants.push(Invariant {
            name: name.into(),
            value: if pass { 1.0 } else { 0.0 },
            requirement: requirement.to_string(),
            pass,
        });
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    pub fn table(&mut self, name: &str, csv: String) {
        self.tables.push((name.to_string(), csv));
    }

    pub fn binary(&mut self, name: &str, bytes: Vec<u8>) {
        self.binaries.push((name.to_string(), bytes));
    }

    /// Applies the configured expectations; a name with no matching metric fails.
    pub fn apply_expectations(&mut self, expect: &[(String, Expectation)]) {
        for (name, e) in expect {
            match self.metric_value(name) {
                Some(v) => self.invariant(name.clone(), v, *e),
                None => {
                    self.invariants.push(Invariant {
                        name: name.clone(),
                        value: f64::NAN,
                        requirement: format!("{} (metric not produced)", e.describe()),
                        pass: false,
                    });
                }
            }
        }
    }

    pub fn ok(&self) -> bool {
        self.invariants.iter().all(|i| i.pass)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario: {}", self.scenario);
        let _ = writeln!(s, "seed: {}", self.seed);
        let _ = writeln!(s, "\ninvariants:");
        for i in &self.invariants {
            let _ = writeln!(
                s,
                "  [{}] {} = {:.6e} ({})",
                if i.pass { "PASS" } else { "FAIL" },
                i.name,
                i.value,
                i.requirement
            );
        }
        if !self.metrics.is_empty() {
            let _ = writeln!(s, "\nmetrics:");
            for (n, v) in &self.metrics {
                let _ = writeln!(s, "  {n} = {v:.9e}");
            }
        }
        if !self.notes.is_empty() {
            let _ = writeln!(s, "\nnotes:");
            for n in &self.notes {
                let _ = writeln!(s, "  {n}");
            }
        }
        let _ = writeln!(s, "\nverdict: {}", if self.ok() { "PASS" } else { "FAIL" });
        s
    }

    /// Writes `summary.txt`, `result.json` and every table and binary into `dir`.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        for (name, csv) in &self.tables {
            fs::write(dir.join(name), csv)?;
        }
        for (name, bytes) in &self.binaries {
            fs::write(dir.join(name), bytes)?;
        }
        fs::write(dir.join("summary.txt"), self.summary())?;
        let metrics = self
            .metrics
            .iter()
            .map(|(n, v)| (n.clone(), serde_json::Number::from_f64(*v).map_or(serde_json::Value::Null, serde_json::Value::Number)))
            .collect();
        let mut files: Vec<&str> = self.tables.iter().map(|(n, _)| n.as_str()).collect();
        files.extend(self.binaries.iter().map(|(n, _)| n.as_str()));
        let result = ResultFile {
            scenario: &self.scenario,
            seed: self.seed,
            ok: self.ok(),
            invariants: &self.invariants,
            metrics,
            notes: &self.notes,
            files,
        };
        let mut text = serde_json::to_string_pretty(&result).map_err(std::io::Error::other)?;
        text.push('\n');
        fs::write(dir.join("result.json"), text)
    }
}

/// CSV builder with fixed float formatting.
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(header: &[String]) -> Self {
        Csv { text: header.join(",") + "\n" }
    }

    pub fn row(&mut self, cells: &[Cell]) {
        let line: Vec<String> = cells.iter().map(Cell::render).collect();
        self.text.push_str(&line.join(","));
        self.text.push('\n');
    }

    pub fn finish(self) -> String {
        self.text
    }
}

pub enum Cell {
    F(f64),
    I(usize),
    S(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(x) => format!("{x:.12e}"),
            Cell::I(n) => n.to_string(),
            Cell::S(s) => s.clone(),
        }
    }
}

pub fn floats(values: &[f64]) -> impl Iterator<Item = Cell> + '_ {
    values.iter().map(|v| Cell::F(*v))
}

pub fn names(prefix: &str, count: usize) -> Vec<String> {
    (0..count).map(|i| format!("{prefix}{i}")).collect()
}
