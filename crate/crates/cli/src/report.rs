//! Criterion outcomes, CSV artifacts and the run manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::Context;
use serde::Serialize;

/// One acceptance criterion as measured by a suite.
#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: String,
    pub pass: bool,
    /// Individual checks making up the criterion, in order.
    pub checks: Vec<Check>,
    pub runtime_s: f64,
    pub budget_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub label: String,
    pub measured: f64,
    /// Human-readable acceptance condition, e.g. `<= 1e-10`.
    pub condition: String,
    pub pass: bool,
}

impl CriterionResult {
    pub fn new(id: u8, name: &str, budget_s: f64) -> Self {
        Self { id, name: name.into(), pass: true, checks: Vec::new(), runtime_s: 0.0, budget_s }
    }

    pub fn check(&mut self, label: impl Into<String>, measured: f64, condition: impl Into<String>, pass: bool) {
        self.pass &= pass;
        self.checks.push(Check { label: label.into(), measured, condition: condition.into(), pass });
    }

    pub fn at_most(&mut self, label: impl Into<String>, measured: f64, limit: f64) {
        self.check(label, measured, format!("<= {limit:e}"), measured <= limit);
    }

    pub fn at_least(&mut self, label: impl Into<String>, measured: f64, limit: f64) {
        self.check(label, measured, format!(">= {limit}"), measured >= limit);
    }

    /// Records the wall time and checks it against the budget.
    pub fn finish(mut self, elapsed: Duration) -> Self {
        self.runtime_s = elapsed.as_secs_f64();
        let (t, b) = (self.runtime_s, self.budget_s);
        self.check("runtime_s", t, format!("< {b}"), t < b);
        self
    }

    /// `criterion 3 [phi_ode]: FAIL (b1 = -0.3068 vs ...)`.
    pub fn summary_line(&self) -> String {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        let failed: Vec<String> = self
            .checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| format!("{} = {:.4e} not {}", c.label, c.measured, c.condition))
            .collect();
        let detail = if failed.is_empty() {
            self.checks.iter().map(|c| format!("{} = {:.4e}", c.label, c.measured)).collect::<Vec<_>>().join(", ")
        } else {
            failed.join("; ")
        };
        format!("criterion {} [{}]: {verdict} ({detail})", self.id, self.name)
    }
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.summary_line())?;
        for c in &self.checks {
            writeln!(f, "    {:<5} {:<44} {:>14.6e}  {}", if c.pass { "ok" } else { "FAIL" }, c.label, c.measured, c.condition)?;
        }
        Ok(())
    }
}

/// Output directory plus the hash stamped into every artifact. With no
/// directory nothing is written.
#[derive(Debug, Clone)]
pub struct Sink {
    pub dir: Option<PathBuf>,
    pub config_hash: String,
}

impl Sink {
    pub fn none() -> Self {
        Self { dir: None, config_hash: String::new() }
    }

    pub fn new(dir: PathBuf, config_hash: String) -> anyhow::Result<Self> {
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir: Some(dir), config_hash })
    }

    /// Writes `name` as `# config_hash=...` followed by whatever `body` emits.
    pub fn csv<F>(&self, name: &str, body: F) -> anyhow::Result<Option<PathBuf>>
    where
        F: FnOnce(&mut dyn Write) -> anyhow::Result<()>,
    {
        let Some(dir) = &self.dir else { return Ok(None) };
        let path = dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        writeln!(w, "# config_hash={}", self.config_hash)?;
        body(&mut w)?;
        w.flush()?;
        Ok(Some(path))
    }

    /// Rows of plain records with a header.
    pub fn table(&self, name: &str, header: &[&str], rows: &[Vec<f64>]) -> anyhow::Result<Option<PathBuf>> {
        self.csv(name, |w| {
            let mut cw = csv::Writer::from_writer(w);
            cw.write_record(header)?;
            for r in rows {
                cw.write_record(r.iter().map(|v| v.to_string()))?;
            }
            cw.flush()?;
            Ok(())
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub suite: String,
    pub config_hash: String,
    pub version: String,
    pub seed: u64,
    pub jobs: usize,
    pub wall_time_s: f64,
    pub pass: bool,
    pub criteria: Vec<CriterionResult>,
    pub artifacts: Vec<String>,
    /// Suite-specific structured output (e.g. shooting histories).
    pub details: BTreeMap<String, serde_json::Value>,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> anyhow::Result<PathBuf> {
        let path = dir.join(format!("manifest_{}.json", self.suite));
        let mut w = BufWriter::new(File::create(&path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)?;
        w.flush()?;
        Ok(path)
    }
}
