//! Verification suites. Each suite evaluates a fixed set of acceptance
//! criteria; every criterion is a public function so tests can call it alone.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::Context;
use blowup_core::{solve_phi_ode, PhiSolution, ProblemParams};

use crate::config::{ExperimentConfig, Suite};
use crate::report::{CriterionResult, Sink};

mod dynamics;
mod kernel;
mod physical;
mod profiles;
mod shoot;
mod spectral;

pub use dynamics::criterion_9;
pub use kernel::criterion_6;
pub use physical::{blowup_time_ode, criterion_8};
pub use profiles::{criterion_3, criterion_4, criterion_5};
pub use shoot::criterion_7;
pub use spectral::{criterion_1, criterion_2};

/// State shared by the criteria of one invocation.
pub struct Run<'a> {
    pub cfg: &'a ExperimentConfig,
    pub sink: Sink,
    pub artifacts: Vec<PathBuf>,
    pub details: BTreeMap<String, serde_json::Value>,
}

impl<'a> Run<'a> {
    pub fn new(cfg: &'a ExperimentConfig, sink: Sink) -> Self {
        Self { cfg, sink, artifacts: Vec::new(), details: BTreeMap::new() }
    }

    /// A run that writes nothing.
    pub fn dry(cfg: &'a ExperimentConfig) -> Self {
        Self::new(cfg, Sink::none())
    }

    pub(crate) fn keep(&mut self, path: Option<PathBuf>) {
        self.artifacts.extend(path);
    }

    pub(crate) fn detail(&mut self, key: impl Into<String>, value: impl serde::Serialize) {
        if let Ok(v) = serde_json::to_value(value) {
            self.details.insert(key.into(), v);
        }
    }

    pub(crate) fn params(&self) -> anyhow::Result<ProblemParams> {
        Ok(self.cfg.problem_params()?)
    }
}

/// Tag used in artifact names for a `mu` variant, e.g. `mu0.5`.
pub(crate) fn tag(pr: &ProblemParams) -> String {
    if pr.is_unperturbed() {
        "mu0".into()
    } else {
        format!("{}{}", if pr.iota == 0.0 { "M" } else { "mu" }, pr.h_coefficient())
    }
}

pub(crate) fn phi_table(pr: &ProblemParams, s_min: f64, s_max: f64) -> anyhow::Result<PhiSolution> {
    solve_phi_ode(pr, s_min, s_max).with_context(|| format!("profile ODE on [{s_min}, {s_max}]"))
}

/// `n` log-spaced points on `[lo, hi]`.
pub(crate) fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}

pub(crate) fn timed<F>(f: F) -> anyhow::Result<CriterionResult>
where
    F: FnOnce() -> anyhow::Result<CriterionResult>,
{
    let t0 = Instant::now();
    let r = f()?;
    Ok(r.finish(t0.elapsed()))
}

/// Criteria evaluated by a suite.
pub fn criteria_of(suite: Suite) -> &'static [u8] {
    match suite {
        Suite::Spectral => &[1, 2],
        Suite::Profiles => &[3, 4, 5],
        Suite::Kernel => &[6],
        Suite::Shoot => &[7],
        Suite::Physical => &[8],
        Suite::Dynamics => &[9],
        Suite::All => &[1, 2, 3, 4, 5, 6, 7, 8, 9],
    }
}

pub fn criterion(id: u8, run: &mut Run<'_>) -> anyhow::Result<CriterionResult> {
    match id {
        1 => criterion_1(run),
        2 => criterion_2(run),
        3 => criterion_3(run),
        4 => criterion_4(run),
        5 => criterion_5(run),
        6 => criterion_6(run),
        7 => criterion_7(run),
        8 => criterion_8(run),
        9 => criterion_9(run),
        _ => anyhow::bail!("no criterion {id}"),
    }
}

/// Runs every criterion of `suite`, stopping at the first runtime failure.
pub fn run_suite(suite: Suite, run: &mut Run<'_>) -> anyhow::Result<Vec<CriterionResult>> {
    criteria_of(suite)
        .iter()
        .map(|&id| criterion(id, run).with_context(|| format!("suite {}, criterion {id}", suite.name())))
        .collect()
}
