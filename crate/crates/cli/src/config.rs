//! Experiment configuration: a sectioned TOML file, every key optional.
//!
//! ```toml
//! seed = 7
//! out = "runs/a"
//!
//! [problem]
//! p = 3.0
//! case = "explicit_log"   # or "log_bounded"
//! a = 1.0
//! mu = 1.0
//! M = 1.0
//!
//! [numerics]
//! quadrature_order = 200
//! K = 5.0
//! A = 20.0
//! s0 = 20.0
//!
//! [numerics.physical]
//! c_dt = 0.01
//!
//! [experiment]
//! suite = "shoot"
//! shoot_mu = [0.0, 0.5]
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use blowup_core::params::ParamError;
use blowup_core::{PerturbationCase, ProblemParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Profiles,
    Spectral,
    Kernel,
    Dynamics,
    Shoot,
    Physical,
    All,
}

impl Suite {
    pub const EACH: [Suite; 6] =
        [Suite::Spectral, Suite::Profiles, Suite::Kernel, Suite::Dynamics, Suite::Shoot, Suite::Physical];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Profiles => "profiles",
            Suite::Spectral => "spectral",
            Suite::Kernel => "kernel",
            Suite::Dynamics => "dynamics",
            Suite::Shoot => "shoot",
            Suite::Physical => "physical",
            Suite::All => "all",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseName {
    ExplicitLog,
    LogBounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemSection {
    pub p: f64,
    pub case: CaseName,
    pub a: f64,
    pub mu: f64,
    #[serde(rename = "M")]
    pub m: f64,
}

impl Default for ProblemSection {
    fn default() -> Self {
        Self { p: 3.0, case: CaseName::ExplicitLog, a: 1.0, mu: 1.0, m: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSection {
    pub sigma: f64,
    pub lambda: f64,
    pub dy: f64,
    pub validation_factor: f64,
    pub slack: f64,
    pub samples_per_unit: usize,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self { sigma: 30.0, lambda: 1.0, dy: 0.05, validation_factor: 1.5, slack: 0.1, samples_per_unit: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShootSection {
    pub samples_per_edge: u64,
    pub max_refine: usize,
    pub max_levels: usize,
    /// The zero is located with horizon `horizon + locate_extra`; the finite
    /// horizon is what limits its accuracy (about `e^{-horizon}`).
    pub locate_extra: f64,
}

impl Default for ShootSection {
    fn default() -> Self {
        Self { samples_per_edge: 8, max_refine: 64, max_levels: 64, locate_extra: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsSection {
    /// Length of the comparison window in `s`.
    pub span: f64,
    pub dy_coarse: f64,
    pub dy_fine: f64,
    /// Initial data `(d0, d1)` of the cross-solver runs.
    pub d: [f64; 2],
    /// Comparison window `|y| <= window` of the round trip.
    pub window: f64,
}

impl Default for DynamicsSection {
    fn default() -> Self {
        Self { span: 2.0, dy_coarse: 0.1, dy_fine: 0.05, d: [0.01, 0.05], window: 20.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicalSection {
    /// Runs start at `T = e^{-s0}`.
    pub s0: f64,
    pub alpha: f64,
    pub dxi: f64,
    pub x_max: f64,
    pub c_dt: f64,
    pub amplification: f64,
    /// `K0` of the final-profile reference points.
    pub k0: f64,
}

impl Default for PhysicalSection {
    fn default() -> Self {
        Self { s0: 7.0, alpha: 1e-10, dxi: 0.02, x_max: 2.0, c_dt: 0.01, amplification: 1e6, k0: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsSection {
    pub quadrature_order: usize,
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "A")]
    pub a_shrink: f64,
    pub varrho: Option<f64>,
    /// Similarity-variable grid spacing.
    pub dy: f64,
    /// Time step of the IMEX similarity solver.
    pub dt: f64,
    pub s0: f64,
    /// Shooting horizon past `s0`.
    pub horizon: f64,
    pub phi_s_min: f64,
    pub kernel: KernelSection,
    pub shoot: ShootSection,
    pub dynamics: DynamicsSection,
    pub physical: PhysicalSection,
}

impl Default for NumericsSection {
    fn default() -> Self {
        Self {
            quadrature_order: 200,
            k: 5.0,
            a_shrink: 20.0,
            varrho: None,
            dy: 0.05,
            dt: 0.01,
            s0: 20.0,
            horizon: 10.0,
            phi_s_min: 5.0,
            kernel: KernelSection::default(),
            shoot: ShootSection::default(),
            dynamics: DynamicsSection::default(),
            physical: PhysicalSection::default(),
        }
    }
}

/// Variants of `mu` run by the suites that repeat over perturbation strengths
/// (ignored in the log-bounded case, which has no `mu`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub suite: Option<Suite>,
    pub shoot_mu: Vec<f64>,
    pub physical_mu: Vec<f64>,
    pub dynamics_mu: Vec<f64>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self { suite: None, shoot_mu: vec![0.0, 0.5], physical_mu: vec![0.0], dynamics_mu: vec![0.0, 0.5] }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub problem: ProblemSection,
    pub numerics: NumericsSection,
    pub experiment: ExperimentSection,
}

/// A configuration error anchored at a line of the source file.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: Option<PathBuf>,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let path = self.path.as_deref().map(|p| p.display().to_string()).unwrap_or_else(|| "<config>".into());
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "{path}:{l}:{c}: {}", self.message),
            (Some(l), None) => write!(f, "{path}:{l}: {}", self.message),
            _ => write!(f, "{path}: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// 1-based line and column of a byte offset.
fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

/// Line of `key = ...` inside `[section]` (`""` for the top level).
fn locate(src: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if let Some(h) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = h.trim().to_string();
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let src = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: Some(path.to_path_buf()),
            line: None,
            column: None,
            message: format!("cannot read config: {e}"),
        })?;
        Self::parse(&src).map_err(|e| ConfigError { path: Some(path.to_path_buf()), ..e })
    }

    pub fn parse(src: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(src).map_err(|e| {
            let (line, column) = match e.span() {
                Some(sp) => {
                    let (l, c) = line_col(src, sp.start);
                    (Some(l), Some(c))
                }
                None => (None, None),
            };
            ConfigError { path: None, line, column, message: e.message().to_string() }
        })?;
        cfg.validate().map_err(|(section, key, message)| ConfigError {
            path: None,
            line: locate(src, section, key),
            column: None,
            message,
        })?;
        Ok(cfg)
    }

    /// Checks ranges; on failure returns `(section, key, message)`.
    pub fn validate(&self) -> Result<(), (&'static str, &'static str, String)> {
        self.problem_params().map_err(|e| {
            let key = match e {
                ParamError::Exponent(_) => "p",
                ParamError::LogPower { .. } => "a",
                ParamError::Bound(_) => "M",
                ParamError::Varrho { .. } => "varrho",
                ParamError::NonFinite(k) => k,
            };
            let section = if key == "varrho" { "numerics" } else { "problem" };
            (section, key, e.to_string())
        })?;
        let n = &self.numerics;
        let positive = [
            ("numerics", "K", n.k),
            ("numerics", "A", n.a_shrink),
            ("numerics", "dy", n.dy),
            ("numerics", "dt", n.dt),
            ("numerics", "horizon", n.horizon),
            ("numerics.kernel", "sigma", n.kernel.sigma),
            ("numerics.kernel", "lambda", n.kernel.lambda),
            ("numerics.kernel", "dy", n.kernel.dy),
            ("numerics.dynamics", "span", n.dynamics.span),
            ("numerics.dynamics", "dy_coarse", n.dynamics.dy_coarse),
            ("numerics.dynamics", "dy_fine", n.dynamics.dy_fine),
            ("numerics.dynamics", "window", n.dynamics.window),
            ("numerics.physical", "alpha", n.physical.alpha),
            ("numerics.physical", "dxi", n.physical.dxi),
            ("numerics.physical", "x_max", n.physical.x_max),
            ("numerics.physical", "c_dt", n.physical.c_dt),
            ("numerics.physical", "k0", n.physical.k0),
        ];
        for (section, key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err((section, key, format!("{key} must be positive and finite (got {v})")));
            }
        }
        if !(n.shoot.locate_extra >= 0.0) {
            return Err(("numerics.shoot", "locate_extra", "locate_extra must be non-negative".into()));
        }
        if n.quadrature_order < 8 {
            return Err(("numerics", "quadrature_order", format!("quadrature order {} < 8", n.quadrature_order)));
        }
        if n.phi_s_min < 5.0 {
            return Err(("numerics", "phi_s_min", format!("phi_s_min = {} < 5 does not resolve the log corrections", n.phi_s_min)));
        }
        for (key, s) in [("s0", n.s0)] {
            if s < n.phi_s_min {
                return Err(("numerics", key, format!("{key} = {s} precedes phi_s_min = {}", n.phi_s_min)));
            }
        }
        if n.physical.s0 < n.phi_s_min {
            return Err(("numerics.physical", "s0", format!("s0 = {} precedes phi_s_min = {}", n.physical.s0, n.phi_s_min)));
        }
        if n.dynamics.dy_fine >= n.dynamics.dy_coarse {
            return Err(("numerics.dynamics", "dy_fine", "dy_fine must be smaller than dy_coarse".into()));
        }
        if n.physical.amplification < 1e4 {
            return Err(("numerics.physical", "amplification", "amplification below 1e4 leaves no fitting decade".into()));
        }
        for (key, mus) in [
            ("shoot_mu", &self.experiment.shoot_mu),
            ("physical_mu", &self.experiment.physical_mu),
            ("dynamics_mu", &self.experiment.dynamics_mu),
        ] {
            if mus.iter().any(|m| !m.is_finite()) {
                return Err(("experiment", key, format!("{key} entries must be finite")));
            }
        }
        Ok(())
    }

    pub fn problem_params(&self) -> Result<ProblemParams, ParamError> {
        self.params_with_mu(self.problem.mu)
    }

    /// The configured problem with `mu` replaced (no-op for log-bounded `h`).
    pub fn params_with_mu(&self, mu: f64) -> Result<ProblemParams, ParamError> {
        let pr = &self.problem;
        let case = match pr.case {
            CaseName::ExplicitLog => PerturbationCase::ExplicitLog,
            CaseName::LogBounded => PerturbationCase::LogBounded,
        };
        let out = match case {
            PerturbationCase::ExplicitLog => ProblemParams::new(pr.p, case, pr.a, mu, pr.m)?,
            PerturbationCase::LogBounded => ProblemParams::new(pr.p, case, pr.a, 0.0, pr.m)?,
        };
        match self.numerics.varrho {
            Some(v) => out.with_varrho(v),
            None => Ok(out),
        }
    }

    /// `mu` variants for a suite; a single run in the log-bounded case.
    pub fn variants(&self, mus: &[f64]) -> Vec<ProblemParams> {
        match self.problem.case {
            CaseName::LogBounded => self.problem_params().into_iter().collect(),
            CaseName::ExplicitLog => mus.iter().filter_map(|&m| self.params_with_mu(m).ok()).collect(),
        }
    }

    /// SHA-256 of the canonical JSON form: insensitive to formatting, comments
    /// and key order, and to the output location.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(ExperimentConfig::parse("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let e = ExperimentConfig::parse("seed = 1\n\n[problem]\np = 3.0\nmuu = 2.0\n").unwrap_err();
        assert_eq!(e.line, Some(5), "{e}");
        assert!(e.message.contains("muu"));
    }

    #[test]
    fn invalid_value_points_at_key() {
        let e = ExperimentConfig::parse("[problem]\ncase = \"log_bounded\"\n\na = 0.5\n").unwrap_err();
        assert_eq!(e.line, Some(4));
        let e = ExperimentConfig::parse("[numerics.physical]\nc_dt = -1.0\n").unwrap_err();
        assert_eq!(e.line, Some(2));
        let e = ExperimentConfig::parse("[problem]\np = 1.0\n").unwrap_err();
        assert!(e.to_string().starts_with("<config>:2: "), "{e}");
    }

    #[test]
    fn hash_ignores_formatting_and_out() {
        let a = ExperimentConfig::parse("seed = 3\n[problem]\nmu = 0.5\n").unwrap();
        let b = ExperimentConfig::parse("# note\n[problem]\nmu   =   0.5\n\n[experiment]\n\nout_ignored_below = 1\n");
        assert!(b.is_err());
        let b = ExperimentConfig::parse("out = \"x\"\nseed = 3\n\n[problem]\n# c\nmu = 0.5").unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig::parse("seed = 4\n[problem]\nmu = 0.5\n").unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn variants_follow_case() {
        let c = ExperimentConfig::default();
        let v = c.variants(&[0.0, 0.5]);
        assert_eq!(v.len(), 2);
        assert!(v[0].is_unperturbed() && v[1].mu == 0.5);
        let c = ExperimentConfig::parse("[problem]\ncase = \"log_bounded\"\na = 2.0\n").unwrap();
        assert_eq!(c.variants(&[0.0, 0.5]).len(), 1);
    }
}
