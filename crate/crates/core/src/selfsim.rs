//! Evolution of the perturbation `q` around the corrected profile, and of the
//! full similarity unknown `w = varphi + q` as a cross-check.

use std::io::Write;
use std::sync::{Arc, OnceLock};

use serde::Serialize;
use thiserror::Error;

use crate::decomposition::{NormReport, Projector, SpectralDecomposition};
use crate::grid::{Grid, WeightedField};
use crate::hermite::{QuadratureRule, SpectralError, DEFAULT_ORDER};
use crate::linear_pde::{rk4_dt_limit, MolStepper, Scheme, StepError};
use crate::params::signed_pow;
use crate::phi::{PhiError, PhiSolution};
use crate::profile::eval_f;
use crate::shrinking_set::{check_va_parts, Constraint, MembershipReport, ShrinkingSetParams};
use crate::sources::{LevelCoefficients, Sources};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelfSimError {
    #[error(transparent)]
    Phi(#[from] PhiError),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("run end s = {s_end} lies beyond the profile table (s_max = {s_max})")]
    Horizon { s_end: f64, s_max: f64 },
    #[error("field grid does not match the solver grid")]
    GridMismatch,
}

/// Which terms of the q-equation are active (all by default).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Terms {
    pub potential: bool,
    pub nonlinear: bool,
    pub source: bool,
}

impl Default for Terms {
    fn default() -> Self {
        Self { potential: true, nonlinear: true, source: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverConfig {
    pub grid: Grid,
    pub dt: f64,
    pub scheme: Scheme,
    pub k: f64,
    pub record_every: f64,
    pub ssp: ShrinkingSetParams,
    pub stop_on_exit: bool,
    pub store_fields: bool,
    pub terms: Terms,
}

/// Default recording cadence.
pub const RECORD_EVERY: f64 = 0.1;

impl SolverConfig {
    /// Uniform grid of spacing `dy` wide enough for a run ending at `s_end`,
    /// explicit RK4 at its stability limit.
    pub fn new(ssp: ShrinkingSetParams, s_end: f64, dy: f64) -> Self {
        let grid = Grid::for_run(ssp.k, s_end, dy);
        Self {
            grid,
            dt: rk4_dt_limit(&grid),
            scheme: Scheme::Rk4,
            k: ssp.k,
            record_every: RECORD_EVERY,
            ssp,
            stop_on_exit: true,
            store_fields: false,
            terms: Terms::default(),
        }
    }

    pub fn imex(mut self, dt: f64) -> Self {
        self.scheme = Scheme::Imex;
        self.dt = dt;
        self
    }
}

/// `q(y, s0) = (phi(s0)/kappa)(f^p(z)(d0 + d1 z) - kappa/(2ps0))`, `z = y/sqrt(s0)`.
pub fn make_initial_data(d0: f64, d1: f64, s0: f64, phi: &PhiSolution, grid: Grid) -> Result<WeightedField, PhiError> {
    let pr = phi.params();
    let amp = phi.phi(s0)? / pr.kappa;
    let ip = pr.integer_p();
    let rs = s0.sqrt();
    let c = pr.kappa / (2.0 * pr.p * s0);
    Ok(WeightedField::from_fn(grid, s0, |y| {
        let z = y / rs;
        amp * (signed_pow(eval_f(z, pr), pr.p, ip) * (d0 + d1 * z) - c)
    }))
}

/// Coefficient levels on the lattice `s0 + k dt`, shared between trajectories.
#[derive(Debug)]
pub struct SharedLevels {
    s0: f64,
    dt: f64,
    slots: Vec<OnceLock<Arc<LevelCoefficients>>>,
}

impl SharedLevels {
    pub fn new(s0: f64, dt: f64, n_steps: usize) -> Self {
        Self { s0, dt, slots: (0..=n_steps).map(|_| OnceLock::new()).collect() }
    }

    fn index(&self, s: f64) -> Option<usize> {
        let u = (s - self.s0) / self.dt;
        let k = u.round();
        ((u - k).abs() < 1e-6 && k >= 0.0 && (k as usize) < self.slots.len()).then_some(k as usize)
    }
}

/// One-step integrator for the q-equation.
pub struct QSolver<'a> {
    src: Sources<'a>,
    stepper: MolStepper,
    ring: Vec<(f64, Arc<LevelCoefficients>)>,
    shared: Option<Arc<SharedLevels>>,
    terms: Terms,
}

fn level(
    src: &Sources<'_>,
    grid: &Grid,
    ring: &mut Vec<(f64, Arc<LevelCoefficients>)>,
    shared: Option<&SharedLevels>,
    s: f64,
) -> Result<Arc<LevelCoefficients>, StepError> {
    if let Some((_, l)) = ring.iter().find(|(t, _)| *t == s) {
        return Ok(l.clone());
    }
    let fill = || -> Result<Arc<LevelCoefficients>, StepError> {
        let mut lc = LevelCoefficients::default();
        src.fill_level(s, grid, &mut lc).map_err(|e| StepError::Source { s, msg: e.to_string() })?;
        Ok(Arc::new(lc))
    };
    let l = match shared.and_then(|sh| sh.index(s).map(|i| (sh, i))) {
        Some((sh, i)) => match sh.slots[i].get() {
            Some(l) => l.clone(),
            None => {
                let l = fill()?;
                sh.slots[i].get_or_init(|| l).clone()
            }
        },
        None => fill()?,
    };
    if ring.len() >= 3 {
        ring.remove(0);
    }
    ring.push((s, l.clone()));
    Ok(l)
}

impl<'a> QSolver<'a> {
    pub fn new(phi: &'a PhiSolution, cfg: &SolverConfig, shared: Option<Arc<SharedLevels>>) -> Result<Self, SelfSimError> {
        Ok(Self {
            src: Sources::new(phi),
            stepper: MolStepper::new(cfg.grid, cfg.scheme, cfg.dt)?,
            ring: Vec::with_capacity(3),
            shared,
            terms: cfg.terms,
        })
    }

    pub fn dt(&self) -> f64 {
        self.stepper.dt()
    }

    /// Advances `q` from `s` to `s + dt`.
    pub fn step(&mut self, q: &mut [f64], s: f64) -> Result<(), StepError> {
        let Self { src, stepper, ring, shared, terms } = self;
        let grid = *stepper.grid();
        let terms = *terms;
        let shared = shared.as_deref();
        let forcing = |ss: f64, u: &[f64], out: &mut [f64]| -> Result<(), StepError> {
            if !(terms.potential || terms.nonlinear || terms.source) {
                out.iter_mut().for_each(|o| *o = 0.0);
                return Ok(());
            }
            let lc = level(src, &grid, ring, shared, ss)?;
            for i in 0..u.len() {
                let mut v = 0.0;
                if terms.potential {
                    v += lc.v[i] * u[i];
                }
                if terms.source {
                    v += lc.r[i];
                }
                if terms.nonlinear {
                    v += src.nonlinear(&lc, i, u[i]);
                }
                out[i] = v;
            }
            Ok(())
        };
        stepper.step(q, s, forcing, |_| (0.0, 0.0))
    }
}

/// One step of the q-equation from `field.s` to `field.s + dt`.
pub fn step_q(field: &WeightedField, dt: f64, phi: &PhiSolution, scheme: Scheme) -> Result<WeightedField, SelfSimError> {
    let ssp = ShrinkingSetParams::new(20.0, phi.params(), 5.0);
    let cfg = SolverConfig { grid: field.grid, dt, scheme, ..SolverConfig::new(ssp, field.s + dt, field.grid.dy()) };
    let mut solver = QSolver::new(phi, &cfg, None)?;
    let mut out = field.clone();
    solver.step(&mut out.values, field.s)?;
    out.s = field.s + dt;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajSample {
    pub s: f64,
    pub modes: [f64; 3],
    pub norms: NormReport,
    pub grad_norm: f64,
    pub membership: MembershipReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExitInfo {
    pub s: f64,
    pub constraint: Constraint,
    pub modes: [f64; 3],
    pub margins: [f64; 5],
    /// `d/ds (|q_m| - bound)` at the exit for the exiting mode, by backward difference.
    pub transversal_rate: f64,
    /// Exit through a constraint other than the two expanding modes.
    pub anomalous: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Termination {
    Horizon,
    Exited,
    SolverFailure { s: f64, message: String },
}

#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub samples: Vec<TrajSample>,
    pub fields: Vec<WeightedField>,
    pub decompositions: Vec<SpectralDecomposition>,
    pub exit: Option<ExitInfo>,
    pub termination: Termination,
    pub config: SolverConfig,
    pub s0: f64,
    /// Last time reached.
    pub s_last: f64,
    /// Last time with every constraint satisfied.
    pub s_in_set: f64,
}

#[derive(Debug, Serialize)]
struct TrajRow {
    s: f64,
    q0: f64,
    q1: f64,
    q2: f64,
    norm_qminus_weighted: f64,
    norm_qe: f64,
    norm_q: f64,
    norm_grad_q: f64,
    #[serde(rename = "in_VA")]
    in_va: bool,
    exit_flag: String,
}

impl TrajectoryRecord {
    /// `(s, q0, q1, q2)` at every recorded sample.
    pub fn mode_samples(&self) -> Vec<(f64, [f64; 3])> {
        self.samples.iter().map(|x| (x.s, x.modes)).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for x in &self.samples {
            let flag = match &self.exit {
                Some(e) if e.s == x.s => e.constraint.name().to_string(),
                _ => "none".to_string(),
            };
            w.serialize(TrajRow {
                s: x.s,
                q0: x.modes[0],
                q1: x.modes[1],
                q2: x.modes[2],
                norm_qminus_weighted: x.norms.qminus_weighted,
                norm_qe: x.norms.qe_sup,
                norm_q: x.norms.q_sup,
                norm_grad_q: x.grad_norm,
                in_va: x.membership.in_set,
                exit_flag: flag,
            })?;
        }
        w.flush()?;
        Ok(())
    }
}

fn grad_sup(values: &[f64], dy: f64) -> f64 {
    values.windows(3).fold(0.0, |m, w| m.max(((w[2] - w[0]) / (2.0 * dy)).abs()))
}

/// Reusable driver holding the projector and quadrature rule.
pub struct Evolver<'a> {
    pub phi: &'a PhiSolution,
    pub cfg: SolverConfig,
    projector: Projector,
    shared: Option<Arc<SharedLevels>>,
}

impl<'a> Evolver<'a> {
    pub fn new(phi: &'a PhiSolution, cfg: SolverConfig) -> Self {
        Self::with_rule(phi, cfg, &QuadratureRule::gauss_hermite(DEFAULT_ORDER))
    }

    pub fn with_rule(phi: &'a PhiSolution, cfg: SolverConfig, rule: &QuadratureRule) -> Self {
        Self { phi, cfg, projector: Projector::new(cfg.grid, rule), shared: None }
    }

    /// Shares coefficient levels between all runs starting at `s0`.
    pub fn share_levels(&mut self, s0: f64, s_end: f64) {
        let n = ((s_end - s0) / self.cfg.dt).ceil() as usize + 1;
        self.shared = Some(Arc::new(SharedLevels::new(s0, self.cfg.dt, n)));
    }

    pub fn projector(&self) -> &Projector {
        &self.projector
    }

    pub fn evolve(&self, d0: f64, d1: f64, s0: f64, s_end: f64) -> Result<TrajectoryRecord, SelfSimError> {
        let q = make_initial_data(d0, d1, s0, self.phi, self.cfg.grid)?;
        self.evolve_field(q, s_end)
    }

    fn check_horizon(&self, s_end: f64) -> Result<(), SelfSimError> {
        if s_end > self.phi.s_max() * (1.0 + 1e-12) {
            return Err(SelfSimError::Horizon { s_end, s_max: self.phi.s_max() });
        }
        Ok(())
    }

    fn sample(&self, values: &[f64], s: f64, store: bool, rec: &mut TrajectoryRecord) -> Result<TrajSample, SelfSimError> {
        let (modes, norms) = self.projector.measure(values, s, self.cfg.k);
        let membership = check_va_parts(modes, &norms, s, &self.cfg.ssp);
        let x = TrajSample { s, modes, norms, grad_norm: grad_sup(values, self.cfg.grid.dy()), membership };
        if store {
            let f = WeightedField { grid: self.cfg.grid, s, values: values.to_vec() };
            rec.decompositions.push(self.projector.decompose(&f, self.cfg.k)?);
            rec.fields.push(f);
        }
        rec.samples.push(x);
        Ok(x)
    }

    pub fn evolve_field(&self, q0: WeightedField, s_end: f64) -> Result<TrajectoryRecord, SelfSimError> {
        if q0.grid != self.cfg.grid {
            return Err(SelfSimError::GridMismatch);
        }
        self.check_horizon(s_end)?;
        let cfg = &self.cfg;
        let s0 = q0.s;
        let mut solver = QSolver::new(self.phi, cfg, self.shared.clone())?;
        let dt = cfg.dt;
        let n_steps = ((s_end - s0) / dt).round() as usize;
        let stride = ((cfg.record_every / dt).round() as usize).max(1);
        let mut rec = TrajectoryRecord {
            samples: Vec::new(),
            fields: Vec::new(),
            decompositions: Vec::new(),
            exit: None,
            termination: Termination::Horizon,
            config: *cfg,
            s0,
            s_last: s0,
            s_in_set: s0,
        };
        let mut q = q0.values;
        let first = self.sample(&q, s0, cfg.store_fields, &mut rec)?;
        let mut prev = (s0, first.modes, first.membership);
        let mut in_set_so_far = first.membership.in_set;
        if first.membership.touches_boundary() {
            rec.exit = Some(exit_info(&first.membership, first.modes, None, &cfg.ssp));
            if cfg.stop_on_exit {
                rec.termination = Termination::Exited;
                return Ok(rec);
            }
        }
        for k in 1..=n_steps {
            let s_prev = s0 + (k - 1) as f64 * dt;
            let s = s0 + k as f64 * dt;
            if let Err(e) = solver.step(&mut q, s_prev) {
                rec.termination = Termination::SolverFailure { s, message: e.to_string() };
                return Ok(rec);
            }
            rec.s_last = s;
            let (modes, norms) = self.projector.measure(&q, s, cfg.k);
            let m = check_va_parts(modes, &norms, s, &cfg.ssp);
            if in_set_so_far && m.in_set {
                rec.s_in_set = s;
            } else {
                in_set_so_far = false;
            }
            let exiting = rec.exit.is_none() && m.touches_boundary();
            if k % stride == 0 || exiting || k == n_steps {
                self.sample(&q, s, cfg.store_fields, &mut rec)?;
            }
            if exiting {
                rec.exit = Some(exit_info(&m, modes, Some(prev), &cfg.ssp));
                if cfg.stop_on_exit {
                    rec.termination = Termination::Exited;
                    return Ok(rec);
                }
            }
            prev = (s, modes, m);
        }
        Ok(rec)
    }

    /// Full self-similar equation for `w`; modes and membership refer to `w - varphi`.
    pub fn evolve_w(&self, w0: WeightedField, s_end: f64, bc: WBoundary<'_>) -> Result<TrajectoryRecord, SelfSimError> {
        if w0.grid != self.cfg.grid {
            return Err(SelfSimError::GridMismatch);
        }
        self.check_horizon(s_end)?;
        let cfg = &self.cfg;
        let grid = cfg.grid;
        let pr = *self.phi.params();
        let ip = pr.integer_p();
        let family = self.phi.family().clone();
        let src = Sources::new(self.phi);
        let s0 = w0.s;
        let dt = cfg.dt;
        let n_steps = ((s_end - s0) / dt).round() as usize;
        let stride = ((cfg.record_every / dt).round() as usize).max(1);
        let mut stepper = MolStepper::new(grid, cfg.scheme, dt)?;
        let mut rec = TrajectoryRecord {
            samples: Vec::new(),
            fields: Vec::new(),
            decompositions: Vec::new(),
            exit: None,
            termination: Termination::Horizon,
            config: *cfg,
            s0,
            s_last: s0,
            s_in_set: s0,
        };
        let l = grid.half_width();
        let boundary = |s: f64| -> (f64, f64) {
            match &bc {
                WBoundary::Profile => {
                    let a = src.varphi(-l, s).map(|v| v.value).unwrap_or(f64::NAN);
                    let b = src.varphi(l, s).map(|v| v.value).unwrap_or(f64::NAN);
                    (a, b)
                }
                WBoundary::Values(f) => f(s),
            }
        };
        let q_of = |w: &[f64], s: f64| -> Result<Vec<f64>, SelfSimError> {
            let mut lc = LevelCoefficients::default();
            src.fill_level(s, &grid, &mut lc).map_err(|e| StepError::Source { s, msg: e.to_string() })?;
            Ok(w.iter().zip(&lc.varphi).map(|(a, b)| a - b).collect())
        };
        let mut w = w0.values;
        let record = |w: &[f64], s: f64, rec: &mut TrajectoryRecord| -> Result<(), SelfSimError> {
            let q = q_of(w, s)?;
            let (modes, norms) = self.projector.measure(&q, s, cfg.k);
            let membership = check_va_parts(modes, &norms, s, &cfg.ssp);
            rec.samples.push(TrajSample { s, modes, norms, grad_norm: grad_sup(&q, grid.dy()), membership });
            if cfg.store_fields {
                rec.fields.push(WeightedField { grid, s, values: w.to_vec() });
            }
            Ok(())
        };
        record(&w, s0, &mut rec)?;
        let lin = -pr.p / (pr.p - 1.0);
        for k in 1..=n_steps {
            let s_prev = s0 + (k - 1) as f64 * dt;
            let s = s0 + k as f64 * dt;
            let forcing = |ss: f64, u: &[f64], out: &mut [f64]| -> Result<(), StepError> {
                for i in 0..u.len() {
                    let mut v = lin * u[i] + signed_pow(u[i], pr.p, ip);
                    if !family.is_zero() {
                        v += family.rescaled_unchecked(0, u[i], ss);
                    }
                    out[i] = v;
                }
                Ok(())
            };
            if let Err(e) = stepper.step(&mut w, s_prev, forcing, boundary) {
                rec.termination = Termination::SolverFailure { s, message: e.to_string() };
                return Ok(rec);
            }
            rec.s_last = s;
            if k % stride == 0 || k == n_steps {
                record(&w, s, &mut rec)?;
            }
        }
        Ok(rec)
    }
}

/// Dirichlet data for the w-equation.
pub enum WBoundary<'b> {
    /// `w = varphi(+-L, s)`.
    Profile,
    /// Arbitrary `(left, right)` values.
    Values(Box<dyn Fn(f64) -> (f64, f64) + 'b>),
}

fn exit_info(
    m: &MembershipReport,
    modes: [f64; 3],
    prev: Option<(f64, [f64; 3], MembershipReport)>,
    ssp: &ShrinkingSetParams,
) -> ExitInfo {
    let c = m.tightest;
    let idx = Constraint::ALL.iter().position(|x| *x == c).unwrap_or(0);
    let rate = match (prev, idx) {
        (Some((sp, mp, _)), i) if i < 2 => {
            let g = |s: f64, md: [f64; 3]| md[i].abs() - ssp.bounds(s)[i];
            (g(m.s, modes) - g(sp, mp)) / (m.s - sp)
        }
        _ => f64::NAN,
    };
    ExitInfo { s: m.s, constraint: c, modes, margins: m.margins, transversal_rate: rate, anomalous: !c.is_expanding() }
}

/// Convenience wrapper: builds an [`Evolver`] and runs one trajectory.
pub fn evolve(d0: f64, d1: f64, s0: f64, s_end: f64, phi: &PhiSolution, cfg: SolverConfig) -> Result<TrajectoryRecord, SelfSimError> {
    Evolver::new(phi, cfg).evolve(d0, d1, s0, s_end)
}

pub fn evolve_w(w0: WeightedField, s_end: f64, phi: &PhiSolution, cfg: SolverConfig) -> Result<TrajectoryRecord, SelfSimError> {
    Evolver::new(phi, cfg).evolve_w(w0, s_end, WBoundary::Profile)
}

/// `varphi(., s)` on a grid.
pub fn profile_field(phi: &PhiSolution, grid: Grid, s: f64) -> Result<WeightedField, PhiError> {
    let src = Sources::new(phi);
    let mut lc = LevelCoefficients::default();
    src.fill_level(s, &grid, &mut lc).map_err(|e| match e {
        crate::sources::SourceError::Phi(p) => p,
    })?;
    Ok(WeightedField { grid, s, values: lc.varphi })
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("need at least 5 samples for mode residuals, got {0}")]
pub struct InsufficientData(pub usize);

/// Residuals of the mode ODEs along a sampled trajectory.
#[derive(Debug, Clone)]
pub struct ModeResiduals {
    pub s: Vec<f64>,
    /// `q_m' - (1 - m/2) q_m` for m = 0, 1 and `q_2' + (2/s) q_2`.
    pub r: [Vec<f64>; 3],
    /// Envelope log-log slope of `|r_m|` against s.
    pub slopes: [Option<f64>; 3],
}

/// Centered differences on (possibly non-uniform) samples; interior points only.
pub fn mode_ode_residuals_from(samples: &[(f64, [f64; 3])]) -> Result<ModeResiduals, InsufficientData> {
    if samples.len() < 5 {
        return Err(InsufficientData(samples.len()));
    }
    let mut s = Vec::new();
    let mut r: [Vec<f64>; 3] = Default::default();
    for w in samples.windows(3) {
        let (s0, q0) = w[0];
        let (s1, q1) = w[1];
        let (s2, q2) = w[2];
        let (h0, h1) = (s1 - s0, s2 - s1);
        s.push(s1);
        for m in 0..3 {
            // second-order derivative on a non-uniform stencil
            let d = (-h1 / (h0 * (h0 + h1))) * q0[m] + ((h1 - h0) / (h0 * h1)) * q1[m] + (h0 / (h1 * (h0 + h1))) * q2[m];
            let lin = if m < 2 { (1.0 - m as f64 / 2.0) * q1[m] } else { -2.0 / s1 * q1[m] };
            r[m].push(d - lin);
        }
    }
    let bins = (s.len() / 4).clamp(2, 10);
    let slopes = std::array::from_fn(|m| {
        let abs: Vec<f64> = r[m].iter().map(|v| v.abs()).collect();
        crate::fit::envelope_slope(&s, &abs, bins).map(|f| f.slope)
    });
    Ok(ModeResiduals { s, r, slopes })
}

pub fn mode_ode_residuals(traj: &TrajectoryRecord) -> Result<ModeResiduals, InsufficientData> {
    mode_ode_residuals_from(&traj.mode_samples())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::apply_semigroup;
    use crate::params::ProblemParams;
    use crate::phi::solve_phi_ode;

    fn setup(p: f64) -> (PhiSolution, SolverConfig) {
        let pr = ProblemParams::explicit_log(p, 1.0, 1.0).unwrap();
        let phi = solve_phi_ode(&pr, 10.0, 40.0).unwrap();
        let ssp = ShrinkingSetParams::new(20.0, &pr, 5.0);
        let mut cfg = SolverConfig::new(ssp, 25.0, 0.1);
        cfg.grid = Grid::new(30.0, 0.1);
        cfg.dt = rk4_dt_limit(&cfg.grid);
        (phi, cfg)
    }

    #[test]
    fn trivial_initial_data_is_constant() {
        let (phi, cfg) = setup(3.0);
        let s0 = 20.0;
        let q = make_initial_data(0.0, 0.0, s0, &phi, cfg.grid).unwrap();
        let want = -phi.phi(s0).unwrap() / (2.0 * 3.0 * s0);
        assert!(q.values.iter().all(|v| (v - want).abs() < 1e-15));
    }

    #[test]
    fn zero_is_fixed_without_source() {
        let (phi, mut cfg) = setup(3.0);
        cfg.terms.source = false;
        let mut solver = QSolver::new(&phi, &cfg, None).unwrap();
        let mut q = vec![0.0; cfg.grid.len()];
        for k in 0..20 {
            solver.step(&mut q, 20.0 + k as f64 * cfg.dt).unwrap();
        }
        assert!(q.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_part_matches_semigroup() {
        let (phi, cfg) = setup(3.0);
        let grid = Grid::new(40.0, 0.05);
        let dt = rk4_dt_limit(&grid);
        let cfg = SolverConfig { grid, dt, terms: Terms { potential: false, nonlinear: false, source: false }, ..cfg };
        let f = WeightedField::from_fn(grid, 20.0, |y| (1.0 + 0.3 * y) * (-y * y / 16.0).exp());
        let mut solver = QSolver::new(&phi, &cfg, None).unwrap();
        let mut u = f.values.clone();
        let steps = 100;
        for k in 0..steps {
            solver.step(&mut u, 20.0 + k as f64 * dt).unwrap();
        }
        let rule = QuadratureRule::gauss_hermite(DEFAULT_ORDER);
        let exact = apply_semigroup(steps as f64 * dt, &f, &rule).field;
        let err = u.iter().zip(&exact.values).enumerate().filter(|(i, _)| grid.y(*i).abs() < 20.0).fold(0.0f64, |m, (_, (a, b))| m.max((a - b).abs()));
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn even_data_stays_even() {
        let (phi, mut cfg) = setup(3.0);
        cfg.stop_on_exit = false;
        cfg.store_fields = true;
        cfg.record_every = 0.5;
        let rec = evolve(1e-3, 0.0, 20.0, 21.0, &phi, cfg).unwrap();
        let last = rec.fields.last().unwrap();
        let n = last.values.len();
        for i in 0..n {
            assert!((last.values[i] - last.values[n - 1 - i]).abs() < 1e-9);
        }
        assert!(rec.samples.windows(2).all(|w| w[1].s > w[0].s));
    }

    #[test]
    fn large_d0_exits_through_mode0_deterministically() {
        let (phi, cfg) = setup(3.0);
        let a = evolve(0.5, 0.0, 20.0, 25.0, &phi, cfg).unwrap();
        let b = evolve(0.5, 0.0, 20.0, 25.0, &phi, cfg).unwrap();
        let ea = a.exit.unwrap();
        assert_eq!(ea.constraint, Constraint::Mode0);
        assert_eq!(a.termination, Termination::Exited);
        assert!(ea.s < 21.0);
        assert_eq!(ea.s.to_bits(), b.exit.unwrap().s.to_bits());
    }

    #[test]
    fn kappa_is_stationary_for_w() {
        let pr = ProblemParams::unperturbed(3.0);
        let phi = solve_phi_ode(&pr, 10.0, 40.0).unwrap();
        let ssp = ShrinkingSetParams::new(20.0, &pr, 5.0);
        let mut cfg = SolverConfig::new(ssp, 25.0, 0.1);
        cfg.grid = Grid::new(20.0, 0.1);
        cfg.dt = rk4_dt_limit(&cfg.grid);
        cfg.store_fields = true;
        let k = pr.kappa;
        let ev = Evolver::new(&phi, cfg);
        let rec = ev.evolve_w(WeightedField::from_fn(cfg.grid, 20.0, |_| k), 21.0, WBoundary::Values(Box::new(move |_| (k, k)))).unwrap();
        let last = rec.fields.last().unwrap();
        assert!(last.values.iter().all(|v| (v - k).abs() < 1e-12));
    }

    #[test]
    fn flat_w_follows_scalar_ode() {
        // p = 3: v = w^-2 solves v' = v - 2
        let pr = ProblemParams::unperturbed(3.0);
        let phi = solve_phi_ode(&pr, 10.0, 40.0).unwrap();
        let ssp = ShrinkingSetParams::new(20.0, &pr, 5.0);
        let mut cfg = SolverConfig::new(ssp, 25.0, 0.1);
        cfg.grid = Grid::new(20.0, 0.1);
        cfg.dt = rk4_dt_limit(&cfg.grid);
        cfg.store_fields = true;
        let c: f64 = 0.5;
        let s0 = 20.0;
        let exact = move |s: f64| (2.0 + (c.powi(-2) - 2.0) * (s - s0).exp()).powf(-0.5);
        let ev = Evolver::new(&phi, cfg);
        let rec = ev.evolve_w(WeightedField::from_fn(cfg.grid, s0, |_| c), s0 + 1.0, WBoundary::Values(Box::new(move |s| (exact(s), exact(s))))).unwrap();
        let last = rec.fields.last().unwrap();
        let want = exact(last.s);
        let err = last.values.iter().fold(0.0f64, |m, v| m.max((v - want).abs()));
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn mode_residuals_vanish_on_exact_modes() {
        let c = 1e-3;
        let samples: Vec<(f64, [f64; 3])> = (0..50).map(|k| {
            let s = 20.0 + 0.1 * k as f64;
            (s, [c * (s - 20.0).exp(), c * (0.5 * (s - 20.0)).exp(), c / (s * s)])
        }).collect();
        let r = mode_ode_residuals_from(&samples).unwrap();
        // centered differences: O(h^2) relative error on e^s
        assert!(r.r[0].iter().zip(&samples[1..]).all(|(v, (_, q))| v.abs() < 2e-3 * q[0]));
        assert!(r.r[2].iter().all(|v| v.abs() <= 1e-6 * c));
        assert_eq!(mode_ode_residuals_from(&samples[..4]).unwrap_err(), InsufficientData(4));
    }

    #[test]
    fn csv_has_expected_columns() {
        let (phi, cfg) = setup(3.0);
        let rec = evolve(0.5, 0.0, 20.0, 21.0, &phi, cfg).unwrap();
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("s,q0,q1,q2,norm_qminus_weighted,norm_qe,norm_q,norm_grad_q,in_VA,exit_flag"));
        assert!(text.contains("mode0"));
    }
}
