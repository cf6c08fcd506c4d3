//! The semigroup `e^{tL}` (Mehler kernel) and the flow `K(s, sigma)` of
//! `theta_s = (L + V) theta`, computed by time stepping.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::cutoff::cutoff_chi;
use crate::decomposition::{weighted_norms, Projector};
use crate::grid::{Grid, WeightedField};
use crate::hermite::{hermite_poly, QuadratureRule, SpectralError};
use crate::linear_pde::{rk4_dt_limit, MolStepper, Scheme, StepError};
use crate::phi::PhiSolution;
use crate::sources::{LevelCoefficients, Sources};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("kernel time must be positive (got {0})")]
    NonPositiveTime(f64),
    #[error("final time {s} precedes initial time {sigma}")]
    Backward { sigma: f64, s: f64 },
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// `e^t / sqrt(4 pi (1 - e^{-t})) exp(-(y e^{-t/2} - x)^2 / (4(1 - e^{-t})))`.
pub fn mehler_kernel(t: f64, y: f64, x: f64) -> Result<f64, KernelError> {
    if !(t > 0.0) {
        return Err(KernelError::NonPositiveTime(t));
    }
    let d = -(-t).exp_m1();
    let c = y * (-0.5 * t).exp() - x;
    Ok(t.exp() / (4.0 * std::f64::consts::PI * d).sqrt() * (-c * c / (4.0 * d)).exp())
}

/// `(e^{tL} f)(y)` by Gauss quadrature centred on `y e^{-t/2}`.
pub fn apply_semigroup_at(t: f64, f: impl Fn(f64) -> f64, y: f64, rule: &QuadratureRule) -> f64 {
    if t == 0.0 {
        return f(y);
    }
    let c = y * (-0.5 * t).exp();
    let w = (-(-t).exp_m1()).sqrt();
    t.exp() * rule.integrate(|x| f(c + w * x))
}

#[derive(Debug, Clone)]
pub struct SemigroupOutput {
    pub field: WeightedField,
    /// Set when quadrature nodes that carry weight above `1e-12` fell outside
    /// the field's grid.
    pub window_warning: bool,
}

/// Applies `e^{tL}` to a sampled field (cubic interpolation, zero outside).
pub fn apply_semigroup(t: f64, field: &WeightedField, rule: &QuadratureRule) -> SemigroupOutput {
    let g = field.grid;
    let c = (-0.5 * t).exp();
    let w = (-(-t).exp_m1()).sqrt();
    let mut warn = false;
    let values = g
        .nodes()
        .map(|y| {
            let center = y * c;
            let mut acc = 0.0;
            for (&x, &wt) in rule.nodes.iter().zip(&rule.weights) {
                let xx = center + w * x;
                if xx.abs() > g.half_width() {
                    if wt > 1e-12 && y.abs() < 0.5 * g.half_width() {
                        warn = true;
                    }
                    continue;
                }
                acc += wt * field.at(xx);
            }
            t.exp() * acc
        })
        .collect();
    SemigroupOutput { field: WeightedField { grid: g, s: field.s + t, values }, window_warning: warn }
}

/// Which potential drives the flow.
#[derive(Debug, Clone, Copy)]
pub enum Potential<'a> {
    /// `V = 0`: the flow is `e^{(s-sigma)L}`.
    Zero,
    /// The potential attached to the tabulated profile.
    Full(&'a PhiSolution),
}

#[derive(Debug, Clone, Copy)]
pub struct PropagationConfig {
    pub scheme: Scheme,
    /// Time step; `None` uses `0.4 dy^2` (RK4) or `0.01` (IMEX).
    pub dt: Option<f64>,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self { scheme: Scheme::Rk4, dt: None }
    }
}

/// `theta(s) = K(s, sigma) psi`.
pub fn propagate_k(
    sigma: f64,
    s: f64,
    psi: &WeightedField,
    potential: Potential<'_>,
    cfg: PropagationConfig,
) -> Result<WeightedField, KernelError> {
    if s < sigma {
        return Err(KernelError::Backward { sigma, s });
    }
    let grid = psi.grid;
    let mut u = psi.values.clone();
    if s == sigma {
        return Ok(WeightedField { grid, s, values: u });
    }
    let dt_max = cfg.dt.unwrap_or(match cfg.scheme {
        Scheme::Rk4 => rk4_dt_limit(&grid),
        Scheme::Imex => 0.01,
    });
    let steps = ((s - sigma) / dt_max * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let dt = (s - sigma) / steps as f64;
    let mut stepper = MolStepper::new(grid, cfg.scheme, dt)?;
    let src = match potential {
        Potential::Zero => None,
        Potential::Full(phi) => Some(Sources::new(phi)),
    };
    let mut cache: [LevelCoefficients; 2] = Default::default();
    let mut slot_s = [f64::NAN; 2];
    let mut next = 0usize;
    for k in 0..steps {
        let s_k = sigma + k as f64 * dt;
        let forcing = |ss: f64, v: &[f64], out: &mut [f64]| -> Result<(), StepError> {
            let Some(src) = &src else {
                out.iter_mut().for_each(|o| *o = 0.0);
                return Ok(());
            };
            let slot = match slot_s.iter().position(|&t| t == ss) {
                Some(i) => i,
                None => {
                    let i = next;
                    next = 1 - next;
                    src.fill_level(ss, &grid, &mut cache[i]).map_err(|e| StepError::Source { s: ss, msg: e.to_string() })?;
                    slot_s[i] = ss;
                    i
                }
            };
            let vv = &cache[slot].v;
            for i in 0..v.len() {
                out[i] = vv[i] * v[i];
            }
            Ok(())
        };
        stepper.step(&mut u, s_k, forcing, |_| (0.0, 0.0))?;
    }
    Ok(WeightedField { grid, s, values: u })
}

/// Probe classes for the kernel-bound checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Probe {
    H0,
    H1,
    H2,
    /// `chi h_3`, normalized in the weighted `q_minus` norm.
    MinusBump,
    /// Gaussian bump centred at `2.2 K sqrt(sigma)`, outside the cutoff support.
    TailBump,
    Zero,
}

impl Probe {
    pub const ALL: [Probe; 5] = [Probe::H0, Probe::H1, Probe::H2, Probe::MinusBump, Probe::TailBump];

    pub fn name(&self) -> &'static str {
        match self {
            Probe::H0 => "h0",
            Probe::H1 => "h1",
            Probe::H2 => "h2",
            Probe::MinusBump => "minus_bump",
            Probe::TailBump => "tail_bump",
            Probe::Zero => "zero",
        }
    }

    pub fn field(&self, grid: Grid, sigma: f64, k: f64) -> WeightedField {
        let r = k * sigma.sqrt();
        match self {
            Probe::H0 | Probe::H1 | Probe::H2 => {
                let m = *self as usize;
                WeightedField::from_fn(grid, sigma, |y| hermite_poly(m, y) * cutoff_chi(y, sigma, 1.2 * k))
            }
            Probe::MinusBump => {
                let f = WeightedField::from_fn(grid, sigma, |y| hermite_poly(3, y) * cutoff_chi(y, sigma, k));
                let w = f.values.iter().zip(grid.nodes()).fold(0.0f64, |m, (v, y)| m.max(v.abs() / (1.0 + y.abs().powi(3))));
                WeightedField { values: f.values.iter().map(|v| v / w).collect(), ..f }
            }
            Probe::TailBump => {
                let c = 2.2 * r;
                WeightedField::from_fn(grid, sigma, |y| (-(y.abs() - c).powi(2) / 4.0).exp())
            }
            Probe::Zero => WeightedField::zeros(grid, sigma),
        }
    }
}

/// Measured components of `psi` or `theta`.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct Components {
    pub m: [f64; 3],
    pub minus_weighted: f64,
    pub e_sup: f64,
}

fn components(proj: &Projector, f: &WeightedField, k: f64) -> Result<Components, KernelError> {
    let d = proj.decompose(f, k)?;
    let n = weighted_norms(&d);
    Ok(Components { m: [d.q0, d.q1, d.q2], minus_weighted: n.qminus_weighted, e_sup: n.qe_sup })
}

/// Which inequality of the kernel lemma a row refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Inequality {
    Theta2,
    ThetaMinus,
    ThetaE,
}

impl Inequality {
    pub const ALL: [Inequality; 3] = [Inequality::Theta2, Inequality::ThetaMinus, Inequality::ThetaE];

    /// `(measured, fixed part, shape multiplying C)`.
    fn terms(&self, psi: &Components, th: &Components, sigma: f64, s: f64, p: f64) -> (f64, f64, f64) {
        let dt = s - sigma;
        let [a0, a1, a2] = psi.m.map(f64::abs);
        let (pm, pe) = (psi.minus_weighted, psi.e_sup);
        match self {
            Inequality::Theta2 => (
                th.m[2].abs(),
                (sigma / s).powi(2) * a2,
                dt / s * (a0 + a1 + a2 + pm) + dt * (-s / 2.0).exp() * pe,
            ),
            Inequality::ThetaMinus => (
                th.minus_weighted,
                0.0,
                dt.exp() * (dt * dt + 1.0) / s * (a0 + a1 + s.sqrt() * a2)
                    + (-dt / 2.0).exp() * pm
                    + (-dt * dt).exp() / s.powf(1.5) * pe,
            ),
            Inequality::ThetaE => (
                th.e_sup,
                0.0,
                dt.exp() * (a0 + s.sqrt() * a1 + s * a2 + s.powf(1.5) * pm) + (-dt / p).exp() * pe,
            ),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelCheckReport {
    pub probe: Probe,
    pub sigma: f64,
    pub s: f64,
    pub component: Inequality,
    pub measured: f64,
    pub bound_shape_value: f64,
    pub fitted_c: f64,
    /// True for samples of the fitting window, false for the validation window.
    pub fit_sample: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct KernelCheckConfig {
    pub k: f64,
    pub dy: f64,
    /// Sampling times per unit `s`.
    pub samples_per_unit: usize,
    /// Relative slack allowed on validation samples.
    pub slack: f64,
    /// Validation window starts at this multiple of `sigma` (0 disables it).
    pub validation_factor: f64,
}

impl Default for KernelCheckConfig {
    fn default() -> Self {
        Self { k: 5.0, dy: 0.05, samples_per_unit: 10, slack: 0.1, validation_factor: 1.5 }
    }
}

/// Propagates every probe over `[sigma, sigma + lambda]` and fits one constant
/// per inequality over that window. The constant depends only on `(lambda, K)`,
/// so the same constants are then checked on `[sigma_v, sigma_v + lambda]` with
/// `sigma_v = validation_factor * sigma`.
pub fn verify_kernel_bounds(
    sigma: f64,
    lambda: f64,
    probes: &[Probe],
    phi: &PhiSolution,
    cfg: KernelCheckConfig,
    rule: &QuadratureRule,
) -> Result<Vec<KernelCheckReport>, KernelError> {
    use rayon::prelude::*;
    let p = phi.params().p;
    let sigma_v = cfg.validation_factor * sigma;
    let mut jobs: Vec<(f64, Probe)> = probes.iter().map(|&pr| (sigma, pr)).collect();
    if cfg.validation_factor > 0.0 {
        jobs.extend(probes.iter().map(|&pr| (sigma_v, pr)));
    }
    let series: Vec<Series> = jobs
        .par_iter()
        .map(|&(sg, probe)| probe_series(sg, lambda, probe, phi, &cfg, rule))
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::new();
    for ineq in Inequality::ALL {
        let mut c_fit: f64 = 0.0;
        for se in series.iter().filter(|se| se.sigma == sigma) {
            for (s, th) in &se.samples {
                let (m, fixed, shape) = ineq.terms(&se.psi, th, sigma, *s, p);
                if shape > 0.0 {
                    c_fit = c_fit.max((m - fixed) / shape);
                }
            }
        }
        for se in &series {
            for (s, th) in &se.samples {
                let (m, fixed, shape) = ineq.terms(&se.psi, th, se.sigma, *s, p);
                let fit_sample = se.sigma == sigma;
                let bound = fixed + c_fit * shape;
                let pass = m <= bound * (1.0 + cfg.slack) || m == 0.0;
                rows.push(KernelCheckReport {
                    probe: se.probe,
                    sigma: se.sigma,
                    s: *s,
                    component: ineq,
                    measured: m,
                    bound_shape_value: bound,
                    fitted_c: c_fit,
                    fit_sample,
                    pass,
                });
            }
        }
    }
    Ok(rows)
}

struct Series {
    sigma: f64,
    probe: Probe,
    psi: Components,
    samples: Vec<(f64, Components)>,
}

fn probe_series(
    sigma: f64,
    lambda: f64,
    probe: Probe,
    phi: &PhiSolution,
    cfg: &KernelCheckConfig,
    rule: &QuadratureRule,
) -> Result<Series, KernelError> {
    let grid = Grid::for_run(cfg.k, sigma + lambda, cfg.dy);
    let proj = Projector::new(grid, rule);
    let n_samples = ((lambda * cfg.samples_per_unit as f64).round() as usize).max(2);
    let psi = probe.field(grid, sigma, cfg.k);
    let c_psi = components(&proj, &psi, cfg.k)?;
    let mut cur = psi;
    let mut samples = Vec::with_capacity(n_samples);
    for j in 1..=n_samples {
        let s_j = sigma + lambda * j as f64 / n_samples as f64;
        cur = propagate_k(cur.s, s_j, &cur, Potential::Full(phi), PropagationConfig::default())?;
        samples.push((s_j, components(&proj, &cur, cfg.k)?));
    }
    Ok(Series { sigma, probe, psi: c_psi, samples })
}

/// CSV `probe, sigma, s, component, measured, bound_shape_value, fitted_C, pass`.
pub fn write_kernel_reports_csv<W: Write>(out: W, rows: &[KernelCheckReport]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["probe", "sigma", "s", "component", "measured", "bound_shape_value", "fitted_C", "pass"])?;
    for r in rows {
        let comp = match r.component {
            Inequality::Theta2 => "theta2",
            Inequality::ThetaMinus => "theta_minus",
            Inequality::ThetaE => "theta_e",
        };
        w.write_record([
            r.probe.name().to_string(),
            r.sigma.to_string(),
            r.s.to_string(),
            comp.to_string(),
            r.measured.to_string(),
            r.bound_shape_value.to_string(),
            r.fitted_c.to_string(),
            r.pass.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermite::DEFAULT_ORDER;
    use crate::params::ProblemParams;
    use crate::phi::solve_phi_ode;

    fn rule() -> QuadratureRule {
        QuadratureRule::gauss_hermite(DEFAULT_ORDER)
    }

    #[test]
    fn mehler_rejects_nonpositive_time() {
        assert!(mehler_kernel(0.0, 0.0, 0.0).is_err());
        assert!(mehler_kernel(0.5, 1.0, -2.0).unwrap() > 0.0);
    }

    #[test]
    fn mehler_mass_and_eigenrelation() {
        let t = 0.7;
        for y in [-2.0, 0.0, 1.5] {
            let (mut m0, mut m2) = (0.0, 0.0);
            let dx = 1e-3;
            for i in 0..40001 {
                let x = -20.0 + dx * i as f64;
                let k = mehler_kernel(t, y, x).unwrap();
                m0 += k * dx;
                m2 += k * hermite_poly(2, x) * dx;
            }
            assert!((m0 - t.exp()).abs() < 1e-8);
            assert!((m2 - hermite_poly(2, y)).abs() < 1e-6);
        }
    }

    #[test]
    fn mehler_small_time_is_nearly_delta() {
        let t = 0.01;
        let g = |x: f64| (0.2 * x).sin() + 0.3;
        for y in [-1.0, 0.2, 2.0] {
            let mut acc = 0.0;
            let dx = 1e-4;
            for i in 0..40001 {
                let x = y - 2.0 + dx * i as f64;
                acc += mehler_kernel(t, y, x).unwrap() * g(x) * dx;
            }
            assert!((acc - t.exp() * g(y * (-0.005f64).exp())).abs() < 1e-3);
        }
    }

    #[test]
    fn semigroup_on_eigenfunctions() {
        let r = rule();
        for y in [-5.0, -1.0, 0.0, 3.0, 5.0] {
            assert!((apply_semigroup_at(1.0, |x| x, y, &r) - 0.5f64.exp() * y).abs() < 1e-6);
            assert!((apply_semigroup_at(0.3, |_| 1.0, y, &r) - 0.3f64.exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn semigroup_growth_bound() {
        let r = rule();
        let f = |x: f64| (1.0 + x.abs()).powi(3);
        let v = apply_semigroup_at(2.0, f, 10.0, &r);
        let shape = 2f64.exp() * (1.0 + (-1f64).exp() * 10.0).powi(3);
        let mut c: f64 = 0.0;
        for y in [0.0, 2.0, 5.0, 10.0, 20.0, 40.0] {
            let shape_y = 2f64.exp() * (1.0 + (-1f64).exp() * y).powi(3);
            c = c.max(apply_semigroup_at(2.0, f, y, &r) / shape_y);
        }
        assert!(v <= c * shape && c < 50.0);
    }

    #[test]
    fn field_semigroup_matches_function_version() {
        let g = Grid::new(30.0, 0.05);
        let f = WeightedField::from_fn(g, 0.0, |y| hermite_poly(1, y) * (-y * y / 200.0).exp());
        let out = apply_semigroup(0.5, &f, &rule());
        assert!(!out.window_warning);
        for y in [-3.0, 0.0, 2.5] {
            let want = apply_semigroup_at(0.5, |x| x * (-x * x / 200.0).exp(), y, &rule());
            assert!((out.field.at(y) - want).abs() < 1e-7);
        }
    }

    #[test]
    fn zero_potential_reproduces_eigenmode() {
        let g = Grid::new(30.0, 0.05);
        let psi = WeightedField::from_fn(g, 0.0, |y| hermite_poly(2, y));
        let th = propagate_k(0.0, 1.0, &psi, Potential::Zero, PropagationConfig::default()).unwrap();
        for i in 0..g.len() {
            let y = g.y(i);
            if y.abs() <= 10.0 {
                assert!((th.values[i] - hermite_poly(2, y)).abs() < 1e-3);
            }
        }
        assert!(matches!(propagate_k(1.0, 0.5, &psi, Potential::Zero, PropagationConfig::default()), Err(KernelError::Backward { .. })));
        let bad = PropagationConfig { scheme: Scheme::Rk4, dt: Some(0.01) };
        let r = MolStepper::new(g, bad.scheme, 0.01);
        assert!(r.is_err());
    }

    #[test]
    fn linear_in_initial_data() {
        let phi = solve_phi_ode(&ProblemParams::unperturbed(3.0), 5.0, 40.0).unwrap();
        let g = Grid::new(40.0, 0.1);
        let a = WeightedField::from_fn(g, 30.0, |y| (-(y * y) / 10.0).exp());
        let b = WeightedField::from_fn(g, 30.0, |y| y / (1.0 + y * y));
        let cfg = PropagationConfig::default();
        let lhs = propagate_k(30.0, 30.3, &a.axpy(2.5, &b), Potential::Full(&phi), cfg).unwrap();
        let ta = propagate_k(30.0, 30.3, &a, Potential::Full(&phi), cfg).unwrap();
        let tb = propagate_k(30.0, 30.3, &b, Potential::Full(&phi), cfg).unwrap();
        for i in 0..g.len() {
            assert!((lhs.values[i] - (2.5 * ta.values[i] + tb.values[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_probe_stays_zero() {
        let phi = solve_phi_ode(&ProblemParams::unperturbed(3.0), 5.0, 50.0).unwrap();
        let cfg = KernelCheckConfig { dy: 0.1, samples_per_unit: 4, ..Default::default() };
        let rows = verify_kernel_bounds(30.0, 0.5, &[Probe::Zero], &phi, cfg, &rule()).unwrap();
        assert!(rows.iter().all(|r| r.measured == 0.0));
    }
}
