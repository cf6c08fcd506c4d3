//! The scalar profile amplitude `phi(s)` solving
//! `phi' = -phi/(p-1) + phi^p + e^{-ps/(p-1)} h(e^{s/(p-1)} phi)`.
//!
//! The unknown actually integrated is `eta = (kappa/phi)^{p-1} - 1`, which obeys
//! `eta' = eta - H_0(phi, s)/phi^p`. The constant state is repelling forward in
//! `s`, so the table is filled by integrating backward from `s_max`.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::params::{abs_pow, ProblemParams};
use crate::perturbation::PerturbationFamily;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhiError {
    #[error("invalid table range [{s_min}, {s_max}] (need 5 <= s_min < s_max)")]
    BadRange { s_min: f64, s_max: f64 },
    #[error("backward integration diverged at s = {s}")]
    NonConvergence { s: f64 },
    #[error("s = {s} lies outside the tabulated range [{s_min}, {s_max}]")]
    OutOfRange { s: f64, s_min: f64, s_max: f64 },
    #[error("csv: {0}")]
    Csv(String),
}

/// Smallest admissible left end of the table.
pub const S_MIN_FLOOR: f64 = 5.0;

#[derive(Debug, Clone, Copy)]
pub struct PhiOptions {
    /// Spacing of the tabulation nodes in `ln s`.
    pub log_spacing: f64,
    /// Largest RK4 substep in `s`.
    pub max_step: f64,
}

impl Default for PhiOptions {
    fn default() -> Self {
        Self { log_spacing: 1e-3, max_step: 0.05 }
    }
}

#[derive(Debug, Clone)]
pub struct PhiSolution {
    params: ProblemParams,
    family: PerturbationFamily,
    x0: f64,
    hx: f64,
    eta: Vec<f64>,
    /// d eta / d ln s at the nodes, after the monotonicity limiter.
    slope: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct PhiRow {
    s: f64,
    phi: f64,
    eta_a: f64,
    phi_prime: f64,
}

fn rhs(family: &PerturbationFamily, params: &ProblemParams, s: f64, eta: f64) -> f64 {
    if family.is_zero() {
        return eta;
    }
    let phi = params.kappa * (1.0 + eta).powf(-1.0 / (params.p - 1.0));
    eta - family.rescaled_unchecked(0, phi, s) / abs_pow(phi, params.p, params.integer_p())
}

pub fn solve_phi_ode(params: &ProblemParams, s_min: f64, s_max: f64) -> Result<PhiSolution, PhiError> {
    solve_phi_ode_with(params, s_min, s_max, PhiOptions::default())
}

pub fn solve_phi_ode_with(
    params: &ProblemParams,
    s_min: f64,
    s_max: f64,
    opts: PhiOptions,
) -> Result<PhiSolution, PhiError> {
    if !(s_min >= S_MIN_FLOOR && s_max > s_min && s_max.is_finite()) {
        return Err(PhiError::BadRange { s_min, s_max });
    }
    let family = PerturbationFamily::from_params(params);
    let x0 = s_min.ln();
    let span = s_max.ln() - x0;
    let n = ((span / opts.log_spacing).ceil() as usize).max(2);
    let hx = span / n as f64;

    let mut eta = vec![0.0; n + 1];
    let c0 = params.tail_constant();
    let a = params.a;
    eta[n] = c0 * s_max.powf(-a) * (1.0 - a / s_max);

    let f = |s: f64, e: f64| rhs(&family, params, s, e);
    for k in (0..n).rev() {
        let s_hi = (x0 + (k + 1) as f64 * hx).exp();
        let s_lo = (x0 + k as f64 * hx).exp();
        let m = ((s_hi - s_lo) / opts.max_step).ceil().max(1.0) as usize;
        let ds = -(s_hi - s_lo) / m as f64;
        let mut e = eta[k + 1];
        let mut s = s_hi;
        for _ in 0..m {
            let k1 = f(s, e);
            let k2 = f(s + 0.5 * ds, e + 0.5 * ds * k1);
            let k3 = f(s + 0.5 * ds, e + 0.5 * ds * k2);
            let k4 = f(s + ds, e + ds * k3);
            e += ds / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            s += ds;
        }
        if !e.is_finite() || e <= -1.0 {
            return Err(PhiError::NonConvergence { s: s_lo });
        }
        eta[k] = e;
    }

    let mut slope: Vec<f64> = (0..=n)
        .map(|k| {
            let s = (x0 + k as f64 * hx).exp();
            s * f(s, eta[k])
        })
        .collect();
    // Fritsch–Carlson limiter
    for k in 0..n {
        let delta = (eta[k + 1] - eta[k]) / hx;
        if delta == 0.0 {
            slope[k] = 0.0;
            slope[k + 1] = 0.0;
            continue;
        }
        let mut al = slope[k] / delta;
        let mut be = slope[k + 1] / delta;
        if al < 0.0 {
            al = 0.0;
            slope[k] = 0.0;
        }
        if be < 0.0 {
            be = 0.0;
            slope[k + 1] = 0.0;
        }
        let r2 = al * al + be * be;
        if r2 > 9.0 {
            let t = 3.0 / r2.sqrt();
            slope[k] = t * al * delta;
            slope[k + 1] = t * be * delta;
        }
    }

    Ok(PhiSolution { params: *params, family, x0, hx, eta, slope })
}

impl PhiSolution {
    pub fn params(&self) -> &ProblemParams {
        &self.params
    }

    pub fn family(&self) -> &PerturbationFamily {
        &self.family
    }

    pub fn s_min(&self) -> f64 {
        self.x0.exp()
    }

    pub fn s_max(&self) -> f64 {
        (self.x0 + self.hx * (self.eta.len() - 1) as f64).exp()
    }

    pub fn contains(&self, s: f64) -> bool {
        let x = s.ln();
        x >= self.x0 - 1e-12 && x <= self.x0 + self.hx * (self.eta.len() - 1) as f64 + 1e-12
    }

    fn check(&self, s: f64) -> Result<(), PhiError> {
        if self.contains(s) {
            Ok(())
        } else {
            Err(PhiError::OutOfRange { s, s_min: self.s_min(), s_max: self.s_max() })
        }
    }

    /// `eta_a(s)`, monotone cubic Hermite in `ln s`.
    pub fn eta(&self, s: f64) -> Result<f64, PhiError> {
        self.check(s)?;
        Ok(self.eta_unchecked(s))
    }

    #[inline]
    fn eta_unchecked(&self, s: f64) -> f64 {
        let n = self.eta.len() - 1;
        let u = (s.ln() - self.x0) / self.hx;
        let k = (u.floor().max(0.0) as usize).min(n - 1);
        let t = (u - k as f64).clamp(0.0, 1.0);
        let (y0, y1) = (self.eta[k], self.eta[k + 1]);
        let (d0, d1) = (self.slope[k] * self.hx, self.slope[k + 1] * self.hx);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * y0 + (t3 - 2.0 * t2 + t) * d0 + (-2.0 * t3 + 3.0 * t2) * y1 + (t3 - t2) * d1
    }

    pub fn phi(&self, s: f64) -> Result<f64, PhiError> {
        Ok(self.phi_from_eta(self.eta(s)?))
    }

    #[inline]
    fn phi_from_eta(&self, eta: f64) -> f64 {
        if eta == 0.0 {
            self.params.kappa
        } else {
            self.params.kappa * (1.0 + eta).powf(-1.0 / (self.params.p - 1.0))
        }
    }

    /// `phi'(s)` from the right-hand side of the ODE.
    pub fn phi_prime(&self, s: f64) -> Result<f64, PhiError> {
        let phi = self.phi(s)?;
        Ok(self.ode_rhs(s, phi))
    }

    /// `(phi, phi')` in one lookup.
    pub fn phi_and_prime(&self, s: f64) -> Result<(f64, f64), PhiError> {
        let phi = self.phi(s)?;
        Ok((phi, self.ode_rhs(s, phi)))
    }

    /// `-phi/(p-1) + phi^p + H_0(phi, s)`.
    pub fn ode_rhs(&self, s: f64, phi: f64) -> f64 {
        let p = self.params.p;
        let mut v = -phi / (p - 1.0) + abs_pow(phi, p, self.params.integer_p());
        if !self.family.is_zero() {
            v += self.family.rescaled_unchecked(0, phi, s);
        }
        v
    }

    /// Nodes of the table as `s` values.
    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.eta.len()).map(move |k| (self.x0 + k as f64 * self.hx).exp())
    }

    /// Writes `s, phi, eta_a, phi_prime`, one row every `stride` nodes.
    pub fn write_csv<W: Write>(&self, out: W, stride: usize) -> Result<(), PhiError> {
        let mut w = csv::Writer::from_writer(out);
        for (k, s) in self.nodes().enumerate() {
            if k % stride.max(1) != 0 && k + 1 != self.eta.len() {
                continue;
            }
            let phi = self.phi_from_eta(self.eta[k]);
            w.serialize(PhiRow { s, phi, eta_a: self.eta[k], phi_prime: self.ode_rhs(s, phi) })
                .map_err(|e| PhiError::Csv(e.to_string()))?;
        }
        w.flush().map_err(|e| PhiError::Csv(e.to_string()))
    }
}
