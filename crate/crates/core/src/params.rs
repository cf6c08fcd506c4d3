//! Problem constants and the quantities derived from them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("exponent p must exceed 1 (got {0})")]
    Exponent(f64),
    #[error("log-power exponent a = {a} is invalid for the {case} case (need a {need})")]
    LogPower { a: f64, case: &'static str, need: &'static str },
    #[error("varrho = {varrho} must lie in (0, nu = {nu})")]
    Varrho { varrho: f64, nu: f64 },
    #[error("bound constant M must be positive (got {0})")]
    Bound(f64),
    #[error("non-finite parameter {0}")]
    NonFinite(&'static str),
}

/// Which class of lower-order perturbation `h` is in play.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PerturbationCase {
    /// `|h^{(j)}(z)| <= M(|z|^{p-j}/log^a(2+z^2) + 1)`, `a > 1`.
    LogBounded,
    /// `h(z) = mu |z|^{p-1} z / log^a(2+z^2)`, `a > 0`.
    ExplicitLog,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    pub p: f64,
    pub case: PerturbationCase,
    pub a: f64,
    pub mu: f64,
    pub m_bound: f64,
    pub kappa: f64,
    pub c_p: f64,
    pub nu: f64,
    pub varrho: f64,
    pub iota: f64,
    pub p_prime: f64,
    pub a_prime: f64,
    pub a_bar: f64,
    pub beta: f64,
}

/// Default choice of varrho as a fraction of nu.
pub const VARRHO_FRACTION: f64 = 0.9;

impl ProblemParams {
    pub fn new(p: f64, case: PerturbationCase, a: f64, mu: f64, m_bound: f64) -> Result<Self, ParamError> {
        for (v, n) in [(p, "p"), (a, "a"), (mu, "mu"), (m_bound, "M")] {
            if !v.is_finite() {
                return Err(ParamError::NonFinite(n));
            }
        }
        if p <= 1.0 {
            return Err(ParamError::Exponent(p));
        }
        let (nu, iota, a_bar, beta) = match case {
            PerturbationCase::LogBounded => {
                if a <= 1.0 {
                    return Err(ParamError::LogPower { a, case: "LogBounded", need: "> 1" });
                }
                if m_bound <= 0.0 {
                    return Err(ParamError::Bound(m_bound));
                }
                ((a - 1.0).min(0.5), 0.0, (a - 1.0).min(1.0), 1.0)
            }
            PerturbationCase::ExplicitLog => {
                if a <= 0.0 {
                    return Err(ParamError::LogPower { a, case: "ExplicitLog", need: "> 0" });
                }
                (a.min(0.5), 1.0, a.min(1.0), 2.0)
            }
        };
        Ok(Self {
            p,
            case,
            a,
            mu,
            m_bound,
            kappa: (p - 1.0).powf(-1.0 / (p - 1.0)),
            c_p: (p - 1.0) / (4.0 * p),
            nu,
            varrho: VARRHO_FRACTION * nu,
            iota,
            p_prime: p.min(2.0),
            a_prime: a.min(1.0),
            a_bar,
            beta,
        })
    }

    /// `h(z) = mu |z|^{p-1} z / log^a(2+z^2)`.
    pub fn explicit_log(p: f64, a: f64, mu: f64) -> Result<Self, ParamError> {
        Self::new(p, PerturbationCase::ExplicitLog, a, mu, 1.0)
    }

    /// Reference instance of the log-bounded class with bound constant `m`.
    pub fn log_bounded(p: f64, a: f64, m: f64) -> Result<Self, ParamError> {
        Self::new(p, PerturbationCase::LogBounded, a, 0.0, m)
    }

    /// The pure power nonlinearity (`h = 0`), modelled as ExplicitLog with `mu = 0`.
    pub fn unperturbed(p: f64) -> Self {
        Self::explicit_log(p, 1.0, 0.0).expect("p > 1")
    }

    pub fn with_varrho(mut self, varrho: f64) -> Result<Self, ParamError> {
        if !(varrho > 0.0 && varrho < self.nu) {
            return Err(ParamError::Varrho { varrho, nu: self.nu });
        }
        self.varrho = varrho;
        Ok(self)
    }

    /// Coefficient multiplying `|z|^{p-1}z/log^a(2+z^2)` in the concrete `h`.
    pub fn h_coefficient(&self) -> f64 {
        match self.case {
            PerturbationCase::ExplicitLog => self.mu,
            PerturbationCase::LogBounded => self.m_bound,
        }
    }

    /// True when `h` vanishes identically.
    pub fn is_unperturbed(&self) -> bool {
        self.h_coefficient() == 0.0
    }

    /// Whether `p` is a small integer, so powers can use `powi`.
    pub fn integer_p(&self) -> Option<i32> {
        let r = self.p.round();
        (r == self.p && r <= 16.0).then_some(r as i32)
    }

    /// Leading tail constant `C0` of `eta_a(s) ~ C0 s^{-a}`.
    pub fn tail_constant(&self) -> f64 {
        match self.case {
            PerturbationCase::ExplicitLog => self.mu * ((self.p - 1.0) / 2.0).powf(self.a),
            PerturbationCase::LogBounded => 0.0,
        }
    }
}

/// `sign(x)|x|^p`, using `powi` when possible.
#[inline]
pub fn signed_pow(x: f64, p: f64, ip: Option<i32>) -> f64 {
    match ip {
        Some(n) if n % 2 == 1 => x.powi(n),
        Some(n) => x.abs().powi(n) * x.signum(),
        None => x.abs().powf(p) * x.signum(),
    }
}

#[inline]
pub fn abs_pow(x: f64, p: f64, ip: Option<i32>) -> f64 {
    match ip {
        Some(n) => x.abs().powi(n),
        None => x.abs().powf(p),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kappa_identity() {
        for p in [1.5, 2.0, 3.0, 5.0] {
            let pp = ProblemParams::unperturbed(p);
            assert!((pp.kappa.powf(p - 1.0) * (p - 1.0) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn derived_constants() {
        let e = ProblemParams::explicit_log(3.0, 1.0, 0.5).unwrap();
        assert_eq!(e.nu, 0.5);
        assert_eq!(e.iota, 1.0);
        assert_eq!(e.beta, 2.0);
        assert_eq!(e.a_bar, 1.0);
        assert!((e.varrho - 0.45).abs() < 1e-15);
        let l = ProblemParams::log_bounded(3.0, 1.2, 1.0).unwrap();
        assert!((l.nu - 0.2).abs() < 1e-15);
        assert_eq!(l.iota, 0.0);
        assert!((l.a_bar - 0.2).abs() < 1e-15);
        assert_eq!(l.p_prime, 2.0);
        assert_eq!(ProblemParams::unperturbed(1.5).p_prime, 1.5);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(ProblemParams::explicit_log(1.0, 1.0, 1.0).is_err());
        assert!(ProblemParams::log_bounded(3.0, 1.0, 1.0).is_err());
        assert!(ProblemParams::explicit_log(3.0, 0.0, 1.0).is_err());
        let e = ProblemParams::explicit_log(3.0, 1.0, 1.0).unwrap();
        assert!(e.with_varrho(0.5).is_err());
        assert!(e.with_varrho(0.2).is_ok());
    }

    #[test]
    fn tail_constant_matches_lemma() {
        let e = ProblemParams::explicit_log(3.0, 1.0, 1.0).unwrap();
        assert!((e.tail_constant() - 1.0).abs() < 1e-15);
    }
}
