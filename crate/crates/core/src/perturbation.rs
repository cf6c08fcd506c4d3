//! The lower-order term `h` and its first two derivatives.
//!
//! Besides plain evaluation, [`PerturbationFamily::rescaled`] returns
//! `e^{-(p-j)s/(p-1)} h^{(j)}(e^{s/(p-1)} w)` without ever forming the huge
//! argument, which is what every similarity-variable consumer needs.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::params::{abs_pow, ProblemParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerturbationError {
    #[error("derivative order {0} is not available for this family")]
    Order(usize),
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Kind {
    /// `coef |z|^{p-1} z / log^a(2+z^2)`.
    LogPower { coef: f64, a: f64 },
    /// User-provided `h`, `h'`, optionally `h''`.
    Custom { h: ScalarFn, dh: ScalarFn, d2h: Option<ScalarFn> },
}

#[derive(Clone)]
pub struct PerturbationFamily {
    kind: Kind,
    p: f64,
    ip: Option<i32>,
}

impl fmt::Debug for PerturbationFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            Kind::LogPower { coef, a } => write!(f, "LogPower {{ coef: {coef}, a: {a}, p: {} }}", self.p),
            Kind::Custom { d2h, .. } => write!(f, "Custom {{ p: {}, has_h2: {} }}", self.p, d2h.is_some()),
        }
    }
}

/// `log(2 + e^{t})` without overflow for large `t`.
#[inline]
fn log_two_plus_exp(t: f64) -> f64 {
    if t > std::f64::consts::LN_2 {
        t + (2.0 * (-t).exp()).ln_1p()
    } else {
        std::f64::consts::LN_2 + (0.5 * t.exp()).ln_1p()
    }
}

/// Values of `l = L^{-a}`, `z l'` and `z^2 l''` where `L = log(2+z^2)`,
/// expressed through `t = ln z^2`.
#[inline]
fn log_factor(a: f64, t: f64) -> (f64, f64, f64) {
    let big_l = log_two_plus_exp(t);
    // r = z^2/(2+z^2)
    let r = 1.0 / (1.0 + 2.0 * (-t).exp());
    let la = big_l.powf(-a);
    let la1 = la / big_l;
    let la2 = la1 / big_l;
    let zl1 = -2.0 * a * r * la1;
    let zzl2 = 4.0 * a * (a + 1.0) * r * r * la2 - 2.0 * a * r * (1.0 - 2.0 * r) * la1;
    (la, zl1, zzl2)
}

impl PerturbationFamily {
    /// The concrete `h` attached to `params`: the explicit log nonlinearity,
    /// or, in the log-bounded case, the reference instance of the same shape
    /// with coefficient `M`.
    pub fn from_params(params: &ProblemParams) -> Self {
        Self {
            kind: Kind::LogPower { coef: params.h_coefficient(), a: params.a },
            p: params.p,
            ip: params.integer_p(),
        }
    }

    /// A log-bounded family given only through `h` and `h'`.
    pub fn custom(params: &ProblemParams, h: ScalarFn, dh: ScalarFn, d2h: Option<ScalarFn>) -> Self {
        Self { kind: Kind::Custom { h, dh, d2h }, p: params.p, ip: params.integer_p() }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, Kind::LogPower { coef, .. } if coef == 0.0)
    }

    /// `h^{(j)}(z)`.
    pub fn eval(&self, j: usize, z: f64) -> Result<f64, PerturbationError> {
        match &self.kind {
            Kind::LogPower { .. } => {
                if j > 2 {
                    return Err(PerturbationError::Order(j));
                }
                Ok(self.log_power(j, z, 2.0 * z.abs().ln()))
            }
            Kind::Custom { h, dh, d2h } => match j {
                0 => Ok(h(z)),
                1 => Ok(dh(z)),
                2 => d2h.as_ref().map(|f| f(z)).ok_or(PerturbationError::Order(2)),
                _ => Err(PerturbationError::Order(j)),
            },
        }
    }

    /// `e^{-(p-j)s/(p-1)} h^{(j)}(e^{s/(p-1)} w)`.
    pub fn rescaled(&self, j: usize, w: f64, s: f64) -> Result<f64, PerturbationError> {
        match &self.kind {
            Kind::LogPower { .. } => {
                if j > 2 {
                    return Err(PerturbationError::Order(j));
                }
                Ok(self.log_power(j, w, 2.0 * (s / (self.p - 1.0) + w.abs().ln())))
            }
            Kind::Custom { .. } => {
                let lam = (s / (self.p - 1.0)).exp();
                Ok(self.eval(j, lam * w)? * lam.powf(-(self.p - j as f64)))
            }
        }
    }

    /// Infallible fast path for the closed-form family (`j <= 2`).
    #[inline]
    pub(crate) fn rescaled_unchecked(&self, j: usize, w: f64, s: f64) -> f64 {
        match &self.kind {
            Kind::LogPower { .. } => self.log_power(j, w, 2.0 * (s / (self.p - 1.0) + w.abs().ln())),
            Kind::Custom { .. } => self.rescaled(j, w, s).unwrap_or(f64::NAN),
        }
    }

    /// Homogeneous part evaluated at `w`, log part at `ln z^2 = t`.
    #[inline]
    fn log_power(&self, j: usize, w: f64, t: f64) -> f64 {
        let Kind::LogPower { coef, a } = self.kind else { unreachable!() };
        if coef == 0.0 || w == 0.0 {
            return if j == 2 && w == 0.0 && self.p < 2.0 && coef != 0.0 { f64::INFINITY } else { 0.0 };
        }
        let p = self.p;
        let (l, zl1, zzl2) = log_factor(a, t);
        let aw = w.abs();
        match j {
            0 => coef * w.signum() * abs_pow(aw, p, self.ip) * l,
            1 => coef * abs_pow(aw, p - 1.0, self.ip.map(|n| n - 1)) * (p * l + zl1),
            _ => {
                coef * w.signum()
                    * abs_pow(aw, p - 2.0, self.ip.map(|n| n - 2))
                    * (p * (p - 1.0) * l + 2.0 * p * zl1 + zzl2)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fam(p: f64, a: f64, mu: f64) -> PerturbationFamily {
        PerturbationFamily::from_params(&ProblemParams::explicit_log(p, a, mu).unwrap())
    }

    #[test]
    fn value_at_one_and_zero() {
        let h = fam(3.0, 1.0, 1.0);
        assert_eq!(h.eval(0, 0.0).unwrap(), 0.0);
        assert_relative_eq!(h.eval(0, 1.0).unwrap(), 1.0 / 3f64.ln(), max_relative = 1e-14);
    }

    #[test]
    fn odd_symmetry_and_closed_form() {
        for p in [1.5, 2.0, 3.0, 4.5] {
            let h = fam(p, 0.7, 1.3);
            for z in [0.1, 0.9, 3.0, 25.0, 1e4] {
                let v = h.eval(0, z).unwrap();
                assert_relative_eq!(v, -h.eval(0, -z).unwrap(), max_relative = 1e-14);
                let direct = 1.3 * z.powf(p) / (2.0 + z * z).ln().powf(0.7);
                assert_relative_eq!(v, direct, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for p in [2.0, 3.0, 3.5] {
            let h = fam(p, 1.2, 0.8);
            let mut z: f64 = -10.0;
            while z <= 10.0 {
                if z.abs() > 0.05 {
                    let dz = 1e-5;
                    for j in 0..2 {
                        let fd = (h.eval(j, z + dz).unwrap() - h.eval(j, z - dz).unwrap()) / (2.0 * dz);
                        let an = h.eval(j + 1, z).unwrap();
                        assert!((fd - an).abs() <= 1e-6 * (1.0 + an.abs()), "p={p} j={j} z={z}: {fd} vs {an}");
                    }
                }
                z += 0.37;
            }
        }
    }

    #[test]
    fn rescaled_matches_direct_when_representable() {
        let h = fam(3.0, 1.0, 1.0);
        for (w, s) in [(0.7, 3.0), (-1.2, 10.0), (2.0, 40.0)] {
            let lam: f64 = (s / 2.0f64).exp();
            for j in 0..3 {
                let direct = h.eval(j, lam * w).unwrap() * lam.powf(-(3.0 - j as f64));
                assert_relative_eq!(h.rescaled(j, w, s).unwrap(), direct, max_relative = 1e-10);
            }
        }
        // far beyond f64 range of the raw argument
        let v = h.rescaled(0, 1.0, 5000.0).unwrap();
        assert!(v.is_finite() && v > 0.0);
    }

    #[test]
    fn rescaled_bound_decays_like_s_to_minus_a() {
        let h = fam(3.0, 1.0, 1.0);
        let mut c_fit: f64 = 0.0;
        let mut s = 100.0;
        while s <= 1e6 {
            for j in 0..3 {
                for w in [0.01, 0.3, 1.0, 5.0] {
                    let ratio = h.rescaled(j, w, s).unwrap().abs() * s / (w.powf(3.0 - j as f64) + 1.0);
                    c_fit = c_fit.max(ratio);
                }
            }
            s *= 1.5;
        }
        assert!(c_fit < 20.0);
        let v = h.rescaled(0, 1.0, 100.0).unwrap();
        assert!(v <= c_fit * 1e-2 * 2.0);
    }

    #[test]
    fn log_bounded_reference_satisfies_bound() {
        let pp = ProblemParams::log_bounded(3.0, 1.5, 2.0).unwrap();
        let h = PerturbationFamily::from_params(&pp);
        for k in 0..400 {
            let z = -50.0 + 0.25 * k as f64;
            for j in 0..2 {
                let b = 2.0 * 3.0 * (z.abs().powf(3.0 - j as f64) / (2.0 + z * z).ln().powf(1.5) + 1.0);
                assert!(h.eval(j, z).unwrap().abs() <= b);
            }
        }
    }

    #[test]
    fn custom_family_without_second_derivative_rejects_order_two() {
        let pp = ProblemParams::log_bounded(3.0, 1.5, 1.0).unwrap();
        let h = PerturbationFamily::custom(&pp, Arc::new(|z: f64| z.tanh()), Arc::new(|z: f64| 1.0 / z.cosh().powi(2)), None);
        assert!(h.eval(1, 0.3).is_ok());
        assert_eq!(h.eval(2, 0.3), Err(PerturbationError::Order(2)));
    }
}
