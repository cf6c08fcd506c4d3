//! The corrected profile `varphi = (phi/kappa)(f(y/sqrt s) + kappa/(2ps))` and the
//! coefficients of `q_s = (L + V)q + B(q) + R + N(q)`.

use thiserror::Error;

use crate::grid::Grid;
use crate::params::{abs_pow, signed_pow, ProblemParams};
use crate::perturbation::PerturbationFamily;
use crate::phi::{PhiError, PhiSolution};
use crate::profile::f_with_derivs;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SourceError {
    #[error(transparent)]
    Phi(#[from] PhiError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarphiValue {
    pub value: f64,
    pub dy: f64,
    pub dyy: f64,
    pub ds: f64,
}

/// Evaluator bound to a tabulated `phi`.
#[derive(Debug, Clone, Copy)]
pub struct Sources<'a> {
    pub params: &'a ProblemParams,
    pub phi: &'a PhiSolution,
    family: &'a PerturbationFamily,
    ip: Option<i32>,
}

/// `(phi/kappa) * g(z)` style evaluation sharing the per-`s` scalars.
#[derive(Debug, Clone, Copy)]
struct Level {
    s: f64,
    phi: f64,
    dphi: f64,
}

impl<'a> Sources<'a> {
    pub fn new(phi: &'a PhiSolution) -> Self {
        let params = phi.params();
        Self { params, phi, family: phi.family(), ip: params.integer_p() }
    }

    fn level(&self, s: f64) -> Result<Level, SourceError> {
        let (phi, dphi) = self.phi.phi_and_prime(s)?;
        Ok(Level { s, phi, dphi })
    }

    #[inline]
    fn varphi_at(&self, lv: &Level, y: f64) -> VarphiValue {
        let pr = self.params;
        let s = lv.s;
        let rs = s.sqrt();
        let z = y / rs;
        let (f, f1, f2) = f_with_derivs(z, pr);
        let corr = pr.kappa / (2.0 * pr.p * s);
        let amp = lv.phi / pr.kappa;
        VarphiValue {
            value: amp * (f + corr),
            dy: amp * f1 / rs,
            dyy: amp * f2 / s,
            ds: lv.dphi / pr.kappa * (f + corr) + amp * (-0.5 * z / s * f1 - corr / s),
        }
    }

    pub fn varphi(&self, y: f64, s: f64) -> Result<VarphiValue, SourceError> {
        Ok(self.varphi_at(&self.level(s)?, y))
    }

    #[inline]
    fn h(&self, j: usize, w: f64, s: f64) -> f64 {
        if self.family.is_zero() {
            0.0
        } else {
            self.family.rescaled_unchecked(j, w, s)
        }
    }

    #[inline]
    fn v_from(&self, vp: f64, s: f64) -> f64 {
        let p = self.params.p;
        let mut v = p * (abs_pow(vp, p - 1.0, self.ip.map(|n| n - 1)) - 1.0 / (p - 1.0));
        if self.params.iota != 0.0 {
            v += self.h(1, vp, s);
        }
        v
    }

    #[inline]
    fn r_from(&self, v: &VarphiValue, y: f64, s: f64) -> f64 {
        let p = self.params.p;
        -v.ds + v.dyy - 0.5 * y * v.dy - v.value / (p - 1.0) + signed_pow(v.value, p, self.ip) + self.h(0, v.value, s)
    }

    #[inline]
    fn b_from(&self, vp: f64, q: f64) -> f64 {
        power_remainder(vp, q, self.params.p, self.ip)
    }

    #[inline]
    fn n_from(&self, vp: f64, q: f64, s: f64, h0: f64, h1: f64) -> f64 {
        if self.family.is_zero() || q == 0.0 {
            return 0.0;
        }
        self.h(0, vp + q, s) - h0 - self.params.iota * h1 * q
    }

    pub fn eval_v(&self, y: f64, s: f64) -> Result<f64, SourceError> {
        let vp = self.varphi(y, s)?.value;
        Ok(self.v_from(vp, s))
    }

    pub fn eval_b(&self, q: f64, y: f64, s: f64) -> Result<f64, SourceError> {
        Ok(self.b_from(self.varphi(y, s)?.value, q))
    }

    pub fn eval_r(&self, y: f64, s: f64) -> Result<f64, SourceError> {
        let v = self.varphi(y, s)?;
        Ok(self.r_from(&v, y, s))
    }

    pub fn eval_n(&self, q: f64, y: f64, s: f64) -> Result<f64, SourceError> {
        let vp = self.varphi(y, s)?.value;
        Ok(self.n_from(vp, q, s, self.h(0, vp, s), self.h(1, vp, s)))
    }

    /// `Q = -theta_s + theta_yy - (y/2) theta_y - theta/(p-1) + theta^p`
    /// with `theta = f(y/sqrt s) + kappa/(2ps)`.
    pub fn eval_q_part(&self, y: f64, s: f64) -> f64 {
        let pr = self.params;
        let p = pr.p;
        let rs = s.sqrt();
        let z = y / rs;
        let (f, f1, f2) = f_with_derivs(z, pr);
        let corr = pr.kappa / (2.0 * p * s);
        let th = f + corr;
        let th_s = -0.5 * z / s * f1 - corr / s;
        -th_s + f2 / s - 0.5 * y * f1 / rs - th / (p - 1.0) + signed_pow(th, p, self.ip)
    }

    /// `G = -(phi'/kappa) theta - (phi/kappa) theta^p + phi^p (theta/kappa)^p + H_0((phi/kappa) theta)`.
    pub fn eval_g_part(&self, y: f64, s: f64) -> Result<f64, SourceError> {
        let pr = self.params;
        let p = pr.p;
        let lv = self.level(s)?;
        let th = crate::profile::eval_f(y / s.sqrt(), pr) + pr.kappa / (2.0 * p * s);
        let k = pr.kappa;
        Ok(-(lv.dphi / k) * th - (lv.phi / k) * signed_pow(th, p, self.ip)
            + abs_pow(lv.phi, p, self.ip) * signed_pow(th / k, p, self.ip)
            + self.h(0, lv.phi / k * th, s))
    }

    /// All grid-dependent coefficients at one time level.
    pub fn fill_level(&self, s: f64, grid: &Grid, out: &mut LevelCoefficients) -> Result<(), SourceError> {
        let lv = self.level(s)?;
        let n = grid.len();
        out.s = s;
        out.varphi.resize(n, 0.0);
        out.v.resize(n, 0.0);
        out.r.resize(n, 0.0);
        let with_h = !self.family.is_zero();
        out.h0.resize(if with_h { n } else { 0 }, 0.0);
        out.h1.resize(if with_h { n } else { 0 }, 0.0);
        for i in 0..n {
            let y = grid.y(i);
            let vv = self.varphi_at(&lv, y);
            out.varphi[i] = vv.value;
            out.v[i] = self.v_from(vv.value, s);
            out.r[i] = self.r_from(&vv, y, s);
            if with_h {
                out.h0[i] = self.h(0, vv.value, s);
                out.h1[i] = self.h(1, vv.value, s);
            }
        }
        Ok(())
    }

    /// `B(q) + N(q)` at node `i` of a filled level.
    #[inline]
    pub fn nonlinear(&self, lc: &LevelCoefficients, i: usize, q: f64) -> f64 {
        let vp = lc.varphi[i];
        let mut v = self.b_from(vp, q);
        if !lc.h0.is_empty() {
            v += self.n_from(vp, q, lc.s, lc.h0[i], lc.h1[i]);
        }
        v
    }
}

/// Per-level coefficient arrays on a grid.
#[derive(Debug, Clone, Default)]
pub struct LevelCoefficients {
    pub s: f64,
    pub varphi: Vec<f64>,
    pub v: Vec<f64>,
    pub r: Vec<f64>,
    h0: Vec<f64>,
    h1: Vec<f64>,
}

/// `|a+q|^{p-1}(a+q) - a^p - p a^{p-1} q` for `a > 0`, free of cancellation for small `q`.
#[inline]
pub fn power_remainder(a: f64, q: f64, p: f64, ip: Option<i32>) -> f64 {
    let u = a + q;
    if let Some(n) = ip {
        if n % 2 == 1 || u >= 0.0 {
            // binomial tail sum_{k>=2} C(n,k) a^{n-k} q^k
            let mut c = n as f64 * (n - 1) as f64 / 2.0;
            let mut term = 0.0;
            let mut qk = q * q;
            for k in 2..=n {
                term += c * a.powi(n - k) * qk;
                c *= (n - k) as f64 / (k + 1) as f64;
                qk *= q;
            }
            return term;
        }
        return signed_pow(u, p, ip) - a.powi(n) - n as f64 * a.powi(n - 1) * q;
    }
    if a > 0.0 {
        let x = q / a;
        if x.abs() < 1e-3 {
            let mut c = p * (p - 1.0) / 2.0;
            let mut xk = x * x;
            let mut sum = 0.0;
            for k in 2..8 {
                sum += c * xk;
                c *= (p - k as f64) / (k + 1) as f64;
                xk *= x;
            }
            return a.powf(p) * sum;
        }
        if x > -1.0 {
            return a.powf(p) * ((p * x.ln_1p()).exp_m1() - p * x);
        }
    }
    signed_pow(u, p, None) - signed_pow(a, p, None) - p * a.abs().powf(p - 1.0) * q
}

pub fn eval_varphi(y: f64, s: f64, phi: &PhiSolution) -> Result<VarphiValue, SourceError> {
    Sources::new(phi).varphi(y, s)
}

pub fn eval_v(y: f64, s: f64, phi: &PhiSolution) -> Result<f64, SourceError> {
    Sources::new(phi).eval_v(y, s)
}

pub fn eval_b(q: f64, y: f64, s: f64, phi: &PhiSolution) -> Result<f64, SourceError> {
    Sources::new(phi).eval_b(q, y, s)
}

pub fn eval_r(y: f64, s: f64, phi: &PhiSolution) -> Result<f64, SourceError> {
    Sources::new(phi).eval_r(y, s)
}

pub fn eval_n(q: f64, y: f64, s: f64, phi: &PhiSolution) -> Result<f64, SourceError> {
    Sources::new(phi).eval_n(q, y, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phi::solve_phi_ode;
    use crate::profile::eval_f;

    fn table(mu: f64) -> PhiSolution {
        solve_phi_ode(&ProblemParams::explicit_log(3.0, 1.0, mu).unwrap(), 5.0, 3000.0).unwrap()
    }

    #[test]
    fn varphi_examples() {
        let t = table(1.0);
        let src = Sources::new(&t);
        let s = 40.0;
        let phi = t.phi(s).unwrap();
        assert!((src.varphi(0.0, s).unwrap().value - phi * (1.0 + 1.0 / (6.0 * s))).abs() < 1e-14);
        let t0 = table(0.0);
        let pp = t0.params();
        let v = eval_varphi(2.0, s, &t0).unwrap().value;
        assert!((v - (eval_f(2.0 / s.sqrt(), pp) + pp.kappa / (6.0 * s))).abs() < 1e-15);
        assert!(eval_varphi(0.0, 4000.0, &t0).is_err());
    }

    #[test]
    fn varphi_derivatives_match_differences() {
        for mu in [0.0, 1.0] {
            let t = table(mu);
            let (y, s) = (1.0, 50.0);
            let v = eval_varphi(y, s, &t).unwrap();
            let h = 1e-4;
            let val = |y, s| eval_varphi(y, s, &t).unwrap().value;
            let ds = (val(y, s + h) - val(y, s - h)) / (2.0 * h);
            let dy = (val(y + h, s) - val(y - h, s)) / (2.0 * h);
            let dyy = (val(y + h, s) - 2.0 * val(y, s) + val(y - h, s)) / (h * h);
            assert!((ds - v.ds).abs() < 1e-6);
            assert!((dy - v.dy).abs() < 1e-8);
            assert!((dyy - v.dyy).abs() < 1e-6);
        }
    }

    #[test]
    fn b_examples() {
        let t = table(0.0);
        let src = Sources::new(&t);
        assert_eq!(src.eval_b(0.0, 0.3, 20.0).unwrap(), 0.0);
        for q in [-0.2, 1e-7, 0.05, 0.4] {
            let vp = eval_varphi(0.3, 20.0, &t).unwrap().value;
            let exact = 3.0 * vp * q * q + q * q * q;
            assert!((src.eval_b(q, 0.3, 20.0).unwrap() - exact).abs() <= 1e-15 * (1.0 + exact.abs()) + 1e-300);
        }
        // quadratic tangency
        let d = 1e-6;
        assert!((src.eval_b(d, 0.0, 20.0).unwrap() / d).abs() < 1e-5);
    }

    #[test]
    fn power_remainder_general_p() {
        for p in [1.5f64, 2.0, 2.5, 4.0] {
            let ip = (p == p.round()).then_some(p as i32);
            for (a, q) in [(0.7, 1e-6), (0.7, 0.3), (0.5, -0.8), (1.2, -0.01), (0.3, 2.0)] {
                let u: f64 = a + q;
                let direct = u.abs().powf(p - 1.0) * u - a.powf(p) - p * a.powf(p - 1.0) * q;
                let got = power_remainder(a, q, p, ip);
                assert!((got - direct).abs() <= 1e-11 * (1.0 + direct.abs()), "p={p} a={a} q={q}: {got} vs {direct}");
            }
        }
    }

    #[test]
    fn n_vanishes_at_zero_and_matches_taylor() {
        let t = table(1.0);
        let src = Sources::new(&t);
        assert_eq!(src.eval_n(0.0, 0.5, 30.0).unwrap(), 0.0);
        let (y, s) = (0.5, 30.0);
        let vp = eval_varphi(y, s, &t).unwrap().value;
        let want = 0.5 * t.family().rescaled(2, vp, s).unwrap();
        let q = 1e-4;
        let got = src.eval_n(q, y, s).unwrap() / (q * q);
        assert!(((got - want) / want).abs() < 0.05);
    }

    #[test]
    fn n_without_derivative_subtraction_in_log_bounded_case() {
        let pp = ProblemParams::log_bounded(3.0, 1.5, 1.0).unwrap();
        let t = solve_phi_ode(&pp, 5.0, 200.0).unwrap();
        let src = Sources::new(&t);
        let (y, s, q) = (0.2, 20.0, 0.01);
        let vp = eval_varphi(y, s, &t).unwrap().value;
        let f = t.family();
        let want = f.rescaled(0, vp + q, s).unwrap() - f.rescaled(0, vp, s).unwrap();
        assert!((src.eval_n(q, y, s).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn r_splits_into_q_and_g() {
        let t = table(1.0);
        let src = Sources::new(&t);
        for s in [20.0, 100.0, 1000.0] {
            let phi = t.phi(s).unwrap();
            for y in [0.0, 1.0, 5.0, 30.0] {
                let r = src.eval_r(y, s).unwrap();
                let split = phi / t.params().kappa * src.eval_q_part(y, s) + src.eval_g_part(y, s).unwrap();
                assert!((r - split).abs() < 1e-8, "s={s} y={y}");
            }
        }
    }

    #[test]
    fn filled_level_matches_pointwise() {
        let t = table(1.0);
        let src = Sources::new(&t);
        let g = Grid::new(20.0, 0.5);
        let mut lc = LevelCoefficients::default();
        src.fill_level(25.0, &g, &mut lc).unwrap();
        for i in (0..g.len()).step_by(7) {
            let y = g.y(i);
            assert!((lc.v[i] - src.eval_v(y, 25.0).unwrap()).abs() < 1e-14);
            assert!((lc.r[i] - src.eval_r(y, 25.0).unwrap()).abs() < 1e-14);
            let q = 0.01 * y;
            let bn = src.eval_b(q, y, 25.0).unwrap() + src.eval_n(q, y, 25.0).unwrap();
            assert!((src.nonlinear(&lc, i, q) - bn).abs() < 1e-15);
        }
    }
}
