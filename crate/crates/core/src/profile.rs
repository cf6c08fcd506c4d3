//! The blow-up profile `f(z) = kappa (1 + c_p z^2)^{-1/(p-1)}`.

use crate::params::ProblemParams;

pub fn eval_f(z: f64, params: &ProblemParams) -> f64 {
    params.kappa * (1.0 + params.c_p * z * z).powf(-1.0 / (params.p - 1.0))
}

/// `f'(z) = -(p-1)/(2p) z f(z)^p`.
pub fn eval_f_deriv(z: f64, params: &ProblemParams) -> f64 {
    let p = params.p;
    -(p - 1.0) / (2.0 * p) * z * eval_f(z, params).powf(p)
}

/// `(f, f', f'')` sharing a single power evaluation.
#[inline]
pub fn f_with_derivs(z: f64, params: &ProblemParams) -> (f64, f64, f64) {
    let p = params.p;
    let g = 1.0 / (1.0 + params.c_p * z * z);
    // f^{p-1} = kappa^{p-1} g = g/(p-1)
    let fpm1 = g / (p - 1.0);
    let f = params.kappa * g.powf(1.0 / (p - 1.0));
    let fp = f * fpm1;
    let k = -(p - 1.0) / (2.0 * p);
    let d1 = k * z * fp;
    let d2 = k * (fp + p * z * fpm1 * d1);
    (f, d1, d2)
}

/// `f_{K0}(tau) = kappa (1 - tau + (p-1)K0^2/(4p))^{-1/(p-1)}`.
pub fn f_hat(tau: f64, k0: f64, params: &ProblemParams) -> f64 {
    params.kappa * (1.0 - tau + params.c_p * k0 * k0).powf(-1.0 / (params.p - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn spot_values() {
        let p2 = ProblemParams::unperturbed(2.0);
        assert_abs_diff_eq!(eval_f(0.0, &p2), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(eval_f(1.0, &p2), 8.0 / 9.0, epsilon = 1e-15);
        assert_abs_diff_eq!(eval_f(8f64.sqrt(), &p2), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(eval_f_deriv(0.0, &p2), 0.0);
        assert_abs_diff_eq!(eval_f_deriv(1.0, &p2), -16.0 / 81.0, epsilon = 1e-15);
        let p3 = ProblemParams::unperturbed(3.0);
        assert_abs_diff_eq!(eval_f(0.0, &p3), p3.kappa);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let p3 = ProblemParams::unperturbed(3.0);
        let dz = 1e-5;
        let fd = (eval_f(0.5 + dz, &p3) - eval_f(0.5 - dz, &p3)) / (2.0 * dz);
        assert_abs_diff_eq!(fd, eval_f_deriv(0.5, &p3), epsilon = 1e-8);
        let (_, d1, d2) = f_with_derivs(0.5, &p3);
        assert_abs_diff_eq!(d1, eval_f_deriv(0.5, &p3), epsilon = 1e-15);
        let fd2 = (eval_f_deriv(0.5 + dz, &p3) - eval_f_deriv(0.5 - dz, &p3)) / (2.0 * dz);
        assert_abs_diff_eq!(fd2, d2, epsilon = 1e-8);
    }

    #[test]
    fn power_identity_on_grid() {
        for p in [1.5, 2.0, 3.0, 5.0] {
            let pp = ProblemParams::unperturbed(p);
            for k in 0..200 {
                let z = -20.0 + 0.2 * k as f64;
                let f = eval_f(z, &pp);
                let lhs = f.powf(p - 1.0);
                let rhs = pp.kappa.powf(p - 1.0) / (1.0 + pp.c_p * z * z);
                assert!((lhs - rhs).abs() < 1e-12);
                assert!(f > 0.0 && (f - eval_f(-z, &pp)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn f_hat_at_zero_is_f_at_k0() {
        let pp = ProblemParams::unperturbed(3.0);
        assert_abs_diff_eq!(f_hat(0.0, 3.0, &pp), eval_f(3.0, &pp), epsilon = 1e-15);
    }
}
