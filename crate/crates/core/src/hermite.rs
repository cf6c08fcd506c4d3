//! Hermite eigenfunctions of `L = d^2/dy^2 - (y/2) d/dy + 1` and Gauss quadrature
//! for the weight `rho(y) = (4 pi)^{-1/2} e^{-y^2/4}`.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::grid::WeightedField;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("quadrature of order {order} integrates polynomials up to degree {exact}, requested {requested}")]
    OrderTooLow { order: usize, exact: usize, requested: usize },
    #[error("grid half-width {half_width} does not cover the cutoff support {needed}")]
    GridTooSmall { half_width: f64, needed: f64 },
    #[error("mode index {0} out of range")]
    Mode(usize),
}

pub fn rho(y: f64) -> f64 {
    (-0.25 * y * y).exp() / (4.0 * std::f64::consts::PI).sqrt()
}

/// `h_m(y) = sum_k m!/(k!(m-2k)!) (-1)^k y^{m-2k}`.
pub fn hermite_poly(m: usize, y: f64) -> f64 {
    let mut sum = 0.0;
    // coefficient for k = 0 is 1; c_{k+1} = -c_k (m-2k)(m-2k-1)/(k+1)
    let mut c = 1.0;
    for k in 0..=m / 2 {
        sum += c * y.powi((m - 2 * k) as i32);
        let j = (m - 2 * k) as f64;
        c *= -j * (j - 1.0) / (k + 1) as f64;
    }
    sum
}

/// `||h_m||^2 = 2^m m!` in `L^2_rho`.
pub fn hermite_norm_sq(m: usize) -> f64 {
    (1..=m).fold(1.0, |acc, k| acc * 2.0 * k as f64)
}

/// `k_m = h_m / ||h_m||^2`, so that `<k_m, h_n> = delta_mn`.
#[derive(Debug, Clone, Copy)]
pub struct NormalizedDual(usize);

impl NormalizedDual {
    pub fn eval(&self, y: f64) -> f64 {
        hermite_poly(self.0, y) / hermite_norm_sq(self.0)
    }
}

pub fn normalized_dual(m: usize) -> Result<NormalizedDual, SpectralError> {
    if m > 2 {
        return Err(SpectralError::Mode(m));
    }
    Ok(NormalizedDual(m))
}

/// Gauss rule with `sum_i w_i g(y_i) ~ int g rho dy`.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

pub const DEFAULT_ORDER: usize = 200;

/// Orthonormal Hermite values `p_0..p_{n}` at `x` for the weight `e^{-x^2}/sqrt(pi)`.
fn orthonormal_values(n: usize, x: f64, out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    if n == 0 {
        return;
    }
    out.push(x * 2f64.sqrt());
    for k in 1..n {
        let v = (x * out[k] - (k as f64 / 2.0).sqrt() * out[k - 1]) / ((k + 1) as f64 / 2.0).sqrt();
        out.push(v);
    }
}

impl QuadratureRule {
    /// Golub–Welsch for `e^{-x^2}`, nodes polished by Newton, weights from the
    /// Christoffel function, then mapped to `y = 2x`.
    pub fn gauss_hermite(order: usize) -> Self {
        assert!(order >= 1);
        let n = order;
        let mut jac = DMatrix::<f64>::zeros(n, n);
        for k in 1..n {
            let b = (k as f64 / 2.0).sqrt();
            jac[(k, k - 1)] = b;
            jac[(k - 1, k)] = b;
        }
        let mut xs: Vec<f64> = jac.symmetric_eigen().eigenvalues.iter().copied().collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut buf = Vec::with_capacity(n + 1);
        for x in xs.iter_mut() {
            for _ in 0..3 {
                orthonormal_values(n, *x, &mut buf);
                let d = (2.0 * n as f64).sqrt() * buf[n - 1];
                if d != 0.0 {
                    *x -= buf[n] / d;
                }
            }
        }
        // exact symmetry
        for i in 0..n / 2 {
            let m = 0.5 * (xs[n - 1 - i] - xs[i]);
            xs[i] = -m;
            xs[n - 1 - i] = m;
        }
        if n % 2 == 1 {
            xs[n / 2] = 0.0;
        }
        let mut weights: Vec<f64> = xs
            .iter()
            .map(|&x| {
                orthonormal_values(n - 1, x, &mut buf);
                1.0 / buf.iter().map(|v| v * v).sum::<f64>()
            })
            .collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Self { nodes: xs.iter().map(|x| 2.0 * x).collect(), weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Highest polynomial degree integrated exactly.
    pub fn exact_degree(&self) -> usize {
        2 * self.order() - 1
    }

    pub fn integrate(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&y, &w)| w * g(y)).sum()
    }

    /// `<g1, g2>_rho`.
    pub fn inner_product(&self, g1: impl Fn(f64) -> f64, g2: impl Fn(f64) -> f64) -> f64 {
        self.integrate(|y| g1(y) * g2(y))
    }

    /// Inner product of polynomials of known total degree; refuses degrees the
    /// rule cannot integrate exactly.
    pub fn inner_product_poly(
        &self,
        g1: impl Fn(f64) -> f64,
        g2: impl Fn(f64) -> f64,
        degree: usize,
    ) -> Result<f64, SpectralError> {
        if degree > self.exact_degree() {
            return Err(SpectralError::OrderTooLow { order: self.order(), exact: self.exact_degree(), requested: degree });
        }
        Ok(self.inner_product(g1, g2))
    }

    /// `<f, g>_rho` for a sampled field, interpolated cubically to the nodes.
    pub fn inner_product_field(&self, f: &WeightedField, g: impl Fn(f64) -> f64) -> f64 {
        self.integrate(|y| f.at(y) * g(y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn low_order_polys() {
        for y in [-2.5, -1.0, 0.0, 0.3, 4.0] {
            assert_eq!(hermite_poly(0, y), 1.0);
            assert_eq!(hermite_poly(1, y), y);
            assert_abs_diff_eq!(hermite_poly(2, y), y * y - 2.0, epsilon = 1e-13);
            assert_abs_diff_eq!(hermite_poly(3, y), y * y * y - 6.0 * y, epsilon = 1e-12);
        }
    }

    #[test]
    fn recurrence() {
        for m in 1..12 {
            for y in [-3.0, -0.7, 0.4, 2.2] {
                let lhs = hermite_poly(m + 1, y);
                let rhs = y * hermite_poly(m, y) - 2.0 * m as f64 * hermite_poly(m - 1, y);
                assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
            }
        }
    }

    #[test]
    fn measure_moments() {
        let q = QuadratureRule::gauss_hermite(DEFAULT_ORDER);
        assert_abs_diff_eq!(q.integrate(|_| 1.0), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q.integrate(|y| y * y), 2.0, epsilon = 1e-10);
        let trap: f64 = (0..4001).map(|i| -40.0 + 0.02 * i as f64).map(|y| 0.02 * rho(y) * y.cos()).sum();
        assert_abs_diff_eq!(q.integrate(f64::cos), trap, epsilon = 1e-12);
    }

    #[test]
    fn h2_inner_products() {
        let q = QuadratureRule::gauss_hermite(DEFAULT_ORDER);
        let h = |m| move |y| hermite_poly(m, y);
        assert_abs_diff_eq!(q.inner_product(h(0), h(1)), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q.inner_product(h(2), h(2)), 8.0, epsilon = 1e-8);
        assert_abs_diff_eq!(q.inner_product(|y| hermite_poly(2, y).powi(2), h(2)), 64.0, epsilon = 1e-8);
    }

    #[test]
    fn duals() {
        let q = QuadratureRule::gauss_hermite(DEFAULT_ORDER);
        for m in 0..3 {
            let k = normalized_dual(m).unwrap();
            for n in 0..3 {
                let v = q.inner_product(|y| k.eval(y), |y| hermite_poly(n, y));
                assert_abs_diff_eq!(v, if m == n { 1.0 } else { 0.0 }, epsilon = 1e-10);
            }
        }
        assert_abs_diff_eq!(normalized_dual(2).unwrap().eval(3.0), 7.0 / 8.0);
        assert!(normalized_dual(3).is_err());
    }

    #[test]
    fn degree_guard() {
        let q = QuadratureRule::gauss_hermite(4);
        assert!(q.inner_product_poly(|y| y, |y| y, 7).is_ok());
        assert!(matches!(q.inner_product_poly(|y| y, |y| y, 8), Err(SpectralError::OrderTooLow { .. })));
    }

    #[test]
    fn orthogonality_table() {
        let q = QuadratureRule::gauss_hermite(DEFAULT_ORDER);
        for i in 0..=6 {
            for j in 0..=6 {
                let v = q.inner_product(|y| hermite_poly(i, y), |y| hermite_poly(j, y));
                let want = if i == j { hermite_norm_sq(i) } else { 0.0 };
                assert!((v - want).abs() <= 1e-10 * want.max(1.0), "({i},{j}) {v}");
            }
        }
    }
}
