use blowup_core::hermite::{hermite_norm_sq, hermite_poly, QuadratureRule};
use blowup_core::kernels::apply_semigroup_at;

use super::{timed, Run};
use crate::report::CriterionResult;

const MAX_MODE: usize = 6;

/// Gram matrix of `h_0..h_6`, and the two triple products used by the mode ODEs.
pub fn criterion_1(run: &mut Run<'_>) -> anyhow::Result<CriterionResult> {
    let order = run.cfg.numerics.quadrature_order;
    let mut rows = Vec::new();
    let r = timed(|| {
        let rule = QuadratureRule::gauss_hermite(order);
        let mut c = CriterionResult::new(1, "spectral", 5.0);
        let (mut off, mut diag) = (0.0f64, 0.0f64);
        for i in 0..=MAX_MODE {
            for j in 0..=MAX_MODE {
                let g = rule.inner_product(|y| hermite_poly(i, y), |y| hermite_poly(j, y));
                let want = if i == j { hermite_norm_sq(i) } else { 0.0 };
                // relative to the norms: the entries span 1 .. 4.6e4
                let scale = (hermite_norm_sq(i) * hermite_norm_sq(j)).sqrt();
                if i == j {
                    diag = diag.max((g - want).abs() / scale);
                } else {
                    off = off.max(g.abs() / scale);
                }
                rows.push(vec![i as f64, j as f64, g, want]);
            }
        }
        c.at_most("max |<h_i,h_j>|/(|h_i||h_j|), i != j", off, 1e-10);
        c.at_most("max rel. error of <h_i,h_i> vs 2^i i!", diag, 1e-10);
        let h2 = |y: f64| hermite_poly(2, y);
        c.at_most("|<h2,h2> - 8|", (rule.inner_product(h2, h2) - 8.0).abs(), 1e-8);
        c.at_most("|<h2^2,h2> - 64|", (rule.inner_product(|y| h2(y) * h2(y), h2) - 64.0).abs(), 1e-8);
        Ok(c)
    })?;
    let p = run.sink.table("spectral/orthogonality.csv", &["i", "j", "inner_product", "expected"], &rows)?;
    run.keep(p);
    Ok(r)
}

/// `e^{tL} h_m = e^{(1-m/2)t} h_m`, through the Mehler quadrature.
pub fn criterion_2(run: &mut Run<'_>) -> anyhow::Result<CriterionResult> {
    let order = run.cfg.numerics.quadrature_order;
    let mut rows = Vec::new();
    let r = timed(|| {
        let rule = QuadratureRule::gauss_hermite(order);
        let mut c = CriterionResult::new(2, "semigroup", 30.0);
        let mut worst = 0.0f64;
        for m in 0..=4 {
            for t in [0.5, 1.0, 2.0] {
                let gain = ((1.0 - 0.5 * m as f64) * t).exp();
                let err = (0..=1000)
                    .map(|i| -5.0 + 0.01 * i as f64)
                    .map(|y| (apply_semigroup_at(t, |x| hermite_poly(m, x), y, &rule) - gain * hermite_poly(m, y)).abs())
                    .fold(0.0, f64::max);
                worst = worst.max(err);
                rows.push(vec![m as f64, t, err]);
            }
        }
        c.at_most("sup_{|y|<=5} |e^{tL}h_m - e^{(1-m/2)t}h_m|", worst, 1e-6);
        Ok(c)
    })?;
    let p = run.sink.table("spectral/semigroup.csv", &["m", "t", "sup_error"], &rows)?;
    run.keep(p);
    Ok(r)
}
