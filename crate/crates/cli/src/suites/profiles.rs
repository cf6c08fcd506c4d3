use blowup_core::cutoff::cutoff_chi;
use blowup_core::fit::{fit_line, fit_power_2d, loglog_slope};
use blowup_core::hermite::{hermite_norm_sq, hermite_poly, QuadratureRule};
use blowup_core::sources::{eval_b, eval_n, eval_r, eval_v};

use super::{logspace, phi_table, timed, Run};
use crate::report::CriterionResult;

/// Tail of the profile ODE: `s^a eta(s) -> C0` and the `1/s` correction.
pub fn criterion_3(run: &mut Run<'_>) -> anyhow::Result<CriterionResult> {
    let pr = run.params()?;
    let s_min = run.cfg.numerics.phi_s_min;
    let mut rows = Vec::new();
    let r = timed(|| {
        let mut c = CriterionResult::new(3, "phi_ode", 10.0);
        let c0 = pr.tail_constant();
        if c0 == 0.0 {
            c.check("tail constant C0 (needs explicit_log, mu != 0)", c0, "!= 0", false);
            return Ok(c);
        }
        let phi = phi_table(&pr, s_min, 2e4)?;
        let tail = |s: f64| -> anyhow::Result<f64> { Ok(s.powf(pr.a) * phi.eta(s)? / c0) };
        c.at_most("|s^a eta(s)/C0 - 1| at s = 1e4", (tail(1e4)? - 1.0).abs(), 0.05);
        // (s^a eta / C0 - 1) s = b1 + b2/s
        let ss = logspace(100.0, 1e4, 41);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for &s in &ss {
            let t = tail(s)?;
            xs.push(1.0 / s);
            ys.push((t - 1.0) * s);
            rows.push(vec![s, phi.eta(s)?, t]);
        }
        let b1 = fit_line(&xs, &ys).map_or(f64::NAN, |f| f.intercept);
        let rel = ((b1 + pr.a) / pr.a).abs();
        c.check("b1 (target -a)", b1, format!("within 20% of {}", -pr.a), rel <= 0.2);
        Ok(c)
    })?;
    let p = run.sink.table("profiles/phi_tail.csv", &["s", "eta", "s_a_eta_over_c0"], &rows)?;
    run.keep(p);
    Ok(r)
}

/// The potential at the origin and in the far field.
pub fn criterion_4(run: &mut Run<'_>) -> anyhow::Result<CriterionResult> {
    let pr = run.params()?;
    let s_min = run.cfg.numerics.phi_s_min;
    let mut rows = Vec::new();
    let r = timed(|| {
        let mut c = CriterionResult::new(4, "potential", 5.0);
        let phi = phi_table(&pr, s_min, 6000.0)?;
        let limit = pr.p / (pr.p - 1.0);
        for s in logspace(50.0, 5000.0, 21) {
            let far = (eval_v(8.0 * s.sqrt(), s, &phi)? + limit).abs();
            rows.push(vec![s, 2.0 * s * eval_v(0.0, s, &phi)?, far]);
        }
        let s = 1e3;
        c.at_most("|2s V(0,s) - 1| at s = 1e3", (2.0 * s * eval_v(0.0, s, &phi)? - 1.0).abs(), 0.1);
        c.at_most("|V + p/(p-1)| at |y| = 8 sqrt(s), s = 1e3", (eval_v(8.0 * s.sqrt(), s, &phi)? + limit).abs(), 0.05);
        Ok(c)
    })?;
    let p = run.sink.table("profiles/potential.csv", &["s", "two_s_v0", "far_field_gap"], &rows)?;
    run.keep(p);
    Ok(r)
}

/// Decay exponents of the source terms over one decade `[50, 500]`.
pub fn criterion_5(run: &mut Run<'_>) -> anyhow::Result<CriterionResult> {
    let pr = run.params()?;
    let (s_min, k, order) = (run.cfg.numerics.phi_s_min, run.cfg.numerics.k, run.cfg.numerics.quadrature_order);
    let mut decay: Vec<(&'static str, f64, f64, f64)> = Vec::new();
    let r = timed(|| {
        let mut c = CriterionResult::new(5, "source_decay", 120.0);
        let phi = phi_table(&pr, s_min, 600.0)?;
        let rule = QuadratureRule::gauss_hermite(order);
        let ss = logspace(50.0, 500.0, 21);
        let (mut r2, mut re) = (Vec::new(), Vec::new());
        for &s in &ss {
            // evaluation errors cannot occur inside the table; NaN would poison the fit
            let r = |y: f64| eval_r(y, s, &phi).unwrap_or(f64::NAN);
            r2.push(rule.inner_product(r, |y| hermite_poly(2, y)) / hermite_norm_sq(2));
            let ymax = 4.0 * k * s.sqrt();
            re.push((0..=4000).map(|i| ymax * i as f64 / 4000.0).map(|y| ((1.0 - cutoff_chi(y, s, k)) * r(y)).abs()).fold(0.0, f64::max));
        }
        let slope = |x: &[f64], y: &[f64]| loglog_slope(x, y).map_or(f64::NAN, |f| f.slope);
        let (t2, te) = (-(2.0 + pr.nu), -pr.nu);
        c.at_most("slope of |R_2| on [50, 500]", slope(&ss, &r2), t2 + 0.3);
        c.at_most("slope of |R_e|_inf on [50, 500]", slope(&ss, &re), te + 0.3);
        decay.extend(ss.iter().zip(&r2).map(|(&s, &v)| ("R_2", s, v, t2)));
        decay.extend(ss.iter().zip(&re).map(|(&s, &v)| ("R_e", s, v, te)));

        let ys: Vec<f64> = (0..=400).map(|i| -20.0 + 0.1 * i as f64).collect();
        let qs = logspace(1e-6, 1e-2, 21);
        let b: Vec<f64> = qs
            .iter()
            .map(|&q| ys.iter().map(|&y| eval_b(q, y, 50.0, &phi).map_or(f64::NAN, f64::abs)).fold(0.0, f64::max))
            .collect();
        c.at_least("exponent of sup_y |B(q)| as q -> 0", slope(&qs, &b), pr.p_prime - 0.05);
        decay.extend(qs.iter().zip(&b).map(|(&q, &v)| ("B", q, v, pr.p_prime)));

        let (mut aq, mut asv, mut av) = (Vec::new(), Vec::new(), Vec::new());
        let ys: Vec<f64> = (0..=200).map(|i| -10.0 + 0.1 * i as f64).collect();
        for &s in &ss {
            for q in logspace(1e-4, 1e-2, 11) {
                let v = ys.iter().map(|&y| eval_n(q, y, s, &phi).map_or(f64::NAN, f64::abs)).fold(0.0, f64::max);
                aq.push(q);
                asv.push(s);
                av.push(v);
            }
        }
        let (beta, alpha) = fit_power_2d(&aq, &asv, &av).map_or((f64::NAN, f64::NAN), |(b, a, _)| (b, a));
        c.check("N exponent beta", beta, format!("within 0.3 of {}", pr.beta), (beta - pr.beta).abs() <= 0.3);
        c.check("N exponent in s", alpha, format!("within 0.3 of {}", pr.a), (alpha - pr.a).abs() <= 0.3);
        Ok(c)
    })?;
    let p = run.sink.csv("profiles/decay.csv", |w| {
        let mut cw = csv::Writer::from_writer(w);
        cw.write_record(["quantity", "x", "value", "target_slope"])?;
        for (q, x, v, t) in &decay {
            cw.write_record([q.to_string(), x.to_string(), v.to_string(), t.to_string()])?;
        }
        cw.flush()?;
        Ok(())
    })?;
    run.keep(p);
    Ok(r)
}
