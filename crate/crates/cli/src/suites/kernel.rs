use blowup_core::grid::{Grid, WeightedField};
use blowup_core::hermite::QuadratureRule;
use blowup_core::kernels::{
    apply_semigroup, propagate_k, verify_kernel_bounds, write_kernel_reports_csv, KernelCheckConfig, Potential, Probe,
    PropagationConfig,
};
use rayon::prelude::*;

use super::{phi_table, tag, timed, Run};
use crate::report::CriterionResult;

/// `sup_{|y| <= r} |a - b|` sampled at the nodes of `a`.
fn sup_diff(a: &WeightedField, b: &WeightedField, r: f64) -> f64 {
    let g = a.grid;
    (0..g.len()).filter(|&i| g.y(i).abs() <= r).map(|i| (a.values[i] - b.at(g.y(i))).abs()).fold(0.0, f64::max)
}

/// The flow `K(s, sigma)`: Mehler agreement, composition, and the envelope bounds.
pub fn criterion_6(run: &mut Run<'_>) -> anyhow::Result<CriterionResult> {
    let pr = run.params()?;
    let n = &run.cfg.numerics;
    let kc = n.kernel.clone();
    let (k, order, s_min) = (n.k, n.quadrature_order, n.phi_s_min);
    let mut reports = Vec::new();
    let r = timed(|| {
        let mut c = CriterionResult::new(6, "kernel", 300.0);
        let (sigma, lambda) = (kc.sigma, kc.lambda);
        let s = sigma + lambda;
        let rule = QuadratureRule::gauss_hermite(order);
        let phi = phi_table(&pr, s_min, kc.validation_factor.max(1.0) * sigma + lambda + 5.0)?;
        let grid = Grid::for_run(k, s, kc.dy);
        let fine = Grid::for_run(k, s, kc.dy / 2.0);
        let window = 2.0 * k * s.sqrt();
        let pc = PropagationConfig::default();

        // V = 0 against the Mehler quadrature; the tail bump leaves the grid
        // under e^{tL} and is not used here.
        let mehler = [Probe::H0, Probe::H1, Probe::H2, Probe::MinusBump]
            .par_iter()
            .map(|probe| -> anyhow::Result<f64> {
                let psi = probe.field(grid, sigma, k);
                let th = propagate_k(sigma, s, &psi, Potential::Zero, pc)?;
                let reference = apply_semigroup(lambda, &psi, &rule).field;
                let scale = reference.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                Ok(sup_diff(&th, &reference, window) / scale)
            })
            .collect::<anyhow::Result<Vec<f64>>>()?;
        c.at_most("max rel. |K_0 psi - e^{tL} psi|", mehler.iter().cloned().fold(0.0, f64::max), 1e-4);

        // K(s,tau)K(tau,sigma) against K(s,sigma), relative to the dy -> dy/2
        // change; one probe per component class keeps the fine runs affordable
        let tau = sigma + 0.37 * lambda;
        let comp = [Probe::H0, Probe::MinusBump, Probe::TailBump]
            .par_iter()
            .map(|probe| -> anyhow::Result<(f64, f64)> {
                let psi = probe.field(grid, sigma, k);
                let direct = propagate_k(sigma, s, &psi, Potential::Full(&phi), pc)?;
                let mid = propagate_k(sigma, tau, &psi, Potential::Full(&phi), pc)?;
                let composed = propagate_k(tau, s, &mid, Potential::Full(&phi), pc)?;
                let psi_f = probe.field(fine, sigma, k);
                let direct_f = propagate_k(sigma, s, &psi_f, Potential::Full(&phi), pc)?;
                Ok((sup_diff(&composed, &direct, window), sup_diff(&direct, &direct_f, window)))
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        let ratio = comp.iter().map(|(d, e)| d / e).fold(0.0, f64::max);
        c.at_most("max composition defect / discretization error", ratio, 2.0);

        let cfg = KernelCheckConfig {
            k,
            dy: kc.dy,
            samples_per_unit: kc.samples_per_unit,
            slack: kc.slack,
            validation_factor: kc.validation_factor,
        };
        reports = verify_kernel_bounds(sigma, lambda, &Probe::ALL, &phi, cfg, &rule)?;
        let failed = reports.iter().filter(|r| !r.pass).count();
        let worst = reports
            .iter()
            .filter(|r| !r.fit_sample && r.bound_shape_value > 0.0)
            .map(|r| r.measured / r.bound_shape_value)
            .fold(0.0, f64::max);
        c.check("envelope violations (all probes, both windows)", failed as f64, "== 0", failed == 0);
        c.check("worst validation ratio measured/bound", worst, format!("<= {}", 1.0 + kc.slack), worst <= 1.0 + kc.slack);
        Ok(c)
    })?;
    let name = format!("kernel/bounds_{}.csv", tag(&pr));
    let p = run.sink.csv(&name, |w| Ok(write_kernel_reports_csv(w, &reports)?))?;
    run.keep(p);
    Ok(r)
}
