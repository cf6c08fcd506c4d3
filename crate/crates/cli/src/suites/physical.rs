use blowup_core::perturbation::PerturbationFamily;
use blowup_core::physical::{
    build_u0_from_theorem, check_intermediate_profile, estimate_t, evolve_physical, extract_final_profile, PhysConfig, PhysGrid,
    PhysicalRun, ProfileCheck, TEstimate,
};
use blowup_core::profile::eval_f;
use blowup_core::ProblemParams;
use serde::Serialize;

use super::shoot::{shoot_real, ShootSummary};
use super::{logspace, phi_table, tag, timed, Run};
use crate::report::CriterionResult;

/// Blow-up time of `u' = u^p + h(u)`, `u(0) = c`:
/// `T = int_0^inf c e^r / (F(c e^r)) dr` by composite Simpson.
pub fn blowup_time_ode(c: f64, pr: &ProblemParams) -> f64 {
    let fam = PerturbationFamily::from_params(pr);
    let g = |r: f64| {
        let u = c * r.exp();
        u / (u.powf(pr.p) + fam.eval(0, u).unwrap_or(0.0))
    };
    let (n, r_max) = (40_000, 60.0 / (pr.p - 1.0));
    let h = r_max / n as f64;
    let mut acc = g(0.0) + g(r_max);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * g(i as f64 * h);
    }
    acc * h / 3.0
}

#[derive(Debug, Clone, Serialize)]
struct PhysicalSummary {
    shoot: ShootSummary,
    t_blow: f64,
    estimate: TEstimate,
    steps: usize,
    /// `max_k |u(0,t_k)/max|u(.,t_k)| - 1|`; the maximum stays at the origin.
    argmax_defect: f64,
    max_drift: f64,
    v_check_eps: Vec<f64>,
}

/// `max_k (e0 at decade k+1) / (e0 at decade k)` of the per-decade maxima.
fn decade_growth(pc: &ProfileCheck) -> f64 {
    let mut best: Vec<(i32, f64)> = Vec::new();
    for r in &pc.rows {
        let d = r.amplification.log10().floor() as i32;
        match best.last_mut() {
            Some((k, m)) if *k == d => *m = m.max(r.e0),
            _ => best.push((d, r.e0)),
        }
    }
    best.windows(2).map(|w| w[1].1 / w[0].1).fold(0.0, f64::max)
}

/// `e0` at the snapshot nearest (in log) to the given amplification.
fn e0_at(pc: &ProfileCheck, amp: f64) -> f64 {
    pc.rows
        .iter()
        .min_by(|a, b| (a.amplification / amp).ln().abs().total_cmp(&(b.amplification / amp).ln().abs()))
        .map_or(f64::NAN, |r| r.e0)
}

/// Flat data against the scalar ODE, then the constructed solution: the
/// `kappa` scaling, the intermediate profile, and the final profile.
pub fn criterion_8(run: &mut Run<'_>) -> anyhow::Result<CriterionResult> {
    let cfg = run.cfg;
    let ph = cfg.numerics.physical.clone();
    let variants = cfg.variants(&cfg.experiment.physical_mu);
    let mut out: Vec<(String, PhysicalRun, ProfileCheck, Vec<Vec<f64>>, PhysicalSummary)> = Vec::new();
    let r = timed(|| {
        let mut c = CriterionResult::new(8, "physical", 1200.0);
        for pr in &variants {
            let t = tag(pr);
            let fam = PerturbationFamily::from_params(pr);

            let flat = PhysGrid::new(1e-3, 0.1, 1.0);
            let fr = evolve_physical(vec![1.0; flat.len()], &flat, pr, &fam, &PhysConfig::default())?;
            let t_ode = blowup_time_ode(1.0, pr);
            c.at_most(format!("{t}: |T_est - T_ode|, flat data"), (estimate_t(&fr)?.t_est - t_ode).abs(), 1e-3);

            let phi = phi_table(pr, cfg.numerics.phi_s_min.min(ph.s0), ph.s0 + cfg.numerics.horizon + 5.0)?;
            let (res, _) = shoot_real(&phi, cfg, ph.s0, ph.s0 + cfg.numerics.horizon)?;
            let t_blow = (-ph.s0).exp();
            let grid = PhysGrid::new(ph.alpha, ph.dxi, ph.x_max);
            let u0 = build_u0_from_theorem(res.d.0, res.d.1, t_blow, &phi, &grid)?;
            let pc_cfg = PhysConfig { c_dt: ph.c_dt, amplification_cap: ph.amplification, ..Default::default() };
            let prun = evolve_physical(u0, &grid, pr, &fam, &pc_cfg)?;
            let est = estimate_t(&prun)?;

            let last = *prun.max_u.last().unwrap();
            let scaling = (0..prun.t.len())
                .filter(|&k| prun.max_u[k] >= last / 10.0)
                .map(|k| (est.time_to_go(&prun, k).powf(1.0 / (pr.p - 1.0)) * prun.u_at_0[k] / pr.kappa - 1.0).abs())
                .fold(0.0, f64::max);
            c.at_most(format!("{t}: |(T-t)^(1/(p-1)) u(0,t)/kappa - 1|, last decade"), scaling, 0.05);

            let pc = check_intermediate_profile(&prun, &est)?;
            c.at_most(format!("{t}: profile discrepancy at amplification 1e5"), e0_at(&pc, 1e5), 0.1);
            c.at_most(format!("{t}: growth of per-decade discrepancy maxima"), decade_growth(&pc), 1.05);
            c.at_most(format!("{t}: log-log slope of discrepancy vs |log(T-t)|"), pc.slope_e0.unwrap_or(f64::NAN), 0.0);

            let xs = logspace(1e-3, 1e-2, 11);
            let fp = extract_final_profile(&prun, &est, &xs, &[1e-2, 3e-3, 1e-3, 3e-4], ph.k0)?;
            let worst = fp.rows.iter().map(|r| (r.ratio - 1.0).abs()).fold(0.0, f64::max);
            c.at_most(format!("{t}: |u*/theory - 1| on [1e-3, 1e-2]"), worst, 0.25);

            let argmax_defect = (0..prun.t.len()).map(|k| (prun.u_at_0[k] / prun.max_u[k] - 1.0).abs()).fold(0.0, f64::max);
            let ratios = fp.rows.iter().map(|r| vec![r.x, r.u_star, r.theory, r.ratio]).collect();
            let summary = PhysicalSummary {
                shoot: ShootSummary::from(&res),
                t_blow,
                estimate: est,
                steps: prun.t.len(),
                argmax_defect,
                max_drift: fp.max_drift,
                v_check_eps: fp.v_checks.iter().map(|v| v.eps).collect(),
            };
            out.push((t, prun, pc, ratios, summary));
        }
        Ok(c)
    })?;
    for (t, prun, pc, ratios, summary) in out {
        let est = &summary.estimate;
        let p = run.sink.csv(&format!("physical/run_{t}.csv"), |w| Ok(prun.write_csv(w)?))?;
        run.keep(p);
        let rows: Vec<Vec<f64>> = pc.rows.iter().map(|r| vec![r.t, r.time_to_go, r.amplification, r.e0, r.e1]).collect();
        let p = run.sink.table(&format!("physical/intermediate_{t}.csv"), &["t", "time_to_go", "amplification", "e0", "e1"], &rows)?;
        run.keep(p);
        let p = run.sink.table(&format!("physical/final_profile_{t}.csv"), &["x", "u_star", "theory", "ratio"], &ratios)?;
        run.keep(p);
        // rescaled snapshots against f(z) at three amplification levels
        let pr = prun.params;
        let p = run.sink.csv(&format!("physical/profile_overlay_{t}.csv"), |w| {
            let mut cw = csv::Writer::from_writer(w);
            cw.write_record(["label", "z", "value", "f_ref"])?;
            for amp in [1e2, 1e4, 1e6] {
                let Some(snap) = prun.snapshots.iter().min_by(|a, b| {
                    (prun.amplification(a.k) / amp).ln().abs().total_cmp(&(prun.amplification(b.k) / amp).ln().abs())
                }) else {
                    continue;
                };
                let tau = est.time_to_go(&prun, snap.k);
                let (rt, rl) = (tau.sqrt(), (-tau.ln()).sqrt());
                let label = format!("amplification {:.0e}", prun.amplification(snap.k));
                for j in 0..=80 {
                    let z = -2.0 + 0.05 * j as f64;
                    let v = tau.powf(1.0 / (pr.p - 1.0)) * prun.grid.interpolate(&snap.u, z * rl * rt);
                    cw.write_record([label.clone(), z.to_string(), v.to_string(), eval_f(z, &pr).to_string()])?;
                }
            }
            cw.flush()?;
            Ok(())
        })?;
        run.keep(p);
        run.detail(format!("physical_{t}"), summary);
    }
    Ok(r)
}
