use blowup_core::grid::WeightedField;
use blowup_core::perturbation::PerturbationFamily;
use blowup_core::physical::{build_u0_from_theorem, evolve_physical_with_stops, to_similarity, PhysConfig, PhysGrid, PhysicalRun};
use blowup_core::selfsim::{make_initial_data, profile_field, Evolver, SolverConfig, WBoundary};
use blowup_core::shrinking_set::ShrinkingSetParams;
use blowup_core::PhiSolution;

use super::{phi_table, tag, timed, Run};
use crate::config::ExperimentConfig;
use crate::report::CriterionResult;

struct Pair {
    q: Vec<WeightedField>,
    w: Vec<WeightedField>,
}

fn q_and_w(phi: &PhiSolution, cfg: &ExperimentConfig, dy: f64, s0: f64, every: f64) -> anyhow::Result<Pair> {
    let n = &cfg.numerics;
    let s_end = s0 + n.dynamics.span;
    let ssp = ShrinkingSetParams::new(n.a_shrink, phi.params(), n.k);
    let mut sc = SolverConfig::new(ssp, s_end, dy);
    sc.stop_on_exit = false;
    sc.store_fields = true;
    sc.record_every = every;
    let ev = Evolver::new(phi, sc);
    let [d0, d1] = n.dynamics.d;
    let q0 = make_initial_data(d0, d1, s0, phi, sc.grid)?;
    let w0 = profile_field(phi, sc.grid, s0)?.axpy(1.0, &q0);
    let q = ev.evolve_field(q0, s_end)?.fields;
    let w = ev.evolve_w(w0, s_end, WBoundary::Profile)?.fields;
    Ok(Pair { q, w })
}

/// Linear interpolation in `s` between stored fields.
fn field_at(fields: &[WeightedField], s: f64, y: f64) -> f64 {
    let j = fields.partition_point(|f| f.s <= s).clamp(1, fields.len() - 1);
    let (a, b) = (&fields[j - 1], &fields[j]);
    let t = (s - a.s) / (b.s - a.s);
    a.at(y) * (1.0 - t) + b.at(y) * t
}

/// `sup |w - (varphi + q)|` on the coarse grid, and the two Richardson estimates.
fn q_w_gap(phi: &PhiSolution, cfg: &ExperimentConfig, s0: f64) -> anyhow::Result<[f64; 3]> {
    let dn = &cfg.numerics.dynamics;
    let k = cfg.numerics.k;
    let (c, f) = (q_and_w(phi, cfg, dn.dy_coarse, s0, 0.5)?, q_and_w(phi, cfg, dn.dy_fine, s0, 0.5)?);
    let (mut gap, mut dq, mut dw) = (0.0f64, 0.0f64, 0.0f64);
    for (i, (q, w)) in c.q.iter().zip(&c.w).enumerate() {
        let g = q.grid;
        let vp = profile_field(phi, g, q.s)?;
        // away from the Dirichlet layer at the grid ends
        let r = 2.0 * k * q.s.sqrt();
        for j in (0..g.len()).filter(|&j| g.y(j).abs() <= r) {
            let y = g.y(j);
            gap = gap.max((w.values[j] - vp.values[j] - q.values[j]).abs());
            dq = dq.max((q.values[j] - f.q[i].at(y)).abs());
            dw = dw.max((w.values[j] - f.w[i].at(y)).abs());
        }
    }
    Ok([gap, dq, dw])
}

fn physical(phi: &PhiSolution, cfg: &ExperimentConfig, fine: bool, stops: &[f64]) -> anyhow::Result<PhysicalRun> {
    let ph = &cfg.numerics.physical;
    let [d0, d1] = cfg.numerics.dynamics.d;
    let f = if fine { 0.5 } else { 1.0 };
    let grid = PhysGrid::new(ph.alpha, f * ph.dxi, ph.x_max);
    let t_blow = (-ph.s0).exp();
    let u0 = build_u0_from_theorem(d0, d1, t_blow, phi, &grid)?;
    let pc = PhysConfig { c_dt: f * ph.c_dt, t_max: *stops.last().unwrap(), ..Default::default() };
    let pr = *phi.params();
    Ok(evolve_physical_with_stops(u0, &grid, &pr, &PerturbationFamily::from_params(&pr), &pc, stops)?)
}

/// Physical run mapped to similarity variables at `s0 + 0.1 j`, against the
/// w-solver; returns the gap and the two discretization estimates.
fn round_trip(phi: &PhiSolution, cfg: &ExperimentConfig) -> anyhow::Result<[f64; 3]> {
    let ph = &cfg.numerics.physical;
    let dn = &cfg.numerics.dynamics;
    let s0 = ph.s0;
    let t_blow = (-s0).exp();
    let n = (dn.span / 0.1).round() as usize;
    let ss: Vec<f64> = (1..=n).map(|j| s0 + 0.1 * j as f64).collect();
    let stops: Vec<f64> = ss.iter().map(|s| -t_blow * (-(s - s0)).exp_m1()).collect();
    let (pc, pf) = (physical(phi, cfg, false, &stops)?, physical(phi, cfg, true, &stops)?);
    let (wc, wf) = (q_and_w(phi, cfg, dn.dy_coarse, s0, 0.01)?.w, q_and_w(phi, cfg, dn.dy_fine, s0, 0.01)?.w);
    let m = (dn.window / dn.dy_coarse).round() as i64;
    let ys: Vec<f64> = (-m..=m).map(|i| i as f64 * dn.dy_coarse).collect();
    let at_stop = |run: &PhysicalRun, t: f64| run.snapshots.iter().find(|sn| run.t[sn.k] == t).cloned();
    let (mut gap, mut dw, mut dp) = (0.0f64, 0.0f64, 0.0f64);
    for (&s, &t) in ss.iter().zip(&stops) {
        let (Some(a), Some(b)) = (at_stop(&pc, t), at_stop(&pf, t)) else {
            anyhow::bail!("physical run has no snapshot at stop t = {t}");
        };
        let (_, vc) = to_similarity(&pc, t_blow - pc.t[pc.t.len() - 1], &a, &ys);
        let (_, vf) = to_similarity(&pf, t_blow - pf.t[pf.t.len() - 1], &b, &ys);
        for (i, &y) in ys.iter().enumerate() {
            let w = field_at(&wc, s, y);
            gap = gap.max((vc[i] - w).abs());
            dw = dw.max((w - field_at(&wf, s, y)).abs());
            dp = dp.max((vc[i] - vf[i]).abs());
        }
    }
    Ok([gap, dw, dp])
}

/// Cross-solver consistency: q against w, and physical against similarity.
pub fn criterion_9(run: &mut Run<'_>) -> anyhow::Result<CriterionResult> {
    let cfg = run.cfg;
    let variants = cfg.variants(&cfg.experiment.dynamics_mu);
    let mut rows = Vec::new();
    let r = timed(|| {
        let mut c = CriterionResult::new(9, "cross_solver", 300.0);
        let n = &cfg.numerics;
        let s_lo = n.s0.min(n.physical.s0);
        let s_hi = n.s0.max(n.physical.s0) + n.dynamics.span + 1.0;
        for (vi, pr) in variants.iter().enumerate() {
            let t = tag(pr);
            let phi = phi_table(pr, n.phi_s_min.min(s_lo), s_hi)?;
            let [gap, dq, dw] = q_w_gap(&phi, cfg, n.s0)?;
            c.check(
                format!("{t}: |w - (varphi + q)| / (dq + dw)"),
                gap / (dq + dw),
                "<= 3",
                gap <= 3.0 * (dq + dw),
            );
            let [rgap, rdw, rdp] = round_trip(&phi, cfg)?;
            c.check(
                format!("{t}: round trip gap / (dw + dphys)"),
                rgap / (rdw + rdp),
                "<= 3",
                rgap <= 3.0 * (rdw + rdp),
            );
            rows.push(vec![vi as f64, pr.mu, gap, dq, dw, rgap, rdw, rdp]);
        }
        Ok(c)
    })?;
    for row in &rows {
        run.detail(format!("cross_solver_{}", tag(&variants[row[0] as usize])), &row[1..]);
    }
    let p = run.sink.table(
        "dynamics/cross_solver.csv",
        &["variant", "mu", "qw_gap", "disc_q", "disc_w", "round_trip_gap", "disc_w_rt", "disc_phys"],
        &rows,
    )?;
    run.keep(p);
    Ok(r)
}
