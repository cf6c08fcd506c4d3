use blowup_core::fit::loglog_slope;
use blowup_core::selfsim::{Evolver, SolverConfig, Termination, TrajectoryRecord};
use blowup_core::shooting::{
    initial_rectangle, shoot, write_probes_csv, LinearDouble, Rect, RealExitMap, ShootConfig, ShootTermination, ShootingResult,
};
use blowup_core::shrinking_set::ShrinkingSetParams;
use blowup_core::{PhiSolution, ProblemParams};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{phi_table, tag, timed, Run};
use crate::config::ExperimentConfig;
use crate::report::CriterionResult;

/// What one shooting run produced, minus the probe cloud.
#[derive(Debug, Clone, Serialize)]
pub struct ShootSummary {
    pub d: (f64, f64),
    pub root: Rect,
    pub root_winding: i32,
    pub levels: usize,
    pub windings: Vec<i32>,
    pub best_horizon: f64,
    pub termination: ShootTermination,
    pub probes: usize,
}

impl From<&ShootingResult> for ShootSummary {
    fn from(r: &ShootingResult) -> Self {
        Self {
            d: r.d,
            root: r.root,
            root_winding: r.root_winding,
            levels: r.history.len(),
            windings: r.history.iter().map(|h| h.winding).collect(),
            best_horizon: r.best_horizon,
            termination: r.termination.clone(),
            probes: r.probes.len(),
        }
    }
}

pub(crate) fn shoot_config(cfg: &ExperimentConfig) -> ShootConfig {
    let s = &cfg.numerics.shoot;
    ShootConfig { samples_per_edge: s.samples_per_edge, max_refine: s.max_refine, tol_d: None, max_levels: s.max_levels }
}

fn solver(phi: &PhiSolution, cfg: &ExperimentConfig, s_end: f64) -> SolverConfig {
    let n = &cfg.numerics;
    let ssp = ShrinkingSetParams::new(n.a_shrink, phi.params(), n.k);
    SolverConfig::new(ssp, s_end, n.dy).imex(n.dt)
}

/// Shoots from `s0` with exit horizon `s_locate` and re-runs the located data
/// to `s0 + horizon` without stopping at exit.
pub(crate) fn shoot_real(
    phi: &PhiSolution,
    cfg: &ExperimentConfig,
    s0: f64,
    s_locate: f64,
) -> anyhow::Result<(ShootingResult, TrajectoryRecord)> {
    let s_end = s0 + cfg.numerics.horizon;
    let ev = Evolver::new(phi, solver(phi, cfg, s_locate));
    let ir = initial_rectangle(&ev, s0)?;
    let map = RealExitMap::new(ev, s0, s_locate);
    let res = shoot(&map, ir.rect, &shoot_config(cfg))?;
    let mut sc = solver(phi, cfg, s_end);
    sc.stop_on_exit = false;
    let traj = Evolver::new(phi, sc).evolve(res.d.0, res.d.1, s0, s_end)?;
    Ok((res, traj))
}

/// The linear double with its zero moved off the dyadic lattice by a seeded jitter.
fn linear_double(pr: &ProblemParams, cfg: &ExperimentConfig) -> (LinearDouble, Rect) {
    let n = &cfg.numerics;
    let ssp = ShrinkingSetParams::new(n.a_shrink, pr, n.k);
    let m = LinearDouble { s0: n.s0, ssp, a0: 0.9, b0: 3e-4, a1: 0.2, b1: -1e-4, s_end: f64::INFINITY };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut u = || 0.05 + 0.4 * (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    let r = m.rectangle();
    let (w0, w1) = (r.d0[1] - r.d0[0], r.d1[1] - r.d1[0]);
    let (j0, j1) = (u(), -u());
    let shifted = Rect { d0: [r.d0[0] + j0 * w0, r.d0[1] + j0 * w0], d1: [r.d1[0] + j1 * w1, r.d1[1] + j1 * w1] };
    (m, shifted)
}

/// Shooting on the linear double and on the real system for each `mu` variant.
pub fn criterion_7(run: &mut Run<'_>) -> anyhow::Result<CriterionResult> {
    let cfg = run.cfg;
    let pr0 = run.params()?;
    let variants = cfg.variants(&cfg.experiment.shoot_mu);
    let (s0, s_end) = (cfg.numerics.s0, cfg.numerics.s0 + cfg.numerics.horizon);
    let mut out = Vec::new();
    let r = timed(|| {
        let mut c = CriterionResult::new(7, "shooting", 1200.0);
        let (m, d) = linear_double(&pr0, cfg);
        let res = shoot(&m, d, &shoot_config(cfg))?;
        let (z0, z1) = m.zero();
        let err = (res.d.0 - z0).hypot(res.d.1 - z1) / d.diameter();
        c.at_most("double: |d - zero| / diam(D)", err, 1e-8);
        let ok = res.root_winding.abs() == 1 && res.history.iter().all(|h| h.winding.abs() == 1);
        c.check("double: every accepted rectangle has winding +-1", ok as u8 as f64, "== 1", ok);
        c.check(
            "double: converged",
            (res.termination == ShootTermination::Converged) as u8 as f64,
            "== 1",
            res.termination == ShootTermination::Converged,
        );

        for pr in &variants {
            let t = tag(pr);
            let s_locate = s_end + cfg.numerics.shoot.locate_extra;
            let phi = phi_table(pr, cfg.numerics.phi_s_min.min(s0), s_locate + 5.0)?;
            let (res, traj) = shoot_real(&phi, cfg, s0, s_locate)?;
            c.check(format!("{t}: winding of the boundary of D"), res.root_winding as f64, "== +-1", res.root_winding.abs() == 1);
            let full = traj.termination == Termination::Horizon && traj.s_in_set >= s_end - 1e-9;
            c.check(format!("{t}: last s in V_A"), traj.s_in_set, format!(">= {s_end}"), full);
            // second half of the horizon: the outer part first relaxes from the
            // initial data before it decays
            let s_fit = s0 + 0.5 * cfg.numerics.horizon;
            let (ss, qs): (Vec<f64>, Vec<f64>) =
                traj.samples.iter().filter(|x| x.s >= s_fit - 1e-9).map(|x| (x.s, x.norms.q_sup)).unzip();
            let rate = loglog_slope(&ss, &qs).map_or(f64::NAN, |f| -f.slope);
            c.at_least(format!("{t}: decay exponent of |q|_inf on [s0+h/2, s0+h]"), rate, pr.varrho - 0.3);
            out.push((t, res, traj));
        }
        Ok(c)
    })?;
    for (t, res, traj) in &out {
        let p = run.sink.csv(&format!("shoot/probes_{t}.csv"), |w| Ok(write_probes_csv(w, &res.probes)?))?;
        run.keep(p);
        let p = run.sink.csv(&format!("shoot/trajectory_{t}.csv"), |w| Ok(traj.write_csv(w)?))?;
        run.keep(p);
        run.detail(format!("shoot_{t}"), ShootSummary::from(res));
    }
    Ok(r)
}
