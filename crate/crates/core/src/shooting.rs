//! Finite-dimensional reduction: the exit map on the initial-data rectangle,
//! its winding number, and the quadrisection search for a non-exiting pair.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::selfsim::{make_initial_data, Evolver, SelfSimError, Termination};
use crate::shrinking_set::{Constraint, ShrinkingSetParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShootError {
    #[error(transparent)]
    SelfSim(#[from] SelfSimError),
    #[error("degenerate initial map: a0 = {a0:e}, a1 = {a1:e}")]
    Degenerate { a0: f64, a1: f64 },
    #[error("probe at ({d0:e}, {d1:e}) never left the set; winding undefined")]
    NoExit { d0: f64, d1: f64 },
    #[error("boundary undersampled near ({d0:e}, {d1:e}) after refinement")]
    Undersampled { d0: f64, d1: f64 },
    #[error("probe at ({d0:e}, {d1:e}) failed: {message}")]
    ProbeFailed { d0: f64, d1: f64, message: String },
    #[error("all four sub-rectangles have winding 0 at level {}", .0.level)]
    SearchFailure(Box<FailureDump>),
}

/// Axis-aligned rectangle in `(d0, d1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rect {
    pub d0: [f64; 2],
    pub d1: [f64; 2],
}

impl Rect {
    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.d0[0] + self.d0[1]), 0.5 * (self.d1[0] + self.d1[1]))
    }

    pub fn diameter(&self) -> f64 {
        (self.d0[1] - self.d0[0]).hypot(self.d1[1] - self.d1[0])
    }

    pub fn contains(&self, d0: f64, d1: f64) -> bool {
        (self.d0[0]..=self.d0[1]).contains(&d0) && (self.d1[0]..=self.d1[1]).contains(&d1)
    }
}

/// Outcome of evaluating the exit map at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeEval {
    pub d0: f64,
    pub d1: f64,
    pub s_exit: Option<f64>,
    pub constraint: Option<Constraint>,
    /// Normalized `(q0, q1)(s*)`, projected radially onto the unit square boundary.
    pub phi: Option<[f64; 2]>,
    pub anomalous: bool,
    /// Last time the trajectory was inside the set.
    pub in_set_until: f64,
}

impl ProbeEval {
    pub fn angle(&self) -> Option<f64> {
        self.phi.map(|[x, y]| y.atan2(x))
    }
}

/// `(s^{1+nu}/A)(q0, q1)` pushed radially onto the boundary of `[-1, 1]^2`.
pub fn normalize_exit(q: [f64; 2], s: f64, ssp: &ShrinkingSetParams) -> [f64; 2] {
    let sc = s.powf(1.0 + ssp.nu) / ssp.a;
    let v = [q[0] * sc, q[1] * sc];
    let m = v[0].abs().max(v[1].abs());
    if m > 0.0 {
        [v[0] / m, v[1] / m]
    } else {
        v
    }
}

/// Anything that maps initial parameters to an exit point.
pub trait ExitMap: Sync {
    fn s0(&self) -> f64;
    fn horizon(&self) -> f64;
    fn evaluate(&self, d0: f64, d1: f64) -> Result<ProbeEval, ShootError>;
}

/// The q-equation itself.
pub struct RealExitMap<'a> {
    pub evolver: Evolver<'a>,
    pub s0: f64,
    pub s_end: f64,
}

impl<'a> RealExitMap<'a> {
    /// Shares coefficient levels across probes; `stop_on_exit` is forced on.
    pub fn new(mut evolver: Evolver<'a>, s0: f64, s_end: f64) -> Self {
        evolver.cfg.stop_on_exit = true;
        evolver.cfg.store_fields = false;
        evolver.share_levels(s0, s_end);
        Self { evolver, s0, s_end }
    }
}

impl ExitMap for RealExitMap<'_> {
    fn s0(&self) -> f64 {
        self.s0
    }

    fn horizon(&self) -> f64 {
        self.s_end
    }

    fn evaluate(&self, d0: f64, d1: f64) -> Result<ProbeEval, ShootError> {
        let rec = self.evolver.evolve(d0, d1, self.s0, self.s_end)?;
        if let Termination::SolverFailure { message, .. } = &rec.termination {
            return Err(ShootError::ProbeFailed { d0, d1, message: message.clone() });
        }
        Ok(match rec.exit {
            Some(e) => ProbeEval {
                d0,
                d1,
                s_exit: Some(e.s),
                constraint: Some(e.constraint),
                phi: Some(normalize_exit([e.modes[0], e.modes[1]], e.s, &self.evolver.cfg.ssp)),
                anomalous: e.anomalous,
                in_set_until: rec.s_in_set,
            },
            None => ProbeEval { d0, d1, s_exit: None, constraint: None, phi: None, anomalous: false, in_set_until: rec.s_last },
        })
    }
}

/// `q0' = q0`, `q1' = q1/2` exactly, from `(q0, q1)(s0) = (a0 d0 + b0, a1 d1 + b1)`.
#[derive(Debug, Clone, Copy)]
pub struct LinearDouble {
    pub s0: f64,
    pub ssp: ShrinkingSetParams,
    pub a0: f64,
    pub b0: f64,
    pub a1: f64,
    pub b1: f64,
    pub s_end: f64,
}

impl LinearDouble {
    pub fn zero(&self) -> (f64, f64) {
        (-self.b0 / self.a0, -self.b1 / self.a1)
    }

    pub fn rectangle(&self) -> Rect {
        let b = self.ssp.bounds(self.s0)[0];
        let side = |a: f64, c: f64| {
            let (x, y) = ((-b - c) / a, (b - c) / a);
            [x.min(y), x.max(y)]
        };
        Rect { d0: side(self.a0, self.b0), d1: side(self.a1, self.b1) }
    }

    /// First `s >= s0` with `|q e^{lam (s - s0)}| = A/s^{1+nu}`.
    fn crossing(&self, q: f64, lam: f64) -> Option<f64> {
        if q == 0.0 {
            return None;
        }
        let g = |s: f64| q.abs().ln() + lam * (s - self.s0) + (1.0 + self.ssp.nu) * s.ln() - self.ssp.a.ln();
        if g(self.s0) >= 0.0 {
            return Some(self.s0);
        }
        let mut s = self.s0;
        for _ in 0..100 {
            let ds = -g(s) / (lam + (1.0 + self.ssp.nu) / s);
            s += ds;
            if ds.abs() < 1e-15 * s {
                break;
            }
        }
        Some(s)
    }
}

impl ExitMap for LinearDouble {
    fn s0(&self) -> f64 {
        self.s0
    }

    fn horizon(&self) -> f64 {
        self.s_end
    }

    fn evaluate(&self, d0: f64, d1: f64) -> Result<ProbeEval, ShootError> {
        let q = [self.a0 * d0 + self.b0, self.a1 * d1 + self.b1];
        let lam = [1.0, 0.5];
        let t = [self.crossing(q[0], lam[0]), self.crossing(q[1], lam[1])];
        let (m, s) = match t {
            [Some(x), Some(y)] => if x <= y { (0, x) } else { (1, y) },
            [Some(x), None] => (0, x),
            [None, Some(y)] => (1, y),
            [None, None] => (0, f64::INFINITY),
        };
        if !s.is_finite() || s > self.s_end {
            return Ok(ProbeEval { d0, d1, s_exit: None, constraint: None, phi: None, anomalous: false, in_set_until: self.s_end });
        }
        let qs = [q[0] * (s - self.s0).exp(), q[1] * (0.5 * (s - self.s0)).exp()];
        Ok(ProbeEval {
            d0,
            d1,
            s_exit: Some(s),
            constraint: Some(Constraint::ALL[m]),
            phi: Some(normalize_exit(qs, s, &self.ssp)),
            anomalous: false,
            in_set_until: s,
        })
    }
}

/// `D_{s0}` and the affine coefficients behind it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InitialRectangle {
    pub rect: Rect,
    pub a0: f64,
    pub b0: f64,
    pub a1: f64,
    pub b1: f64,
    /// `dq0/dd1` and `dq1/dd0`, zero by parity.
    pub cross: [f64; 2],
    pub bound: f64,
}

/// Preimage of `[-A/s0^{1+nu}, A/s0^{1+nu}]^2` under `(d0, d1) -> (q0, q1)(s0)`.
pub fn initial_rectangle(ev: &Evolver<'_>, s0: f64) -> Result<InitialRectangle, ShootError> {
    let grid = ev.cfg.grid;
    let modes = |d0: f64, d1: f64| -> Result<[f64; 3], ShootError> {
        let q = make_initial_data(d0, d1, s0, ev.phi, grid).map_err(SelfSimError::from)?;
        Ok(ev.projector().modes(&q.values, s0, ev.cfg.k))
    };
    let base = modes(0.0, 0.0)?;
    let e0 = modes(1.0, 0.0)?;
    let e1 = modes(0.0, 1.0)?;
    let (a0, b0) = (e0[0] - base[0], base[0]);
    let (a1, b1) = (e1[1] - base[1], base[1]);
    let cross = [e1[0] - base[0], e0[1] - base[1]];
    if !(a0 * a1).is_finite() || (a0 * a1).abs() < 1e-14 {
        return Err(ShootError::Degenerate { a0, a1 });
    }
    let bound = ev.cfg.ssp.bounds(s0)[0];
    let side = |a: f64, c: f64| {
        let (x, y) = ((-bound - c) / a, (bound - c) / a);
        [x.min(y), x.max(y)]
    };
    Ok(InitialRectangle { rect: Rect { d0: side(a0, b0), d1: side(a1, b1) }, a0, b0, a1, b1, cross, bound })
}

pub fn map_phi(map: &dyn ExitMap, d0: f64, d1: f64) -> Result<ProbeEval, ShootError> {
    map.evaluate(d0, d1)
}

const LATTICE_BITS: u32 = 48;
const LATTICE: u64 = 1 << LATTICE_BITS;

/// Rectangle in lattice units of the root rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
struct LRect {
    i: [u64; 2],
    j: [u64; 2],
}

impl LRect {
    fn quadrants(&self) -> [LRect; 4] {
        let mi = (self.i[0] + self.i[1]) / 2;
        let mj = (self.j[0] + self.j[1]) / 2;
        [
            LRect { i: [self.i[0], mi], j: [self.j[0], mj] },
            LRect { i: [mi, self.i[1]], j: [self.j[0], mj] },
            LRect { i: [mi, self.i[1]], j: [mj, self.j[1]] },
            LRect { i: [self.i[0], mi], j: [mj, self.j[1]] },
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindingResult {
    pub winding: i32,
    pub samples: usize,
    pub refinements: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ShootConfig {
    pub samples_per_edge: u64,
    pub max_refine: usize,
    /// Stop once the rectangle diameter falls below this; default `1e-8/s0`.
    pub tol_d: Option<f64>,
    pub max_levels: usize,
}

impl Default for ShootConfig {
    fn default() -> Self {
        Self { samples_per_edge: 8, max_refine: 64, tol_d: None, max_levels: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelRecord {
    pub level: usize,
    pub rect: Rect,
    pub winding: i32,
    /// In-set horizon reached from the rectangle center.
    pub center_horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ShootTermination {
    Converged,
    HorizonReached,
    LevelLimit,
}

#[derive(Debug, Clone, Serialize)]
pub struct ShootingResult {
    pub d: (f64, f64),
    pub root: Rect,
    pub root_winding: i32,
    pub history: Vec<LevelRecord>,
    pub best_horizon: f64,
    pub termination: ShootTermination,
    pub probes: Vec<ProbeEval>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailureDump {
    pub level: usize,
    pub parent: Rect,
    pub children: Vec<(Rect, i32)>,
    pub probes: Vec<ProbeEval>,
}

/// Probe cache over a lattice on a root rectangle.
pub struct Shooter<'m> {
    map: &'m dyn ExitMap,
    root: Rect,
    /// keyed by the bit patterns of `(d0, d1)`
    cache: Mutex<HashMap<(u64, u64), ProbeEval>>,
}

impl<'m> Shooter<'m> {
    pub fn new(map: &'m dyn ExitMap, root: Rect) -> Self {
        Self { map, root, cache: Mutex::new(HashMap::new()) }
    }

    fn coords(&self, (i, j): (u64, u64)) -> (f64, f64) {
        let f = |lim: [f64; 2], k: u64| {
            if k == LATTICE {
                lim[1]
            } else {
                lim[0] + (lim[1] - lim[0]) * (k as f64 / LATTICE as f64)
            }
        };
        (f(self.root.d0, i), f(self.root.d1, j))
    }

    fn rect(&self, r: &LRect) -> Rect {
        let (a, b) = self.coords((r.i[0], r.j[0]));
        let (c, d) = self.coords((r.i[1], r.j[1]));
        Rect { d0: [a, c], d1: [b, d] }
    }

    fn eval_batch(&self, pts: &[(f64, f64)]) -> Result<Vec<ProbeEval>, ShootError> {
        let key = |p: &(f64, f64)| (p.0.to_bits(), p.1.to_bits());
        let missing: Vec<(f64, f64)> = {
            let c = self.cache.lock().unwrap();
            let mut m: Vec<_> = pts.iter().copied().filter(|p| !c.contains_key(&key(p))).collect();
            m.sort_unstable_by_key(key);
            m.dedup_by_key(|p| key(p));
            m
        };
        let fresh: Result<Vec<_>, ShootError> = missing.par_iter().map(|p| self.map.evaluate(p.0, p.1).map(|e| (key(p), e))).collect();
        let mut c = self.cache.lock().unwrap();
        c.extend(fresh?);
        Ok(pts.iter().map(|p| c[&key(p)]).collect())
    }

    fn eval_point(&self, p: (u64, u64)) -> Result<ProbeEval, ShootError> {
        Ok(self.eval_batch(&[self.coords(p)])?[0])
    }

    /// All evaluated probes in a stable order.
    pub fn probes(&self) -> Vec<ProbeEval> {
        let c = self.cache.lock().unwrap();
        let mut v: Vec<_> = c.iter().map(|(k, e)| (*k, *e)).collect();
        v.sort_by_key(|(k, _)| *k);
        v.into_iter().map(|(_, e)| e).collect()
    }

    fn winding_l(&self, r: &LRect, n: u64, max_refine: usize) -> Result<WindingResult, ShootError> {
        let (wi, wj) = (r.i[1] - r.i[0], r.j[1] - r.j[0]);
        let n = n.max(1);
        let corners = [(r.i[0], r.j[0]), (r.i[1], r.j[0]), (r.i[1], r.j[1]), (r.i[0], r.j[1])];
        let mut loop_pts = Vec::new();
        for e in 0..4 {
            let (a, b) = (corners[e], corners[(e + 1) % 4]);
            let len = if e % 2 == 0 { wi } else { wj };
            let m = n.min(len.max(1));
            for k in 0..m {
                let t = |x: u64, y: u64| -> u64 { (x as i128 + (y as i128 - x as i128) * k as i128 / m as i128) as u64 };
                loop_pts.push(self.coords((t(a.0, b.0), t(a.1, b.1))));
            }
        }
        let mut refinements = 0;
        loop {
            let evals = self.eval_batch(&loop_pts)?;
            let mut angles = Vec::with_capacity(evals.len());
            for e in &evals {
                match e.angle() {
                    Some(a) => angles.push(a),
                    None => return Err(ShootError::NoExit { d0: e.d0, d1: e.d1 }),
                }
            }
            let n_pts = loop_pts.len();
            let jumps: Vec<usize> = (0..n_pts).filter(|&k| wrap(angles[(k + 1) % n_pts] - angles[k]).abs() > 0.5 * PI).collect();
            if jumps.is_empty() {
                let total: f64 = (0..n_pts).map(|k| wrap(angles[(k + 1) % n_pts] - angles[k])).sum();
                return Ok(WindingResult { winding: (total / (2.0 * PI)).round() as i32, samples: n_pts, refinements });
            }
            let mut inserted = false;
            let mut next = Vec::with_capacity(n_pts + jumps.len());
            let mut jumps_it = jumps.iter().peekable();
            for k in 0..n_pts {
                next.push(loop_pts[k]);
                if jumps_it.peek() == Some(&&k) {
                    jumps_it.next();
                    let (a, b) = (loop_pts[k], loop_pts[(k + 1) % n_pts]);
                    // off-lattice: the rotation near a zero can be finer than the lattice
                    let mid = (a.0 + 0.5 * (b.0 - a.0), a.1 + 0.5 * (b.1 - a.1));
                    if mid != a && mid != b {
                        next.push(mid);
                        inserted = true;
                    }
                }
            }
            refinements += 1;
            if !inserted || refinements > max_refine {
                let e = evals[jumps[0]];
                return Err(ShootError::Undersampled { d0: e.d0, d1: e.d1 });
            }
            loop_pts = next;
        }
    }

    /// Winding of the exit map around the origin along the root boundary.
    pub fn root_winding(&self, n: u64, max_refine: usize) -> Result<WindingResult, ShootError> {
        self.winding_l(&LRect { i: [0, LATTICE], j: [0, LATTICE] }, n, max_refine)
    }

    fn no_exit_probe(&self) -> Option<ProbeEval> {
        let c = self.cache.lock().unwrap();
        let mut v: Vec<_> = c.iter().filter(|(_, e)| e.s_exit.is_none()).map(|(k, e)| (*k, *e)).collect();
        v.sort_by_key(|(k, _)| *k);
        v.first().map(|(_, e)| *e)
    }

    fn best_probe(&self) -> Option<ProbeEval> {
        self.probes().into_iter().max_by(|a, b| a.in_set_until.total_cmp(&b.in_set_until))
    }

    pub fn shoot(&self, cfg: &ShootConfig) -> Result<ShootingResult, ShootError> {
        let tol_d = cfg.tol_d.unwrap_or(1e-8 / self.map.s0());
        let mut cur = LRect { i: [0, LATTICE], j: [0, LATTICE] };
        let root_w = self.winding_l(&cur, cfg.samples_per_edge, cfg.max_refine);
        let root_winding = match root_w {
            Ok(w) => w.winding,
            Err(ShootError::NoExit { .. }) => return Ok(self.finish(ShootTermination::HorizonReached, 0, Vec::new(), None)),
            Err(e) => return Err(e),
        };
        let mut history = Vec::new();
        let horizon_of = |e: &ProbeEval| e.in_set_until;
        let c = self.eval_point(center(&cur))?;
        history.push(LevelRecord { level: 0, rect: self.rect(&cur), winding: root_winding, center_horizon: horizon_of(&c) });
        if c.s_exit.is_none() {
            return Ok(self.finish(ShootTermination::HorizonReached, root_winding, history, Some(c)));
        }
        for level in 1..=cfg.max_levels {
            if self.rect(&cur).diameter() < tol_d || cur.i[1] - cur.i[0] < 2 || cur.j[1] - cur.j[0] < 2 {
                return Ok(self.finish(ShootTermination::Converged, root_winding, history, None));
            }
            let kids = cur.quadrants();
            let mut wind = Vec::with_capacity(4);
            for k in &kids {
                match self.winding_l(k, cfg.samples_per_edge, cfg.max_refine) {
                    Ok(w) => wind.push(w.winding),
                    Err(ShootError::NoExit { .. }) => {
                        let p = self.no_exit_probe();
                        return Ok(self.finish(ShootTermination::HorizonReached, root_winding, history, p));
                    }
                    Err(e) => return Err(e),
                }
            }
            let mut cands = Vec::new();
            for (k, w) in kids.iter().zip(&wind) {
                if *w != 0 {
                    let c = self.eval_point(center(k))?;
                    cands.push((*k, *w, c));
                }
            }
            if cands.is_empty() {
                return Err(ShootError::SearchFailure(Box::new(FailureDump {
                    level,
                    parent: self.rect(&cur),
                    children: kids.iter().zip(&wind).map(|(k, w)| (self.rect(k), *w)).collect(),
                    probes: self.probes(),
                })));
            }
            // ties: longest in-set horizon from the child center
            let (k, w, c) = cands.into_iter().max_by(|a, b| horizon_of(&a.2).total_cmp(&horizon_of(&b.2))).unwrap();
            cur = k;
            history.push(LevelRecord { level, rect: self.rect(&cur), winding: w, center_horizon: horizon_of(&c) });
            if c.s_exit.is_none() {
                return Ok(self.finish(ShootTermination::HorizonReached, root_winding, history, Some(c)));
            }
        }
        Ok(self.finish(ShootTermination::LevelLimit, root_winding, history, None))
    }

    fn finish(&self, termination: ShootTermination, root_winding: i32, history: Vec<LevelRecord>, pick: Option<ProbeEval>) -> ShootingResult {
        let best = pick.or_else(|| self.best_probe());
        let d = match (&termination, history.last(), best) {
            (ShootTermination::HorizonReached, _, Some(b)) => (b.d0, b.d1),
            (_, Some(h), _) => h.rect.center(),
            (_, None, Some(b)) => (b.d0, b.d1),
            _ => self.root.center(),
        };
        ShootingResult {
            d,
            root: self.root,
            root_winding,
            history,
            best_horizon: best.map_or(self.map.s0(), |b| b.in_set_until),
            termination,
            probes: self.probes(),
        }
    }
}

fn center(r: &LRect) -> (u64, u64) {
    ((r.i[0] + r.i[1]) / 2, (r.j[0] + r.j[1]) / 2)
}

fn wrap(x: f64) -> f64 {
    let mut y = x % (2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    } else if y <= -PI {
        y += 2.0 * PI;
    }
    y
}

/// Winding of the exit map along the boundary of `rect`.
pub fn winding_number(map: &dyn ExitMap, rect: Rect, samples_per_edge: u64) -> Result<WindingResult, ShootError> {
    Shooter::new(map, rect).root_winding(samples_per_edge, ShootConfig::default().max_refine)
}

/// Quadrisection search on `root`.
pub fn shoot(map: &dyn ExitMap, root: Rect, cfg: &ShootConfig) -> Result<ShootingResult, ShootError> {
    Shooter::new(map, root).shoot(cfg)
}

#[derive(Debug, Serialize)]
struct ProbeRow {
    d0: f64,
    d1: f64,
    s_exit: Option<f64>,
    exit_constraint: &'static str,
    phi_x: Option<f64>,
    phi_y: Option<f64>,
}

pub fn write_probes_csv<W: Write>(out: W, probes: &[ProbeEval]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in probes {
        w.serialize(ProbeRow {
            d0: p.d0,
            d1: p.d1,
            s_exit: p.s_exit,
            exit_constraint: p.constraint.map_or("none", |c| c.name()),
            phi_x: p.phi.map(|v| v[0]),
            phi_y: p.phi.map(|v| v[1]),
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ProblemParams;

    /// D shifted so the zero sits off every dyadic lattice line.
    fn shifted(m: &LinearDouble) -> Rect {
        let r = m.rectangle();
        let (w0, w1) = (r.d0[1] - r.d0[0], r.d1[1] - r.d1[0]);
        Rect { d0: [r.d0[0] + 0.3137 * w0, r.d0[1] + 0.3137 * w0], d1: [r.d1[0] - 0.2211 * w1, r.d1[1] - 0.2211 * w1] }
    }

    fn double() -> LinearDouble {
        let pr = ProblemParams::unperturbed(3.0);
        let ssp = ShrinkingSetParams::new(20.0, &pr, 5.0);
        LinearDouble { s0: 20.0, ssp, a0: 0.9, b0: 3e-4, a1: 0.2, b1: -1e-4, s_end: f64::INFINITY }
    }

    #[test]
    fn double_boundary_exits_immediately() {
        let m = double();
        let r = m.rectangle();
        let e = m.evaluate(r.d0[1], r.center().1).unwrap();
        assert_eq!(e.s_exit, Some(20.0));
        assert!((e.phi.unwrap()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn double_winding() {
        let m = double();
        let r = m.rectangle();
        assert_eq!(winding_number(&m, r, 8).unwrap().winding.abs(), 1);
        let (z0, z1) = m.zero();
        let off = Rect { d0: [z0 + 1e-4, z0 + 2e-4], d1: [z1 - 1e-4, z1 + 1e-4] };
        assert_eq!(winding_number(&m, off, 8).unwrap().winding, 0);
        let inner = Rect { d0: [z0 - 1e-5, z0 + 3e-5], d1: [z1 - 2e-5, z1 + 1e-5] };
        assert_eq!(winding_number(&m, inner, 8).unwrap().winding.abs(), 1);
    }

    #[test]
    fn winding_is_additive() {
        let m = double();
        let sh = Shooter::new(&m, shifted(&m));
        let root = LRect { i: [0, LATTICE], j: [0, LATTICE] };
        let parent = sh.winding_l(&root, 8, 64).unwrap().winding;
        let kids: i32 = root.quadrants().iter().map(|k| sh.winding_l(k, 8, 64).unwrap().winding).sum();
        assert_eq!(parent, kids);
    }

    #[test]
    fn double_shoot_finds_zero() {
        let m = double();
        let d = shifted(&m);
        let res = shoot(&m, d, &ShootConfig::default()).unwrap();
        assert_eq!(res.root_winding.abs(), 1);
        assert_eq!(res.termination, ShootTermination::Converged);
        assert!(res.history.iter().all(|h| h.winding.abs() == 1));
        assert!(res.history.windows(2).all(|w| w[0].rect.contains(w[1].rect.d0[0], w[1].rect.d1[0]) && w[1].rect.diameter() < w[0].rect.diameter()));
        let (z0, z1) = m.zero();
        let err = (res.d.0 - z0).hypot(res.d.1 - z1);
        assert!(err <= 1e-8 * d.diameter(), "{err:e}");
    }

    #[test]
    fn exact_zero_never_exits() {
        let m = double();
        let (z0, z1) = (-m.b0 / m.a0, -m.b1 / m.a1);
        let e = m.evaluate(z0, z1).unwrap();
        assert!(e.s_exit.is_none() && e.phi.is_none());
    }

    #[test]
    fn probes_csv() {
        let m = double();
        let r = m.rectangle();
        let e = m.evaluate(r.d0[0], r.d1[0]).unwrap();
        let mut buf = Vec::new();
        write_probes_csv(&mut buf, &[e]).unwrap();
        let t = String::from_utf8(buf).unwrap();
        assert!(t.starts_with("d0,d1,s_exit,exit_constraint,phi_x,phi_y\n"));
    }
}
