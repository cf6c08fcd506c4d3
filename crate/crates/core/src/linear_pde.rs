//! Method of lines for `u_s = L u + F(s, u)` with
//! `L = d^2/dy^2 - (y/2) d/dy + 1`, centered differences and Dirichlet ends.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error("non-finite value at s = {s}, y = {y}")]
    NonFinite { s: f64, y: f64 },
    #[error("time step {dt} exceeds the explicit stability limit {limit}")]
    Cfl { dt: f64, limit: f64 },
    #[error("coefficient evaluation failed at s = {s}: {msg}")]
    Source { s: f64, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Classical RK4 on the full semi-discrete system.
    #[default]
    Rk4,
    /// Crank–Nicolson for `L`, Heun for the remaining terms.
    Imex,
}

/// Largest explicit step allowed: `0.4 dy^2`.
pub fn rk4_dt_limit(grid: &Grid) -> f64 {
    0.4 * grid.dy() * grid.dy()
}

/// Tridiagonal rows `lo u_{i-1} + di u_i + up u_{i+1}` of the discrete `L`.
#[derive(Debug, Clone)]
pub struct OuOperator {
    grid: Grid,
    lo: Vec<f64>,
    di: f64,
    up: Vec<f64>,
}

impl OuOperator {
    pub fn new(grid: Grid) -> Self {
        let h = grid.dy();
        let (lo, up) = grid.nodes().map(|y| (1.0 / (h * h) + y / (4.0 * h), 1.0 / (h * h) - y / (4.0 * h))).unzip();
        Self { grid, lo, di: 1.0 - 2.0 / (h * h), up }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `out = L u` on interior nodes, 0 on the ends.
    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        let n = u.len();
        out[0] = 0.0;
        out[n - 1] = 0.0;
        for i in 1..n - 1 {
            out[i] = self.lo[i] * u[i - 1] + self.di * u[i] + self.up[i] * u[i + 1];
        }
    }
}

/// Factorized `I - theta dt L` on interior nodes (Thomas algorithm).
#[derive(Debug, Clone)]
struct ImplicitSolve {
    theta_dt: f64,
    /// modified super-diagonal and inverse pivots
    cp: Vec<f64>,
    inv: Vec<f64>,
}

impl ImplicitSolve {
    fn new(op: &OuOperator, theta_dt: f64) -> Self {
        let n = op.lo.len();
        let mut cp = vec![0.0; n];
        let mut inv = vec![0.0; n];
        let mut prev_cp = 0.0;
        for i in 1..n - 1 {
            let a = -theta_dt * op.lo[i];
            let b = 1.0 - theta_dt * op.di;
            let c = -theta_dt * op.up[i];
            let piv = if i == 1 { b } else { b - a * prev_cp };
            inv[i] = 1.0 / piv;
            cp[i] = c / piv;
            prev_cp = cp[i];
        }
        Self { theta_dt, cp, inv }
    }

    /// Solves in place; `r` holds the right-hand side on interior nodes and the
    /// new boundary values at both ends.
    fn solve(&self, op: &OuOperator, r: &mut [f64]) {
        let n = r.len();
        let td = self.theta_dt;
        r[1] += td * op.lo[1] * r[0];
        r[n - 2] += td * op.up[n - 2] * r[n - 1];
        let mut prev = 0.0;
        for i in 1..n - 1 {
            let a = -td * op.lo[i];
            let v = if i == 1 { r[i] } else { r[i] - a * prev };
            r[i] = v * self.inv[i];
            prev = r[i];
        }
        for i in (1..n - 2).rev() {
            r[i] -= self.cp[i] * r[i + 1];
        }
    }
}

/// Reusable stepper with scratch buffers.
#[derive(Debug, Clone)]
pub struct MolStepper {
    op: OuOperator,
    scheme: Scheme,
    dt: f64,
    implicit: Option<ImplicitSolve>,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
    lu: Vec<f64>,
}

impl MolStepper {
    pub fn new(grid: Grid, scheme: Scheme, dt: f64) -> Result<Self, StepError> {
        if scheme == Scheme::Rk4 && dt > rk4_dt_limit(&grid) * (1.0 + 1e-12) {
            return Err(StepError::Cfl { dt, limit: rk4_dt_limit(&grid) });
        }
        let op = OuOperator::new(grid);
        let implicit = (scheme == Scheme::Imex).then(|| ImplicitSolve::new(&op, 0.5 * dt));
        let n = grid.len();
        Ok(Self {
            op,
            scheme,
            dt,
            implicit,
            k: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            tmp: vec![0.0; n],
            lu: vec![0.0; n],
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn grid(&self) -> &Grid {
        self.op.grid()
    }

    /// Advances `u` from `s` to `s + dt`. `forcing(s, u, out)` writes `F(s, u)`
    /// on every node; `bc(s)` gives the Dirichlet values at both ends.
    pub fn step<F, B>(&mut self, u: &mut [f64], s: f64, mut forcing: F, bc: B) -> Result<(), StepError>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), StepError>,
        B: Fn(f64) -> (f64, f64),
    {
        let n = u.len();
        let dt = self.dt;
        match self.scheme {
            Scheme::Rk4 => {
                let stages = [0.0, 0.5, 0.5, 1.0];
                for st in 0..4 {
                    let ss = s + stages[st] * dt;
                    if st == 0 {
                        self.tmp.copy_from_slice(u);
                    } else {
                        let (prev, c) = (&self.k[st - 1], stages[st] * dt);
                        for i in 0..n {
                            self.tmp[i] = u[i] + c * prev[i];
                        }
                        let (l, r) = bc(ss);
                        self.tmp[0] = l;
                        self.tmp[n - 1] = r;
                    }
                    let mut out = std::mem::take(&mut self.k[st]);
                    forcing(ss, &self.tmp, &mut out)?;
                    self.op.apply(&self.tmp, &mut self.lu);
                    for i in 1..n - 1 {
                        out[i] += self.lu[i];
                    }
                    out[0] = 0.0;
                    out[n - 1] = 0.0;
                    self.k[st] = out;
                }
                for i in 1..n - 1 {
                    u[i] += dt / 6.0 * (self.k[0][i] + 2.0 * self.k[1][i] + 2.0 * self.k[2][i] + self.k[3][i]);
                }
            }
            Scheme::Imex => {
                let imp = self.implicit.as_ref().expect("imex factorization");
                let s1 = s + dt;
                let (l1, r1) = bc(s1);
                // explicit half of CN
                self.op.apply(u, &mut self.lu);
                let mut f0 = std::mem::take(&mut self.k[0]);
                forcing(s, u, &mut f0)?;
                for i in 1..n - 1 {
                    self.k[1][i] = u[i] + 0.5 * dt * self.lu[i];
                    self.tmp[i] = self.k[1][i] + dt * f0[i];
                }
                self.tmp[0] = l1;
                self.tmp[n - 1] = r1;
                imp.solve(&self.op, &mut self.tmp);
                let mut f1 = std::mem::take(&mut self.k[2]);
                forcing(s1, &self.tmp, &mut f1)?;
                for i in 1..n - 1 {
                    u[i] = self.k[1][i] + 0.5 * dt * (f0[i] + f1[i]);
                }
                u[0] = l1;
                u[n - 1] = r1;
                imp.solve(&self.op, u);
                self.k[0] = f0;
                self.k[2] = f1;
            }
        }
        let (l, r) = bc(s + dt);
        u[0] = l;
        u[n - 1] = r;
        if let Some(i) = u.iter().position(|v| !v.is_finite()) {
            return Err(StepError::NonFinite { s: s + dt, y: self.grid().y(i) });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermite::hermite_poly;

    fn zero_forcing(_: f64, _: &[f64], out: &mut [f64]) -> Result<(), StepError> {
        out.iter_mut().for_each(|v| *v = 0.0);
        Ok(())
    }

    #[test]
    fn operator_on_eigenfunctions() {
        let g = Grid::new(10.0, 0.01);
        let op = OuOperator::new(g);
        for m in 0..4 {
            let u: Vec<f64> = g.nodes().map(|y| hermite_poly(m, y)).collect();
            let mut out = vec![0.0; u.len()];
            op.apply(&u, &mut out);
            for i in 1..u.len() - 1 {
                let want = (1.0 - m as f64 / 2.0) * u[i];
                // centered first difference errs by dy^2/6 u''' y/2
                let tol = 1e-4 * (1.0 + g.y(i).abs()) + 1e-8 * (1.0 + u[i].abs());
                assert!((out[i] - want).abs() < tol);
            }
        }
    }

    #[test]
    fn cfl_guard() {
        let g = Grid::new(10.0, 0.1);
        assert!(matches!(MolStepper::new(g, Scheme::Rk4, 0.01), Err(StepError::Cfl { .. })));
        assert!(MolStepper::new(g, Scheme::Imex, 0.05).is_ok());
    }

    #[test]
    fn both_schemes_track_mode_growth() {
        let g = Grid::new(20.0, 0.05);
        for (scheme, dt, tol) in [(Scheme::Rk4, 1e-3, 1e-5), (Scheme::Imex, 5e-3, 1e-4)] {
            let mut st = MolStepper::new(g, scheme, dt).unwrap();
            let gauss = |y: f64| (-y * y / 8.0).exp();
            let mut u: Vec<f64> = g.nodes().map(|y| hermite_poly(1, y) * gauss(y)).collect();
            let u0 = u.clone();
            let steps = (0.5 / dt).round() as usize;
            for k in 0..steps {
                st.step(&mut u, k as f64 * dt, zero_forcing, |_| (0.0, 0.0)).unwrap();
            }
            // compare with a fine RK4 reference
            let mut r = MolStepper::new(g, Scheme::Rk4, 2.5e-4).unwrap();
            let mut v = u0;
            for k in 0..2000 {
                r.step(&mut v, k as f64 * 2.5e-4, zero_forcing, |_| (0.0, 0.0)).unwrap();
            }
            let err = u.iter().zip(&v).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(err < tol, "{scheme:?}: {err}");
        }
    }

    #[test]
    fn dirichlet_values_are_imposed() {
        let g = Grid::new(5.0, 0.1);
        let mut st = MolStepper::new(g, Scheme::Imex, 0.01).unwrap();
        let mut u = vec![1.0; g.len()];
        st.step(&mut u, 0.0, zero_forcing, |s| (2.0 + s, -1.0)).unwrap();
        assert_eq!(u[0], 2.01);
        assert_eq!(*u.last().unwrap(), -1.0);
    }
}
