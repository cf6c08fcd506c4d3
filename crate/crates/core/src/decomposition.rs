//! Splitting a field as `q = sum_{m<=2} q_m h_m + q_minus + q_e`, where
//! `q_m = <chi q, k_m>`, `q_minus = chi q - sum q_m h_m` and `q_e = (1 - chi) q`.

use std::io::Write;

use serde::Serialize;

use crate::cutoff::cutoff_chi;
use crate::grid::{Grid, WeightedField};
use crate::hermite::{hermite_norm_sq, hermite_poly, QuadratureRule, SpectralError};

/// Beyond this `|y|` the Gaussian weight is below `e^{-100}`.
pub const WEIGHT_HORIZON: f64 = 20.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub q0: f64,
    pub q1: f64,
    pub q2: f64,
    pub q_minus: WeightedField,
    pub q_e: WeightedField,
    pub s: f64,
    pub k: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct NormReport {
    pub q2_abs: f64,
    /// `sup |q_minus| / (1 + |y|^3)`.
    pub qminus_weighted: f64,
    pub qe_sup: f64,
    pub q_sup: f64,
}

/// Precomputed interpolation from a grid to the quadrature nodes.
#[derive(Debug, Clone)]
pub struct Projector {
    grid: Grid,
    /// (stencil start, stencil weights, quadrature weight, node y) for nodes inside the grid.
    taps: Vec<(usize, [f64; 4], f64, f64)>,
    /// `1 / (1 + |y|^3)` on the grid.
    inv_weight: Vec<f64>,
}

impl Projector {
    pub fn new(grid: Grid, rule: &QuadratureRule) -> Self {
        let taps = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .filter_map(|(&y, &w)| grid.stencil(y).map(|(j, c)| (j, c, w, y)))
            .collect();
        let inv_weight = grid.nodes().map(|y| 1.0 / (1.0 + y.abs().powi(3))).collect();
        Self { grid, taps, inv_weight }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    fn check_domain(&self, s: f64, k: f64) -> Result<(), SpectralError> {
        let needed = (2.0 * k * s.sqrt()).min(WEIGHT_HORIZON);
        if self.grid.half_width() < needed {
            return Err(SpectralError::GridTooSmall { half_width: self.grid.half_width(), needed });
        }
        Ok(())
    }

    /// `(q0, q1, q2)` of `chi q`.
    pub fn modes(&self, values: &[f64], s: f64, k: f64) -> [f64; 3] {
        let mut acc = [0.0; 3];
        for &(j, c, w, y) in &self.taps {
            let v = c[0] * values[j] + c[1] * values[j + 1] + c[2] * values[j + 2] + c[3] * values[j + 3];
            let b = w * cutoff_chi(y, s, k) * v;
            acc[0] += b;
            acc[1] += b * y;
            acc[2] += b * (y * y - 2.0);
        }
        [acc[0], acc[1] / hermite_norm_sq(1), acc[2] / hermite_norm_sq(2)]
    }

    pub fn decompose(&self, q: &WeightedField, k: f64) -> Result<SpectralDecomposition, SpectralError> {
        assert_eq!(q.grid, self.grid, "field grid differs from projector grid");
        let s = q.s;
        self.check_domain(s, k)?;
        let [q0, q1, q2] = self.modes(&q.values, s, k);
        let mut qm = Vec::with_capacity(q.values.len());
        let mut qe = Vec::with_capacity(q.values.len());
        for (i, &v) in q.values.iter().enumerate() {
            let y = self.grid.y(i);
            let chi = cutoff_chi(y, s, k);
            qm.push(chi * v - (q0 + q1 * y + q2 * (y * y - 2.0)));
            qe.push((1.0 - chi) * v);
        }
        Ok(SpectralDecomposition {
            q0,
            q1,
            q2,
            q_minus: WeightedField { grid: self.grid, s, values: qm },
            q_e: WeightedField { grid: self.grid, s, values: qe },
            s,
            k,
        })
    }

    /// Modes and norms in one pass, without materializing the component fields.
    pub fn measure(&self, values: &[f64], s: f64, k: f64) -> ([f64; 3], NormReport) {
        let m = self.modes(values, s, k);
        let [q0, q1, q2] = m;
        let inner = k * s.sqrt();
        let mut rep = NormReport { q2_abs: q2.abs(), ..Default::default() };
        for (i, &v) in values.iter().enumerate() {
            let y = self.grid.y(i);
            let ay = y.abs();
            let chi = if ay <= inner { 1.0 } else { cutoff_chi(y, s, k) };
            let qm = chi * v - (q0 + q1 * y + q2 * (y * y - 2.0));
            rep.qminus_weighted = rep.qminus_weighted.max(qm.abs() * self.inv_weight[i]);
            if chi < 1.0 {
                rep.qe_sup = rep.qe_sup.max(((1.0 - chi) * v).abs());
            }
            rep.q_sup = rep.q_sup.max(v.abs());
        }
        (m, rep)
    }
}

/// Convenience wrapper building a one-off [`Projector`].
pub fn decompose(q: &WeightedField, k: f64, rule: &QuadratureRule) -> Result<SpectralDecomposition, SpectralError> {
    Projector::new(q.grid, rule).decompose(q, k)
}

pub fn weighted_norms(dec: &SpectralDecomposition) -> NormReport {
    let g = dec.q_minus.grid;
    let mut rep = NormReport { q2_abs: dec.q2.abs(), ..Default::default() };
    for i in 0..g.len() {
        let y = g.y(i);
        let qm = dec.q_minus.values[i];
        let qe = dec.q_e.values[i];
        rep.qminus_weighted = rep.qminus_weighted.max(qm.abs() / (1.0 + y.abs().powi(3)));
        rep.qe_sup = rep.qe_sup.max(qe.abs());
        let q = dec.q0 + dec.q1 * y + dec.q2 * hermite_poly(2, y) + qm + qe;
        rep.q_sup = rep.q_sup.max(q.abs());
    }
    rep
}

#[derive(Debug, Serialize)]
struct DecompositionRow {
    s: f64,
    q0: f64,
    q1: f64,
    q2: f64,
    norm_qminus_weighted: f64,
    norm_qe: f64,
    norm_q: f64,
}

/// CSV rows `s, q0, q1, q2, norm_qminus_weighted, norm_qe, norm_q`.
pub fn write_decompositions_csv<W: Write>(out: W, decs: &[SpectralDecomposition]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for d in decs {
        let n = weighted_norms(d);
        w.serialize(DecompositionRow {
            s: d.s,
            q0: d.q0,
            q1: d.q1,
            q2: d.q2,
            norm_qminus_weighted: n.qminus_weighted,
            norm_qe: n.qe_sup,
            norm_q: n.q_sup,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermite::DEFAULT_ORDER;
    use proptest::prelude::*;

    fn rule() -> QuadratureRule {
        QuadratureRule::gauss_hermite(DEFAULT_ORDER)
    }

    #[test]
    fn eigenfunction_projects_to_its_mode() {
        let g = Grid::new(25.0, 0.05);
        let q = WeightedField::from_fn(g, 400.0, |y| y);
        let d = decompose(&q, 5.0, &rule()).unwrap();
        assert!((d.q1 - 1.0).abs() < 1e-8);
        assert!(d.q0.abs() < 1e-8 && d.q2.abs() < 1e-8);
    }

    #[test]
    fn constant_field() {
        let g = Grid::for_run(5.0, 20.0, 0.05);
        let s = 20.0;
        let c = 0.37;
        let q = WeightedField::from_fn(g, s, |_| c);
        let d = decompose(&q, 5.0, &rule()).unwrap();
        assert!((d.q0 - c).abs() < (-s).exp());
        assert!(d.q2.abs() < (-s).exp());
    }

    #[test]
    fn reconstruction_identity() {
        let g = Grid::for_run(5.0, 20.0, 0.05);
        let s = 20.0;
        let q = WeightedField::from_fn(g, s, |y| (0.3 * y).sin() + 0.1 * y * y / (1.0 + 0.01 * y.powi(4)));
        let d = decompose(&q, 5.0, &rule()).unwrap();
        for i in 0..g.len() {
            let y = g.y(i);
            let chi = cutoff_chi(y, s, 5.0);
            let rec = d.q0 + d.q1 * y + d.q2 * hermite_poly(2, y) + d.q_minus.values[i];
            assert!((chi * q.values[i] - rec).abs() < 1e-10);
            if y.abs() <= 5.0 * s.sqrt() {
                assert_eq!(d.q_e.values[i], 0.0);
            }
            if y.abs() >= 10.0 * s.sqrt() {
                // outside the cutoff support only the polynomial part survives
                assert!((rec).abs() < 1e-10);
            }
        }
        let (m, n) = Projector::new(g, &rule()).measure(&q.values, s, 5.0);
        assert_eq!(m, [d.q0, d.q1, d.q2]);
        let n2 = weighted_norms(&d);
        assert!((n.qminus_weighted - n2.qminus_weighted).abs() < 1e-14);
        assert!((n.qe_sup - n2.qe_sup).abs() < 1e-14);
        assert!((n.q_sup - n2.q_sup).abs() < 1e-12);
    }

    #[test]
    fn too_small_grid_is_rejected() {
        let g = Grid::new(10.0, 0.05);
        let q = WeightedField::zeros(g, 20.0);
        assert!(matches!(decompose(&q, 5.0, &rule()), Err(SpectralError::GridTooSmall { .. })));
    }

    #[test]
    fn norms_of_constructed_fields() {
        let g = Grid::for_run(5.0, 20.0, 0.05);
        let zero = decompose(&WeightedField::zeros(g, 20.0), 5.0, &rule()).unwrap();
        assert_eq!(weighted_norms(&zero), NormReport::default());

        let c = 0.02;
        let qm = WeightedField::from_fn(g, 20.0, |y| if y.abs() < 30.0 { c * (1.0 + y.abs().powi(3)) } else { 0.0 });
        let manual = SpectralDecomposition { q0: 0.0, q1: 0.0, q2: 0.0, q_minus: qm, q_e: WeightedField::zeros(g, 20.0), s: 20.0, k: 5.0 };
        assert!((weighted_norms(&manual).qminus_weighted - c).abs() < 1e-15);

        let (a, s, varrho) = (20.0, 20.0_f64, 0.45);
        let bound = a / s.powf(1.5 + varrho);
        let q = WeightedField::from_fn(g, s, |y| bound * (1.0 + y.abs().powi(3)));
        let n = weighted_norms(&decompose(&q, 5.0, &rule()).unwrap());
        // removing the low modes of (1+|y|^3) adds about 1.26*bound at y = 0
        let ratio = n.qminus_weighted / bound;
        assert!((1.0..2.5).contains(&ratio), "ratio {ratio}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn decompose_is_linear(alpha in -3.0f64..3.0, a in -1.0f64..1.0, b in -1.0f64..1.0, w in 0.1f64..1.0) {
            let g = Grid::new(45.0, 0.1);
            let r = rule();
            let f1 = WeightedField::from_fn(g, 20.0, |y| a * (w * y).cos());
            let f2 = WeightedField::from_fn(g, 20.0, |y| b * y / (1.0 + y * y));
            let lhs = decompose(&f1.axpy(alpha, &f2), 5.0, &r).unwrap();
            let d1 = decompose(&f1, 5.0, &r).unwrap();
            let d2 = decompose(&f2, 5.0, &r).unwrap();
            prop_assert!((lhs.q0 - (alpha * d1.q0 + d2.q0)).abs() < 1e-10);
            prop_assert!((lhs.q1 - (alpha * d1.q1 + d2.q1)).abs() < 1e-10);
            prop_assert!((lhs.q2 - (alpha * d1.q2 + d2.q2)).abs() < 1e-10);
            for i in (0..g.len()).step_by(17) {
                prop_assert!((lhs.q_minus.values[i] - (alpha * d1.q_minus.values[i] + d2.q_minus.values[i])).abs() < 1e-10);
                prop_assert!((lhs.q_e.values[i] - (alpha * d1.q_e.values[i] + d2.q_e.values[i])).abs() < 1e-10);
            }
        }
    }
}
