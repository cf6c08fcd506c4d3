//! Least-squares fits used by every decay-rate check.

use nalgebra::{Matrix3, Vector3};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual.
    pub rms: f64,
    pub n: usize,
}

/// Ordinary least squares `y ~ intercept + slope x`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return None;
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for i in 0..n {
        sxx += (xs[i] - mx).powi(2);
        sxy += (xs[i] - mx) * (ys[i] - my);
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rms = ((0..n).map(|i| (ys[i] - intercept - slope * xs[i]).powi(2)).sum::<f64>() / n as f64).sqrt();
    Some(LineFit { slope, intercept, rms, n })
}

/// Slope of `log|y|` against `log x`, skipping zero or non-finite samples.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    let (lx, ly): (Vec<f64>, Vec<f64>) = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && y.abs() > 0.0 && y.is_finite())
        .map(|(x, y)| (x.ln(), y.abs().ln()))
        .unzip();
    fit_line(&lx, &ly)
}

/// Log-log slope of the running envelope: samples are split into `bins`
/// log-spaced windows and the largest `|y|` of each window is fitted.
pub fn envelope_slope(xs: &[f64], ys: &[f64], bins: usize) -> Option<LineFit> {
    let (lo, hi) = xs.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    if !(lo > 0.0 && hi > lo) || bins < 2 {
        return None;
    }
    let (l0, l1) = (lo.ln(), hi.ln());
    let mut best = vec![(0.0f64, 0.0f64); bins];
    for (&x, &y) in xs.iter().zip(ys) {
        let b = (((x.ln() - l0) / (l1 - l0)) * bins as f64).floor().clamp(0.0, (bins - 1) as f64) as usize;
        if y.abs() > best[b].1 {
            best[b] = (x, y.abs());
        }
    }
    let (bx, by): (Vec<f64>, Vec<f64>) = best.into_iter().filter(|b| b.1 > 0.0).unzip();
    loglog_slope(&bx, &by)
}

/// Fit `log|v| = c + beta log|q| - alpha log s`; returns `(beta, alpha, c)`.
pub fn fit_power_2d(q: &[f64], s: &[f64], v: &[f64]) -> Option<(f64, f64, f64)> {
    let mut ata = Matrix3::<f64>::zeros();
    let mut atb = Vector3::<f64>::zeros();
    let mut n = 0;
    for i in 0..q.len().min(s.len()).min(v.len()) {
        if q[i] == 0.0 || v[i] == 0.0 || s[i] <= 0.0 {
            continue;
        }
        let row = Vector3::new(1.0, q[i].abs().ln(), -s[i].ln());
        ata += row * row.transpose();
        atb += row * v[i].abs().ln();
        n += 1;
    }
    if n < 3 {
        return None;
    }
    let sol = ata.lu().solve(&atb)?;
    Some((sol[1], sol[2], sol[0]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_laws() {
        let xs: Vec<f64> = (1..40).map(|i| 10.0 * i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.powf(-2.5)).collect();
        let f = loglog_slope(&xs, &ys).unwrap();
        assert!((f.slope + 2.5).abs() < 1e-12 && (f.intercept - 3f64.ln()).abs() < 1e-10);
        let dense: Vec<f64> = (0..4000).map(|i| 10.0 + 0.1 * i as f64).collect();
        let osc: Vec<f64> = dense.iter().map(|x| x.powf(-1.5) * (0.3 * x).sin()).collect();
        let e = envelope_slope(&dense, &osc, 8).unwrap();
        assert!((e.slope + 1.5).abs() < 0.3);
    }

    #[test]
    fn two_dimensional() {
        let mut q = vec![];
        let mut s = vec![];
        let mut v = vec![];
        for i in 0..6 {
            for j in 0..6 {
                let qq = 10f64.powi(-2 - i);
                let ss = 50.0 * 1.5f64.powi(j);
                q.push(qq);
                s.push(ss);
                v.push(0.7 * qq * qq / ss);
            }
        }
        let (b, a, _) = fit_power_2d(&q, &s, &v).unwrap();
        assert!((b - 2.0).abs() < 1e-10 && (a - 1.0).abs() < 1e-10);
    }
}
