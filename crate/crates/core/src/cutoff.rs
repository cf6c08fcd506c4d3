//! The cutoff `chi(y, s) = chi_0(|y| / (K sqrt s))`.

#[inline]
fn psi(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        (-1.0 / t).exp()
    }
}

/// Smooth step: 1 on `[0, 1]`, 0 on `[2, inf)`, C-infinity and monotone between.
#[inline]
pub fn chi0(r: f64) -> f64 {
    if r <= 1.0 {
        1.0
    } else if r >= 2.0 {
        0.0
    } else {
        let a = psi(2.0 - r);
        a / (a + psi(r - 1.0))
    }
}

#[inline]
pub fn cutoff_chi(y: f64, s: f64, k: f64) -> f64 {
    chi0(y.abs() / (k * s.sqrt()))
}
