//! Uniform symmetric grids in the similarity variable and fields on them.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid {
    half_width: f64,
    dy: f64,
    n_half: usize,
}

impl Grid {
    /// Grid on `[-L, L]` with spacing `dy`; `L` is rounded to a multiple of `dy`.
    pub fn new(half_width: f64, dy: f64) -> Self {
        assert!(dy > 0.0 && half_width > dy, "degenerate grid");
        let n_half = (half_width / dy).round() as usize;
        Self { half_width: n_half as f64 * dy, dy, n_half }
    }

    /// Grid wide enough (`L >= 3K sqrt(s_end)`) for a run ending at `s_end`.
    pub fn for_run(k: f64, s_end: f64, dy: f64) -> Self {
        let l = 3.0 * k * s_end.sqrt();
        Self::new((l / dy).ceil() * dy, dy)
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn dy(&self) -> f64 {
        self.dy
    }

    pub fn len(&self) -> usize {
        2 * self.n_half + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of `y = 0`.
    pub fn center(&self) -> usize {
        self.n_half
    }

    #[inline]
    pub fn y(&self, i: usize) -> f64 {
        (i as f64 - self.n_half as f64) * self.dy
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |i| self.y(i))
    }

    /// Four-point Lagrange interpolation; zero outside the grid.
    pub fn interpolate(&self, values: &[f64], y: f64) -> f64 {
        match self.stencil(y) {
            Some((j, w)) => (0..4).map(|k| w[k] * values[j + k]).sum(),
            None => 0.0,
        }
    }

    /// Start index and weights of the cubic stencil at `y`.
    pub fn stencil(&self, y: f64) -> Option<(usize, [f64; 4])> {
        if y.abs() > self.half_width {
            return None;
        }
        let u = (y + self.half_width) / self.dy;
        let n = self.len();
        let i = (u.floor() as isize - 1).clamp(0, n as isize - 4) as usize;
        let t = u - i as f64;
        let w = [
            -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0,
            t * (t - 2.0) * (t - 3.0) / 2.0,
            -t * (t - 1.0) * (t - 3.0) / 2.0,
            t * (t - 1.0) * (t - 2.0) / 6.0,
        ];
        Some((i, w))
    }
}

/// A function sampled on a [`Grid`] at similarity time `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedField {
    pub grid: Grid,
    pub s: f64,
    pub values: Vec<f64>,
}

impl WeightedField {
    pub fn zeros(grid: Grid, s: f64) -> Self {
        Self { grid, s, values: vec![0.0; grid.len()] }
    }

    pub fn from_fn(grid: Grid, s: f64, f: impl Fn(f64) -> f64) -> Self {
        Self { grid, s, values: grid.nodes().map(f).collect() }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Sup of the centered-difference derivative.
    pub fn grad_sup(&self) -> f64 {
        let dy = self.grid.dy();
        self.values.windows(3).fold(0.0, |m, w| m.max(((w[2] - w[0]) / (2.0 * dy)).abs()))
    }

    pub fn at(&self, y: f64) -> f64 {
        self.grid.interpolate(&self.values, y)
    }

    /// `alpha * self + other`.
    pub fn axpy(&self, alpha: f64, other: &Self) -> Self {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| alpha * a + b).collect();
        Self { grid: self.grid, s: self.s, values }
    }
}
