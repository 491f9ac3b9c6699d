//! Periodic space grid and uniform time grid.
//!
//! Space is the torus `[0, L)^k` sampled on `n` points per axis (`n` a power
//! of two so FFT synthesis stays cheap). Sites are indexed in row-major order;
//! every routine that needs geometry (wavenumbers, distances, lag shifts) goes
//! through here so the conventions live in one place.

use crate::error::{Error, Result};

/// Uniformly sampled torus `[0, period)^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    dim: usize,
    n: usize,
    period: f64,
}

impl SpatialGrid {
    pub fn new(dim: usize, n: usize, period: f64) -> Result<Self> {
        if dim == 0 || dim > 3 {
            return Err(Error::invalid(format!("dim must be 1..=3, got {dim}")));
        }
        if n < 4 || !n.is_power_of_two() {
            return Err(Error::invalid(format!(
                "points per axis must be a power of two >= 4, got {n}"
            )));
        }
        if !(period.is_finite() && period > 0.0) {
            return Err(Error::invalid(format!("period must be positive, got {period}")));
        }
        Ok(SpatialGrid { dim, n, period })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Points per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// Mesh width `h = L / n`.
    pub fn spacing(&self) -> f64 {
        self.period / self.n as f64
    }

    /// Total number of sites `n^dim`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Cell volume `h^dim`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Torus volume `L^dim`.
    pub fn volume(&self) -> f64 {
        self.period.powi(self.dim as i32)
    }

    pub fn shape(&self) -> Vec<usize> {
        vec![self.n; self.dim]
    }

    /// Signed integer frequency for axis index `i` (DFT ordering):
    /// `0, 1, ..., n/2, -(n/2-1), ..., -1`.
    pub fn freq(&self, i: usize) -> i64 {
        let n = self.n as i64;
        let i = i as i64;
        if i <= n / 2 {
            i
        } else {
            i - n
        }
    }

    /// Angular wavenumber along one axis, `xi = 2 pi m / L` with `m` the
    /// signed frequency.
    pub fn wavenumber(&self, i: usize) -> f64 {
        2.0 * std::f64::consts::PI * self.freq(i) as f64 / self.period
    }

    /// Wavenumber spacing `2 pi / L`.
    pub fn wavenumber_spacing(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.period
    }

    /// Full wavenumber vector for a flat mode index.
    pub fn mode_wavenumber(&self, flat: usize) -> Vec<f64> {
        self.unravel(flat)
            .into_iter()
            .map(|i| self.wavenumber(i))
            .collect()
    }

    /// Row-major flat index from per-axis indices.
    pub fn ravel(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dim);
        idx.iter().fold(0, |acc, &i| acc * self.n + i)
    }

    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim];
        for d in (0..self.dim).rev() {
            idx[d] = flat % self.n;
            flat /= self.n;
        }
        idx
    }

    /// Flat index of the site shifted by `shift` cells along `axis` (periodic).
    pub fn shifted(&self, flat: usize, axis: usize, shift: usize) -> usize {
        let mut idx = self.unravel(flat);
        idx[axis] = (idx[axis] + shift) % self.n;
        self.ravel(&idx)
    }

    /// Physical coordinates of a site.
    pub fn site(&self, flat: usize) -> Vec<f64> {
        let h = self.spacing();
        self.unravel(flat).into_iter().map(|i| i as f64 * h).collect()
    }

    /// Shortest displacement between coordinates on the torus, per axis.
    pub fn torus_displacement(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let l = self.period;
        x.iter()
            .zip(y)
            .map(|(&a, &b)| {
                let mut d = (a - b) % l;
                if d > l / 2.0 {
                    d -= l;
                } else if d < -l / 2.0 {
                    d += l;
                }
                d
            })
            .collect()
    }

    /// Euclidean torus distance.
    pub fn torus_distance(&self, x: &[f64], y: &[f64]) -> f64 {
        self.torus_displacement(x, y)
            .iter()
            .map(|d| d * d)
            .sum::<f64>()
            .sqrt()
    }
}

/// Uniform partition of `[0, horizon]` into `steps` intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::invalid("steps must be positive"));
        }
        Ok(TimeGrid { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// `t_n = n dt`, valid for `n = 0..=steps`.
    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_sizes() {
        assert!(SpatialGrid::new(1, 3, 1.0).is_err());
        assert!(SpatialGrid::new(1, 6, 1.0).is_err());
        assert!(SpatialGrid::new(0, 8, 1.0).is_err());
        assert!(SpatialGrid::new(1, 8, 0.0).is_err());
        assert!(SpatialGrid::new(1, 8, 1.0).is_ok());
    }

    #[test]
    fn freq_ordering_matches_dft_convention() {
        let g = SpatialGrid::new(1, 8, 1.0).unwrap();
        let freqs: Vec<i64> = (0..8).map(|i| g.freq(i)).collect();
        assert_eq!(freqs, vec![0, 1, 2, 3, 4, -3, -2, -1]);
    }

    #[test]
    fn ravel_unravel_roundtrip() {
        let g = SpatialGrid::new(2, 4, 2.0).unwrap();
        for flat in 0..g.len() {
            assert_eq!(g.ravel(&g.unravel(flat)), flat);
        }
        assert_eq!(g.shifted(g.ravel(&[3, 2]), 0, 2), g.ravel(&[1, 2]));
        assert_eq!(g.shifted(g.ravel(&[3, 2]), 1, 3), g.ravel(&[3, 1]));
    }

    #[test]
    fn torus_distance_wraps() {
        let g = SpatialGrid::new(1, 8, 4.0).unwrap();
        assert!((g.torus_distance(&[0.5], &[3.5]) - 1.0).abs() < 1e-14);
        let g2 = SpatialGrid::new(2, 8, 4.0).unwrap();
        let d = g2.torus_distance(&[0.0, 0.0], &[3.0, 3.0]);
        assert!((d - 2.0_f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn time_grid_basics() {
        let t = TimeGrid::new(0.5, 128).unwrap();
        assert!((t.dt() - 0.5 / 128.0).abs() < 1e-16);
        assert!((t.time(128) - 0.5).abs() < 1e-15);
        assert!(TimeGrid::new(0.0, 10).is_err());
    }
}
