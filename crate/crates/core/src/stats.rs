//! Streaming moment accumulators and weighted line fits.
//!
//! Accumulators are mergeable so path workers can reduce without sharing
//! state. Merging is exact in the sense that `merge(A, B)` gives the same
//! moments as accumulating the concatenated sample (up to float roundoff),
//! but reductions must still happen in a fixed order for bit-stable output.

use crate::error::{Error, Result};

/// Running first four central moments (Welford / Chan-Golub-LeVeque update).
#[derive(Debug, Clone, Copy, Default)]
pub struct MomentAccumulator {
    n: u64,
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
}

impl MomentAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        let n1 = self.n as f64;
        self.n += 1;
        let n = self.n as f64;
        let delta = x - self.mean;
        let delta_n = delta / n;
        let delta_n2 = delta_n * delta_n;
        let term1 = delta * delta_n * n1;
        self.mean += delta_n;
        self.m4 += term1 * delta_n2 * (n * n - 3.0 * n + 3.0)
            + 6.0 * delta_n2 * self.m2
            - 4.0 * delta_n * self.m3;
        self.m3 += term1 * delta_n * (n - 2.0) - 3.0 * delta_n * self.m2;
        self.m2 += term1;
    }

    pub fn merge(&mut self, other: &MomentAccumulator) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let delta = other.mean - self.mean;
        let delta2 = delta * delta;

        let m2 = self.m2 + other.m2 + delta2 * na * nb / n;
        let m3 = self.m3
            + other.m3
            + delta2 * delta * na * nb * (na - nb) / (n * n)
            + 3.0 * delta * (na * other.m2 - nb * self.m2) / n;
        let m4 = self.m4
            + other.m4
            + delta2 * delta2 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n)
            + 6.0 * delta2 * (na * na * other.m2 + nb * nb * self.m2) / (n * n)
            + 4.0 * delta * (na * other.m3 - nb * self.m3) / n;

        self.mean += delta * nb / n;
        self.m2 = m2;
        self.m3 = m3;
        self.m4 = m4;
        self.n += other.n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            return f64::NAN;
        }
        self.m2 / (self.n - 1) as f64
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        (self.variance() / self.n as f64).sqrt()
    }

    pub fn skewness(&self) -> f64 {
        if self.n < 2 || self.m2 == 0.0 {
            return f64::NAN;
        }
        let n = self.n as f64;
        n.sqrt() * self.m3 / self.m2.powf(1.5)
    }

    pub fn excess_kurtosis(&self) -> f64 {
        if self.n < 2 || self.m2 == 0.0 {
            return f64::NAN;
        }
        let n = self.n as f64;
        n * self.m4 / (self.m2 * self.m2) - 3.0
    }
}

/// Result of a straight-line fit `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub r_squared: f64,
}

/// Weighted least squares line through `(x_i, y_i)` with weights `w_i`.
///
/// When the weights are inverse variances of the `y_i`, `slope_se` is the
/// usual `sqrt(1 / sum w (x - xbar)^2)`.
pub fn weighted_line_fit(x: &[f64], y: &[f64], w: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() || x.len() != w.len() {
        return Err(Error::invalid("line fit inputs must have equal length"));
    }
    if x.len() < 2 {
        return Err(Error::invalid("line fit needs at least two points"));
    }
    if w.iter().any(|&wi| !(wi.is_finite() && wi > 0.0)) {
        return Err(Error::invalid("line fit weights must be positive"));
    }

    let sw: f64 = w.iter().sum();
    let xbar: f64 = x.iter().zip(w).map(|(xi, wi)| wi * xi).sum::<f64>() / sw;
    let ybar: f64 = y.iter().zip(w).map(|(yi, wi)| wi * yi).sum::<f64>() / sw;

    let sxx: f64 = x.iter().zip(w).map(|(xi, wi)| wi * (xi - xbar).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("line fit abscissae are degenerate"));
    }
    let sxy: f64 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((xi, yi), wi)| wi * (xi - xbar) * (yi - ybar))
        .sum();

    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;

    let ss_res: f64 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((xi, yi), wi)| wi * (yi - intercept - slope * xi).powi(2))
        .sum();
    let ss_tot: f64 = y.iter().zip(w).map(|(yi, wi)| wi * (yi - ybar).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };

    Ok(LineFit { slope, intercept, slope_se: (1.0 / sxx).sqrt(), r_squared })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_of_small_sample() {
        let xs = [2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0];
        let mut acc = MomentAccumulator::new();
        for &x in &xs {
            acc.push(x);
        }
        assert_eq!(acc.count(), 8);
        assert!((acc.mean() - 5.0).abs() < 1e-14);
        // sum of squared deviations = 32, unbiased variance = 32/7
        assert!((acc.variance() - 32.0 / 7.0).abs() < 1e-14);
    }

    #[test]
    fn merge_matches_bulk_accumulation() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 2654435761_u64 as usize) % 977) as f64).collect();
        let mut bulk = MomentAccumulator::new();
        for &x in &xs {
            bulk.push(x);
        }
        for split in [1, 137, 500, 999] {
            let mut a = MomentAccumulator::new();
            let mut b = MomentAccumulator::new();
            for &x in &xs[..split] {
                a.push(x);
            }
            for &x in &xs[split..] {
                b.push(x);
            }
            a.merge(&b);
            assert!((a.mean() - bulk.mean()).abs() < 1e-9);
            assert!((a.variance() - bulk.variance()).abs() / bulk.variance() < 1e-9);
            assert!((a.skewness() - bulk.skewness()).abs() < 1e-9);
            assert!((a.excess_kurtosis() - bulk.excess_kurtosis()).abs() < 1e-9);
        }
    }

    #[test]
    fn gaussian_moments_vanish() {
        // Deterministic stand-in: symmetric two-point sample has zero skew.
        let mut acc = MomentAccumulator::new();
        for i in 0..100 {
            let x = (i as f64 - 49.5) / 10.0;
            acc.push(x);
            acc.push(-x);
        }
        assert!(acc.skewness().abs() < 1e-12);
    }

    #[test]
    fn exact_line_is_recovered() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|xi| 2.5 * xi - 1.0).collect();
        let w = [1.0; 4];
        let fit = weighted_line_fit(&x, &y, &w).unwrap();
        assert!((fit.slope - 2.5).abs() < 1e-14);
        assert!((fit.intercept + 1.0).abs() < 1e-14);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weights_pull_the_fit() {
        // Outlier with tiny weight must not move the slope much.
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [0.0, 1.0, 2.0, 30.0];
        let w = [1.0, 1.0, 1.0, 1e-9];
        let fit = weighted_line_fit(&x, &y, &w).unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-6);
    }

    #[test]
    fn slope_se_scale() {
        // Unit weights, x symmetric around 0 with sum x^2 = 4: se = 1/2.
        let x = [-1.0, -1.0, 1.0, 1.0];
        let y = [0.1, -0.1, 0.1, -0.1];
        let fit = weighted_line_fit(&x, &y, &[1.0; 4]).unwrap();
        assert!((fit.slope_se - 0.5).abs() < 1e-14);
    }
}
