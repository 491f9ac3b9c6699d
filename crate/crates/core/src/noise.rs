//! Noise increment synthesis on the periodic lattice.
//!
//! Circular (spectral) embedding: draw one standard normal per site, take the
//! unnormalized FFT, weight mode `m` by `sqrt(dt * w_m) / N^{k/2}` with `w_m`
//! the lattice spectral weight, transform back and keep the real part. The
//! resulting field is exactly stationary Gaussian on the torus with
//! `E[dW(x) dW(y)] = dt * sum_m w_m cos(xi_m . (x - y))`,
//! the law the oracles in [`crate::reference`] reproduce by direct summation.
//! White noise short-circuits to iid normals with variance `dt / h^k`.

use crate::covariance::{mode_weights, CovarianceModel};
use crate::error::{Error, Result};
use crate::fftutil::FftEngine;
use crate::grid::{SpatialGrid, TimeGrid};
use crate::stats::MomentAccumulator;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub struct NoiseSampler {
    grid: SpatialGrid,
    dt: f64,
    /// Per-mode factor `sqrt(dt * w_m) / N^{k/2}`; `None` on the white path.
    spectral_scale: Option<Vec<f64>>,
    /// Site standard deviation `sqrt(dt / h^k)` on the white path.
    white_sigma: f64,
    fft: FftEngine,
    buf: Vec<Complex64>,
}

impl NoiseSampler {
    pub fn new(grid: &SpatialGrid, model: &CovarianceModel, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid(format!("dt must be positive, got {dt}")));
        }
        let white_sigma = (dt / grid.cell_volume()).sqrt();
        let spectral_scale = match model {
            CovarianceModel::White => None,
            _ => {
                let w = mode_weights(model, grid)?;
                let norm = (grid.len() as f64).sqrt();
                Some(w.iter().map(|wm| (dt * wm).sqrt() / norm).collect())
            }
        };
        Ok(NoiseSampler {
            grid: grid.clone(),
            dt,
            spectral_scale,
            white_sigma,
            fft: FftEngine::new(),
            buf: vec![Complex64::ZERO; grid.len()],
        })
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Draw one increment field `W(t + dt) - W(t)` against the cell basis.
    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        match &self.spectral_scale {
            None => (0..self.grid.len())
                .map(|_| self.white_sigma * rng.sample::<f64, _>(StandardNormal))
                .collect(),
            Some(scale) => {
                for c in self.buf.iter_mut() {
                    *c = Complex64::new(rng.sample(StandardNormal), 0.0);
                }
                let shape = self.grid.shape();
                self.fft.forward(&mut self.buf, &shape);
                for (c, s) in self.buf.iter_mut().zip(scale) {
                    *c *= *s;
                }
                self.fft.inverse(&mut self.buf, &shape);
                self.buf.iter().map(|c| c.re).collect()
            }
        }
    }
}

/// Spatially averaged covariance estimate at a lattice lag, with its
/// standard error across samples.
pub fn empirical_covariance(
    grid: &SpatialGrid,
    samples: &[Vec<f64>],
    lag: &[usize],
) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::invalid("need at least two sample fields"));
    }
    if lag.len() != grid.dim() {
        return Err(Error::invalid("lag dimension does not match grid"));
    }
    // Precompute the lagged index map once.
    let mut target = Vec::with_capacity(grid.len());
    for flat in 0..grid.len() {
        let mut t = flat;
        for (axis, &l) in lag.iter().enumerate() {
            t = grid.shifted(t, axis, l);
        }
        target.push(t);
    }
    let mut acc = MomentAccumulator::new();
    for field in samples {
        if field.len() != grid.len() {
            return Err(Error::invalid("sample field does not match grid size"));
        }
        let mut s = 0.0;
        for (flat, &t) in target.iter().enumerate() {
            s += field[flat] * field[t];
        }
        acc.push(s / grid.len() as f64);
    }
    Ok((acc.mean(), acc.std_error()))
}

/// Marginal normality summary at one site: skewness and excess kurtosis with
/// their null standard errors `sqrt(6/n)` and `sqrt(24/n)`.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct NormalitySummary {
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub skewness_se: f64,
    pub kurtosis_se: f64,
    pub samples: u64,
}

pub fn normality_summary(samples: &[Vec<f64>], site: usize) -> Result<NormalitySummary> {
    if samples.len() < 8 {
        return Err(Error::invalid("need at least eight sample fields"));
    }
    let mut acc = MomentAccumulator::new();
    for field in samples {
        let v = *field
            .get(site)
            .ok_or_else(|| Error::invalid("site index out of range"))?;
        acc.push(v);
    }
    let n = acc.count() as f64;
    Ok(NormalitySummary {
        skewness: acc.skewness(),
        excess_kurtosis: acc.excess_kurtosis(),
        skewness_se: (6.0 / n).sqrt(),
        kurtosis_se: (24.0 / n).sqrt(),
        samples: acc.count(),
    })
}

/// Monte Carlo and analytic sides of the isometry for the discrete stochastic
/// integral `I = sum_n sum_x H(t_n, x) dW_n(x) h^k`.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct IsometryCheck {
    pub mc_variance: f64,
    /// Standard error of `mc_variance` (the integral is exactly Gaussian, so
    /// `Var(s^2) = 2 sigma^4 / (n - 1)`).
    pub mc_variance_se: f64,
    pub analytic_variance: f64,
    pub samples: usize,
}

/// Evaluate both sides of the isometry for a deterministic integrand
/// `H(t, x)`, sampled at the left endpoints of the time cells.
pub fn isometry_check<F, R>(
    integrand: F,
    model: &CovarianceModel,
    grid: &SpatialGrid,
    time: &TimeGrid,
    n_samples: usize,
    rng: &mut R,
) -> Result<IsometryCheck>
where
    F: Fn(f64, &[f64]) -> f64,
    R: Rng + ?Sized,
{
    if n_samples < 2 {
        return Err(Error::invalid("need at least two samples"));
    }
    let dt = time.dt();
    let hk = grid.cell_volume();

    // Tabulate the integrand once per time step.
    let mut h_fields = Vec::with_capacity(time.steps());
    for n in 0..time.steps() {
        let t = time.time(n);
        let field: Vec<f64> = (0..grid.len()).map(|flat| integrand(t, &grid.site(flat))).collect();
        h_fields.push(field);
    }

    // Analytic side: sum_n dt sum_m w_m |Hhat_n(xi_m)|^2 with the
    // continuum-normalized transform Hhat = h^k * DFT.
    let weights = mode_weights(model, grid)?;
    let mut fft = FftEngine::new();
    let shape = grid.shape();
    let mut analytic = 0.0;
    for field in &h_fields {
        let mut spec: Vec<Complex64> =
            field.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft.forward(&mut spec, &shape);
        let plancherel: f64 = spec
            .iter()
            .zip(&weights)
            .map(|(c, w)| w * c.norm_sqr())
            .sum();
        analytic += dt * plancherel * hk * hk;
    }

    // Monte Carlo side.
    let mut sampler = NoiseSampler::new(grid, model, dt)?;
    let mut acc = MomentAccumulator::new();
    for _ in 0..n_samples {
        let mut integral = 0.0;
        for field in &h_fields {
            let dw = sampler.sample(rng);
            let mut s = 0.0;
            for (hv, wv) in field.iter().zip(&dw) {
                s += hv * wv;
            }
            integral += s * hk;
        }
        acc.push(integral);
    }
    let mc_variance = acc.variance();
    let mc_variance_se = mc_variance * (2.0 / (n_samples as f64 - 1.0)).sqrt();
    Ok(IsometryCheck { mc_variance, mc_variance_se, analytic_variance: analytic, samples: n_samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::periodized_covariance;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn same_seed_reproduces_bitwise() {
        let grid = SpatialGrid::new(1, 64, 8.0).unwrap();
        let model = CovarianceModel::Riesz { beta: 0.5 };
        let mut s1 = NoiseSampler::new(&grid, &model, 0.01).unwrap();
        let mut s2 = NoiseSampler::new(&grid, &model, 0.01).unwrap();
        let f1 = s1.sample(&mut ChaCha8Rng::seed_from_u64(42));
        let f2 = s2.sample(&mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(f1, f2);
        let f3 = s1.sample(&mut ChaCha8Rng::seed_from_u64(43));
        assert_ne!(f1, f3);
    }

    #[test]
    fn white_single_site_variance() {
        let grid = SpatialGrid::new(1, 64, 8.0).unwrap();
        let dt = 0.05;
        let mut sampler = NoiseSampler::new(&grid, &CovarianceModel::White, dt).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut acc = MomentAccumulator::new();
        for _ in 0..4000 {
            acc.push(sampler.sample(&mut rng)[17]);
        }
        let target = dt / grid.spacing(); // dt / h^k
        let var = acc.variance();
        let se = var * (2.0 / 3999.0_f64).sqrt();
        assert!((var - target).abs() < 4.0 * se, "var {var} target {target}");
        assert!(acc.mean().abs() < 4.0 * acc.std_error());
    }

    #[test]
    fn correlated_field_matches_direct_sum_oracle() {
        let grid = SpatialGrid::new(1, 64, 8.0).unwrap();
        let model = CovarianceModel::Riesz { beta: 0.5 };
        let dt = 1.0;
        let mut sampler = NoiseSampler::new(&grid, &model, dt).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let samples: Vec<Vec<f64>> = (0..4000).map(|_| sampler.sample(&mut rng)).collect();
        for lag in [0usize, 1, 4, 16] {
            let (est, se) = empirical_covariance(&grid, &samples, &[lag]).unwrap();
            let oracle = periodized_covariance(&model, &grid, &[lag]).unwrap();
            assert!(
                (est - oracle).abs() < 4.0 * se,
                "lag {lag}: est {est} oracle {oracle} se {se}"
            );
        }
    }

    #[test]
    fn two_dimensional_field_matches_oracle() {
        let grid = SpatialGrid::new(2, 16, 4.0).unwrap();
        let model = CovarianceModel::Fractional { hurst: vec![0.75, 0.8] };
        let mut sampler = NoiseSampler::new(&grid, &model, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let samples: Vec<Vec<f64>> = (0..3000).map(|_| sampler.sample(&mut rng)).collect();
        for lag in [[0usize, 1], [1, 0], [2, 2]] {
            let (est, se) = empirical_covariance(&grid, &samples, &lag).unwrap();
            let oracle = periodized_covariance(&model, &grid, &lag).unwrap();
            assert!(
                (est - oracle).abs() < 4.0 * se,
                "lag {lag:?}: est {est} oracle {oracle} se {se}"
            );
        }
    }

    #[test]
    fn increments_are_independent_in_time() {
        let grid = SpatialGrid::new(1, 32, 4.0).unwrap();
        let mut sampler =
            NoiseSampler::new(&grid, &CovarianceModel::Bessel { alpha: 2.0 }, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut acc = MomentAccumulator::new();
        for _ in 0..3000 {
            let a = sampler.sample(&mut rng);
            let b = sampler.sample(&mut rng);
            let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64;
            acc.push(dot);
        }
        assert!(acc.mean().abs() < 3.0 * acc.std_error());
    }

    #[test]
    fn marginals_look_gaussian() {
        let grid = SpatialGrid::new(1, 32, 4.0).unwrap();
        let model = CovarianceModel::Riesz { beta: 0.5 };
        let mut sampler = NoiseSampler::new(&grid, &model, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let samples: Vec<Vec<f64>> = (0..10_000).map(|_| sampler.sample(&mut rng)).collect();
        let s = normality_summary(&samples, 9).unwrap();
        assert!(s.skewness.abs() < 4.0 * s.skewness_se, "{s:?}");
        assert!(s.excess_kurtosis.abs() < 4.0 * s.kurtosis_se, "{s:?}");
    }

    #[test]
    fn isometry_zero_integrand() {
        let grid = SpatialGrid::new(1, 16, 2.0).unwrap();
        let time = TimeGrid::new(0.5, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let chk = isometry_check(|_, _| 0.0, &CovarianceModel::White, &grid, &time, 16, &mut rng)
            .unwrap();
        assert_eq!(chk.mc_variance, 0.0);
        assert_eq!(chk.analytic_variance, 0.0);
    }

    #[test]
    fn isometry_constant_integrand_white() {
        let grid = SpatialGrid::new(1, 32, 4.0).unwrap();
        let time = TimeGrid::new(1.0, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let chk = isometry_check(|_, _| 1.0, &CovarianceModel::White, &grid, &time, 2000, &mut rng)
            .unwrap();
        // Analytic side must equal T * L exactly.
        assert!((chk.analytic_variance - 4.0).abs() < 1e-10, "{chk:?}");
        assert!(
            (chk.mc_variance - chk.analytic_variance).abs() < 4.0 * chk.mc_variance_se,
            "{chk:?}"
        );
    }

    #[test]
    fn isometry_mode_integrand_riesz() {
        // H(x) = cos(xi_2 x): the lattice Plancherel sum collapses to two
        // modes, T * L * g(xi_2) / 2.
        let grid = SpatialGrid::new(1, 32, 4.0).unwrap();
        let time = TimeGrid::new(0.5, 8).unwrap();
        let model = CovarianceModel::Riesz { beta: 0.5 };
        let xi2 = grid.wavenumber(2);
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let chk = isometry_check(
            move |_, x| (xi2 * x[0]).cos(),
            &model,
            &grid,
            &time,
            2000,
            &mut rng,
        )
        .unwrap();
        let expected = 0.5 * 4.0 * model.spectral_density(&[xi2]) / 2.0;
        assert!((chk.analytic_variance - expected).abs() / expected < 1e-10, "{chk:?}");
        assert!(
            (chk.mc_variance - chk.analytic_variance).abs() < 4.0 * chk.mc_variance_se,
            "{chk:?}"
        );
    }
}
