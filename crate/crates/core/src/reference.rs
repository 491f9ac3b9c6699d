//! Closed-form lattice laws used as independent oracles in tests.
//!
//! Everything here is computed by a route disjoint from the simulation
//! pipeline: direct mode summation instead of FFT synthesis, geometric-sum
//! identities instead of time stepping, special-function evaluations instead
//! of quadrature. Tests compare the two routes; nothing in here feeds the
//! simulations themselves.

use crate::covariance::{mode_weights, CovarianceModel};
use crate::error::Result;
use crate::grid::{SpatialGrid, TimeGrid};

/// Hurwitz zeta `zeta(s, a) = sum_{n>=0} (n + a)^{-s}` by Euler-Maclaurin,
/// valid for `s > 0`, `s != 1`, `a > 0` (analytic continuation for s < 1).
pub fn hurwitz_zeta(s: f64, a: f64) -> f64 {
    assert!(s > 0.0 && s != 1.0 && a > 0.0, "hurwitz_zeta out of supported range");
    const N: usize = 24;
    // B_{2j} / (2j)! for j = 1..=6
    const BERN: [f64; 6] = [
        1.0 / 12.0,
        -1.0 / 720.0,
        1.0 / 30_240.0,
        -1.0 / 1_209_600.0,
        1.0 / 47_900_160.0,
        -691.0 / 1_307_674_368_000.0,
    ];
    let mut sum = 0.0;
    for n in 0..N {
        sum += (n as f64 + a).powf(-s);
    }
    let x = N as f64 + a;
    sum += x.powf(1.0 - s) / (s - 1.0);
    sum += 0.5 * x.powf(-s);
    // Derivative corrections: B_{2j}/(2j)! * (s)_{2j-1} * x^{-s-2j+1}.
    let mut poch = s;
    let mut xp = x.powf(-s - 1.0);
    for (j, b) in BERN.iter().enumerate() {
        sum += b * poch * xp;
        let m = (2 * (j + 1)) as f64;
        poch *= (s + m - 1.0) * (s + m);
        xp /= x * x;
    }
    sum
}

/// Renormalized value of the one-dimensional lattice mode sum
/// `sum_{m != 0} |2 pi m / L|^{beta - 1} cos(2 pi m x / L) / L`
/// for `0 < beta < 1`, via the Fourier expansion of the Hurwitz zeta:
/// the sum equals `(2 Gamma(beta) cos(pi beta / 2) / (2 pi)) * L^{-beta} *
/// [zeta(beta, x/L) + zeta(beta, 1 - x/L)]`, i.e. the renormalized
/// periodization of the power-law kernel.
pub fn power_mode_sum(beta: f64, period: f64, x: f64) -> f64 {
    assert!(beta > 0.0 && beta < 1.0);
    let u = x / period;
    assert!(u > 0.0 && u < 1.0, "x must be strictly inside the period");
    let c = 2.0 * statrs::function::gamma::gamma(beta) * (std::f64::consts::PI * beta / 2.0).cos()
        / (2.0 * std::f64::consts::PI);
    c * period.powf(-beta) * (hurwitz_zeta(beta, u) + hurwitz_zeta(beta, 1.0 - u))
}

/// Covariance of the synthesized noise per unit time at a lattice lag,
/// by direct summation of the spectral series (the periodized-kernel oracle).
pub fn periodized_covariance(
    model: &CovarianceModel,
    grid: &SpatialGrid,
    lag: &[usize],
) -> Result<f64> {
    let w = mode_weights(model, grid)?;
    let h = grid.spacing();
    let x: Vec<f64> = lag.iter().map(|&l| l as f64 * h).collect();
    let mut acc = 0.0;
    for (flat, wm) in w.iter().enumerate() {
        let xi = grid.mode_wavenumber(flat);
        let phase: f64 = xi.iter().zip(&x).map(|(a, b)| a * b).sum();
        acc += wm * phase.cos();
    }
    Ok(acc)
}

/// Geometric sum `q + q^2 + ... + q^n`, with the `q -> 1` limit.
fn geometric_sum(q: f64, n: usize) -> f64 {
    if (1.0 - q).abs() < 1e-14 {
        n as f64
    } else {
        q * (1.0 - q.powi(n as i32)) / (1.0 - q)
    }
}

/// Two-time covariance of one spectral mode of the discrete stochastic
/// convolution: for the recursion `u_{j+1} = e^{-lambda dt}(u_j + s_j)` with
/// independent sources of variance `weight * dt`,
/// `E[u_{n1} u_{n2}] = weight * dt * e^{-lambda |n1-n2| dt} * G(e^{-2 lambda dt}, min)`.
pub fn mode_two_time_covariance(
    weight: f64,
    lambda: f64,
    dt: f64,
    n1: usize,
    n2: usize,
) -> f64 {
    let lag = n1.abs_diff(n2);
    let nmin = n1.min(n2);
    weight * dt * (-lambda * lag as f64 * dt).exp() * geometric_sum((-2.0 * lambda * dt).exp(), nmin)
}

/// Exact variance of the linear constant-coefficient solution with unit
/// multiplicative weight (`sigma = 1`, `b = 0`, zero initial data) at the
/// final time, summed over the lattice modes.
pub fn linear_solution_variance(
    model: &CovarianceModel,
    grid: &SpatialGrid,
    time: &TimeGrid,
    diffusivity: f64,
) -> Result<f64> {
    let w = mode_weights(model, grid)?;
    let dt = time.dt();
    let mut total = 0.0;
    for (flat, wm) in w.iter().enumerate() {
        let xi = grid.mode_wavenumber(flat);
        let lambda = diffusivity * xi.iter().map(|v| v * v).sum::<f64>();
        total += mode_two_time_covariance(*wm, lambda, dt, time.steps(), time.steps());
    }
    Ok(total)
}

/// Continuum limit of the previous quantity for space-time white noise in one
/// dimension: `int_0^t (8 pi a s)^{-1/2} ds = sqrt(t / (2 pi a))`.
pub fn linear_variance_continuum(diffusivity: f64, t: f64) -> f64 {
    (t / (2.0 * std::f64::consts::PI * diffusivity)).sqrt()
}

/// Exact second moment of a space-time increment of the same linear
/// solution, `E |u(t_{n2}, x + offset) - u(t_{n1}, x)|^2`, assembled from
/// per-mode two-time covariances. The workhorse oracle for regularity
/// estimates.
pub fn linear_increment_moment(
    model: &CovarianceModel,
    grid: &SpatialGrid,
    time: &TimeGrid,
    diffusivity: f64,
    n1: usize,
    n2: usize,
    offset: &[f64],
) -> Result<f64> {
    let w = mode_weights(model, grid)?;
    let dt = time.dt();
    let mut total = 0.0;
    for (flat, wm) in w.iter().enumerate() {
        let xi = grid.mode_wavenumber(flat);
        let lambda = diffusivity * xi.iter().map(|v| v * v).sum::<f64>();
        let phase: f64 = xi.iter().zip(offset).map(|(a, b)| a * b).sum();
        let v11 = mode_two_time_covariance(*wm, lambda, dt, n1, n1);
        let v22 = mode_two_time_covariance(*wm, lambda, dt, n2, n2);
        let v12 = mode_two_time_covariance(*wm, lambda, dt, n1, n2);
        total += v11 + v22 - 2.0 * v12 * phase.cos();
    }
    Ok(total)
}
