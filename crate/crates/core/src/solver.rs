//! Mild-form solvers: a one-step exponential-Euler scheme for production
//! runs and the full Picard iteration for contraction experiments.
//!
//! Both discretize `u(t) = Gamma(t,0) u0 + int Gamma(t,s)[sigma(u) dW + b(u) ds]`
//! on the periodic lattice. The Euler update propagates the left-endpoint
//! nonlinearity through one kernel step,
//! `u_{n+1} = P_n [u_n + b(t_n,.,u_n) dt + sigma(t_n,.,u_n) .* dW_n]`,
//! so the scheme telescopes into the discrete mild identity exactly.

use crate::campaign;
use crate::covariance::CovarianceModel;
use crate::error::{Error, Result};
use crate::greens::{Propagator, Workspace};
use crate::grid::{SpatialGrid, TimeGrid};
use crate::noise::NoiseSampler;
use rand::Rng;
use std::sync::Arc;

pub type ReactionFn = Arc<dyn Fn(f64, &[f64], f64) -> f64 + Send + Sync>;

/// Reaction coefficients `sigma(t, x, z)` and `b(t, x, z)` with their
/// declared Lipschitz and linear-growth constants.
#[derive(Clone)]
pub struct Nonlinearity {
    pub sigma: ReactionFn,
    pub drift: ReactionFn,
    /// Lipschitz constant in `z`, shared by both coefficients.
    pub lipschitz: f64,
    /// Linear-growth constant: `|sigma| + |b| <= growth (1 + |z|)`.
    pub growth: f64,
}

impl Nonlinearity {
    pub fn new(sigma: ReactionFn, drift: ReactionFn, lipschitz: f64, growth: f64) -> Self {
        Nonlinearity { sigma, drift, lipschitz, growth }
    }

    /// Additive noise: `sigma = 1`, `b = 0`.
    pub fn additive() -> Self {
        Nonlinearity {
            sigma: Arc::new(|_, _, _| 1.0),
            drift: Arc::new(|_, _, _| 0.0),
            lipschitz: 0.0,
            growth: 1.0,
        }
    }

    /// Spot-check the declared Lipschitz and growth constants on random
    /// `(t, x, z)` samples; deterministic probe seed, `z` drawn in [-6, 6].
    pub fn validate(&self, grid: &SpatialGrid, time: &TimeGrid) -> Result<()> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xC0EF);
        for _ in 0..256 {
            let t = rng.gen::<f64>() * time.horizon();
            let x = grid.site(rng.gen_range(0..grid.len()));
            let z1 = rng.gen_range(-6.0..6.0);
            let z2 = rng.gen_range(-6.0..6.0);
            let s1 = (self.sigma)(t, &x, z1);
            let s2 = (self.sigma)(t, &x, z2);
            let b1 = (self.drift)(t, &x, z1);
            let b2 = (self.drift)(t, &x, z2);
            let slack = 1e-9;
            if (s1 - s2).abs() > self.lipschitz * (z1 - z2).abs() + slack
                || (b1 - b2).abs() > self.lipschitz * (z1 - z2).abs() + slack
            {
                return Err(Error::invalid(
                    "declared Lipschitz constant violated on a probe sample",
                ));
            }
            if s1.abs() + b1.abs() > self.growth * (1.0 + z1.abs()) + slack {
                return Err(Error::invalid(
                    "declared linear-growth constant violated on a probe sample",
                ));
            }
        }
        Ok(())
    }
}

/// A solution path on the full space-time lattice, values row-major by time.
#[derive(Debug, Clone)]
pub struct SolutionField {
    grid: SpatialGrid,
    time: TimeGrid,
    values: Vec<f64>,
    seed: u64,
}

impl SolutionField {
    pub fn new(grid: SpatialGrid, time: TimeGrid, values: Vec<f64>, seed: u64) -> Result<Self> {
        if values.len() != (time.steps() + 1) * grid.len() {
            return Err(Error::invalid("space-time value buffer has the wrong length"));
        }
        Ok(SolutionField { grid, time, values, seed })
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Spatial slice at time index `step`.
    pub fn at(&self, step: usize) -> &[f64] {
        let n = self.grid.len();
        &self.values[step * n..(step + 1) * n]
    }

    pub fn value(&self, step: usize, site: usize) -> f64 {
        self.values[step * self.grid.len() + site]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// `I0(t_i, .) = Gamma(t_i, 0) u0`: the homogeneous part of the mild form.
pub fn initial_field(
    prop: &Propagator,
    u0: &[f64],
    t_index: usize,
    ws: &mut Workspace,
) -> Result<Vec<f64>> {
    let mut field = u0.to_vec();
    prop.apply_many(0, t_index, &mut field, ws)?;
    Ok(field)
}

fn check_finite(field: &[f64], step: usize) -> Result<()> {
    if field.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(format!(
            "solution blew up at step {step}; check coefficients and mesh"
        )));
    }
    Ok(())
}

/// One-step exponential-Euler solve from the seed's noise realization.
pub fn euler_solve(
    prop: &Propagator,
    nonlinearity: &Nonlinearity,
    model: &CovarianceModel,
    u0: &[f64],
    seed: u64,
) -> Result<SolutionField> {
    let grid = prop.grid().clone();
    let time = prop.time_grid().clone();
    let steps = time.steps();
    nonlinearity.validate(&grid, &time)?;
    if u0.len() != grid.len() {
        return Err(Error::invalid("initial datum length does not match the grid"));
    }
    let mut ws = Workspace::new();
    let mut sampler = NoiseSampler::new(&grid, model, time.dt())?;
    let mut rng = campaign::seed_rng(seed);

    let n = grid.len();
    let sites: Vec<Vec<f64>> = (0..n).map(|i| grid.site(i)).collect();
    let mut values = vec![0.0; (steps + 1) * n];
    values[..n].copy_from_slice(u0);
    let mut u = u0.to_vec();
    let mut stage = vec![0.0; n];
    for step in 0..steps {
        let t = time.time(step);
        let dw = sampler.sample(&mut rng);
        for i in 0..n {
            let z = u[i];
            stage[i] = z
                + time.dt() * (nonlinearity.drift)(t, &sites[i], z)
                + (nonlinearity.sigma)(t, &sites[i], z) * dw[i];
        }
        prop.apply_step(step, &mut stage, &mut ws)?;
        check_finite(&stage, step + 1)?;
        u.copy_from_slice(&stage);
        values[(step + 1) * n..(step + 2) * n].copy_from_slice(&u);
    }
    SolutionField::new(grid, time, values, seed)
}

/// Per-iteration sup differences of the Picard scheme.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PicardTrace {
    /// `M_n = max over the lattice of |u^{n+1} - u^n|^p`, one entry per iteration.
    pub sup_moment_diffs: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub tolerance: f64,
}

/// Full Picard iteration `u^{n+1} = I0 + conv(sigma(u^n) dW) + conv(b(u^n) ds)`
/// on one fixed noise realization. The history convolution telescopes through
/// the step propagators, so each sweep costs the same as one Euler solve.
/// Capped at 256 time steps; this exists for contraction experiments, not
/// production.
pub fn picard_solve(
    prop: &Propagator,
    nonlinearity: &Nonlinearity,
    model: &CovarianceModel,
    u0: &[f64],
    seed: u64,
    max_iter: usize,
    p: f64,
) -> Result<(SolutionField, PicardTrace)> {
    let grid = prop.grid().clone();
    let time = prop.time_grid().clone();
    let steps = time.steps();
    if steps > 256 {
        return Err(Error::unsupported(
            "picard_solve is capped at 256 time steps; use euler_solve for production runs",
        ));
    }
    if max_iter < 2 {
        return Err(Error::invalid("picard iteration needs max_iter >= 2"));
    }
    if p < 2.0 {
        return Err(Error::invalid("moment order p must be >= 2"));
    }
    nonlinearity.validate(&grid, &time)?;
    let n = grid.len();
    if u0.len() != n {
        return Err(Error::invalid("initial datum length does not match the grid"));
    }
    let mut ws = Workspace::new();

    // One fixed noise realization, reused across iterations.
    let mut sampler = NoiseSampler::new(&grid, model, time.dt())?;
    let mut rng = campaign::seed_rng(seed);
    let noise: Vec<Vec<f64>> = (0..steps).map(|_| sampler.sample(&mut rng)).collect();

    // u^0(t_i) = I0(t_i)
    let mut current = vec![0.0; (steps + 1) * n];
    current[..n].copy_from_slice(u0);
    {
        let mut field = u0.to_vec();
        for step in 0..steps {
            prop.apply_step(step, &mut field, &mut ws)?;
            current[(step + 1) * n..(step + 2) * n].copy_from_slice(&field);
        }
    }

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut tolerance = 0.0;
    let mut next = vec![0.0; (steps + 1) * n];
    let mut homogeneous = u0.to_vec();
    let mut conv = vec![0.0; n];
    let mut g = vec![0.0; n];
    let sites: Vec<Vec<f64>> = (0..n).map(|i| grid.site(i)).collect();
    for _iter in 0..max_iter {
        // S_{i+1} = P_i (S_i + G_i), G_i from the previous iterate
        next[..n].copy_from_slice(u0);
        homogeneous.copy_from_slice(u0);
        conv.iter_mut().for_each(|v| *v = 0.0);
        for step in 0..steps {
            let t = time.time(step);
            let prev = &current[step * n..(step + 1) * n];
            for i in 0..n {
                let z = prev[i];
                g[i] = conv[i]
                    + time.dt() * (nonlinearity.drift)(t, &sites[i], z)
                    + (nonlinearity.sigma)(t, &sites[i], z) * noise[step][i];
            }
            prop.apply_step(step, &mut g, &mut ws)?;
            conv.copy_from_slice(&g);
            prop.apply_step(step, &mut homogeneous, &mut ws)?;
            for i in 0..n {
                next[(step + 1) * n + i] = homogeneous[i] + conv[i];
            }
        }
        check_finite(&next, steps)?;

        let mut sup_diff: f64 = 0.0;
        let mut sup_value: f64 = 0.0;
        for (a, b) in next.iter().zip(current.iter()) {
            sup_diff = sup_diff.max((a - b).abs());
            sup_value = sup_value.max(a.abs());
        }
        let m_n = sup_diff.powf(p);
        trace.push(m_n);
        iterations += 1;
        std::mem::swap(&mut current, &mut next);
        tolerance = 1e-6 * (1.0 + sup_value.powf(p));
        if m_n < tolerance {
            converged = true;
            break;
        }
    }

    let field = SolutionField::new(grid, time, current, seed)?;
    Ok((
        field,
        PicardTrace { sup_moment_diffs: trace, iterations, converged, tolerance },
    ))
}

/// `max over (t_i, x_j) of the sample p-th absolute moment` across paths.
pub fn moment_sup(paths: &[SolutionField], p: f64) -> Result<f64> {
    if paths.len() < 2 {
        return Err(Error::invalid("moment_sup needs at least two paths"));
    }
    let len = paths[0].values().len();
    if paths.iter().any(|f| f.values().len() != len) {
        return Err(Error::invalid("paths live on different grids"));
    }
    let scale = 1.0 / paths.len() as f64;
    let mut worst: f64 = 0.0;
    for idx in 0..len {
        let mut acc = 0.0;
        for f in paths {
            acc += f.values()[idx].abs().powf(p);
        }
        worst = worst.max(acc * scale);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::greens::{build_propagator, OperatorSpec};

    fn white() -> CovarianceModel {
        CovarianceModel::White
    }

    fn setup(n: usize, period: f64, horizon: f64, steps: usize) -> (SpatialGrid, TimeGrid, Propagator) {
        let grid = SpatialGrid::new(1, n, period).unwrap();
        let time = TimeGrid::new(horizon, steps).unwrap();
        let prop = build_propagator(&OperatorSpec::heat(1, 1.0), &grid, &time).unwrap();
        (grid, time, prop)
    }

    #[test]
    fn initial_field_of_zero_is_zero() {
        let (grid, _time, prop) = setup(32, 4.0, 0.25, 16);
        let mut ws = Workspace::new();
        let out = initial_field(&prop, &vec![0.0; grid.len()], 7, &mut ws).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn initial_field_conserves_constants() {
        let (grid, _time, prop) = setup(32, 4.0, 0.25, 16);
        let mut ws = Workspace::new();
        let out = initial_field(&prop, &vec![1.0; grid.len()], 16, &mut ws).unwrap();
        for &v in &out {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_case_reduces_to_initial_field() {
        let (grid, time, prop) = setup(32, 4.0, 0.25, 16);
        let silent = Nonlinearity::new(
            Arc::new(|_, _, _| 0.0),
            Arc::new(|_, _, _| 0.0),
            0.0,
            1.0,
        );
        let u0: Vec<f64> = (0..grid.len())
            .map(|i| (2.0 * std::f64::consts::PI * grid.site(i)[0] / 4.0).cos())
            .collect();
        let sol = euler_solve(&prop, &silent, &white(), &u0, 42).unwrap();
        let mut ws = Workspace::new();
        for step in [0, 5, 16] {
            let want = initial_field(&prop, &u0, step, &mut ws).unwrap();
            for (a, b) in sol.at(step).iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let _ = time;
    }

    #[test]
    fn euler_is_seed_deterministic() {
        let (grid, _time, prop) = setup(32, 4.0, 0.25, 16);
        let sol1 = euler_solve(&prop, &Nonlinearity::additive(), &white(), &vec![0.0; grid.len()], 7).unwrap();
        let sol2 = euler_solve(&prop, &Nonlinearity::additive(), &white(), &vec![0.0; grid.len()], 7).unwrap();
        assert_eq!(sol1.values(), sol2.values());
    }

    #[test]
    fn discrete_mild_identity_telescopes() {
        // u(t_M) equals Gamma^M u0 + sum_n Gamma^{M-n} [dt b + sigma dW]
        // with the same noise realization, to rounding.
        let (grid, time, prop) = setup(16, 2.0, 0.125, 8);
        let nonlin = Nonlinearity::new(
            Arc::new(|_, _, z: f64| 1.0 + 0.5 * z.sin()),
            Arc::new(|_, _, z: f64| 0.25 * z.cos()),
            0.5,
            2.0,
        );
        let u0: Vec<f64> = (0..grid.len()).map(|i| 0.1 * (i as f64)).collect();
        let seed = 99;
        let sol = euler_solve(&prop, &nonlin, &white(), &u0, seed).unwrap();

        let mut sampler = NoiseSampler::new(&grid, &white(), time.dt()).unwrap();
        let mut rng = campaign::seed_rng(seed);
        let mut ws = Workspace::new();
        let mut total = initial_field(&prop, &u0, time.steps(), &mut ws).unwrap();
        for step in 0..time.steps() {
            let dw = sampler.sample(&mut rng);
            let t = time.time(step);
            let u_n = sol.at(step);
            let mut term: Vec<f64> = (0..grid.len())
                .map(|i| {
                    let x = grid.site(i);
                    time.dt() * (nonlin.drift)(t, &x, u_n[i])
                        + (nonlin.sigma)(t, &x, u_n[i]) * dw[i]
                })
                .collect();
            prop.apply_many(step, time.steps() - step, &mut term, &mut ws).unwrap();
            for (a, b) in total.iter_mut().zip(&term) {
                *a += b;
            }
        }
        for (a, b) in sol.at(time.steps()).iter().zip(&total) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn linear_variance_matches_lattice_oracle() {
        // sigma = 1, b = 0, white noise: Var u(T, x) has an exact lattice law.
        let (grid, time, prop) = setup(64, 4.0, 0.25, 64);
        let paths = 512;
        let fields = campaign::run_paths(paths, 2024, |idx, _rng| {
            let seed = campaign::derive_path_seed(2024, idx as u64);
            euler_solve(&prop, &Nonlinearity::additive(), &white(), &vec![0.0; 64], seed)
                .unwrap()
        });
        let mut acc = crate::stats::MomentAccumulator::new();
        for f in &fields {
            // average over sites first: variance is site-independent
            for site in 0..grid.len() {
                acc.push(f.value(time.steps(), site));
            }
        }
        let expected =
            crate::reference::linear_solution_variance(&white(), &grid, &time, 1.0).unwrap();
        let var = acc.variance();
        // crude SE for the variance of a mean-zero Gaussian sample
        let se = var * (2.0 / (paths as f64 - 1.0)).sqrt();
        assert!(
            (var - expected).abs() < 4.0 * se,
            "var {var} vs oracle {expected} (se {se})"
        );
    }

    #[test]
    fn picard_additive_case_converges_immediately() {
        let (grid, _time, prop) = setup(32, 4.0, 0.25, 16);
        let (sol, trace) = picard_solve(
            &prop,
            &Nonlinearity::additive(),
            &white(),
            &vec![0.0; grid.len()],
            3,
            8,
            2.0,
        )
        .unwrap();
        // u^2 = u^1 exactly: coefficients ignore the iterate
        assert!(trace.sup_moment_diffs[1] == 0.0, "{:?}", trace.sup_moment_diffs);
        assert!(trace.converged);
        let euler = euler_solve(&prop, &Nonlinearity::additive(), &white(), &vec![0.0; grid.len()], 3).unwrap();
        for (a, b) in sol.values().iter().zip(euler.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn picard_contracts_and_matches_euler_for_sine_noise() {
        let (grid, _time, prop) = setup(32, 4.0, 0.5, 64);
        let nonlin = Nonlinearity::new(
            Arc::new(|_, _, z: f64| z.sin()),
            Arc::new(|_, _, _| 0.0),
            1.0,
            1.0,
        );
        let u0 = vec![0.5; grid.len()];
        let (sol, trace) = picard_solve(&prop, &nonlin, &white(), &u0, 11, 30, 2.0).unwrap();
        assert!(trace.converged, "{:?}", trace.sup_moment_diffs);
        for w in trace.sup_moment_diffs.windows(2).skip(2) {
            assert!(w[1] < w[0], "non-contracting tail: {:?}", trace.sup_moment_diffs);
        }
        let euler = euler_solve(&prop, &nonlin, &white(), &u0, 11).unwrap();
        let sup = euler.values().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let diff = sol
            .values()
            .iter()
            .zip(euler.values())
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        // The stopping rule bounds the squared sup difference by
        // 1e-6 (1 + sup^2), so the converged iterate sits within roughly
        // 1e-3 of the fixed point in sup norm, not machine precision.
        assert!(diff / sup < 5e-4, "relative sup difference {}", diff / sup);
    }

    #[test]
    fn picard_rejects_oversized_time_grids() {
        let (grid, _time, prop) = setup(16, 2.0, 1.0, 512);
        let err = picard_solve(
            &prop,
            &Nonlinearity::additive(),
            &white(),
            &vec![0.0; grid.len()],
            1,
            4,
            2.0,
        );
        assert!(err.is_err());
    }

    #[test]
    fn moment_sup_of_constants() {
        let grid = SpatialGrid::new(1, 8, 1.0).unwrap();
        let time = TimeGrid::new(0.1, 2).unwrap();
        let make = |v: f64| {
            SolutionField::new(grid.clone(), time.clone(), vec![v; 3 * 8], 0).unwrap()
        };
        let zeros = vec![make(0.0), make(0.0)];
        assert_eq!(moment_sup(&zeros, 2.0).unwrap(), 0.0);
        let twos = vec![make(2.0), make(2.0)];
        assert!((moment_sup(&twos, 3.0).unwrap() - 8.0).abs() < 1e-12);
        assert!(moment_sup(&zeros[..1], 2.0).is_err());
    }

    #[test]
    fn moment_sup_agrees_across_master_seeds() {
        let (grid, time, prop) = setup(32, 4.0, 0.25, 32);
        let run = |master: u64| {
            let fields = campaign::run_paths(192, master, |idx, _| {
                let seed = campaign::derive_path_seed(master, idx as u64);
                euler_solve(&prop, &Nonlinearity::additive(), &white(), &vec![0.0; grid.len()], seed)
                    .unwrap()
            });
            moment_sup(&fields, 2.0).unwrap()
        };
        let (a, b) = (run(1), run(2));
        // moment_sup estimates a variance; its SE scales like var sqrt(2/n)
        let se = a * (2.0 / 191.0_f64).sqrt();
        assert!((a - b).abs() < 4.0 * 1.5 * se, "{a} vs {b}");
        let _ = time;
    }
}
