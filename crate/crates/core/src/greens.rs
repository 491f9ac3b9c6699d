//! Discrete propagators for the second-order parabolic operator
//! `L = d_t - sum a_ij d2_ij + sum b_i d_i + c`.
//!
//! Constant coefficients get exact spectral multipliers
//! `exp(-(sum a_ij xi_i xi_j + i sum b_i xi_i + c) dt)` per step; variable
//! coefficients get Crank-Nicolson one-step operators with centered
//! second-order differences (cross stencils for the mixed terms) on the
//! periodic lattice. The structural checks from the continuum theory --
//! mass conservation, near-positivity, semigroup composition, dominating
//! Gaussian bound -- are implemented as reports, not build-time assertions,
//! because the discrete versions only hold on resolved meshes.

use crate::error::{Error, Result};
use crate::fftutil::FftEngine;
use crate::grid::{SpatialGrid, TimeGrid};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

pub type SpaceTimeFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// Constant coefficients: `diffusion` is the k x k matrix row-major,
/// `drift` length k.
#[derive(Debug, Clone)]
pub struct ConstantCoefficients {
    pub diffusion: Vec<f64>,
    pub drift: Vec<f64>,
    pub zeroth: f64,
}

/// Variable coefficients as space-time function handles, same layout.
#[derive(Clone)]
pub struct VariableCoefficients {
    pub diffusion: Vec<SpaceTimeFn>,
    pub drift: Vec<SpaceTimeFn>,
    pub zeroth: SpaceTimeFn,
}

#[derive(Clone)]
pub enum Coefficients {
    Constant(ConstantCoefficients),
    Variable(VariableCoefficients),
}

#[derive(Clone)]
pub struct OperatorSpec {
    pub coefficients: Coefficients,
    /// Uniform ellipticity constant: `sum a_ij y_i y_j >= ellipticity |y|^2`.
    pub ellipticity: f64,
}

impl OperatorSpec {
    /// Pure heat operator `d_t - a Laplace`.
    pub fn heat(k: usize, diffusivity: f64) -> Self {
        let mut a = vec![0.0; k * k];
        for i in 0..k {
            a[i * k + i] = diffusivity;
        }
        OperatorSpec {
            coefficients: Coefficients::Constant(ConstantCoefficients {
                diffusion: a,
                drift: vec![0.0; k],
                zeroth: 0.0,
            }),
            ellipticity: diffusivity,
        }
    }

    pub fn constant(diffusion: Vec<f64>, drift: Vec<f64>, zeroth: f64, ellipticity: f64) -> Self {
        OperatorSpec {
            coefficients: Coefficients::Constant(ConstantCoefficients { diffusion, drift, zeroth }),
            ellipticity,
        }
    }

    /// Spot-check symmetry and uniform ellipticity on random `(t, x, y)`
    /// triples; deterministic (fixed probe seed).
    pub fn validate(&self, grid: &SpatialGrid, time: &TimeGrid) -> Result<()> {
        let k = grid.dim();
        if self.ellipticity <= 0.0 {
            return Err(Error::invalid("ellipticity constant must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
        let n_probes = match &self.coefficients {
            Coefficients::Constant(_) => 1,
            Coefficients::Variable(_) => 48,
        };
        match &self.coefficients {
            Coefficients::Constant(c) => {
                if c.diffusion.len() != k * k || c.drift.len() != k {
                    return Err(Error::invalid("coefficient dimensions do not match grid"));
                }
            }
            Coefficients::Variable(c) => {
                if c.diffusion.len() != k * k || c.drift.len() != k {
                    return Err(Error::invalid("coefficient dimensions do not match grid"));
                }
            }
        }
        for _ in 0..n_probes {
            let t = rng.gen::<f64>() * time.horizon();
            let x = grid.site(rng.gen_range(0..grid.len()));
            let a = self.diffusion_at(t, &x);
            for i in 0..k {
                for j in 0..i {
                    if (a[i * k + j] - a[j * k + i]).abs() > 1e-12 {
                        return Err(Error::invalid("diffusion matrix is not symmetric"));
                    }
                }
            }
            for _ in 0..16 {
                let mut y: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
                let norm: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm < 1e-6 {
                    continue;
                }
                y.iter_mut().for_each(|v| *v /= norm);
                let mut form = 0.0;
                for i in 0..k {
                    for j in 0..k {
                        form += a[i * k + j] * y[i] * y[j];
                    }
                }
                if form < self.ellipticity - 1e-10 {
                    return Err(Error::invalid(format!(
                        "ellipticity violated: y'Ay = {form} < {} at t={t}, x={x:?}",
                        self.ellipticity
                    )));
                }
            }
        }
        Ok(())
    }

    fn diffusion_at(&self, t: f64, x: &[f64]) -> Vec<f64> {
        match &self.coefficients {
            Coefficients::Constant(c) => c.diffusion.clone(),
            Coefficients::Variable(c) => c.diffusion.iter().map(|f| f(t, x)).collect(),
        }
    }
}

/// Reusable buffers for propagator applications; each worker thread owns one.
pub struct Workspace {
    fft: FftEngine,
    cbuf: Vec<Complex64>,
    tmp: Vec<f64>,
    tri: TridiagScratch,
}

#[derive(Default)]
struct TridiagScratch {
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
    rhs: Vec<f64>,
    z: Vec<f64>,
    gamma: Vec<f64>,
}

impl Default for Workspace {
    fn default() -> Self {
        Self::new()
    }
}

impl Workspace {
    pub fn new() -> Self {
        Workspace {
            fft: FftEngine::new(),
            cbuf: Vec::new(),
            tmp: Vec::new(),
            tri: TridiagScratch::default(),
        }
    }
}

pub enum Propagator {
    Spectral(SpectralPropagator),
    CrankNicolson(CnPropagator),
}

pub struct SpectralPropagator {
    grid: SpatialGrid,
    time: TimeGrid,
    multiplier: Vec<Complex64>,
}

pub struct CnPropagator {
    grid: SpatialGrid,
    time: TimeGrid,
    coefficients: VariableCoefficients,
}

/// Build the per-step propagator family for the operator on the given mesh.
pub fn build_propagator(
    op: &OperatorSpec,
    grid: &SpatialGrid,
    time: &TimeGrid,
) -> Result<Propagator> {
    op.validate(grid, time)?;
    let dt = time.dt();
    match &op.coefficients {
        Coefficients::Constant(c) => {
            let k = grid.dim();
            let mut multiplier = Vec::with_capacity(grid.len());
            for flat in 0..grid.len() {
                let xi = grid.mode_wavenumber(flat);
                let mut quad = 0.0;
                for i in 0..k {
                    for j in 0..k {
                        quad += c.diffusion[i * k + j] * xi[i] * xi[j];
                    }
                }
                let drift: f64 = c.drift.iter().zip(&xi).map(|(b, x)| b * x).sum();
                let exponent = Complex64::new(-(quad + c.zeroth) * dt, -drift * dt);
                multiplier.push(exponent.exp());
            }
            Ok(Propagator::Spectral(SpectralPropagator {
                grid: grid.clone(),
                time: time.clone(),
                multiplier,
            }))
        }
        Coefficients::Variable(c) => {
            if dt > grid.spacing() + 1e-15 {
                return Err(Error::invalid(format!(
                    "time step {dt} exceeds the stability budget dt <= h = {}",
                    grid.spacing()
                )));
            }
            if grid.dim() >= 2 && grid.len() > 4096 {
                return Err(Error::unsupported(
                    "variable-coefficient propagator in k >= 2 is limited to 4096 grid points",
                ));
            }
            Ok(Propagator::CrankNicolson(CnPropagator {
                grid: grid.clone(),
                time: time.clone(),
                coefficients: c.clone(),
            }))
        }
    }
}

impl Propagator {
    pub fn grid(&self) -> &SpatialGrid {
        match self {
            Propagator::Spectral(p) => &p.grid,
            Propagator::CrankNicolson(p) => &p.grid,
        }
    }

    pub fn time_grid(&self) -> &TimeGrid {
        match self {
            Propagator::Spectral(p) => &p.time,
            Propagator::CrankNicolson(p) => &p.time,
        }
    }

    pub fn dt(&self) -> f64 {
        match self {
            Propagator::Spectral(p) => p.time.dt(),
            Propagator::CrankNicolson(p) => p.time.dt(),
        }
    }

    pub fn is_spectral(&self) -> bool {
        matches!(self, Propagator::Spectral(_))
    }

    /// One step `t_n -> t_{n+1}` in place.
    pub fn apply_step(&self, step: usize, field: &mut [f64], ws: &mut Workspace) -> Result<()> {
        match self {
            Propagator::Spectral(p) => {
                p.apply_multiplier(field, ws, 1);
                Ok(())
            }
            Propagator::CrankNicolson(p) => p.apply_step(step, field, ws),
        }
    }

    /// `n` consecutive steps starting at `from`; the spectral case collapses
    /// them into a single multiplier application.
    pub fn apply_many(
        &self,
        from: usize,
        n: usize,
        field: &mut [f64],
        ws: &mut Workspace,
    ) -> Result<()> {
        match self {
            Propagator::Spectral(p) => {
                if n > 0 {
                    p.apply_multiplier(field, ws, n as u32);
                }
                Ok(())
            }
            Propagator::CrankNicolson(p) => {
                for s in from..from + n {
                    p.apply_step(s, field, ws)?;
                }
                Ok(())
            }
        }
    }
}

impl SpectralPropagator {
    pub fn multiplier(&self) -> &[Complex64] {
        &self.multiplier
    }

    fn apply_multiplier(&self, field: &mut [f64], ws: &mut Workspace, power: u32) {
        let n = self.grid.len();
        ws.cbuf.resize(n, Complex64::ZERO);
        for (c, &v) in ws.cbuf.iter_mut().zip(field.iter()) {
            *c = Complex64::new(v, 0.0);
        }
        let shape = self.grid.shape();
        ws.fft.forward(&mut ws.cbuf, &shape);
        if power == 1 {
            for (c, m) in ws.cbuf.iter_mut().zip(&self.multiplier) {
                *c *= m;
            }
        } else {
            for (c, m) in ws.cbuf.iter_mut().zip(&self.multiplier) {
                *c *= m.powu(power);
            }
        }
        ws.fft.inverse(&mut ws.cbuf, &shape);
        let scale = 1.0 / n as f64;
        for (v, c) in field.iter_mut().zip(&ws.cbuf) {
            *v = c.re * scale;
        }
    }
}

impl CnPropagator {
    /// Stencil application of `A(t) u` where `A = -sum a d2 + sum b d + c`.
    fn apply_operator(&self, t: f64, field: &[f64], out: &mut [f64]) {
        let grid = &self.grid;
        let k = grid.dim();
        let n = grid.n();
        let h = grid.spacing();
        let h2 = h * h;
        for flat in 0..grid.len() {
            let x = grid.site(flat);
            let mut acc = (self.coefficients.zeroth)(t, &x) * field[flat];
            for i in 0..k {
                let up = grid.shifted(flat, i, 1);
                let dn = grid.shifted(flat, i, n - 1);
                let aii = (self.coefficients.diffusion[i * k + i])(t, &x);
                acc -= aii * (field[up] - 2.0 * field[flat] + field[dn]) / h2;
                let bi = (self.coefficients.drift[i])(t, &x);
                acc += bi * (field[up] - field[dn]) / (2.0 * h);
                for j in (i + 1)..k {
                    let aij = (self.coefficients.diffusion[i * k + j])(t, &x);
                    if aij != 0.0 {
                        let pp = grid.shifted(up, j, 1);
                        let pm = grid.shifted(up, j, n - 1);
                        let mp = grid.shifted(dn, j, 1);
                        let mm = grid.shifted(dn, j, n - 1);
                        // both (i,j) and (j,i) contribute: factor 2
                        acc -= 2.0 * aij * (field[pp] - field[pm] - field[mp] + field[mm])
                            / (4.0 * h2);
                    }
                }
            }
            out[flat] = acc;
        }
    }

    fn apply_step(&self, step: usize, field: &mut [f64], ws: &mut Workspace) -> Result<()> {
        let n_sites = self.grid.len();
        let dt = self.time.dt();
        let t0 = self.time.time(step);
        let t1 = self.time.time(step + 1);

        // rhs = (I - dt/2 A(t0)) u
        ws.tmp.resize(n_sites, 0.0);
        let mut rhs = vec![0.0; n_sites];
        self.apply_operator(t0, field, &mut ws.tmp);
        for i in 0..n_sites {
            rhs[i] = field[i] - 0.5 * dt * ws.tmp[i];
        }

        if self.grid.dim() == 1 {
            self.solve_cyclic_tridiag(t1, &rhs, field, ws)
        } else {
            self.solve_dense(t1, &rhs, field)
        }
    }

    /// Assemble and solve `(I + dt/2 A(t1)) out = rhs` for k = 1 via the
    /// cyclic Thomas algorithm (Sherman-Morrison corner removal).
    fn solve_cyclic_tridiag(
        &self,
        t1: f64,
        rhs: &[f64],
        out: &mut [f64],
        ws: &mut Workspace,
    ) -> Result<()> {
        let n = self.grid.n();
        let h = self.grid.spacing();
        let h2 = h * h;
        let dt = self.time.dt();
        let tri = &mut ws.tri;
        tri.sub.resize(n, 0.0);
        tri.diag.resize(n, 0.0);
        tri.sup.resize(n, 0.0);
        tri.rhs.resize(n, 0.0);
        tri.z.resize(n, 0.0);
        tri.gamma.resize(n, 0.0);

        for i in 0..n {
            let x = [i as f64 * h];
            let a = (self.coefficients.diffusion[0])(t1, &x);
            let b = (self.coefficients.drift[0])(t1, &x);
            let c = (self.coefficients.zeroth)(t1, &x);
            tri.sub[i] = 0.5 * dt * (-a / h2 - b / (2.0 * h));
            tri.diag[i] = 1.0 + 0.5 * dt * (2.0 * a / h2 + c);
            tri.sup[i] = 0.5 * dt * (-a / h2 + b / (2.0 * h));
        }

        // Corners: row 0 couples to column n-1 with weight sub[0], row n-1 to
        // column 0 with weight sup[n-1]. Remove them with a rank-one update:
        // M = T + u v^T, u = (g, 0, .., 0, beta)^T, v = (1, 0, .., 0, alpha/g)^T.
        let alpha = tri.sub[0];
        let beta = tri.sup[n - 1];
        let g = -tri.diag[0];
        let d0 = tri.diag[0] - g;
        let dn = tri.diag[n - 1] - alpha * beta / g;

        let solve = |tri: &mut TridiagScratch, d0: f64, dn: f64, input: &[f64], out: &mut [f64]| -> Result<()> {
            // Thomas on the modified tridiagonal (corners dropped).
            let n = input.len();
            let mut beta_d = d0;
            if beta_d == 0.0 {
                return Err(Error::numerical("singular tridiagonal system"));
            }
            out[0] = input[0] / beta_d;
            for i in 1..n {
                tri.gamma[i] = tri.sup[i - 1] / beta_d;
                let di = if i == n - 1 { dn } else { tri.diag[i] };
                beta_d = di - tri.sub[i] * tri.gamma[i];
                if beta_d == 0.0 {
                    return Err(Error::numerical("singular tridiagonal system"));
                }
                out[i] = (input[i] - tri.sub[i] * out[i - 1]) / beta_d;
            }
            for i in (0..n - 1).rev() {
                let correction = tri.gamma[i + 1] * out[i + 1];
                out[i] -= correction;
            }
            Ok(())
        };

        tri.rhs.copy_from_slice(rhs);
        let mut x_main = vec![0.0; n];
        let input = std::mem::take(&mut tri.rhs);
        solve(tri, d0, dn, &input, &mut x_main)?;
        tri.rhs = input;

        let mut u = vec![0.0; n];
        u[0] = g;
        u[n - 1] = beta;
        let mut z = vec![0.0; n];
        solve(tri, d0, dn, &u, &mut z)?;

        let vx = x_main[0] + alpha / g * x_main[n - 1];
        let vz = z[0] + alpha / g * z[n - 1];
        let factor = vx / (1.0 + vz);
        for i in 0..n {
            out[i] = x_main[i] - factor * z[i];
        }
        Ok(())
    }

    fn solve_dense(&self, t1: f64, rhs: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.grid.len();
        let dt = self.time.dt();
        // Columns of A via unit responses; n <= 4096 is enforced at build.
        let mut m = nalgebra::DMatrix::<f64>::zeros(n, n);
        let mut unit = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            unit[j] = 1.0;
            self.apply_operator(t1, &unit, &mut col);
            for i in 0..n {
                m[(i, j)] = 0.5 * dt * col[i] + if i == j { 1.0 } else { 0.0 };
            }
            unit[j] = 0.0;
        }
        let b = nalgebra::DVector::<f64>::from_column_slice(rhs);
        let sol = m
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::numerical("Crank-Nicolson system is singular"))?;
        out.copy_from_slice(sol.as_slice());
        Ok(())
    }
}

/// Normalized Gaussian kernel `(4 pi a t)^{-k/2} exp(-|x|^2 / (4 a t))`.
pub fn heat_kernel_eval(t: f64, x: &[f64], diffusivity: f64) -> Result<f64> {
    if t <= 0.0 || t.is_nan() {
        return Err(Error::invalid(format!("heat kernel needs t > 0, got {t}")));
    }
    let k = x.len() as f64;
    let r2: f64 = x.iter().map(|v| v * v).sum();
    let denom = 4.0 * std::f64::consts::PI * diffusivity * t;
    Ok(denom.powf(-k / 2.0) * (-r2 / (4.0 * diffusivity * t)).exp())
}

/// Torus-periodized Gaussian kernel (images summed over `[-images, images]^k`).
pub fn heat_kernel_periodized(
    t: f64,
    x: &[f64],
    diffusivity: f64,
    period: f64,
    images: i64,
) -> Result<f64> {
    let k = x.len();
    let mut total = 0.0;
    let mut offsets = vec![-images; k];
    loop {
        let shifted: Vec<f64> =
            x.iter().zip(&offsets).map(|(v, &j)| v + j as f64 * period).collect();
        total += heat_kernel_eval(t, &shifted, diffusivity)?;
        let mut d = 0;
        loop {
            if d == k {
                return Ok(total);
            }
            offsets[d] += 1;
            if offsets[d] <= images {
                break;
            }
            offsets[d] = -images;
            d += 1;
        }
    }
}

/// Discrete delta of unit mass at `site`.
pub fn delta_field(grid: &SpatialGrid, site: usize) -> Vec<f64> {
    let mut f = vec![0.0; grid.len()];
    f[site] = 1.0 / grid.cell_volume();
    f
}

/// Response after `n_steps` steps from `from_step`, starting at a unit-mass
/// delta at `site`.
pub fn delta_response(
    prop: &Propagator,
    site: usize,
    from_step: usize,
    n_steps: usize,
    ws: &mut Workspace,
) -> Result<Vec<f64>> {
    let mut field = delta_field(prop.grid(), site);
    prop.apply_many(from_step, n_steps, &mut field, ws)?;
    Ok(field)
}

/// Mass (should be 1 when `b = c = 0`) and sign statistics of one step.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct StepQuality {
    pub mass_min: f64,
    pub mass_max: f64,
    /// Most negative kernel entry over the probe deltas.
    pub min_entry: f64,
    /// Largest kernel entry over the probe deltas.
    pub max_entry: f64,
}

/// Apply one step to the constant-one field (row sums) and to probe deltas
/// (kernel columns) and report mass and positivity statistics.
pub fn step_quality(
    prop: &Propagator,
    step: usize,
    probe_sites: &[usize],
    ws: &mut Workspace,
) -> Result<StepQuality> {
    let grid = prop.grid();
    let mut ones = vec![1.0; grid.len()];
    prop.apply_step(step, &mut ones, ws)?;
    let mass_min = ones.iter().cloned().fold(f64::INFINITY, f64::min);
    let mass_max = ones.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    let mut min_entry = f64::INFINITY;
    let mut max_entry = f64::NEG_INFINITY;
    for &site in probe_sites {
        let resp = delta_response(prop, site, step, 1, ws)?;
        for &v in &resp {
            min_entry = min_entry.min(v);
            max_entry = max_entry.max(v);
        }
    }
    Ok(StepQuality { mass_min, mass_max, min_entry, max_entry })
}

/// Sup-norm residual of the semigroup identity over a probe set of unit-mass
/// inputs, relative to the direct propagator's sup-norm.
///
/// Spectral case: compares `Gamma(t_j; t_i)` against
/// `Gamma(t_j; t_r) Gamma(t_r; t_i)` (zero to rounding). Crank-Nicolson
/// composes steps exactly by construction, so the residual instead compares
/// the composed propagator against a half-step reference on the same
/// interval (a Richardson-style consistency measure, O(dt^2)).
pub fn semigroup_residual(
    prop: &Propagator,
    op: &OperatorSpec,
    i: usize,
    r: usize,
    j: usize,
    ws: &mut Workspace,
) -> Result<f64> {
    if !(i <= r && r <= j) {
        return Err(Error::invalid("need time indices i <= r <= j"));
    }
    let grid = prop.grid();
    let sites = [0, grid.len() / 3, grid.len() / 2, 2 * grid.len() / 3];
    let mut worst: f64 = 0.0;
    match prop {
        Propagator::Spectral(_) => {
            for &s in &sites {
                let direct = delta_response(prop, s, i, j - i, ws)?;
                let mut composed = delta_field(grid, s);
                prop.apply_many(i, r - i, &mut composed, ws)?;
                prop.apply_many(r, j - r, &mut composed, ws)?;
                let sup = direct.iter().cloned().fold(0.0_f64, |m, v| m.max(v.abs()));
                let diff = direct
                    .iter()
                    .zip(&composed)
                    .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
                if sup > 0.0 {
                    worst = worst.max(diff / sup);
                }
            }
        }
        Propagator::CrankNicolson(p) => {
            let fine_time = TimeGrid::new(p.time.horizon(), 2 * p.time.steps())?;
            let fine = build_propagator(op, grid, &fine_time)?;
            for &s in &sites {
                let direct = delta_response(prop, s, i, j - i, ws)?;
                let refined = delta_response(&fine, s, 2 * i, 2 * (j - i), ws)?;
                let sup = refined.iter().cloned().fold(0.0_f64, |m, v| m.max(v.abs()));
                let diff = direct
                    .iter()
                    .zip(&refined)
                    .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
                if sup > 0.0 {
                    worst = worst.max(diff / sup);
                }
            }
        }
    }
    Ok(worst)
}

/// Dominating-Gaussian report: with the decay `c` fixed by the caller, the
/// smallest amplitude `C` such that every probed kernel entry satisfies
/// `|Gamma(t, x; 0, y)| <= C t^{-k/2} exp(-c d(x,y)^2 / t)` (torus distance).
#[derive(Debug, Clone, serde::Serialize)]
pub struct GaussianBoundReport {
    pub decay: f64,
    pub amplitude: f64,
    /// `(elapsed steps, smallest amplitude needed at that horizon)`.
    pub per_horizon: Vec<(usize, f64)>,
}

/// Kernel entries smaller than this fraction of the response sup are treated
/// as numerically zero by the Gaussian-bound fit.
pub const NOISE_FLOOR: f64 = 1e-12;

pub fn fit_gaussian_bound(
    prop: &Propagator,
    horizons: &[usize],
    probe_sites: &[usize],
    decay: f64,
    ws: &mut Workspace,
) -> Result<GaussianBoundReport> {
    let grid = prop.grid();
    let kf = grid.dim() as f64;
    let dt = prop.dt();
    let mut per_horizon = Vec::new();
    let mut amplitude: f64 = 0.0;
    for &n in horizons {
        if n == 0 {
            return Err(Error::invalid("horizon must be at least one step"));
        }
        let t = n as f64 * dt;
        let mut needed: f64 = 0.0;
        for &site in probe_sites {
            let y = grid.site(site);
            let resp = delta_response(prop, site, 0, n, ws)?;
            // Entries below a sup-relative floor are numerical debris (FFT
            // rounding, spectral truncation ringing), not kernel values; the
            // amplifier exp(c d^2 / t) would otherwise pump them above any
            // bound. The caller must still pick horizons where the true
            // far-field kernel sits above this floor.
            let sup = resp.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let floor = NOISE_FLOOR * sup;
            for (flat, &v) in resp.iter().enumerate() {
                if v.abs() <= floor {
                    continue;
                }
                let d = grid.torus_distance(&grid.site(flat), &y);
                // log-space to survive the far-field exponential
                let log_c = v.abs().ln() + 0.5 * kf * t.ln() + decay * d * d / t;
                needed = needed.max(log_c.exp());
            }
        }
        per_horizon.push((n, needed));
        amplitude = amplitude.max(needed);
    }
    Ok(GaussianBoundReport { decay, amplitude, per_horizon })
}

/// Verify a previously fitted `(C, c)` pair on (possibly different) horizons:
/// returns the worst ratio `|kernel| / (C t^{-k/2} e^{-c d^2/t})`.
pub fn verify_gaussian_bound(
    prop: &Propagator,
    horizons: &[usize],
    probe_sites: &[usize],
    decay: f64,
    amplitude: f64,
    ws: &mut Workspace,
) -> Result<f64> {
    let report = fit_gaussian_bound(prop, horizons, probe_sites, decay, ws)?;
    Ok(report.amplitude / amplitude)
}

/// Explicit-Euler reference propagation with `refine` fine steps per coarse
/// step; the independent oracle for the Crank-Nicolson route.
pub fn explicit_reference_response(
    op: &OperatorSpec,
    grid: &SpatialGrid,
    time: &TimeGrid,
    site: usize,
    n_steps: usize,
    refine: usize,
) -> Result<Vec<f64>> {
    let coeffs = match &op.coefficients {
        Coefficients::Variable(c) => c.clone(),
        Coefficients::Constant(_) => {
            return Err(Error::invalid("explicit reference targets the variable route"))
        }
    };
    let cn = CnPropagator { grid: grid.clone(), time: time.clone(), coefficients: coeffs };
    let dt_fine = time.dt() / refine as f64;
    let mut field = delta_field(grid, site);
    let mut tmp = vec![0.0; grid.len()];
    for s in 0..n_steps * refine {
        let t = s as f64 * dt_fine;
        cn.apply_operator(t, &field, &mut tmp);
        for (f, d) in field.iter_mut().zip(&tmp) {
            *f -= dt_fine * d;
        }
    }
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn constant_fn(v: f64) -> SpaceTimeFn {
        Arc::new(move |_t, _x| v)
    }

    fn sin_diffusion(period: f64) -> SpaceTimeFn {
        Arc::new(move |_t, x: &[f64]| 1.0 + 0.5 * (2.0 * PI * x[0] / period).sin())
    }

    fn variable_op(period: f64) -> OperatorSpec {
        OperatorSpec {
            coefficients: Coefficients::Variable(VariableCoefficients {
                diffusion: vec![sin_diffusion(period)],
                drift: vec![constant_fn(0.0)],
                zeroth: constant_fn(0.0),
            }),
            ellipticity: 0.5,
        }
    }

    #[test]
    fn heat_kernel_normalization() {
        let t = 1.0 / (4.0 * PI);
        assert!((heat_kernel_eval(t, &[0.0], 1.0).unwrap() - 1.0).abs() < 1e-14);
        // lattice mass
        for &tt in &[0.01, 0.3, 1.0] {
            let h = 0.01;
            let mass: f64 = (-4000..4000)
                .map(|i| heat_kernel_eval(tt, &[i as f64 * h], 1.0).unwrap() * h)
                .sum();
            assert!((mass - 1.0).abs() < 1e-6, "t={tt}: {mass}");
        }
        assert!(heat_kernel_eval(0.0, &[0.0], 1.0).is_err());
    }

    #[test]
    fn heat_kernel_fourier_transform() {
        // sum_x G(t,x) e^{-i xi x} h approximates exp(-a t xi^2)
        let (t, a, h) = (0.1, 1.0, 0.005);
        for &m in &[1.0_f64, 3.0, 7.0] {
            let xi = 2.0 * PI * m / 8.0;
            let mut re = 0.0;
            for i in -8000..8000 {
                let x = i as f64 * h;
                re += heat_kernel_eval(t, &[x], a).unwrap() * (xi * x).cos() * h;
            }
            assert!((re - (-a * t * xi * xi).exp()).abs() < 1e-10, "xi={xi}");
        }
    }

    #[test]
    fn spectral_delta_matches_periodized_kernel() {
        let grid = SpatialGrid::new(1, 64, 8.0).unwrap();
        let time = TimeGrid::new(0.05, 1).unwrap();
        let prop = build_propagator(&OperatorSpec::heat(1, 1.0), &grid, &time).unwrap();
        let mut ws = Workspace::new();
        let resp = delta_response(&prop, 0, 0, 1, &mut ws).unwrap();
        for (flat, &v) in resp.iter().enumerate() {
            let x = grid.site(flat);
            let with_wrap = heat_kernel_periodized(0.05, &x, 1.0, 8.0, 2).unwrap();
            assert!((v - with_wrap).abs() < 1e-11, "site {flat}: {v} vs {with_wrap}");
        }
    }

    #[test]
    fn zeroth_order_decays_constants() {
        let grid = SpatialGrid::new(1, 32, 4.0).unwrap();
        let time = TimeGrid::new(0.1, 10).unwrap();
        let op = OperatorSpec::constant(vec![1.0], vec![0.0], 0.7, 1.0);
        let prop = build_propagator(&op, &grid, &time).unwrap();
        let mut ws = Workspace::new();
        let mut field = vec![1.0; grid.len()];
        prop.apply_step(0, &mut field, &mut ws).unwrap();
        let expected = (-0.7 * time.dt()).exp();
        for &v in &field {
            assert!((v - expected).abs() < 1e-8);
        }
    }

    #[test]
    fn power_application_equals_repeated_steps() {
        let grid = SpatialGrid::new(1, 32, 4.0).unwrap();
        let time = TimeGrid::new(0.2, 16).unwrap();
        let op = OperatorSpec::constant(vec![0.8], vec![0.3], 0.1, 0.8);
        let prop = build_propagator(&op, &grid, &time).unwrap();
        let mut ws = Workspace::new();
        let mut once = delta_field(&grid, 5);
        for s in 0..6 {
            prop.apply_step(s, &mut once, &mut ws).unwrap();
        }
        let many = delta_response(&prop, 5, 0, 6, &mut ws).unwrap();
        for (a, b) in once.iter().zip(&many) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn cn_matches_spectral_for_smooth_mode() {
        // Constant coefficients through the variable route: Crank-Nicolson
        // against the exact multiplier on a resolved mode.
        let grid = SpatialGrid::new(1, 64, 8.0).unwrap();
        let time = TimeGrid::new(0.1, 10).unwrap();
        let op_var = OperatorSpec {
            coefficients: Coefficients::Variable(VariableCoefficients {
                diffusion: vec![constant_fn(1.0)],
                drift: vec![constant_fn(0.0)],
                zeroth: constant_fn(0.0),
            }),
            ellipticity: 0.9,
        };
        let cn = build_propagator(&op_var, &grid, &time).unwrap();
        let mut ws = Workspace::new();
        let xi = grid.wavenumber(1);
        let mut field: Vec<f64> =
            (0..grid.len()).map(|i| (xi * grid.site(i)[0]).cos()).collect();
        cn.apply_step(0, &mut field, &mut ws).unwrap();
        let exact = (-xi * xi * time.dt()).exp();
        for (i, &v) in field.iter().enumerate() {
            let want = exact * (xi * grid.site(i)[0]).cos();
            assert!((v - want).abs() < 1e-4, "site {i}: {v} vs {want}");
        }
    }

    #[test]
    fn cn_conserves_mass_and_near_positivity_on_resolved_mesh() {
        let grid = SpatialGrid::new(1, 64, 8.0).unwrap();
        // r = a_max dt / h^2 = 1.5 * (1/256) / 0.015625 = 0.375
        let time = TimeGrid::new(0.0625, 16).unwrap();
        let prop = build_propagator(&variable_op(8.0), &grid, &time).unwrap();
        let mut ws = Workspace::new();
        let q = step_quality(&prop, 3, &[0, 16, 32, 48], &mut ws).unwrap();
        assert!((q.mass_min - 1.0).abs() < 1e-3 && (q.mass_max - 1.0).abs() < 1e-3, "{q:?}");
        assert!(q.min_entry >= -1e-8 * q.max_entry, "{q:?}");
    }

    #[test]
    fn cn_matches_explicit_reference() {
        let grid = SpatialGrid::new(1, 64, 8.0).unwrap();
        let time = TimeGrid::new(0.0625, 16).unwrap();
        let op = variable_op(8.0);
        let prop = build_propagator(&op, &grid, &time).unwrap();
        let mut ws = Workspace::new();
        let cn = delta_response(&prop, 16, 0, 16, &mut ws).unwrap();
        let reference = explicit_reference_response(&op, &grid, &time, 16, 16, 64).unwrap();
        let sup = reference.iter().cloned().fold(0.0_f64, |m, v| m.max(v.abs()));
        for (a, b) in cn.iter().zip(&reference) {
            assert!((a - b).abs() / sup < 1e-2, "{a} vs {b}");
        }
    }

    #[test]
    fn semigroup_exact_for_spectral() {
        let grid = SpatialGrid::new(1, 64, 8.0).unwrap();
        let time = TimeGrid::new(0.5, 32).unwrap();
        let op = OperatorSpec::heat(1, 1.0);
        let prop = build_propagator(&op, &grid, &time).unwrap();
        let mut ws = Workspace::new();
        let res = semigroup_residual(&prop, &op, 2, 9, 20, &mut ws).unwrap();
        assert!(res <= 1e-12, "residual {res}");
        let degenerate = semigroup_residual(&prop, &op, 4, 4, 12, &mut ws).unwrap();
        assert!(degenerate <= 1e-12);
    }

    #[test]
    fn semigroup_residual_cn_is_second_order() {
        let grid = SpatialGrid::new(1, 64, 8.0).unwrap();
        let op = variable_op(8.0);
        let mut ws = Workspace::new();
        let coarse_time = TimeGrid::new(0.0625, 16).unwrap();
        let coarse = build_propagator(&op, &grid, &coarse_time).unwrap();
        let r1 = semigroup_residual(&coarse, &op, 0, 8, 16, &mut ws).unwrap();
        let fine_time = TimeGrid::new(0.0625, 32).unwrap();
        let fine = build_propagator(&op, &grid, &fine_time).unwrap();
        let r2 = semigroup_residual(&fine, &op, 0, 16, 32, &mut ws).unwrap();
        let ratio = r1 / r2;
        assert!((2.5..8.0).contains(&ratio), "r1={r1} r2={r2} ratio={ratio}");
    }

    #[test]
    fn gaussian_bound_constant_laplacian() {
        // Horizons sit in the resolved window: exp(-xi_max^2 t) must fall
        // below the Gaussian at the torus diameter, or truncation ringing,
        // amplified by exp(c d^2 / t), swamps the fit. Here xi_max^2 = 631.7
        // and the earliest fitted horizon has xi_max^2 t = 79 against a
        // worst-case amplifier exponent of 25.6.
        let grid = SpatialGrid::new(1, 64, 8.0).unwrap();
        let time = TimeGrid::new(0.25, 64).unwrap();
        let prop = build_propagator(&OperatorSpec::heat(1, 1.0), &grid, &time).unwrap();
        let mut ws = Workspace::new();
        let report =
            fit_gaussian_bound(&prop, &[32, 64], &[0, 32], 0.2, &mut ws).unwrap();
        let free_space = (4.0 * PI).powf(-0.5);
        assert!(report.amplitude >= free_space * 0.99, "{report:?}");
        assert!(report.amplitude <= free_space * 1.3, "{report:?}");
        // held-out horizons obey the fitted pair
        let worst = verify_gaussian_bound(
            &prop,
            &[40, 48, 56],
            &[0, 16, 32],
            0.2,
            report.amplitude * 1.05,
            &mut ws,
        )
        .unwrap();
        assert!(worst <= 1.0, "worst ratio {worst}");
    }

    #[test]
    fn ellipticity_violation_is_rejected() {
        let grid = SpatialGrid::new(1, 32, 4.0).unwrap();
        let time = TimeGrid::new(0.05, 16).unwrap();
        let op = OperatorSpec {
            coefficients: Coefficients::Variable(VariableCoefficients {
                // dips to 0.25 < 0.5 on part of the torus
                diffusion: vec![Arc::new(|_t, x: &[f64]| {
                    1.0 - 0.75 * (2.0 * PI * x[0] / 4.0).sin().max(0.0)
                })],
                drift: vec![constant_fn(0.0)],
                zeroth: constant_fn(0.0),
            }),
            ellipticity: 0.5,
        };
        assert!(build_propagator(&op, &grid, &time).is_err());
    }

    #[test]
    fn stability_budget_is_enforced() {
        let grid = SpatialGrid::new(1, 32, 4.0).unwrap();
        // h = 0.125, dt = 0.25 > h
        let time = TimeGrid::new(4.0, 16).unwrap();
        assert!(build_propagator(&variable_op(4.0), &grid, &time).is_err());
    }

    #[test]
    fn two_dimensional_cn_with_mixed_term() {
        // a = [[1, 0.3], [0.3, 1]] constant, via the variable route; one step
        // applied to a plane wave matches the spectral multiplier to O(h^2).
        let grid = SpatialGrid::new(2, 16, 4.0).unwrap();
        let time = TimeGrid::new(0.05, 16).unwrap();
        let op_var = OperatorSpec {
            coefficients: Coefficients::Variable(VariableCoefficients {
                diffusion: vec![
                    constant_fn(1.0),
                    constant_fn(0.3),
                    constant_fn(0.3),
                    constant_fn(1.0),
                ],
                drift: vec![constant_fn(0.0), constant_fn(0.0)],
                zeroth: constant_fn(0.0),
            }),
            ellipticity: 0.6,
        };
        let cn = build_propagator(&op_var, &grid, &time).unwrap();
        let op_const =
            OperatorSpec::constant(vec![1.0, 0.3, 0.3, 1.0], vec![0.0, 0.0], 0.0, 0.6);
        let sp = build_propagator(&op_const, &grid, &time).unwrap();
        let mut ws = Workspace::new();
        let mk = |grid: &SpatialGrid| -> Vec<f64> {
            (0..grid.len())
                .map(|i| {
                    let x = grid.site(i);
                    let xi = [grid.wavenumber(1), grid.wavenumber(1)];
                    (xi[0] * x[0] + xi[1] * x[1]).cos()
                })
                .collect()
        };
        let mut f1 = mk(&grid);
        let mut f2 = mk(&grid);
        cn.apply_step(0, &mut f1, &mut ws).unwrap();
        sp.apply_step(0, &mut f2, &mut ws).unwrap();
        for (a, b) in f1.iter().zip(&f2) {
            assert!((a - b).abs() < 2e-3, "{a} vs {b}");
        }
    }
}
