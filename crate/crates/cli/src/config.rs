//! Experiment configuration: a strict TOML schema with one section per
//! module, validated down to the library invariants at load time. Unknown
//! keys are errors; every effective value (after flag overrides) is echoed
//! into the run manifest.

use serde::{Deserialize, Serialize};
use spde_core::covariance::CovarianceModel;
use spde_core::factorization::{FactorizationConfig, ReconstructionRule};
use spde_core::greens::{
    Coefficients, OperatorSpec, SpaceTimeFn, VariableCoefficients,
};
use spde_core::regularity::Tier;
use spde_core::solver::{Nonlinearity, ReactionFn};
use spde_core::{Error, Result, SpatialGrid, TimeGrid};
use std::f64::consts::PI;
use std::path::PathBuf;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Check,
    Noise,
    Solve,
    Picard,
    Factorize,
    Regularity,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Check => "check",
            Kind::Noise => "noise",
            Kind::Solve => "solve",
            Kind::Picard => "picard",
            Kind::Factorize => "factorize",
            Kind::Regularity => "regularity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TierChoice {
    #[default]
    Default,
    High,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub experiment: ExperimentSection,
    pub covariance: CovarianceSection,
    pub grid: GridSection,
    pub time: TimeSection,
    #[serde(default)]
    pub operator: OperatorSection,
    #[serde(default)]
    pub coefficients: CoefficientsSection,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    /// Optional; when present it must match the subcommand (typo guard).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<Kind>,
    /// Never serialized: the manifest describes what ran, not where it
    /// landed, so runs into different directories stay byte-identical.
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    White,
    Riesz,
    Bessel,
    Fractional,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceSection {
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hurst: Option<Vec<f64>>,
    /// Damping exponent for the admissibility condition; defaults to the
    /// midpoint (eta_min + 1)/2 of the admissible window.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
}

impl CovarianceSection {
    fn reject(p: Option<()>, key: &str, family: &str) -> Result<()> {
        match p {
            Some(()) => Err(Error::invalid(format!(
                "covariance key `{key}` does not apply to family `{family}`"
            ))),
            None => Ok(()),
        }
    }

    pub fn to_model(&self, k: usize) -> Result<CovarianceModel> {
        let model = match self.family {
            Family::White => {
                Self::reject(self.beta.map(|_| ()), "beta", "white")?;
                Self::reject(self.alpha.map(|_| ()), "alpha", "white")?;
                Self::reject(self.hurst.as_ref().map(|_| ()), "hurst", "white")?;
                CovarianceModel::White
            }
            Family::Riesz => {
                Self::reject(self.alpha.map(|_| ()), "alpha", "riesz")?;
                Self::reject(self.hurst.as_ref().map(|_| ()), "hurst", "riesz")?;
                let beta = self
                    .beta
                    .ok_or_else(|| Error::invalid("family `riesz` needs `beta`"))?;
                CovarianceModel::Riesz { beta }
            }
            Family::Bessel => {
                Self::reject(self.beta.map(|_| ()), "beta", "bessel")?;
                Self::reject(self.hurst.as_ref().map(|_| ()), "hurst", "bessel")?;
                let alpha = self
                    .alpha
                    .ok_or_else(|| Error::invalid("family `bessel` needs `alpha`"))?;
                CovarianceModel::Bessel { alpha }
            }
            Family::Fractional => {
                Self::reject(self.beta.map(|_| ()), "beta", "fractional")?;
                Self::reject(self.alpha.map(|_| ()), "alpha", "fractional")?;
                let hurst = self
                    .hurst
                    .clone()
                    .ok_or_else(|| Error::invalid("family `fractional` needs `hurst`"))?;
                CovarianceModel::Fractional { hurst }
            }
        };
        model.validate(k)?;
        Ok(model)
    }

    pub fn effective_eta(&self, model: &CovarianceModel, k: usize) -> Result<f64> {
        let eta = match self.eta {
            Some(e) => e,
            None => (model.integrability_threshold(k) + 1.0) / 2.0,
        };
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::invalid(format!("eta must lie in ]0, 1], got {eta}")));
        }
        Ok(eta)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "default_dim")]
    pub dim: usize,
    pub n: usize,
    pub period: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub horizon: f64,
    pub steps: usize,
}

fn default_dim() -> usize {
    1
}

fn default_one() -> f64 {
    1.0
}

fn default_half() -> f64 {
    0.5
}

/// Operator presets. Arbitrary coefficient expressions are out of scope; the
/// variable-coefficient route is exercised through `sin-diffusivity`,
/// `a(x) = mean + amplitude sin(2 pi x_0 / L)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "preset", rename_all = "kebab-case")]
pub enum OperatorSection {
    Heat {
        #[serde(default = "default_one")]
        diffusivity: f64,
    },
    Constant {
        diffusion: Vec<f64>,
        #[serde(default)]
        drift: Vec<f64>,
        #[serde(default)]
        zeroth: f64,
        ellipticity: f64,
    },
    SinDiffusivity {
        #[serde(default = "default_one")]
        mean: f64,
        #[serde(default = "default_half")]
        amplitude: f64,
    },
}

impl Default for OperatorSection {
    fn default() -> Self {
        OperatorSection::Heat { diffusivity: 1.0 }
    }
}

impl OperatorSection {
    pub fn to_spec(&self, grid: &SpatialGrid) -> Result<OperatorSpec> {
        let k = grid.dim();
        match self {
            OperatorSection::Heat { diffusivity } => {
                if *diffusivity <= 0.0 || diffusivity.is_nan() {
                    return Err(Error::invalid("heat preset needs diffusivity > 0"));
                }
                Ok(OperatorSpec::heat(k, *diffusivity))
            }
            OperatorSection::Constant { diffusion, drift, zeroth, ellipticity } => {
                if diffusion.len() != k * k {
                    return Err(Error::invalid(format!(
                        "constant preset needs a row-major {k} x {k} diffusion matrix"
                    )));
                }
                let drift = if drift.is_empty() { vec![0.0; k] } else { drift.clone() };
                if drift.len() != k {
                    return Err(Error::invalid(format!("drift must have {k} entries")));
                }
                Ok(OperatorSpec::constant(diffusion.clone(), drift, *zeroth, *ellipticity))
            }
            OperatorSection::SinDiffusivity { mean, amplitude } => {
                let ellipticity = mean - amplitude.abs();
                if ellipticity <= 0.0 || ellipticity.is_nan() {
                    return Err(Error::invalid(
                        "sin-diffusivity needs mean > |amplitude| for uniform ellipticity",
                    ));
                }
                let period = grid.period();
                let mut diffusion: Vec<SpaceTimeFn> = Vec::with_capacity(k * k);
                for i in 0..k {
                    for j in 0..k {
                        if i == j {
                            let (m, a) = (*mean, *amplitude);
                            diffusion.push(Arc::new(move |_t, x: &[f64]| {
                                m + a * (2.0 * PI * x[0] / period).sin()
                            }));
                        } else {
                            diffusion.push(Arc::new(|_t, _x: &[f64]| 0.0));
                        }
                    }
                }
                let zero: SpaceTimeFn = Arc::new(|_t, _x: &[f64]| 0.0);
                Ok(OperatorSpec {
                    coefficients: Coefficients::Variable(VariableCoefficients {
                        diffusion,
                        drift: vec![zero.clone(); k],
                        zeroth: zero,
                    }),
                    ellipticity,
                })
            }
        }
    }
}

/// Reaction-term presets `z -> sigma(z)`; each carries its own Lipschitz and
/// linear-growth constants so the solver can spot-check them.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "preset", rename_all = "kebab-case")]
pub enum CoefficientPreset {
    Zero,
    One,
    Constant { value: f64 },
    Sin,
    OnePlusHalfSin,
    Affine { intercept: f64, slope: f64 },
    ClippedLinear { cap: f64 },
}

impl CoefficientPreset {
    pub fn validate(&self) -> Result<()> {
        match self {
            CoefficientPreset::ClippedLinear { cap } if *cap <= 0.0 || cap.is_nan() => {
                Err(Error::invalid("clipped-linear needs cap > 0"))
            }
            CoefficientPreset::Constant { value } if !value.is_finite() => {
                Err(Error::invalid("constant preset needs a finite value"))
            }
            CoefficientPreset::Affine { intercept, slope }
                if !intercept.is_finite() || !slope.is_finite() =>
            {
                Err(Error::invalid("affine preset needs finite coefficients"))
            }
            _ => Ok(()),
        }
    }

    pub fn handle(&self) -> ReactionFn {
        match self {
            CoefficientPreset::Zero => Arc::new(|_t, _x, _z| 0.0),
            CoefficientPreset::One => Arc::new(|_t, _x, _z| 1.0),
            CoefficientPreset::Constant { value } => {
                let v = *value;
                Arc::new(move |_t, _x, _z| v)
            }
            CoefficientPreset::Sin => Arc::new(|_t, _x, z: f64| z.sin()),
            CoefficientPreset::OnePlusHalfSin => Arc::new(|_t, _x, z: f64| 1.0 + 0.5 * z.sin()),
            CoefficientPreset::Affine { intercept, slope } => {
                let (a, b) = (*intercept, *slope);
                Arc::new(move |_t, _x, z| a + b * z)
            }
            CoefficientPreset::ClippedLinear { cap } => {
                let c = *cap;
                Arc::new(move |_t, _x, z: f64| z.clamp(-c, c))
            }
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match self {
            CoefficientPreset::Zero
            | CoefficientPreset::One
            | CoefficientPreset::Constant { .. } => 0.0,
            CoefficientPreset::Sin | CoefficientPreset::ClippedLinear { .. } => 1.0,
            CoefficientPreset::OnePlusHalfSin => 0.5,
            CoefficientPreset::Affine { slope, .. } => slope.abs(),
        }
    }

    /// Constant `c` with `|f(z)| <= c (1 + |z|)`.
    pub fn growth(&self) -> f64 {
        match self {
            CoefficientPreset::Zero => 0.0,
            CoefficientPreset::One | CoefficientPreset::ClippedLinear { .. } => 1.0,
            CoefficientPreset::Constant { value } => value.abs(),
            CoefficientPreset::Sin => 1.0,
            CoefficientPreset::OnePlusHalfSin => 1.5,
            CoefficientPreset::Affine { intercept, slope } => intercept.abs().max(slope.abs()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientsSection {
    #[serde(default = "default_sigma")]
    pub sigma: CoefficientPreset,
    #[serde(default = "default_drift")]
    pub drift: CoefficientPreset,
}

fn default_sigma() -> CoefficientPreset {
    CoefficientPreset::One
}

fn default_drift() -> CoefficientPreset {
    CoefficientPreset::Zero
}

impl Default for CoefficientsSection {
    fn default() -> Self {
        CoefficientsSection { sigma: default_sigma(), drift: default_drift() }
    }
}

impl CoefficientsSection {
    pub fn to_nonlinearity(&self) -> Result<Nonlinearity> {
        self.sigma.validate()?;
        self.drift.validate()?;
        Ok(Nonlinearity::new(
            self.sigma.handle(),
            self.drift.handle(),
            self.sigma.lipschitz().max(self.drift.lipschitz()),
            // the growth bound covers |sigma| + |b| jointly
            self.sigma.growth() + self.drift.growth(),
        ))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct RunSection {
    /// Monte Carlo paths (or noise fields); per-kind default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_p")]
    pub p: f64,
    /// 0 = all cores. Never serialized: worker count must not enter the
    /// manifest, outputs are byte-identical at any thread count.
    #[serde(default, skip_serializing)]
    pub threads: usize,
    #[serde(default)]
    pub format: OutputFormat,
    /// Factorization exponent; defaults to min(0.9 (1 - eta)/2, 0.45).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default)]
    pub rule: ReconstructionRule,
    #[serde(default)]
    pub tier: TierChoice,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_p() -> f64 {
    2.0
}

fn default_max_iter() -> usize {
    30
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            paths: None,
            seed: 0,
            p: default_p(),
            threads: 0,
            format: OutputFormat::default(),
            delta: None,
            rule: ReconstructionRule::default(),
            tier: TierChoice::default(),
            max_iter: default_max_iter(),
        }
    }
}

/// Flag overrides; each one replaces the corresponding config value before
/// the manifest echo, so the manifest always reflects what actually ran.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub format: Option<OutputFormat>,
}

/// A fully validated experiment: parsed file (post-override echo) plus the
/// constructed library objects.
pub struct ExperimentConfig {
    pub file: ConfigFile,
    pub kind: Kind,
    pub out: PathBuf,
    pub model: CovarianceModel,
    pub eta: f64,
    pub grid: SpatialGrid,
    pub time: TimeGrid,
    pub operator: OperatorSpec,
    pub nonlinearity: Nonlinearity,
    pub paths: usize,
    pub seed: u64,
    pub p: f64,
    pub threads: usize,
    pub format: OutputFormat,
    pub factorization: Option<FactorizationConfig>,
    pub max_iter: usize,
}

pub fn load_config(path: &std::path::Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

impl ExperimentConfig {
    pub fn assemble(mut file: ConfigFile, kind: Kind, over: Overrides) -> Result<Self> {
        if let Some(declared) = file.experiment.kind {
            if declared != kind {
                return Err(Error::invalid(format!(
                    "config declares kind `{}` but the `{}` subcommand was invoked",
                    declared.name(),
                    kind.name()
                )));
            }
        }
        file.experiment.kind = Some(kind);
        if let Some(seed) = over.seed {
            file.run.seed = seed;
        }
        if let Some(paths) = over.paths {
            file.run.paths = Some(paths);
        }
        if let Some(threads) = over.threads {
            file.run.threads = threads;
        }
        if let Some(out) = over.out {
            file.experiment.out = Some(out);
        }
        if let Some(format) = over.format {
            file.run.format = format;
        }

        let (grid, time) = match kind {
            // the regularity tiers carry their own calibrated mesh
            Kind::Regularity => {
                let tier = tier_of(file.run.tier);
                (tier.grid()?, tier.time()?)
            }
            _ => (
                SpatialGrid::new(file.grid.dim, file.grid.n, file.grid.period)?,
                TimeGrid::new(file.time.horizon, file.time.steps)?,
            ),
        };
        let model = file.covariance.to_model(grid.dim())?;
        let eta = file.covariance.effective_eta(&model, grid.dim())?;
        let operator = file.operator.to_spec(&grid)?;
        operator.validate(&grid, &time)?;
        let nonlinearity = file.coefficients.to_nonlinearity()?;

        if file.run.p < 2.0 || file.run.p.is_nan() {
            return Err(Error::invalid("run.p must be >= 2"));
        }
        if kind == Kind::Picard && time.steps() > 256 {
            return Err(Error::invalid(
                "picard runs are capped at 256 time steps; reduce time.steps",
            ));
        }
        let factorization = if kind == Kind::Factorize {
            Some(match file.run.delta {
                Some(delta) => FactorizationConfig::new(delta, eta, file.run.rule)?,
                None => FactorizationConfig::with_default_delta(eta, file.run.rule)?,
            })
        } else {
            None
        };

        let paths = file.run.paths.unwrap_or(match kind {
            Kind::Noise => 1000,
            Kind::Regularity => tier_of(file.run.tier).paths,
            Kind::Picard | Kind::Factorize | Kind::Check => 1,
            Kind::Solve => 100,
        });
        if paths == 0 {
            return Err(Error::invalid("run.paths must be positive"));
        }

        let out = file
            .experiment
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from(format!("spde-{}", kind.name())));

        Ok(ExperimentConfig {
            kind,
            out,
            model,
            eta,
            grid,
            time,
            operator,
            nonlinearity,
            paths,
            seed: file.run.seed,
            p: file.run.p,
            threads: file.run.threads,
            format: file.run.format,
            factorization,
            max_iter: file.run.max_iter,
            file,
        })
    }

    pub fn tier(&self) -> Tier {
        tier_of(self.file.run.tier)
    }
}

pub fn tier_of(choice: TierChoice) -> Tier {
    match choice {
        TierChoice::Default => Tier::default_resolution(),
        TierChoice::High => Tier::high_resolution(),
    }
}
