//! Experiment execution. Every run writes a `manifest.json` (effective
//! config, package version, master seed, per-path seeds) plus kind-specific
//! artifacts into the output directory. A `partial` marker file exists while
//! the run is in flight and is removed only on success.
//!
//! Outputs are byte-identical for a fixed config and seed at any worker
//! count: per-path streams are derived from the master seed alone and results
//! are collected in path order, and neither thread count nor wall time enters
//! any artifact.

use crate::config::{ExperimentConfig, Kind, OutputFormat};
use serde::Serialize;
use spde_core::campaign::{derive_path_seed, path_rng, run_paths};
use spde_core::covariance::{decide_condition, ConditionVerdict};
use spde_core::factorization::round_trip;
use spde_core::greens::{build_propagator, Propagator, Workspace};
use spde_core::io::{write_csv, write_noise_dump};
use spde_core::noise::{empirical_covariance, isometry_check, normality_summary, NoiseSampler};
use spde_core::regularity::{assemble_table, fit_exponents, holder_targets, Direction};
use spde_core::solver::{euler_solve, moment_sup, picard_solve, SolutionField};
use spde_core::stats::MomentAccumulator;
use spde_core::{Error, Result};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

pub struct RunOutcome {
    pub artifacts: Vec<PathBuf>,
    /// Set when a consistency check inside the run disagreed with theory;
    /// the caller maps this to its own exit status.
    pub failed_verification: bool,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    std::fs::create_dir_all(&cfg.out)?;
    let marker = cfg.out.join("partial");
    std::fs::write(&marker, "run in progress\n")?;

    let mut outcome = if cfg.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::numerical(format!("cannot build thread pool: {e}")))?;
        pool.install(|| dispatch(cfg))?
    } else {
        dispatch(cfg)?
    };

    std::fs::remove_file(&marker)?;
    outcome.artifacts.insert(0, cfg.out.join("manifest.json"));
    Ok(outcome)
}

fn dispatch(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    write_manifest(cfg)?;
    match cfg.kind {
        Kind::Check => run_check(cfg),
        Kind::Noise => run_noise(cfg),
        Kind::Solve => run_solve(cfg),
        Kind::Picard => run_picard(cfg),
        Kind::Factorize => run_factorize(cfg),
        Kind::Regularity => run_regularity(cfg),
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    kind: &'static str,
    package: Package,
    master_seed: u64,
    paths: usize,
    path_seeds: Vec<u64>,
    config: &'a crate::config::ConfigFile,
}

#[derive(Serialize)]
struct Package {
    name: &'static str,
    version: &'static str,
}

fn write_manifest(cfg: &ExperimentConfig) -> Result<()> {
    let manifest = Manifest {
        kind: cfg.kind.name(),
        package: Package {
            name: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
        },
        master_seed: cfg.seed,
        paths: cfg.paths,
        path_seeds: (0..cfg.paths as u64).map(|i| derive_path_seed(cfg.seed, i)).collect(),
        config: &cfg.file,
    };
    write_json(&cfg.out.join("manifest.json"), &manifest)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::numerical(format!("serialization failed: {e}")))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Write a names-and-rows table as CSV or as a JSON array of objects,
/// extension by format. Returns the path written.
fn write_table(
    dir: &Path,
    stem: &str,
    header: &[&str],
    rows: &[Vec<f64>],
    format: OutputFormat,
) -> Result<PathBuf> {
    match format {
        OutputFormat::Csv => {
            let path = dir.join(format!("{stem}.csv"));
            write_csv(&path, header, rows)?;
            Ok(path)
        }
        OutputFormat::Json => {
            let path = dir.join(format!("{stem}.json"));
            let objects: Vec<serde_json::Map<String, serde_json::Value>> = rows
                .iter()
                .map(|row| {
                    header
                        .iter()
                        .zip(row)
                        .map(|(k, v)| (k.to_string(), serde_json::json!(v)))
                        .collect()
                })
                .collect();
            write_json(&path, &objects)?;
            Ok(path)
        }
    }
}

#[derive(Serialize)]
struct CheckReport {
    eta: f64,
    threshold: f64,
    verdict: ConditionVerdict,
}

fn run_check(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let k = cfg.grid.dim();
    let verdict = decide_condition(&cfg.model, k, cfg.eta)?;
    let report = CheckReport {
        eta: cfg.eta,
        threshold: cfg.model.integrability_threshold(k),
        verdict,
    };
    let path = cfg.out.join("check.json");
    write_json(&path, &report)?;
    Ok(RunOutcome {
        artifacts: vec![path],
        failed_verification: !report.verdict.agree,
    })
}

#[derive(Serialize)]
struct SiteVariance {
    empirical: f64,
    analytic: f64,
    std_error: f64,
    z_score: f64,
}

#[derive(Serialize)]
struct NoiseReport {
    fields: usize,
    site_variance: SiteVariance,
    /// Empirical vs analytic lag-1 spatial covariance, (value, std error).
    lag_covariance: (f64, f64),
    normality: spde_core::noise::NormalitySummary,
    isometry: spde_core::noise::IsometryCheck,
    verified: bool,
}

fn run_noise(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let dt = cfg.time.dt();
    let samples: Vec<Vec<f64>> = run_paths(cfg.paths, cfg.seed, |_, mut rng| {
        let mut sampler = NoiseSampler::new(&cfg.grid, &cfg.model, dt)
            .expect("config was validated at load time");
        sampler.sample(&mut rng)
    });

    // Per-site variance against the analytic value dt * sum of mode weights.
    let weights = spde_core::covariance::mode_weights(&cfg.model, &cfg.grid)?;
    let analytic = dt * weights.iter().sum::<f64>();
    let mut acc = MomentAccumulator::new();
    for field in &samples {
        acc.push(field[0]);
    }
    let se = analytic * (2.0 / (samples.len() as f64 - 1.0)).sqrt();
    let z = (acc.variance() - analytic).abs() / se;
    let site_variance = SiteVariance {
        empirical: acc.variance(),
        analytic,
        std_error: se,
        z_score: z,
    };

    let mut lag = vec![0usize; cfg.grid.dim()];
    lag[0] = 1;
    let lag_covariance = empirical_covariance(&cfg.grid, &samples, &lag)?;
    let normality = normality_summary(&samples, 0)?;

    // Deterministic integrand for the isometry probe; its own derived stream,
    // the first index unused by the field samples.
    let period = cfg.grid.period();
    let mut iso_rng = path_rng(cfg.seed, cfg.paths as u64);
    let isometry = isometry_check(
        |t, x| (1.0 + t) * (2.0 * PI * x[0] / period).cos(),
        &cfg.model,
        &cfg.grid,
        &cfg.time,
        cfg.paths.max(2),
        &mut iso_rng,
    )?;

    let verified = z <= 4.0
        && normality.skewness.abs() <= 4.0 * normality.skewness_se
        && normality.excess_kurtosis.abs() <= 4.0 * normality.kurtosis_se
        && (isometry.mc_variance - isometry.analytic_variance).abs()
            <= 4.0 * isometry.mc_variance_se;

    let report = NoiseReport {
        fields: samples.len(),
        site_variance,
        lag_covariance,
        normality,
        isometry,
        verified,
    };
    let stats_path = cfg.out.join("noise_stats.json");
    write_json(&stats_path, &report)?;

    let dump_path = cfg.out.join("noise_dump.bin");
    write_noise_dump(&dump_path, &cfg.grid, dt, &samples[0])?;

    let rows: Vec<Vec<f64>> = (0..cfg.grid.len())
        .map(|site| {
            let mut a = MomentAccumulator::new();
            for field in &samples {
                a.push(field[site]);
            }
            vec![site as f64, a.mean(), a.variance(), a.std_error()]
        })
        .collect();
    let table_path = write_table(
        &cfg.out,
        "site_stats",
        &["site", "mean", "variance", "std_error"],
        &rows,
        cfg.format,
    )?;

    Ok(RunOutcome {
        artifacts: vec![stats_path, dump_path, table_path],
        failed_verification: !report.verified,
    })
}

#[derive(Serialize)]
struct SolveReport {
    paths: usize,
    p: f64,
    /// max over the lattice of the p-th absolute moment across paths
    sup_moment: f64,
    final_time: f64,
}

fn run_solve(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let prop = build_propagator(&cfg.operator, &cfg.grid, &cfg.time)?;
    let fields = solve_paths(cfg, &prop)?;

    let report = SolveReport {
        paths: fields.len(),
        p: cfg.p,
        sup_moment: moment_sup(&fields, cfg.p)?,
        final_time: cfg.time.horizon(),
    };
    let report_path = cfg.out.join("solve.json");
    write_json(&report_path, &report)?;

    let last = cfg.time.steps();
    let rows: Vec<Vec<f64>> = (0..cfg.grid.len())
        .map(|site| {
            let mut a = MomentAccumulator::new();
            for f in &fields {
                a.push(f.value(last, site));
            }
            vec![site as f64, a.mean(), a.variance(), a.std_error()]
        })
        .collect();
    let stats_path = write_table(
        &cfg.out,
        "final_stats",
        &["site", "mean", "variance", "std_error"],
        &rows,
        cfg.format,
    )?;

    let field_rows: Vec<Vec<f64>> = (0..cfg.grid.len())
        .map(|site| vec![site as f64, fields[0].value(last, site)])
        .collect();
    let field_path =
        write_table(&cfg.out, "field0", &["site", "value"], &field_rows, cfg.format)?;

    Ok(RunOutcome {
        artifacts: vec![report_path, stats_path, field_path],
        failed_verification: false,
    })
}

fn solve_paths(cfg: &ExperimentConfig, prop: &Propagator) -> Result<Vec<SolutionField>> {
    let u0 = vec![0.0; cfg.grid.len()];
    let results: Vec<Result<SolutionField>> = run_paths(cfg.paths, cfg.seed, |idx, _rng| {
        euler_solve(
            prop,
            &cfg.nonlinearity,
            &cfg.model,
            &u0,
            derive_path_seed(cfg.seed, idx as u64),
        )
    });
    results.into_iter().collect()
}

fn run_picard(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let prop = build_propagator(&cfg.operator, &cfg.grid, &cfg.time)?;
    let u0 = vec![0.0; cfg.grid.len()];
    let (field, trace) = picard_solve(
        &prop,
        &cfg.nonlinearity,
        &cfg.model,
        &u0,
        derive_path_seed(cfg.seed, 0),
        cfg.max_iter,
        cfg.p,
    )?;

    let trace_path = cfg.out.join("picard.json");
    write_json(&trace_path, &trace)?;

    let last = cfg.time.steps();
    let rows: Vec<Vec<f64>> = (0..cfg.grid.len())
        .map(|site| vec![site as f64, field.value(last, site)])
        .collect();
    let field_path =
        write_table(&cfg.out, "final_field", &["site", "value"], &rows, cfg.format)?;

    if !trace.converged {
        return Err(Error::numerical(format!(
            "Picard iteration did not converge within {} sweeps (last squared sup difference {:.3e})",
            trace.iterations,
            trace.sup_moment_diffs.last().copied().unwrap_or(f64::NAN),
        )));
    }

    Ok(RunOutcome {
        artifacts: vec![trace_path, field_path],
        failed_verification: false,
    })
}

#[derive(Serialize)]
struct FactorizationReport {
    delta: f64,
    eta: f64,
    rule: spde_core::factorization::ReconstructionRule,
    relative_l2: f64,
}

fn run_factorize(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let fac = cfg.factorization.as_ref().expect("set for factorize runs at load time");
    let prop = build_propagator(&cfg.operator, &cfg.grid, &cfg.time)?;
    let steps = cfg.time.steps();
    let n = cfg.grid.len();

    // One noise realization shared by both sides of the round trip.
    let mut rng = path_rng(cfg.seed, 0);
    let mut sampler = NoiseSampler::new(&cfg.grid, &cfg.model, cfg.time.dt())?;
    let noise: Vec<Vec<f64>> = (0..steps).map(|_| sampler.sample(&mut rng)).collect();

    // Integrand Z(t, x) = sigma(t, x, 0), the reaction coefficient frozen at
    // the zero field.
    let mut z_values = vec![0.0; (steps + 1) * n];
    for step in 0..=steps {
        let t = cfg.time.time(step);
        for site in 0..n {
            z_values[step * n + site] = (cfg.nonlinearity.sigma)(t, &cfg.grid.site(site), 0.0);
        }
    }
    let z = SolutionField::new(cfg.grid.clone(), cfg.time.clone(), z_values, cfg.seed)?;

    let mut ws = Workspace::new();
    let trip = round_trip(&prop, &z, &noise, fac, &mut ws)?;

    let report = FactorizationReport {
        delta: fac.delta(),
        eta: fac.eta(),
        rule: fac.rule,
        relative_l2: trip.relative_l2,
    };
    let report_path = cfg.out.join("factorization.json");
    write_json(&report_path, &report)?;

    let last = steps;
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|site| {
            vec![
                site as f64,
                trip.reconstructed.value(last, site),
                trip.direct.value(last, site),
            ]
        })
        .collect();
    let table_path = write_table(
        &cfg.out,
        "round_trip",
        &["site", "reconstructed", "direct"],
        &rows,
        cfg.format,
    )?;

    Ok(RunOutcome {
        artifacts: vec![report_path, table_path],
        failed_verification: false,
    })
}

fn run_regularity(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let tier = cfg.tier();
    let prop = build_propagator(&cfg.operator, &cfg.grid, &cfg.time)?;
    let plan_t = tier.plan(Direction::Time, cfg.p)?;
    let plan_x = tier.plan(Direction::Space, cfg.p)?;
    let (target_t, target_x) = holder_targets(&cfg.model, cfg.grid.dim())?;

    // One shared path campaign feeds both directions.
    let u0 = vec![0.0; cfg.grid.len()];
    type PathSums = (Vec<(f64, u64)>, Vec<(f64, u64)>);
    let per_path: Vec<Result<PathSums>> = run_paths(cfg.paths, cfg.seed, |idx, _rng| {
        let field = euler_solve(
            &prop,
            &cfg.nonlinearity,
            &cfg.model,
            &u0,
            derive_path_seed(cfg.seed, idx as u64),
        )?;
        Ok((plan_t.per_path_sums(&field)?, plan_x.per_path_sums(&field)?))
    });
    let per_path: Vec<PathSums> = per_path.into_iter().collect::<Result<_>>()?;
    let sums_t: Vec<Vec<(f64, u64)>> = per_path.iter().map(|(t, _)| t.clone()).collect();
    let sums_x: Vec<Vec<(f64, u64)>> = per_path.iter().map(|(_, x)| x.clone()).collect();

    let mut artifacts = Vec::new();
    for (plan, sums, target, stem) in [
        (&plan_t, &sums_t, target_t, "time"),
        (&plan_x, &sums_x, target_x, "space"),
    ] {
        let table = assemble_table(plan, &cfg.grid, &cfg.time, sums, tier.batches)?;
        let report = fit_exponents(&table, target)?;
        let report_path = cfg.out.join(format!("regularity_{stem}.json"));
        write_json(&report_path, &report)?;
        artifacts.push(report_path);

        let rows: Vec<Vec<f64>> = table
            .lags
            .iter()
            .zip(table.moments.iter().zip(&table.std_errors))
            .map(|(lag, (m, se))| vec![*lag, *m, *se])
            .collect();
        artifacts.push(write_table(
            &cfg.out,
            &format!("moments_{stem}"),
            &["lag", "moment", "std_error"],
            &rows,
            cfg.format,
        )?);
    }

    Ok(RunOutcome { artifacts, failed_verification: false })
}
