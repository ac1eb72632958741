//! Monte-Carlo harness: geometry generation, GSNR/L/alpha sweeps, RMSE
//! aggregation, convergence traces and timing.

use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::admm::{AdmmConfig, AdmmError, TraceRecord};
use crate::estimator::{BuildContext, Estimator, EstimatorError, EstimatorRegistry};
use crate::loss::LossSpec;
use crate::model::{
    gamma_for_gsnr, measure_with, true_ranges, Measurements, ModelError, RngSeed, Scenario, StableParams,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("estimator lengths differ: {0} estimates vs {1} truths")]
    LengthMismatch(usize, usize),
    #[error("RMSE of an empty run set")]
    Empty,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Admm(#[from] AdmmError),
    #[error("worker pool: {0}")]
    Pool(String),
}

fn default_side() -> f64 {
    20.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Geometry {
    /// Source and sensors uniform in an origin-centered square, redrawn
    /// every run.
    RandomSquare {
        #[serde(default = "default_side")]
        side: f64,
    },
    /// Eight perimeter sensors, source at (2, 3).
    FixedPerimeter8,
    /// User-supplied geometry.
    Explicit { scenario: Scenario },
}

impl Geometry {
    fn realize<R: Rng + ?Sized>(&self, sensors: usize, rng: &mut R) -> Scenario {
        match self {
            Geometry::RandomSquare { side } => Scenario::random_square(*side, sensors, rng),
            Geometry::FixedPerimeter8 => Scenario::fixed_perimeter8(),
            Geometry::Explicit { scenario } => scenario.clone(),
        }
    }

    fn is_random(&self) -> bool {
        matches!(self, Geometry::RandomSquare { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    Gsnr(Vec<f64>),
    Sensors(Vec<usize>),
    Alpha(Vec<f64>),
}

impl Sweep {
    pub fn param(&self) -> &'static str {
        match self {
            Sweep::Gsnr(_) => "gsnr",
            Sweep::Sensors(_) => "sensors",
            Sweep::Alpha(_) => "alpha",
        }
    }

    fn points(&self) -> Vec<f64> {
        match self {
            Sweep::Gsnr(v) | Sweep::Alpha(v) => v.clone(),
            Sweep::Sensors(v) => v.iter().map(|l| *l as f64).collect(),
        }
    }
}

fn default_alpha() -> f64 {
    1.5
}
fn default_gsnr() -> f64 {
    20.0
}
fn default_sensors() -> usize {
    8
}

/// Values of the parameters that are not swept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedParams {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_gsnr")]
    pub gsnr_db: f64,
    #[serde(default = "default_sensors")]
    pub sensors: usize,
}

impl Default for FixedParams {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            gsnr_db: default_gsnr(),
            sensors: default_sensors(),
        }
    }
}

fn default_n_mc() -> usize {
    200
}
fn default_geometry() -> Geometry {
    Geometry::RandomSquare { side: default_side() }
}
fn default_true() -> bool {
    true
}
fn default_timing_iters() -> usize {
    200
}

/// One experiment: geometry, noise level, estimators and sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_geometry")]
    pub geometry: Geometry,
    #[serde(default = "default_n_mc")]
    pub n_mc: usize,
    /// Estimator specs, see [`crate::estimator`].
    #[serde(default)]
    pub estimators: Vec<Value>,
    /// Defaults for ADMM estimators without their own `"admm"` section.
    #[serde(default)]
    pub admm: AdmmConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    #[serde(default)]
    pub fixed: FixedParams,
    /// Explicit noise law; overrides the GSNR-derived scale when no GSNR or
    /// alpha sweep is active.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<StableParams>,
    /// Explicit measurements for single solves on an explicit geometry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurements: Option<Measurements>,
    #[serde(default)]
    pub seed: RngSeed,
    /// Use exact ranges.
    #[serde(default)]
    pub noiseless: bool,
    /// Record wall-clock time per estimator. Disable for bit-identical
    /// outputs across invocations.
    #[serde(default = "default_true")]
    pub timing: bool,
    /// Worker threads; `None` uses the global pool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    /// ADMM iteration count used by the scaling part of the timing report.
    #[serde(default = "default_timing_iters")]
    pub timing_iters: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl ExperimentConfig {
    /// Every violated field, `"<field>: <reason>"`.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.n_mc == 0 {
            out.push("n_mc: must be at least 1".into());
        }
        out.extend(self.admm.problems().into_iter().map(|p| format!("admm.{p}")));
        let f = self.fixed;
        if !(f.alpha > 0.0 && f.alpha <= 2.0) {
            out.push(format!("fixed.alpha: must lie in (0, 2], got {}", f.alpha));
        }
        if !f.gsnr_db.is_finite() {
            out.push(format!("fixed.gsnr_db: must be finite, got {}", f.gsnr_db));
        }
        if f.sensors == 0 {
            out.push("fixed.sensors: must be at least 1".into());
        }
        if let Geometry::RandomSquare { side } = self.geometry {
            if !(side > 0.0) {
                out.push(format!("geometry.side: must be positive, got {side}"));
            }
        }
        match &self.sweep {
            Some(Sweep::Gsnr(v)) => {
                if v.is_empty() {
                    out.push("sweep.gsnr: needs at least one value".into());
                }
                for g in v.iter().filter(|g| !g.is_finite()) {
                    out.push(format!("sweep.gsnr: {g} is not finite"));
                }
            }
            Some(Sweep::Alpha(v)) => {
                if v.is_empty() {
                    out.push("sweep.alpha: needs at least one value".into());
                }
                for a in v.iter().filter(|a| !(**a > 0.0 && **a <= 2.0)) {
                    out.push(format!("sweep.alpha: {a} outside (0, 2]"));
                }
            }
            Some(Sweep::Sensors(v)) => {
                if v.is_empty() {
                    out.push("sweep.sensors: needs at least one value".into());
                }
                if v.contains(&0) {
                    out.push("sweep.sensors: counts must be at least 1".into());
                }
                if !self.geometry.is_random() {
                    out.push("sweep.sensors: requires the random_square geometry".into());
                }
            }
            None => {}
        }
        if let Some(noise) = &self.noise {
            if let Err(e) = noise.validate() {
                out.push(format!("noise: {e}"));
            }
        }
        if let Some(m) = &self.measurements {
            match &self.geometry {
                Geometry::Explicit { scenario } => {
                    if let Err(e) = m.check_against(scenario) {
                        out.push(format!("measurements: {e}"));
                    }
                }
                _ => out.push("measurements: require an explicit geometry".into()),
            }
        }
        if self.jobs == Some(0) {
            out.push("jobs: must be at least 1".into());
        }
        let registry = EstimatorRegistry::default();
        let ctx = self.build_context();
        let mut names = Vec::new();
        for (i, spec) in self.estimators.iter().enumerate() {
            match registry.build(spec, &ctx) {
                Ok(e) => {
                    if names.contains(&e.name().to_string()) {
                        out.push(format!("estimators[{i}].name: duplicate \"{}\"", e.name()));
                    }
                    names.push(e.name().to_string());
                }
                Err(e) => out.push(format!("estimators[{i}]: {e}")),
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(ExperimentError::Config(p))
        }
    }

    fn build_context(&self) -> BuildContext {
        BuildContext { admm: self.admm }
    }

    pub fn build_estimators(&self) -> Result<Vec<Box<dyn Estimator>>, ExperimentError> {
        let registry = EstimatorRegistry::default();
        let ctx = self.build_context();
        self.estimators
            .iter()
            .map(|s| registry.build(s, &ctx).map_err(Into::into))
            .collect()
    }

    /// Geometry and measurements of run `run` at the given operating
    /// point. Randomness comes from the run's own stream.
    pub fn trial(&self, point: &OperatingPoint, run: u64) -> Result<(Scenario, Measurements), ExperimentError> {
        let mut rng = self.seed.stream(run);
        let scenario = self.geometry.realize(point.sensors, &mut rng);
        if let Some(m) = &self.measurements {
            return Ok((scenario, m.clone()));
        }
        if self.noiseless {
            let m = Measurements::from_ranges(true_ranges(&scenario));
            return Ok((scenario, m));
        }
        let params = match (&self.noise, &self.sweep) {
            (Some(noise), None | Some(Sweep::Sensors(_))) => *noise,
            _ => StableParams::symmetric(point.alpha, gamma_for_gsnr(&scenario, point.alpha, point.gsnr_db)?),
        };
        let m = measure_with(&scenario, params, &mut rng)?;
        Ok((scenario, m))
    }

    fn operating_points(&self) -> Vec<(f64, OperatingPoint)> {
        let base = OperatingPoint {
            alpha: self.fixed.alpha,
            gsnr_db: self.fixed.gsnr_db,
            sensors: self.fixed.sensors,
        };
        match &self.sweep {
            None => vec![(0.0, base)],
            Some(sweep) => sweep
                .points()
                .into_iter()
                .map(|v| {
                    let mut p = base;
                    match sweep {
                        Sweep::Gsnr(_) => p.gsnr_db = v,
                        Sweep::Alpha(_) => p.alpha = v,
                        Sweep::Sensors(_) => p.sensors = v as usize,
                    }
                    (v, p)
                })
                .collect(),
        }
    }

    fn pool(&self) -> Result<Option<rayon::ThreadPool>, ExperimentError> {
        match self.jobs {
            None => Ok(None),
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map(Some)
                .map_err(|e| ExperimentError::Pool(e.to_string())),
        }
    }
}

/// Noise level and sensor count of one sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OperatingPoint {
    pub alpha: f64,
    pub gsnr_db: f64,
    pub sensors: usize,
}

/// `sqrt( sum_j ||est_j - truth_j||^2 / N )`
pub fn rmse(estimates: &[DVector<f64>], truths: &[DVector<f64>]) -> Result<f64, ExperimentError> {
    if estimates.len() != truths.len() {
        return Err(ExperimentError::LengthMismatch(estimates.len(), truths.len()));
    }
    if estimates.is_empty() {
        return Err(ExperimentError::Empty);
    }
    let total: f64 = estimates.iter().zip(truths).map(|(e, t)| (e - t).norm_squared()).sum();
    Ok((total / estimates.len() as f64).sqrt())
}

/// Outcome of one estimator on one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub estimator: String,
    /// Squared position error; `None` when the estimator failed or
    /// returned a non-finite estimate.
    pub squared_error: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Smallest d-update output, ADMM only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_d: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: String,
    pub rmse: f64,
    /// Standard error of the mean squared error.
    pub mse_std_err: f64,
    pub conv_rate: f64,
    pub mean_iters: f64,
    pub mean_seconds: f64,
    /// Runs excluded from the RMSE.
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub rows: Vec<EstimatorSummary>,
    /// Per-run records, estimator-major within each run.
    pub runs: Vec<RunRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// `gsnr`, `sensors`, `alpha`, or `none` without a sweep.
    pub sweep_param: String,
    pub n_mc: usize,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn summary(&self, point: usize, estimator: &str) -> Option<&EstimatorSummary> {
        self.points.get(point)?.rows.iter().find(|r| r.estimator == estimator)
    }
}

fn run_estimators(
    estimators: &[Box<dyn Estimator>],
    scenario: &Scenario,
    measurements: &Measurements,
    run: usize,
    timing: bool,
) -> Vec<RunRecord> {
    estimators
        .iter()
        .map(|e| {
            let start = Instant::now();
            let outcome = e.estimate(scenario, measurements);
            let seconds = if timing { start.elapsed().as_secs_f64() } else { 0.0 };
            match outcome {
                Ok(est) => {
                    let sq = (&est.position - scenario.source()).norm_squared();
                    RunRecord {
                        run,
                        estimator: e.name().to_string(),
                        squared_error: sq.is_finite().then_some(sq),
                        iterations: est.iterations,
                        converged: est.converged,
                        seconds,
                        error: None,
                        min_d: est.admm().map(|r| r.min_d),
                    }
                }
                Err(err) => RunRecord {
                    run,
                    estimator: e.name().to_string(),
                    squared_error: None,
                    iterations: 0,
                    converged: false,
                    seconds,
                    error: Some(err.to_string()),
                    min_d: None,
                },
            }
        })
        .collect()
}

fn summarize(name: &str, runs: &[RunRecord]) -> EstimatorSummary {
    let mine: Vec<&RunRecord> = runs.iter().filter(|r| r.estimator == name).collect();
    let n = mine.len() as f64;
    let errs: Vec<f64> = mine.iter().filter_map(|r| r.squared_error).collect();
    let m = errs.len() as f64;
    let mse = if errs.is_empty() { f64::NAN } else { errs.iter().sum::<f64>() / m };
    let mse_std_err = if errs.len() > 1 {
        (errs.iter().map(|e| (e - mse).powi(2)).sum::<f64>() / (m - 1.0)).sqrt() / m.sqrt()
    } else {
        f64::NAN
    };
    EstimatorSummary {
        estimator: name.to_string(),
        rmse: mse.sqrt(),
        mse_std_err,
        conv_rate: mine.iter().filter(|r| r.converged).count() as f64 / n,
        mean_iters: mine.iter().map(|r| r.iterations as f64).sum::<f64>() / n,
        mean_seconds: mine.iter().map(|r| r.seconds).sum::<f64>() / n,
        failures: mine.len() - errs.len(),
    }
}

/// Runs every estimator on identical measurements for `n_mc` runs at each
/// sweep point. Run `j` always draws from stream `j` of the seed, so
/// results do not depend on the worker count.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepResult, ExperimentError> {
    config.validate()?;
    let estimators = config.build_estimators()?;
    let pool = config.pool()?;
    let mut points = Vec::new();
    for (value, point) in config.operating_points() {
        let work = || -> Result<Vec<Vec<RunRecord>>, ExperimentError> {
            (0..config.n_mc)
                .into_par_iter()
                .map(|j| {
                    let (scenario, m) = config.trial(&point, j as u64)?;
                    Ok(run_estimators(&estimators, &scenario, &m, j, config.timing))
                })
                .collect()
        };
        let per_run = match &pool {
            Some(p) => p.install(work)?,
            None => work()?,
        };
        let runs: Vec<RunRecord> = per_run.into_iter().flatten().collect();
        let rows = estimators.iter().map(|e| summarize(e.name(), &runs)).collect();
        points.push(SweepPoint { value, rows, runs });
    }
    Ok(SweepResult {
        sweep_param: config.sweep.as_ref().map_or("none", Sweep::param).to_string(),
        n_mc: config.n_mc,
        points,
    })
}

/// Per-iteration ADMM trace for the run-0 realization of the configured
/// geometry at the fixed operating point, drawn from `seed`.
pub fn convergence_trace(
    config: &ExperimentConfig,
    loss: &LossSpec,
    seed: RngSeed,
) -> Result<Vec<TraceRecord>, ExperimentError> {
    let mut config = config.clone();
    config.seed = seed;
    config.sweep = None;
    let point = config.operating_points()[0].1;
    let (scenario, m) = config.trial(&point, 0)?;
    let admm = config.admm.with_trace(true);
    let result = crate::admm::solve(&scenario, &m, loss, &admm, None)?;
    Ok(result.trace.unwrap_or_default())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingReport {
    pub estimator: String,
    pub iterations: usize,
    pub seconds_l8: f64,
    pub seconds_l64: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TimingReport {
    /// `(estimator, mean seconds per run)` in config order.
    pub mean_seconds: Vec<(String, f64)>,
    /// L = 64 versus L = 8 wall time for each ADMM estimator at a fixed
    /// iteration count.
    pub scaling: Vec<ScalingReport>,
}

/// Sequential wall-clock means per estimator on identical runs at the
/// fixed operating point, plus the L = 8 to L = 64 scaling of every ADMM
/// estimator at `timing_iters` iterations.
pub fn timing_report(config: &ExperimentConfig) -> Result<TimingReport, ExperimentError> {
    config.validate()?;
    let estimators = config.build_estimators()?;
    if estimators.is_empty() {
        return Ok(TimingReport::default());
    }
    let point = config.operating_points()[0].1;
    let trials: Vec<(Scenario, Measurements)> = (0..config.n_mc)
        .map(|j| config.trial(&point, j as u64))
        .collect::<Result<_, _>>()?;

    let mut totals = vec![0.0; estimators.len()];
    for (scenario, m) in &trials {
        for (e, total) in estimators.iter().zip(totals.iter_mut()) {
            let start = Instant::now();
            let _ = e.estimate(scenario, m);
            *total += start.elapsed().as_secs_f64();
        }
    }
    let n = trials.len() as f64;
    let mean_seconds = estimators
        .iter()
        .zip(&totals)
        .map(|(e, t)| (e.name().to_string(), t / n))
        .collect();

    let mut scaling = Vec::new();
    let admm_specs: Vec<&Value> = config
        .estimators
        .iter()
        .filter(|s| s.get("kind").and_then(Value::as_str) == Some("admm"))
        .collect();
    for spec in admm_specs {
        let loss: LossSpec = serde_json::from_value(spec["loss"].clone()).map_err(|e| {
            ExperimentError::Config(vec![format!("loss: {e}")])
        })?;
        let name = spec.get("name").and_then(Value::as_str).unwrap_or("admm").to_string();
        let base: AdmmConfig = match spec.get("admm") {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| ExperimentError::Config(vec![format!("admm: {e}")]))?,
            None => config.admm,
        };
        // tolerance below any reachable residual: every solve runs the full count
        let fixed = AdmmConfig {
            delta: f64::MIN_POSITIVE,
            max_iters: config.timing_iters,
            trace: false,
            ..base
        };
        let mut seconds = [0.0; 2];
        for (slot, sensors) in [8usize, 64].into_iter().enumerate() {
            let scaled = ExperimentConfig {
                geometry: Geometry::RandomSquare { side: default_side() },
                noise: None,
                measurements: None,
                sweep: None,
                ..config.clone()
            };
            let p = OperatingPoint { sensors, ..point };
            for j in 0..config.n_mc {
                let (scenario, m) = scaled.trial(&p, j as u64)?;
                let start = Instant::now();
                let _ = crate::admm::solve(&scenario, &m, &loss, &fixed, None);
                seconds[slot] += start.elapsed().as_secs_f64();
            }
            seconds[slot] /= config.n_mc as f64;
        }
        scaling.push(ScalingReport {
            estimator: name,
            iterations: config.timing_iters,
            seconds_l8: seconds[0],
            seconds_l64: seconds[1],
            ratio: seconds[1] / seconds[0],
        });
    }
    Ok(TimingReport { mean_seconds, scaling })
}
