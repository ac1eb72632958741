//! Two-block ADMM for robust TOA positioning.
//!
//! The problem `min_x sum_i f(r_i - ||x - x_i||)` is lifted to
//!
//! ```text
//! min_{x, d, beta}  sum_i f(r_i - d_i)
//! s.t.              x - x_i = beta_i d_i,  ||beta_i|| = 1,  d_i >= 0
//! ```
//!
//! and solved by alternating an `x` block (closed-form average), a joint
//! `(beta, d)` block (normalization plus one scalar prox per sensor) and a
//! dual ascent step of size `rho` on the multipliers `lambda_i`.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::loss::{LossError, LossSpec, ProxParams};
use crate::model::{Measurements, ModelError, Scenario};

/// d-updates below this value are reported as violating nonnegativity.
pub const NONNEGATIVITY_SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdmmError {
    #[error("invalid solver configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("initial state does not match the scenario: {0}")]
    InitShape(String),
    #[error("{update} produced a non-finite value at iteration {iteration}")]
    NonFinite {
        update: &'static str,
        iteration: usize,
    },
    #[error("d-update for sensor {sensor} returned {value} < 0 at iteration {iteration}")]
    NegativeDistance {
        sensor: usize,
        value: f64,
        iteration: usize,
    },
}

fn default_rho() -> f64 {
    5.0
}
fn default_delta() -> f64 {
    1e-5
}
fn default_max_iters() -> usize {
    2000
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmConfig {
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub trace: bool,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            rho: default_rho(),
            delta: default_delta(),
            max_iters: default_max_iters(),
            trace: false,
        }
    }
}

impl AdmmConfig {
    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn with_trace(mut self, trace: bool) -> Self {
        self.trace = trace;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    /// Every violated field, as `"<field>: <reason>"`.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            out.push(format!("rho: must be positive and finite, got {}", self.rho));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            out.push(format!("delta: must be positive and finite, got {}", self.delta));
        }
        if self.max_iters == 0 {
            out.push("max_iters: must be at least 1".to_string());
        }
        out
    }

    pub fn validate(&self) -> Result<(), AdmmError> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(AdmmError::Config(problems))
        }
    }
}

/// Iterate `(x, d, beta, lambda)` at iteration `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub x: DVector<f64>,
    pub d: DVector<f64>,
    /// Unit direction from sensor `i` toward the source.
    pub beta: Vec<DVector<f64>>,
    pub lambda: Vec<DVector<f64>>,
    pub k: usize,
}

impl AdmmState {
    /// Deterministic start: `x` at the sensor centroid, `d_i = max(r_i,
    /// 1e-6)`, `beta_i` pointing from sensor `i` to the centroid and zero
    /// multipliers.
    pub fn initial(scenario: &Scenario, ranges: &[f64]) -> Self {
        let x = scenario.sensor_centroid();
        let dim = scenario.dimension();
        let d = DVector::from_iterator(ranges.len(), ranges.iter().map(|r| r.max(1e-6)));
        let beta = scenario
            .sensors()
            .iter()
            .map(|s| unit_or_axis(&x - s, dim))
            .collect();
        let lambda = vec![DVector::zeros(dim); scenario.num_sensors()];
        Self {
            x,
            d,
            beta,
            lambda,
            k: 0,
        }
    }

    /// Feasible random start: `x` uniform in the sensors' bounding box,
    /// `(d, beta)` consistent with it, zero multipliers.
    pub fn random_feasible<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Self {
        let dim = scenario.dimension();
        let x = DVector::from_fn(dim, |j, _| {
            let (lo, hi) = scenario
                .sensors()
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s[j]), hi.max(s[j])));
            if hi > lo {
                rng.random_range(lo..hi)
            } else {
                lo
            }
        });
        Self::feasible_at(scenario, x)
    }

    /// Feasible point with `x` given, `d_i = ||x - x_i||`, `lambda = 0`.
    pub fn feasible_at(scenario: &Scenario, x: DVector<f64>) -> Self {
        let dim = scenario.dimension();
        let mut d = DVector::zeros(scenario.num_sensors());
        let mut beta = Vec::with_capacity(scenario.num_sensors());
        for (i, s) in scenario.sensors().iter().enumerate() {
            let v = &x - s;
            d[i] = v.norm();
            beta.push(unit_or_axis(v, dim));
        }
        Self {
            x,
            d,
            beta,
            lambda: vec![DVector::zeros(dim); scenario.num_sensors()],
            k: 0,
        }
    }

    fn check_shape(&self, scenario: &Scenario) -> Result<(), AdmmError> {
        let (dim, l) = (scenario.dimension(), scenario.num_sensors());
        let ok = self.x.len() == dim
            && self.d.len() == l
            && self.beta.len() == l
            && self.lambda.len() == l
            && self.beta.iter().chain(&self.lambda).all(|v| v.len() == dim);
        if ok {
            Ok(())
        } else {
            Err(AdmmError::InitShape(format!("expected H = {dim}, L = {l}")))
        }
    }

    fn is_finite(&self) -> bool {
        self.x.iter().chain(self.d.iter()).all(|v| v.is_finite())
            && self.beta.iter().chain(&self.lambda).all(|v| v.iter().all(|c| c.is_finite()))
    }
}

fn unit_or_axis(v: DVector<f64>, dim: usize) -> DVector<f64> {
    let n = v.norm();
    if n < 1e-12 {
        let mut e = DVector::zeros(dim);
        e[0] = 1.0;
        e
    } else {
        v / n
    }
}

/// `x - x_i - beta_i d_i`
fn constraint_gap(state: &AdmmState, scenario: &Scenario, i: usize) -> DVector<f64> {
    &state.x - &scenario.sensors()[i] - &state.beta[i] * state.d[i]
}

/// `v_i = x - x_i + lambda_i / rho`
fn direction_target(state: &AdmmState, scenario: &Scenario, rho: f64, i: usize) -> DVector<f64> {
    &state.x - &scenario.sensors()[i] + &state.lambda[i] / rho
}

/// Closed-form `x` block: the average of `w_i = x_i + beta_i d_i - lambda_i / rho`.
pub fn x_update(state: &AdmmState, scenario: &Scenario, config: &AdmmConfig) -> DVector<f64> {
    let mut sum = DVector::zeros(scenario.dimension());
    for (i, s) in scenario.sensors().iter().enumerate() {
        sum += s + &state.beta[i] * state.d[i] - &state.lambda[i] / config.rho;
    }
    sum / scenario.num_sensors() as f64
}

/// `beta_i = v_i / ||v_i||`. A zero `v_i` keeps the previous direction.
pub fn beta_update(state: &AdmmState, scenario: &Scenario, config: &AdmmConfig) -> Vec<DVector<f64>> {
    (0..scenario.num_sensors())
        .map(|i| {
            let v = direction_target(state, scenario, config.rho, i);
            let n = v.norm();
            if n == 0.0 {
                state.beta[i].clone()
            } else {
                let b = v / n;
                let n = b.norm();
                b / n
            }
        })
        .collect()
}

/// `d_i = r_i - prox_{f / rho}(r_i - ||v_i||)`; `ranges` must be
/// nonnegative. Fails if any output is negative beyond
/// [`NONNEGATIVITY_SLACK`].
pub fn d_update(
    state: &AdmmState,
    scenario: &Scenario,
    ranges: &[f64],
    loss: &LossSpec,
    config: &AdmmConfig,
) -> Result<DVector<f64>, AdmmError> {
    let tau = ProxParams::new(1.0 / config.rho)?;
    let mut d = DVector::zeros(ranges.len());
    for (i, r) in ranges.iter().enumerate() {
        let v_norm = direction_target(state, scenario, config.rho, i).norm();
        let di = r - loss.prox(tau, r - v_norm)?;
        if di < -NONNEGATIVITY_SLACK {
            return Err(AdmmError::NegativeDistance {
                sensor: i,
                value: di,
                iteration: state.k,
            });
        }
        d[i] = di;
    }
    Ok(d)
}

/// `lambda_i + rho (x - x_i - beta_i d_i)`
pub fn lambda_update(state: &AdmmState, scenario: &Scenario, config: &AdmmConfig) -> Vec<DVector<f64>> {
    (0..scenario.num_sensors())
        .map(|i| &state.lambda[i] + constraint_gap(state, scenario, i) * config.rho)
        .collect()
}

/// `sum f(r_i - d_i) + sum lambda_i^T g_i + rho/2 sum ||g_i||^2` with
/// `g_i = x - x_i - beta_i d_i`.
pub fn augmented_lagrangian(
    state: &AdmmState,
    scenario: &Scenario,
    ranges: &[f64],
    loss: &LossSpec,
    config: &AdmmConfig,
) -> f64 {
    let mut total = 0.0;
    for (i, r) in ranges.iter().enumerate() {
        let g = constraint_gap(state, scenario, i);
        total += loss.eval(r - state.d[i]) + state.lambda[i].dot(&g) + 0.5 * config.rho * g.norm_squared();
    }
    total
}

/// Robust fitting cost `sum f(r_i - ||x - x_i||)` at position `x`.
pub fn objective(x: &DVector<f64>, scenario: &Scenario, ranges: &[f64], loss: &LossSpec) -> f64 {
    scenario
        .sensors()
        .iter()
        .zip(ranges)
        .map(|(s, r)| loss.eval(r - (x - s).norm()))
        .sum()
}

/// Stopping quantity `sum_i ||x - x_i - beta_i d_i||`.
pub fn primal_residual(state: &AdmmState, scenario: &Scenario) -> f64 {
    (0..scenario.num_sensors())
        .map(|i| constraint_gap(state, scenario, i).norm())
        .sum()
}

/// Ranges with negatives replaced by 0, and how many were replaced.
pub fn clamp_ranges(measurements: &Measurements) -> (Vec<f64>, usize) {
    let clamped = measurements.negative_count();
    if clamped > 0 {
        log::warn!("{clamped} negative range(s) clamped to 0");
    }
    (measurements.ranges.iter().map(|r| r.max(0.0)).collect(), clamped)
}

/// Norms of the change in each block between consecutive iterates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StepNorms {
    pub dx: f64,
    pub dd: f64,
    pub dbeta: f64,
    pub dlambda: f64,
}

impl StepNorms {
    fn between(prev: &AdmmState, next: &AdmmState) -> Self {
        let stacked = |a: &[DVector<f64>], b: &[DVector<f64>]| {
            a.iter().zip(b).map(|(u, v)| (u - v).norm_squared()).sum::<f64>().sqrt()
        };
        Self {
            dx: (&next.x - &prev.x).norm(),
            dd: (&next.d - &prev.d).norm(),
            dbeta: stacked(&next.beta, &prev.beta),
            dlambda: stacked(&next.lambda, &prev.lambda),
        }
    }

    pub fn max(&self) -> f64 {
        self.dx.max(self.dd).max(self.dbeta).max(self.dlambda)
    }
}

/// One row of the per-iteration trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub k: usize,
    pub objective: f64,
    pub aug_lagrangian: f64,
    pub primal_residual: f64,
    pub steps: StepNorms,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub estimate: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `sum_i ||x - x_i - beta_i d_i||` at the returned iterate.
    pub primal_residual: f64,
    /// Block step norms of the last iteration.
    pub last_step: StepNorms,
    /// Smallest `d_i` produced by any d-update.
    pub min_d: f64,
    /// Ranges clamped from negative values before solving.
    pub clamped: usize,
    pub trace: Option<Vec<TraceRecord>>,
    pub state: AdmmState,
}

fn record(
    state: &AdmmState,
    scenario: &Scenario,
    ranges: &[f64],
    loss: &LossSpec,
    config: &AdmmConfig,
    steps: StepNorms,
) -> TraceRecord {
    TraceRecord {
        k: state.k,
        objective: objective(&state.x, scenario, ranges, loss),
        aug_lagrangian: augmented_lagrangian(state, scenario, ranges, loss, config),
        primal_residual: primal_residual(state, scenario),
        steps,
        x: state.x.iter().copied().collect(),
    }
}

fn finite_vecs(vs: &[DVector<f64>]) -> bool {
    vs.iter().all(|v| v.iter().all(|c| c.is_finite()))
}

/// Runs the ADMM until `sum_i ||x^(k) - x_i - beta_i^(k) d_i^(k)|| < delta`
/// (tested after the k-th sweep, on the k-th iterate) or `max_iters`
/// sweeps. Negative ranges are clamped to 0 first.
pub fn solve(
    scenario: &Scenario,
    measurements: &Measurements,
    loss: &LossSpec,
    config: &AdmmConfig,
    init: Option<AdmmState>,
) -> Result<SolveResult, AdmmError> {
    config.validate()?;
    measurements.check_against(scenario)?;
    let loss = loss.validated()?;
    if !loss.has_prox() {
        return Err(LossError::NoProx(loss.name()).into());
    }
    let (ranges, clamped) = clamp_ranges(measurements);
    let mut state = match init {
        Some(s) => {
            s.check_shape(scenario)?;
            if !s.is_finite() {
                return Err(AdmmError::InitShape("non-finite initial state".into()));
            }
            s
        }
        None => AdmmState::initial(scenario, &ranges),
    };

    let mut trace = config
        .trace
        .then(|| vec![record(&state, scenario, &ranges, &loss, config, StepNorms::default())]);
    let mut min_d = f64::INFINITY;
    let mut converged = false;
    let mut last_step = StepNorms::default();
    let mut iterations = 0;

    loop {
        // the stopping test reads iterate k, so the iterate that passed it is returned
        if primal_residual(&state, scenario) < config.delta {
            converged = true;
            break;
        }
        if iterations == config.max_iters {
            break;
        }
        let k = state.k;
        let prev = state.clone();

        state.x = x_update(&state, scenario, config);
        if !state.x.iter().all(|c| c.is_finite()) {
            return Err(AdmmError::NonFinite {
                update: "x-update",
                iteration: k,
            });
        }
        // beta and d both read v_i built from the new x and the old lambda
        let beta = beta_update(&state, scenario, config);
        if !finite_vecs(&beta) {
            return Err(AdmmError::NonFinite {
                update: "beta-update",
                iteration: k,
            });
        }
        let d = d_update(&state, scenario, &ranges, &loss, config)?;
        if !d.iter().all(|c| c.is_finite()) {
            return Err(AdmmError::NonFinite {
                update: "d-update",
                iteration: k,
            });
        }
        min_d = d.iter().copied().fold(min_d, f64::min);
        state.beta = beta;
        state.d = d;
        state.lambda = lambda_update(&state, scenario, config);
        if !finite_vecs(&state.lambda) {
            return Err(AdmmError::NonFinite {
                update: "lambda-update",
                iteration: k,
            });
        }
        state.k = k + 1;
        iterations += 1;

        last_step = StepNorms::between(&prev, &state);
        if let Some(rows) = trace.as_mut() {
            rows.push(record(&state, scenario, &ranges, &loss, config, last_step));
        }
    }

    Ok(SolveResult {
        estimate: state.x.clone(),
        iterations,
        converged,
        primal_residual: primal_residual(&state, scenario),
        last_step,
        min_d,
        clamped,
        trace,
        state,
    })
}

/// First-order optimality residuals at the final iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktReport {
    /// `||sum_i lambda_i||`
    pub dual_x_residual: f64,
    /// `max_i |-f'(r_i - d_i) - lambda_i^T beta_i|`
    pub d_stationarity: f64,
    /// `max_i ||d_i lambda_i||`; informational only.
    pub beta_stationarity: f64,
    /// `max_i ||x - x_i - beta_i d_i||`
    pub primal_feasibility: f64,
    /// `max_i | ||beta_i||^2 - 1 |`
    pub beta_norm_violation: f64,
}

/// KKT residuals of `state`. Where `f` is not differentiable the
/// subgradient closest to `-lambda_i^T beta_i` is used.
pub fn kkt_residuals_at(state: &AdmmState, scenario: &Scenario, measurements: &Measurements, loss: &LossSpec) -> KktReport {
    let ranges: Vec<f64> = measurements.ranges.iter().map(|r| r.max(0.0)).collect();
    let loss = loss.validated().unwrap_or(*loss);
    let mut sum = DVector::zeros(scenario.dimension());
    let mut report = KktReport {
        dual_x_residual: 0.0,
        d_stationarity: 0.0,
        beta_stationarity: 0.0,
        primal_feasibility: 0.0,
        beta_norm_violation: 0.0,
    };
    for (i, r) in ranges.iter().enumerate() {
        let lambda = &state.lambda[i];
        let beta = &state.beta[i];
        sum += lambda;
        let proj = lambda.dot(beta);
        let (lo, hi) = loss.subdifferential(r - state.d[i]);
        let g = (-proj).clamp(lo, hi);
        report.d_stationarity = report.d_stationarity.max((-g - proj).abs());
        report.beta_stationarity = report.beta_stationarity.max((lambda * state.d[i]).norm());
        report.primal_feasibility = report
            .primal_feasibility
            .max(constraint_gap(state, scenario, i).norm());
        report.beta_norm_violation = report.beta_norm_violation.max((beta.norm_squared() - 1.0).abs());
    }
    report.dual_x_residual = sum.norm();
    report
}

/// KKT residuals at the iterate a solve finished on (converged or not).
pub fn kkt_residuals(result: &SolveResult, scenario: &Scenario, measurements: &Measurements, loss: &LossSpec) -> KktReport {
    kkt_residuals_at(&result.state, scenario, measurements, loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{true_ranges, RngSeed};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn noiseless() -> (Scenario, Measurements) {
        let s = Scenario::fixed_perimeter8();
        let m = Measurements::from_ranges(true_ranges(&s));
        (s, m)
    }

    fn random_state<R: Rng>(scenario: &Scenario, rng: &mut R) -> AdmmState {
        let dim = scenario.dimension();
        let l = scenario.num_sensors();
        let rv = |rng: &mut R, n: usize, s: f64| DVector::from_fn(n, |_, _| rng.random_range(-s..s));
        AdmmState {
            x: rv(rng, dim, 10.0),
            d: DVector::from_fn(l, |_, _| rng.random_range(0.0..20.0)),
            beta: (0..l).map(|_| unit_or_axis(rv(rng, dim, 1.0), dim)).collect(),
            lambda: (0..l).map(|_| rv(rng, dim, 3.0)).collect(),
            k: 0,
        }
    }

    #[test]
    fn x_update_is_centroid_of_w() {
        let s = Scenario::new(vec![0.0, 0.0], vec![vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap();
        let mut state = AdmmState::feasible_at(&s, v(&[5.0, 5.0]));
        state.d.fill(0.0);
        let x = x_update(&state, &s, &AdmmConfig::default());
        assert_eq!(x, v(&[1.0, 1.0]));
    }

    #[test]
    fn x_update_fixed_point_at_feasibility() {
        let (s, _) = noiseless();
        let state = AdmmState::feasible_at(&s, v(&[2.0, 3.0]));
        let x = x_update(&state, &s, &AdmmConfig::default());
        assert_abs_diff_eq!((x - v(&[2.0, 3.0])).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn beta_update_normalizes() {
        let s = Scenario::new(vec![0.0, 0.0], vec![vec![0.0, 0.0]]).unwrap();
        let mut state = AdmmState::feasible_at(&s, v(&[3.0, 4.0]));
        state.beta[0] = v(&[1.0, 0.0]);
        let beta = beta_update(&state, &s, &AdmmConfig::default());
        assert_abs_diff_eq!(beta[0][0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(beta[0][1], 0.8, epsilon = 1e-15);

        state.x = v(&[0.6, 0.8]);
        let beta = beta_update(&state, &s, &AdmmConfig::default());
        assert_abs_diff_eq!((beta[0].clone() - v(&[0.6, 0.8])).norm(), 0.0, epsilon = 1e-15);

        // v = 0 keeps the previous direction
        state.x = v(&[0.0, 0.0]);
        state.beta[0] = v(&[0.0, -1.0]);
        assert_eq!(beta_update(&state, &s, &AdmmConfig::default())[0], v(&[0.0, -1.0]));
    }

    #[test]
    fn d_update_l1_worked_example() {
        // r = 10, ||v|| = 9, tau = 0.2: prox(1) = 0.8, d = 9.2
        let s = Scenario::new(vec![0.0, 0.0], vec![vec![0.0, 0.0]]).unwrap();
        let state = AdmmState::feasible_at(&s, v(&[9.0, 0.0]));
        let d = d_update(&state, &s, &[10.0], &LossSpec::L1, &AdmmConfig::default()).unwrap();
        assert_abs_diff_eq!(d[0], 9.2, epsilon = 1e-12);
    }

    #[test]
    fn d_update_returns_range_when_v_matches() {
        let s = Scenario::new(vec![0.0, 0.0], vec![vec![0.0, 0.0]]).unwrap();
        let state = AdmmState::feasible_at(&s, v(&[4.0, 3.0]));
        for loss in [LossSpec::L1, LossSpec::L2, LossSpec::Lp { p: 1.4 }, LossSpec::Huber { radius: 1.0 }] {
            let d = d_update(&state, &s, &[5.0], &loss, &AdmmConfig::default()).unwrap();
            assert_abs_diff_eq!(d[0], 5.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn lambda_update_examples() {
        let (s, _) = noiseless();
        let mut state = AdmmState::feasible_at(&s, v(&[2.0, 3.0]));
        let mut rng = RngSeed(5).rng();
        for l in state.lambda.iter_mut() {
            *l = v(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
        }
        let cfg = AdmmConfig::default();
        let new = lambda_update(&state, &s, &cfg);
        for (a, b) in new.iter().zip(&state.lambda) {
            assert_abs_diff_eq!((a - b).norm(), 0.0, epsilon = 1e-12);
        }

        // one violated constraint
        let mut state = AdmmState::feasible_at(&s, v(&[2.0, 3.0]));
        state.d[3] += 0.5;
        let u = -&state.beta[3] * 0.5;
        let new = lambda_update(&state, &s, &cfg);
        assert_abs_diff_eq!((&new[3] - u * cfg.rho).norm(), 0.0, epsilon = 1e-12);
        for (i, l) in new.iter().enumerate() {
            if i != 3 {
                assert_abs_diff_eq!(l.norm(), 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn augmented_lagrangian_reduces_on_feasible_states() {
        let (s, m) = noiseless();
        let cfg = AdmmConfig::default();
        let loss = LossSpec::Huber { radius: 1.0 };
        let mut state = AdmmState::feasible_at(&s, v(&[2.0, 3.0]));
        assert_abs_diff_eq!(augmented_lagrangian(&state, &s, &m.ranges, &loss, &cfg), 0.0, epsilon = 1e-12);

        let ranges: Vec<f64> = m.ranges.iter().map(|r| r + 0.3).collect();
        state.lambda = (0..8).map(|i| v(&[i as f64, -1.0])).collect();
        let plain: f64 = ranges.iter().zip(state.d.iter()).map(|(r, d)| loss.eval(r - d)).sum();
        assert_abs_diff_eq!(augmented_lagrangian(&state, &s, &ranges, &loss, &cfg), plain, epsilon = 1e-12);
    }

    #[test]
    fn augmented_lagrangian_matches_flattened_recomputation() {
        let (s, m) = noiseless();
        let cfg = AdmmConfig::default().with_rho(3.7);
        let loss = LossSpec::Lp { p: 1.3 };
        let mut rng = RngSeed(17).rng();
        for _ in 0..20 {
            let st = random_state(&s, &mut rng);
            // flattened, component-wise evaluation
            let (mut fit, mut lin, mut quad) = (0.0, 0.0, 0.0);
            for i in 0..8 {
                fit += (m.ranges[i] - st.d[i]).abs().powf(1.3);
                for j in 0..2 {
                    let g = st.x[j] - s.sensors()[i][j] - st.beta[i][j] * st.d[i];
                    lin += st.lambda[i][j] * g;
                    quad += g * g;
                }
            }
            let expected = fit + lin + 0.5 * 3.7 * quad;
            let got = augmented_lagrangian(&st, &s, &m.ranges, &loss, &cfg);
            assert!((got - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        }
    }

    #[test]
    fn noiseless_solves_recover_source() {
        let (s, m) = noiseless();
        for loss in [LossSpec::L1, LossSpec::L2, LossSpec::Lp { p: 1.3 }, LossSpec::Huber { radius: 1.0 }] {
            let res = solve(&s, &m, &loss, &AdmmConfig::default(), None).unwrap();
            assert!(res.converged, "{loss:?}");
            assert!((res.estimate.clone() - s.source()).norm() < 1e-3, "{loss:?}: {}", res.estimate);
            assert!(res.primal_residual < 1e-5);
            assert!(res.min_d >= -NONNEGATIVITY_SLACK);
        }
    }

    #[test]
    fn exact_start_stops_on_first_check() {
        let (s, m) = noiseless();
        let init = AdmmState::feasible_at(&s, s.source().clone());
        let res = solve(&s, &m, &LossSpec::Huber { radius: 1.0 }, &AdmmConfig::default().with_trace(true), Some(init))
            .unwrap();
        assert!(res.converged);
        assert_eq!(res.iterations, 0);
        assert_eq!(res.trace.unwrap().len(), 1);
        assert!((res.estimate - s.source()).norm() < 1e-12);
    }

    #[test]
    fn trace_has_one_row_per_iteration_plus_start() {
        let (s, m) = noiseless();
        let res = solve(&s, &m, &LossSpec::L1, &AdmmConfig::default().with_trace(true).with_max_iters(7), None).unwrap();
        let trace = res.trace.unwrap();
        assert_eq!(trace.len(), res.iterations + 1);
        assert_eq!(trace.first().unwrap().k, 0);
        assert_eq!(trace.last().unwrap().k, res.iterations);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let (s, m) = noiseless();
        let bad = AdmmConfig {
            rho: -1.0,
            delta: 0.0,
            max_iters: 0,
            trace: false,
        };
        match solve(&s, &m, &LossSpec::L1, &bad, None) {
            Err(AdmmError::Config(p)) => {
                assert_eq!(p.len(), 3);
                assert!(p[0].starts_with("rho"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            solve(&s, &m, &LossSpec::Welsch { sigma: 1.0 }, &AdmmConfig::default(), None),
            Err(AdmmError::Loss(LossError::NoProx("welsch")))
        ));
        let short = Measurements::from_ranges(vec![1.0; 3]);
        assert!(matches!(
            solve(&s, &short, &LossSpec::L1, &AdmmConfig::default(), None),
            Err(AdmmError::Model(_))
        ));
    }

    #[test]
    fn negative_ranges_are_clamped() {
        let (s, mut m) = noiseless();
        m.ranges[0] = -4.0;
        let res = solve(&s, &m, &LossSpec::Huber { radius: 1.0 }, &AdmmConfig::default(), None).unwrap();
        assert_eq!(res.clamped, 1);
        assert!(res.min_d >= -NONNEGATIVITY_SLACK);
    }

    #[test]
    fn kkt_certificate_at_constructed_point() {
        // noiseless, feasible: d_i = r_i so f'(0) = 0 and lambda = 0 satisfies
        // every condition
        let (s, m) = noiseless();
        let state = AdmmState::feasible_at(&s, s.source().clone());
        for loss in [LossSpec::L2, LossSpec::Huber { radius: 1.0 }, LossSpec::L1, LossSpec::Lp { p: 1.5 }] {
            let r = kkt_residuals_at(&state, &s, &m, &loss);
            assert!(r.dual_x_residual <= 1e-12);
            assert!(r.d_stationarity <= 1e-12);
            assert!(r.beta_stationarity <= 1e-12);
            assert!(r.primal_feasibility <= 1e-12);
            assert!(r.beta_norm_violation <= 1e-12);
        }
        // l1 with nonzero multipliers inside the subdifferential
        let mut state = state;
        state.lambda[0] = &state.beta[0] * 0.5;
        state.lambda[4] = &state.beta[0] * -0.5;
        let r = kkt_residuals_at(&state, &s, &m, &LossSpec::L1);
        assert!(r.dual_x_residual <= 1e-12);
        assert!(r.d_stationarity <= 1e-12);
    }

    #[test]
    fn kkt_report_is_total_for_early_stop() {
        let (s, m) = noiseless();
        let loss = LossSpec::Huber { radius: 1.0 };
        let res = solve(&s, &m, &loss, &AdmmConfig::default().with_max_iters(2), None).unwrap();
        assert!(!res.converged);
        let r = kkt_residuals(&res, &s, &m, &loss);
        assert!(r.primal_feasibility > 0.0);
        assert!(r.dual_x_residual >= 0.0 && r.d_stationarity >= 0.0);
    }
}
