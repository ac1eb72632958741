//! Reference estimators: l2 maximum likelihood by Gauss-Newton and lp
//! minimization by iteratively reweighted least squares.
//!
//! Both share one weighted Gauss-Newton step with step halving; they
//! differ only in how the per-sensor weights are chosen each iteration.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Measurements, ModelError, Scenario};

/// Smallest eigenvalue ratio of the geometry matrix accepted as a fix.
const IDENTIFIABILITY_RATIO: f64 = 1e-10;
const MAX_HALVINGS: usize = 40;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("invalid baseline configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("sigma must be positive, got {0}")]
    Sigma(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    GaussNewtonL2,
    IrlsLp,
}

fn default_tol() -> f64 {
    1e-8
}
fn default_max_iters() -> usize {
    500
}
fn default_eps() -> f64 {
    1e-8
}
fn default_p() -> f64 {
    2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    /// lp exponent, IRLS only.
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Residual floor for IRLS weights.
    #[serde(default = "default_eps")]
    pub irls_epsilon: f64,
}

impl BaselineConfig {
    pub fn gauss_newton() -> Self {
        Self {
            kind: BaselineKind::GaussNewtonL2,
            p: 2.0,
            tol: default_tol(),
            max_iters: default_max_iters(),
            irls_epsilon: default_eps(),
        }
    }

    pub fn irls(p: f64) -> Self {
        Self {
            kind: BaselineKind::IrlsLp,
            p,
            ..Self::gauss_newton()
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.tol > 0.0) {
            out.push(format!("tol: must be positive, got {}", self.tol));
        }
        if self.max_iters == 0 {
            out.push("max_iters: must be at least 1".into());
        }
        if self.kind == BaselineKind::IrlsLp {
            if !(1.0..=2.0).contains(&self.p) {
                out.push(format!("p: must lie in [1, 2), got {}", self.p));
            }
            if !(self.irls_epsilon > 0.0) {
                out.push(format!("irls_epsilon: must be positive, got {}", self.irls_epsilon));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResult {
    pub estimate: DVector<f64>,
    pub iterations: usize,
    /// Step norm fell below `tol` at an identifiable point.
    pub converged: bool,
    /// The geometry matrix at the estimate has full rank.
    pub identifiable: bool,
    /// Objective after each iteration, starting with the initial point
    /// (weighted squares for Gauss-Newton, `sum |res|^p` for IRLS).
    pub history: Vec<f64>,
}

fn residuals(x: &DVector<f64>, scenario: &Scenario, ranges: &[f64]) -> Vec<f64> {
    scenario
        .sensors()
        .iter()
        .zip(ranges)
        .map(|(s, r)| r - (x - s).norm())
        .collect()
}

/// Gradient of `r_i - ||x - x_i||` w.r.t. `x` (zero at the sensor itself).
fn residual_gradient(x: &DVector<f64>, sensor: &DVector<f64>) -> DVector<f64> {
    let diff = x - sensor;
    let n = diff.norm();
    if n < 1e-12 {
        DVector::zeros(x.len())
    } else {
        -diff / n
    }
}

fn weighted_cost(x: &DVector<f64>, scenario: &Scenario, ranges: &[f64], weights: &[f64]) -> f64 {
    residuals(x, scenario, ranges)
        .iter()
        .zip(weights)
        .map(|(r, w)| w * r * r)
        .sum()
}

/// Solves `(A + mu I) step = rhs`, starting from `mu = 0` and falling back
/// to `mu = 1e-6`, growing by 10 until the factorization succeeds.
fn damped_solve(a: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let n = a.nrows();
    let full_rank = {
        let eig = a.clone().symmetric_eigen();
        let max = eig.eigenvalues.max();
        max > 0.0 && eig.eigenvalues.min() > IDENTIFIABILITY_RATIO * max
    };
    if full_rank {
        if let Some(ch) = a.clone().cholesky() {
            return Some(ch.solve(rhs));
        }
    }
    let mut mu = 1e-6;
    for _ in 0..20 {
        let damped = a + DMatrix::identity(n, n) * mu;
        if let Some(ch) = damped.cholesky() {
            return Some(ch.solve(rhs));
        }
        mu *= 10.0;
    }
    None
}

fn identifiable(x: &DVector<f64>, scenario: &Scenario) -> bool {
    let dim = scenario.dimension();
    let mut g = DMatrix::zeros(dim, dim);
    for s in scenario.sensors() {
        let j = residual_gradient(x, s);
        g += &j * j.transpose();
    }
    let eig = g.symmetric_eigen();
    let max = eig.eigenvalues.max();
    max > 0.0 && eig.eigenvalues.min() > IDENTIFIABILITY_RATIO * max
}

fn weighted_gauss_newton<W, O>(
    scenario: &Scenario,
    ranges: &[f64],
    config: &BaselineConfig,
    weights_for: W,
    objective: O,
) -> BaselineResult
where
    W: Fn(&[f64]) -> Vec<f64>,
    O: Fn(&[f64]) -> f64,
{
    let dim = scenario.dimension();
    let mut x = scenario.sensor_centroid();
    let mut history = vec![objective(&residuals(&x, scenario, ranges))];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iters {
        iterations += 1;
        let res = residuals(&x, scenario, ranges);
        let w = weights_for(&res);
        let mut a = DMatrix::zeros(dim, dim);
        let mut g = DVector::zeros(dim);
        for ((s, r), wi) in scenario.sensors().iter().zip(&res).zip(&w) {
            let j = residual_gradient(&x, s);
            a += &j * j.transpose() * *wi;
            g += &j * (wi * r);
        }
        let Some(step) = damped_solve(&a, &(-g)) else {
            break;
        };
        let base = weighted_cost(&x, scenario, ranges, &w);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial = &x + &step * t;
            if weighted_cost(&trial, scenario, ranges, &w) <= base {
                accepted = Some(trial);
                break;
            }
            t *= 0.5;
        }
        let step_norm = match accepted {
            Some(next) => {
                let n = (&next - &x).norm();
                x = next;
                n
            }
            None => 0.0,
        };
        history.push(objective(&residuals(&x, scenario, ranges)));
        if !x.iter().all(|c| c.is_finite()) {
            break;
        }
        if step_norm < config.tol {
            converged = true;
            break;
        }
    }

    let identifiable = identifiable(&x, scenario);
    BaselineResult {
        estimate: x,
        iterations,
        converged: converged && identifiable,
        identifiable,
        history,
    }
}

fn check(scenario: &Scenario, measurements: &Measurements, config: &BaselineConfig) -> Result<(), BaselineError> {
    let problems = config.problems();
    if !problems.is_empty() {
        return Err(BaselineError::Config(problems));
    }
    measurements.check_against(scenario)?;
    if let Some(s) = measurements.sigma.iter().find(|s| !(**s > 0.0)) {
        return Err(BaselineError::Sigma(*s));
    }
    Ok(())
}

/// Gauss-Newton for `min_x sum (r_i - ||x - x_i||)^2 / sigma_i^2`, started
/// at the sensor centroid.
pub fn solve_gn_l2(
    scenario: &Scenario,
    measurements: &Measurements,
    config: &BaselineConfig,
) -> Result<BaselineResult, BaselineError> {
    check(scenario, measurements, config)?;
    let inv_var: Vec<f64> = measurements.sigma.iter().map(|s| 1.0 / (s * s)).collect();
    let weights = |_: &[f64]| inv_var.clone();
    let objective = |res: &[f64]| res.iter().zip(&inv_var).map(|(r, w)| w * r * r).sum();
    Ok(weighted_gauss_newton(scenario, &measurements.ranges, config, weights, objective))
}

/// IRLS for `min_x sum |r_i - ||x - x_i|||^p`: each iteration fixes
/// `w_i = max(|res_i|, eps)^(p - 2)` and takes one weighted Gauss-Newton step.
pub fn solve_irls_lp(
    scenario: &Scenario,
    measurements: &Measurements,
    config: &BaselineConfig,
) -> Result<BaselineResult, BaselineError> {
    check(scenario, measurements, config)?;
    let (p, eps) = (config.p, config.irls_epsilon);
    let weights = |res: &[f64]| res.iter().map(|r| r.abs().max(eps).powf(p - 2.0)).collect();
    let objective = |res: &[f64]| res.iter().map(|r| r.abs().powf(p)).sum();
    Ok(weighted_gauss_newton(scenario, &measurements.ranges, config, weights, objective))
}

/// Dispatches on `config.kind`.
pub fn solve(
    scenario: &Scenario,
    measurements: &Measurements,
    config: &BaselineConfig,
) -> Result<BaselineResult, BaselineError> {
    match config.kind {
        BaselineKind::GaussNewtonL2 => solve_gn_l2(scenario, measurements, config),
        BaselineKind::IrlsLp => solve_irls_lp(scenario, measurements, config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{measure, true_ranges, RngSeed, StableParams};

    fn noiseless() -> (Scenario, Measurements) {
        let s = Scenario::fixed_perimeter8();
        let m = Measurements::from_ranges(true_ranges(&s));
        (s, m)
    }

    #[test]
    fn gn_recovers_noiseless_source() {
        let (s, m) = noiseless();
        let r = solve_gn_l2(&s, &m, &BaselineConfig::gauss_newton()).unwrap();
        assert!(r.converged);
        assert!((r.estimate - s.source()).norm() < 1e-6);
    }

    #[test]
    fn irls_recovers_noiseless_source() {
        let (s, m) = noiseless();
        let r = solve_irls_lp(&s, &m, &BaselineConfig::irls(1.3)).unwrap();
        assert!(r.converged);
        assert!((r.estimate - s.source()).norm() < 1e-6);
    }

    #[test]
    fn single_sensor_is_not_identifiable() {
        let s = Scenario::new(vec![1.0, 2.0], vec![vec![5.0, 5.0]]).unwrap();
        let m = Measurements::from_ranges(true_ranges(&s));
        let r = solve_gn_l2(&s, &m, &BaselineConfig::gauss_newton()).unwrap();
        assert!(!r.converged);
        assert!(!r.identifiable);
    }

    #[test]
    fn irls_with_p_two_is_gauss_newton() {
        let s = Scenario::fixed_perimeter8();
        let m = measure(&s, StableParams::symmetric(1.5, 0.4), RngSeed(4)).unwrap();
        let gn = solve_gn_l2(&s, &m, &BaselineConfig::gauss_newton()).unwrap();
        let ir = solve_irls_lp(&s, &m, &BaselineConfig::irls(2.0)).unwrap();
        assert!((gn.estimate.clone() - ir.estimate).norm() <= 1e-10);
        assert_eq!(gn.history, ir.history);
        assert_eq!(gn.iterations, ir.iterations);
    }

    #[test]
    fn irls_objective_is_nonincreasing() {
        let s = Scenario::fixed_perimeter8();
        for seed in 0..20 {
            let m = measure(&s, StableParams::symmetric(1.5, 0.5), RngSeed(seed)).unwrap();
            let r = solve_irls_lp(&s, &m, &BaselineConfig::irls(1.3)).unwrap();
            for w in r.history.windows(2) {
                assert!(w[1] <= w[0] + 1e-9 * w[0].max(1.0), "seed {seed}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn config_problems_name_fields() {
        let mut c = BaselineConfig::irls(2.5);
        c.tol = 0.0;
        let p = c.problems();
        assert!(p.iter().any(|s| s.starts_with("p:")));
        assert!(p.iter().any(|s| s.starts_with("tol:")));
        let (s, m) = noiseless();
        assert!(matches!(solve(&s, &m, &c), Err(BaselineError::Config(_))));
    }

    #[test]
    fn nonpositive_sigma_rejected() {
        let (s, mut m) = noiseless();
        m.sigma[2] = 0.0;
        assert_eq!(solve_gn_l2(&s, &m, &BaselineConfig::gauss_newton()), Err(BaselineError::Sigma(0.0)));
    }
}
