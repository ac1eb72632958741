//! Position estimators behind a common trait, built by kind name from
//! JSON parameters.
//!
//! ```json
//! { "name": "huber-admm", "kind": "admm", "loss": { "kind": "huber", "radius": 1.0 } }
//! { "name": "lp-irls", "kind": "irls_lp", "p": 1.3 }
//! { "name": "ml", "kind": "gauss_newton_l2" }
//! ```

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DVector;
use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use crate::admm::{self, AdmmConfig, AdmmError, KktReport, SolveResult};
use crate::baselines::{self, BaselineConfig, BaselineError, BaselineKind, BaselineResult};
use crate::loss::LossSpec;
use crate::model::{Measurements, Scenario};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("estimator spec is missing \"{0}\"")]
    Missing(&'static str),
    #[error("unknown estimator kind \"{0}\"")]
    UnknownKind(String),
    #[error("estimator \"{name}\": {message}")]
    Invalid { name: String, message: String },
    #[error(transparent)]
    Admm(#[from] AdmmError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum EstimateDetail {
    Admm(Box<SolveResult>),
    Baseline(BaselineResult),
}

/// What every estimator returns.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub position: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// KKT residuals, for solvers that carry multipliers.
    pub kkt: Option<KktReport>,
    pub detail: EstimateDetail,
}

impl Estimate {
    pub fn admm(&self) -> Option<&SolveResult> {
        match &self.detail {
            EstimateDetail::Admm(r) => Some(r),
            EstimateDetail::Baseline(_) => None,
        }
    }
}

pub trait Estimator: Send + Sync + fmt::Debug {
    /// Display name from the config (unique within an experiment).
    fn name(&self) -> &str;

    /// Registry kind this estimator was built from.
    fn kind(&self) -> &'static str;

    fn estimate(&self, scenario: &Scenario, measurements: &Measurements) -> Result<Estimate, EstimatorError>;
}

#[derive(Debug, Clone)]
pub struct AdmmEstimator {
    pub name: String,
    pub loss: LossSpec,
    pub config: AdmmConfig,
}

impl Estimator for AdmmEstimator {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> &'static str {
        "admm"
    }

    fn estimate(&self, scenario: &Scenario, measurements: &Measurements) -> Result<Estimate, EstimatorError> {
        let result = admm::solve(scenario, measurements, &self.loss, &self.config, None)?;
        let kkt = admm::kkt_residuals(&result, scenario, measurements, &self.loss);
        Ok(Estimate {
            position: result.estimate.clone(),
            iterations: result.iterations,
            converged: result.converged,
            kkt: Some(kkt),
            detail: EstimateDetail::Admm(Box::new(result)),
        })
    }
}

#[derive(Debug, Clone)]
pub struct BaselineEstimator {
    pub name: String,
    pub config: BaselineConfig,
}

impl Estimator for BaselineEstimator {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> &'static str {
        match self.config.kind {
            BaselineKind::GaussNewtonL2 => "gauss_newton_l2",
            BaselineKind::IrlsLp => "irls_lp",
        }
    }

    fn estimate(&self, scenario: &Scenario, measurements: &Measurements) -> Result<Estimate, EstimatorError> {
        let result = baselines::solve(scenario, measurements, &self.config)?;
        Ok(Estimate {
            position: result.estimate.clone(),
            iterations: result.iterations,
            converged: result.converged,
            kkt: None,
            detail: EstimateDetail::Baseline(result),
        })
    }
}

/// Settings shared by every estimator of an experiment.
#[derive(Debug, Clone, Copy, Default)]
pub struct BuildContext {
    /// ADMM settings used when a spec has no `"admm"` section.
    pub admm: AdmmConfig,
}

pub trait EstimatorBuilder: Send + Sync {
    fn build(&self, name: &str, params: &Value, ctx: &BuildContext) -> Result<Box<dyn Estimator>, EstimatorError>;
}

fn invalid(name: &str, message: impl fmt::Display) -> EstimatorError {
    EstimatorError::Invalid {
        name: name.to_string(),
        message: message.to_string(),
    }
}

fn field<T: for<'de> Deserialize<'de>>(name: &str, params: &Value, key: &str) -> Result<Option<T>, EstimatorError> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => T::deserialize(v)
            .map(Some)
            .map_err(|e| invalid(name, format!("{key}: {e}"))),
    }
}

struct AdmmBuilder;

impl EstimatorBuilder for AdmmBuilder {
    fn build(&self, name: &str, params: &Value, ctx: &BuildContext) -> Result<Box<dyn Estimator>, EstimatorError> {
        let loss: LossSpec = field(name, params, "loss")?.ok_or(EstimatorError::Missing("loss"))?;
        let loss = loss.validated().map_err(|e| invalid(name, format!("loss: {e}")))?;
        if !loss.has_prox() {
            return Err(invalid(name, format!("loss: {} has no proximal rule", loss.name())));
        }
        let config: AdmmConfig = field(name, params, "admm")?.unwrap_or(ctx.admm);
        let problems = config.problems();
        if !problems.is_empty() {
            return Err(invalid(name, format!("admm.{}", problems.join("; admm."))));
        }
        Ok(Box::new(AdmmEstimator {
            name: name.to_string(),
            loss,
            config,
        }))
    }
}

struct BaselineBuilder(BaselineKind);

impl EstimatorBuilder for BaselineBuilder {
    fn build(&self, name: &str, params: &Value, _ctx: &BuildContext) -> Result<Box<dyn Estimator>, EstimatorError> {
        let mut config = match self.0 {
            BaselineKind::GaussNewtonL2 => BaselineConfig::gauss_newton(),
            BaselineKind::IrlsLp => {
                let p = field(name, params, "p")?.ok_or(EstimatorError::Missing("p"))?;
                BaselineConfig::irls(p)
            }
        };
        if let Some(tol) = field(name, params, "tol")? {
            config.tol = tol;
        }
        if let Some(n) = field(name, params, "max_iters")? {
            config.max_iters = n;
        }
        if let Some(eps) = field(name, params, "irls_epsilon")? {
            config.irls_epsilon = eps;
        }
        let problems = config.problems();
        if !problems.is_empty() {
            return Err(invalid(name, problems.join("; ")));
        }
        Ok(Box::new(BaselineEstimator {
            name: name.to_string(),
            config,
        }))
    }
}

/// Name-to-builder table.
pub struct EstimatorRegistry {
    builders: BTreeMap<String, Box<dyn EstimatorBuilder>>,
}

impl Default for EstimatorRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register("admm", Box::new(AdmmBuilder));
        r.register("gauss_newton_l2", Box::new(BaselineBuilder(BaselineKind::GaussNewtonL2)));
        r.register("irls_lp", Box::new(BaselineBuilder(BaselineKind::IrlsLp)));
        r
    }
}

impl EstimatorRegistry {
    pub fn empty() -> Self {
        Self {
            builders: BTreeMap::new(),
        }
    }

    /// Adds or replaces the builder for `kind`.
    pub fn register(&mut self, kind: &str, builder: Box<dyn EstimatorBuilder>) {
        self.builders.insert(kind.to_string(), builder);
    }

    pub fn kinds(&self) -> impl Iterator<Item = &str> {
        self.builders.keys().map(String::as_str)
    }

    /// Builds from a spec object carrying `"kind"` and optionally `"name"`
    /// (defaults to the kind).
    pub fn build(&self, spec: &Value, ctx: &BuildContext) -> Result<Box<dyn Estimator>, EstimatorError> {
        let kind = spec
            .get("kind")
            .and_then(Value::as_str)
            .ok_or(EstimatorError::Missing("kind"))?;
        let name = spec.get("name").and_then(Value::as_str).unwrap_or(kind);
        let builder = self
            .builders
            .get(kind)
            .ok_or_else(|| EstimatorError::UnknownKind(kind.to_string()))?;
        builder.build(name, spec, ctx)
    }
}
