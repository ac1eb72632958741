//! Localization scenarios, the TOA measurement model and impulsive noise.
//!
//! Ranges follow `r_i = ||x - x_i|| + e_i` where the `e_i` are i.i.d. draws
//! from an alpha-stable law `S(alpha, zeta, gamma, mu)` in the 1-type
//! parameterization (so `alpha = 2` is Gaussian with variance `2 gamma^2`).

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("scenario needs a positive dimension")]
    ZeroDimension,
    #[error("scenario needs at least one sensor")]
    NoSensors,
    #[error("{what} has length {got}, expected dimension {expected}")]
    DimensionMismatch {
        what: String,
        got: usize,
        expected: usize,
    },
    #[error("{0} contains a non-finite coordinate")]
    NonFinite(String),
    #[error("sensors {0} and {1} coincide")]
    CoincidentSensors(usize, usize),
    #[error("alpha must lie in (0, 2], got {0}")]
    Alpha(f64),
    #[error("zeta must lie in [-1, 1], got {0}")]
    Zeta(f64),
    #[error("gamma must be positive, got {0}")]
    Gamma(f64),
    #[error("mu must be finite, got {0}")]
    Mu(f64),
    #[error("sample count must be at least 1")]
    EmptySample,
    #[error("target GSNR must be finite, got {0}")]
    Target(f64),
    #[error("GSNR is undefined when the source sits on every sensor")]
    DegenerateGeometry,
    #[error("measurement vector has length {got}, scenario has {expected} sensors")]
    MeasurementLength { got: usize, expected: usize },
}

/// Source/sensor geometry. All coordinates in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScenarioDoc", into = "ScenarioDoc")]
pub struct Scenario {
    source: DVector<f64>,
    sensors: Vec<DVector<f64>>,
}

/// JSON shape of a [`Scenario`].
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScenarioDoc {
    dimension: usize,
    source: Vec<f64>,
    sensors: Vec<Vec<f64>>,
}

impl TryFrom<ScenarioDoc> for Scenario {
    type Error = ModelError;

    fn try_from(doc: ScenarioDoc) -> Result<Self, Self::Error> {
        if doc.source.len() != doc.dimension {
            return Err(ModelError::DimensionMismatch {
                what: "source".into(),
                got: doc.source.len(),
                expected: doc.dimension,
            });
        }
        Scenario::new(doc.source, doc.sensors)
    }
}

impl From<Scenario> for ScenarioDoc {
    fn from(s: Scenario) -> Self {
        ScenarioDoc {
            dimension: s.dimension(),
            source: s.source.iter().copied().collect(),
            sensors: s.sensors.iter().map(|v| v.iter().copied().collect()).collect(),
        }
    }
}

impl Scenario {
    /// Builds a scenario, rejecting mismatched dimensions, non-finite
    /// coordinates and coincident sensors. Weak geometry (fewer than
    /// `H + 1` sensors, source on a sensor) is logged but accepted.
    pub fn new(source: Vec<f64>, sensors: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        let dim = source.len();
        if dim == 0 {
            return Err(ModelError::ZeroDimension);
        }
        if sensors.is_empty() {
            return Err(ModelError::NoSensors);
        }
        if source.iter().any(|c| !c.is_finite()) {
            return Err(ModelError::NonFinite("source".into()));
        }
        for (i, s) in sensors.iter().enumerate() {
            if s.len() != dim {
                return Err(ModelError::DimensionMismatch {
                    what: format!("sensor {i}"),
                    got: s.len(),
                    expected: dim,
                });
            }
            if s.iter().any(|c| !c.is_finite()) {
                return Err(ModelError::NonFinite(format!("sensor {i}")));
            }
        }
        for i in 0..sensors.len() {
            for j in (i + 1)..sensors.len() {
                if sensors[i] == sensors[j] {
                    return Err(ModelError::CoincidentSensors(i, j));
                }
            }
        }
        if sensors.len() < dim + 1 {
            log::warn!(
                "{} sensors in {} dimensions: the position fix is not well posed",
                sensors.len(),
                dim
            );
        }
        if sensors.iter().any(|s| *s == source) {
            log::warn!("source coincides with a sensor");
        }
        Ok(Self {
            source: DVector::from_vec(source),
            sensors: sensors.into_iter().map(DVector::from_vec).collect(),
        })
    }

    /// Eight sensors evenly spaced on the perimeter of the origin-centered
    /// 20 m x 20 m square with the source at (2, 3).
    pub fn fixed_perimeter8() -> Self {
        let h = 10.0;
        let sensors = vec![
            vec![h, 0.0],
            vec![h, h],
            vec![0.0, h],
            vec![-h, h],
            vec![-h, 0.0],
            vec![-h, -h],
            vec![0.0, -h],
            vec![h, -h],
        ];
        Self::new(vec![2.0, 3.0], sensors).expect("fixed geometry is valid")
    }

    /// Source and `n_sensors` sensors drawn uniformly inside the
    /// origin-centered square of side `side` (2-D).
    pub fn random_square<R: Rng + ?Sized>(side: f64, n_sensors: usize, rng: &mut R) -> Self {
        let half = side / 2.0;
        let draw = |rng: &mut R| vec![rng.random_range(-half..half), rng.random_range(-half..half)];
        let source = draw(rng);
        let mut sensors: Vec<Vec<f64>> = Vec::with_capacity(n_sensors);
        while sensors.len() < n_sensors {
            let s = draw(rng);
            if !sensors.contains(&s) {
                sensors.push(s);
            }
        }
        Self::new(source, sensors).expect("random geometry is valid")
    }

    pub fn dimension(&self) -> usize {
        self.source.len()
    }

    pub fn num_sensors(&self) -> usize {
        self.sensors.len()
    }

    pub fn source(&self) -> &DVector<f64> {
        &self.source
    }

    pub fn sensors(&self) -> &[DVector<f64>] {
        &self.sensors
    }

    pub fn sensor_centroid(&self) -> DVector<f64> {
        let mut c = DVector::zeros(self.dimension());
        for s in &self.sensors {
            c += s;
        }
        c / self.sensors.len() as f64
    }

    /// Same sensors with a different source position.
    pub fn with_source(&self, source: DVector<f64>) -> Result<Self, ModelError> {
        Self::new(
            source.iter().copied().collect(),
            self.sensors.iter().map(|v| v.iter().copied().collect()).collect(),
        )
    }

    /// Every sensor and the source shifted by `offset`.
    pub fn translated(&self, offset: &DVector<f64>) -> Self {
        Self {
            source: &self.source + offset,
            sensors: self.sensors.iter().map(|s| s + offset).collect(),
        }
    }
}

/// Euclidean source-to-sensor distances.
pub fn true_ranges(scenario: &Scenario) -> Vec<f64> {
    scenario
        .sensors
        .iter()
        .map(|s| (&scenario.source - s).norm())
        .collect()
}

/// Noisy range vector plus per-sensor standard deviations (only the
/// l2 baseline uses them).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurements {
    pub ranges: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Noise realization, when the measurements were simulated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<Vec<f64>>,
}

impl Measurements {
    /// Unit-weight measurements from raw ranges.
    pub fn from_ranges(ranges: Vec<f64>) -> Self {
        let sigma = vec![1.0; ranges.len()];
        Self {
            ranges,
            sigma,
            noise: None,
        }
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn check_against(&self, scenario: &Scenario) -> Result<(), ModelError> {
        let expected = scenario.num_sensors();
        if self.ranges.len() != expected {
            return Err(ModelError::MeasurementLength {
                got: self.ranges.len(),
                expected,
            });
        }
        if self.sigma.len() != expected {
            return Err(ModelError::MeasurementLength {
                got: self.sigma.len(),
                expected,
            });
        }
        if self.ranges.iter().any(|r| !r.is_finite()) {
            return Err(ModelError::NonFinite("ranges".into()));
        }
        Ok(())
    }

    /// Number of negative ranges (impulsive noise can produce them).
    pub fn negative_count(&self) -> usize {
        self.ranges.iter().filter(|r| **r < 0.0).count()
    }
}

/// Alpha-stable law parameters, 1-type parameterization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableParams {
    pub alpha: f64,
    #[serde(default)]
    pub zeta: f64,
    pub gamma: f64,
    #[serde(default)]
    pub mu: f64,
}

impl StableParams {
    pub fn symmetric(alpha: f64, gamma: f64) -> Self {
        Self {
            alpha,
            zeta: 0.0,
            gamma,
            mu: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.alpha > 0.0 && self.alpha <= 2.0) {
            return Err(ModelError::Alpha(self.alpha));
        }
        if !(-1.0..=1.0).contains(&self.zeta) {
            return Err(ModelError::Zeta(self.zeta));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(ModelError::Gamma(self.gamma));
        }
        if !self.mu.is_finite() {
            return Err(ModelError::Mu(self.mu));
        }
        Ok(())
    }
}

/// Explicit 64-bit seed. Streams are ChaCha8, which is portable and
/// supports independent sub-streams per Monte-Carlo run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Independent stream for run `index`; results do not depend on how
    /// runs are scheduled across workers.
    pub fn stream(self, index: u64) -> ChaCha8Rng {
        let mut rng = self.rng();
        rng.set_stream(index);
        rng
    }
}

/// Chambers-Mallows-Stuck sampler for a validated [`StableParams`].
#[derive(Debug, Clone, Copy)]
pub struct StableNoise {
    params: StableParams,
}

impl StableNoise {
    pub fn new(params: StableParams) -> Result<Self, ModelError> {
        params.validate()?;
        Ok(Self { params })
    }

    pub fn params(&self) -> StableParams {
        self.params
    }

    /// Standardized draw (gamma = 1, mu = 0) from uniform angle `v` in
    /// (-pi/2, pi/2) and unit exponential `w`.
    fn standard(&self, v: f64, w: f64) -> f64 {
        let StableParams { alpha, zeta, .. } = self.params;
        if alpha == 1.0 {
            let a = FRAC_PI_2 + zeta * v;
            (a * v.tan() - zeta * ((FRAC_PI_2 * w * v.cos()) / a).ln()) / FRAC_PI_2
        } else {
            let t = zeta * (PI * alpha / 2.0).tan();
            let b = t.atan() / alpha;
            let s = (1.0 + t * t).powf(1.0 / (2.0 * alpha));
            let av = alpha * (v + b);
            s * av.sin() / v.cos().powf(1.0 / alpha)
                * ((v - av).cos() / w).powf((1.0 - alpha) / alpha)
        }
    }
}

impl Distribution<f64> for StableNoise {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let StableParams {
            alpha,
            zeta,
            gamma,
            mu,
        } = self.params;
        // open interval: endpoints make cos(v) vanish
        let v = loop {
            let u: f64 = rng.random();
            if u > 0.0 {
                break PI * (u - 0.5);
            }
        };
        let w: f64 = Exp1.sample(rng);
        let z = self.standard(v, w);
        if alpha == 1.0 {
            gamma * z + (2.0 / PI) * zeta * gamma * gamma.ln() + mu
        } else {
            gamma * z + mu
        }
    }
}

/// `n` i.i.d. alpha-stable draws; deterministic in `seed`.
pub fn sample_stable(params: StableParams, n: usize, seed: RngSeed) -> Result<Vec<f64>, ModelError> {
    if n == 0 {
        return Err(ModelError::EmptySample);
    }
    let noise = StableNoise::new(params)?;
    Ok(noise.sample_iter(seed.rng()).take(n).collect())
}

/// Noisy ranges for `scenario` using randomness from `rng`.
pub fn measure_with<R: Rng + ?Sized>(
    scenario: &Scenario,
    params: StableParams,
    rng: &mut R,
) -> Result<Measurements, ModelError> {
    let noise = StableNoise::new(params)?;
    let errors: Vec<f64> = (0..scenario.num_sensors()).map(|_| noise.sample(rng)).collect();
    let ranges = true_ranges(scenario)
        .into_iter()
        .zip(&errors)
        .map(|(d, e)| d + e)
        .collect();
    let mut m = Measurements::from_ranges(ranges);
    m.noise = Some(errors);
    Ok(m)
}

/// Noisy ranges `r_i = ||x - x_i|| + e_i`, a pure function of its inputs.
pub fn measure(scenario: &Scenario, params: StableParams, seed: RngSeed) -> Result<Measurements, ModelError> {
    measure_with(scenario, params, &mut seed.rng())
}

fn squared_range_sum(scenario: &Scenario) -> f64 {
    true_ranges(scenario).iter().map(|d| d * d).sum()
}

/// Generalized SNR in dB: `10 log10( sum ||x - x_i||^2 / (L gamma^alpha) )`.
pub fn gsnr(scenario: &Scenario, params: StableParams) -> Result<f64, ModelError> {
    if !(params.gamma > 0.0) {
        return Err(ModelError::Gamma(params.gamma));
    }
    let l = scenario.num_sensors() as f64;
    Ok(10.0 * (squared_range_sum(scenario) / (l * params.gamma.powf(params.alpha))).log10())
}

/// Noise scale that yields `target_db` GSNR for this geometry.
pub fn gamma_for_gsnr(scenario: &Scenario, alpha: f64, target_db: f64) -> Result<f64, ModelError> {
    if !target_db.is_finite() {
        return Err(ModelError::Target(target_db));
    }
    if !(alpha > 0.0 && alpha <= 2.0) {
        return Err(ModelError::Alpha(alpha));
    }
    let total = squared_range_sum(scenario);
    if total <= 0.0 {
        return Err(ModelError::DegenerateGeometry);
    }
    let l = scenario.num_sensors() as f64;
    let gamma_alpha = total / (l * 10f64.powf(target_db / 10.0));
    Ok(gamma_alpha.powf(1.0 / alpha))
}
