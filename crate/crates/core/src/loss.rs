//! Robust losses and their scalar proximal mappings.
//!
//! `prox_{tau f}(b) = argmin_a f(a) + (a - b)^2 / (2 tau)`. Closed forms
//! exist for l1, l2 and Huber; the lp case (1 < p < 2) compares the
//! objective at 0 and at the root of the stationarity equation, found by
//! bisection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bisection iteration cap for [`lp_root`].
pub const LP_ROOT_MAX_ITERS: usize = 200;
/// Relative bracket width at which [`lp_root`] stops.
pub const LP_ROOT_REL_WIDTH: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("lp exponent p must lie in [1, 2], got {0}")]
    Exponent(f64),
    #[error("Huber radius must be positive, got {0}")]
    Radius(f64),
    #[error("Welsch sigma must be positive, got {0}")]
    WelschSigma(f64),
    #[error("proximal weight tau must be positive, got {0}")]
    Tau(f64),
    #[error("{0} loss has no proximal rule")]
    NoProx(&'static str),
    #[error("lp root bisection did not converge after {0} iterations")]
    RootNotConverged(usize),
}

/// Robust fitting-error measure `f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LossSpec {
    /// `|z|`
    L1,
    /// `|z|^p`
    Lp { p: f64 },
    /// `z^2`
    L2,
    /// `z^2` for `|z| <= R`, `2R|z| - R^2` beyond.
    Huber { radius: f64 },
    /// `1 - exp(-z^2 / (2 sigma^2))`. Evaluation only; the ADMM has no
    /// proximal rule for it.
    Welsch { sigma: f64 },
}

impl LossSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LossSpec::L1 => "l1",
            LossSpec::Lp { .. } => "lp",
            LossSpec::L2 => "l2",
            LossSpec::Huber { .. } => "huber",
            LossSpec::Welsch { .. } => "welsch",
        }
    }

    /// Checks parameter ranges and maps `Lp` with `p = 1` / `p = 2` onto
    /// the closed-form kinds.
    pub fn validated(self) -> Result<Self, LossError> {
        match self {
            LossSpec::Lp { p } => {
                if !(1.0..=2.0).contains(&p) {
                    Err(LossError::Exponent(p))
                } else if p == 1.0 {
                    Ok(LossSpec::L1)
                } else if p == 2.0 {
                    Ok(LossSpec::L2)
                } else {
                    Ok(self)
                }
            }
            LossSpec::Huber { radius } if !(radius > 0.0 && radius.is_finite()) => {
                Err(LossError::Radius(radius))
            }
            LossSpec::Welsch { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                Err(LossError::WelschSigma(sigma))
            }
            other => Ok(other),
        }
    }

    /// Whether [`LossSpec::prox`] is defined for this loss.
    pub fn has_prox(&self) -> bool {
        !matches!(self, LossSpec::Welsch { .. })
    }

    pub fn eval(&self, z: f64) -> f64 {
        match *self {
            LossSpec::L1 => z.abs(),
            LossSpec::Lp { p } => z.abs().powf(p),
            LossSpec::L2 => z * z,
            LossSpec::Huber { radius } => {
                let a = z.abs();
                if a <= radius {
                    z * z
                } else {
                    2.0 * radius * a - radius * radius
                }
            }
            LossSpec::Welsch { sigma } => 1.0 - (-z * z / (2.0 * sigma * sigma)).exp(),
        }
    }

    /// Subdifferential of `f` at `z` as a closed interval. Degenerate
    /// (`lo == hi`) everywhere except for l1 at the origin.
    pub fn subdifferential(&self, z: f64) -> (f64, f64) {
        let g = match *self {
            LossSpec::L1 => {
                if z == 0.0 {
                    return (-1.0, 1.0);
                }
                z.signum()
            }
            LossSpec::Lp { p } => {
                if z == 0.0 {
                    0.0
                } else {
                    p * z.abs().powf(p - 1.0) * z.signum()
                }
            }
            LossSpec::L2 => 2.0 * z,
            LossSpec::Huber { radius } => {
                if z.abs() <= radius {
                    2.0 * z
                } else {
                    2.0 * radius * z.signum()
                }
            }
            LossSpec::Welsch { sigma } => {
                let s2 = sigma * sigma;
                z / s2 * (-z * z / (2.0 * s2)).exp()
            }
        };
        (g, g)
    }

    /// `f(a) + (a - b)^2 / (2 tau)`.
    pub fn prox_objective(&self, tau: ProxParams, a: f64, b: f64) -> f64 {
        self.eval(a) + (a - b) * (a - b) / (2.0 * tau.tau())
    }

    /// Proximal mapping `argmin_a f(a) + (a - b)^2 / (2 tau)`.
    pub fn prox(&self, tau: ProxParams, b: f64) -> Result<f64, LossError> {
        let t = tau.tau();
        match *self {
            LossSpec::L1 => Ok((b - t).max(0.0) - (-b - t).max(0.0)),
            LossSpec::L2 => Ok(b / (1.0 + 2.0 * t)),
            LossSpec::Huber { radius } => {
                Ok(b - 2.0 * t * radius * b / b.abs().max(radius + 2.0 * t * radius))
            }
            LossSpec::Lp { p } => {
                if b == 0.0 {
                    return Ok(0.0);
                }
                let root = lp_root(p, t, b)?;
                let at_root = self.prox_objective(tau, root, b);
                let at_zero = self.prox_objective(tau, 0.0, b);
                Ok(if at_root <= at_zero { root } else { 0.0 })
            }
            LossSpec::Welsch { .. } => Err(LossError::NoProx("welsch")),
        }
    }
}

/// Proximal weight `tau > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxParams(f64);

impl ProxParams {
    pub fn new(tau: f64) -> Result<Self, LossError> {
        if tau > 0.0 && tau.is_finite() {
            Ok(Self(tau))
        } else {
            Err(LossError::Tau(tau))
        }
    }

    pub fn tau(self) -> f64 {
        self.0
    }
}

/// Root of `(a - b)/tau + p a^(p-1) = 0` on `[0, b]` for `b > 0`, and of
/// `(a - b)/tau - p (-a)^(p-1) = 0` on `[b, 0]` for `b < 0`.
///
/// The left-hand side is strictly increasing on the bracket and changes
/// sign across it, so bisection always converges; the error variant only
/// fires if the iteration cap is hit.
pub fn lp_root(p: f64, tau: f64, b: f64) -> Result<f64, LossError> {
    if b == 0.0 {
        return Ok(0.0);
    }
    let target = b.abs();
    let stationarity = |a: f64| (a - target) / tau + p * a.powf(p - 1.0);
    let width = LP_ROOT_REL_WIDTH * target.max(1.0);
    let (mut lo, mut hi) = (0.0f64, target);
    for _ in 0..LP_ROOT_MAX_ITERS {
        if hi - lo <= width {
            return Ok(b.signum() * 0.5 * (lo + hi));
        }
        let mid = 0.5 * (lo + hi);
        let g = stationarity(mid);
        if g == 0.0 {
            return Ok(b.signum() * mid);
        }
        if g > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    if hi - lo <= width {
        Ok(b.signum() * 0.5 * (lo + hi))
    } else {
        Err(LossError::RootNotConverged(LP_ROOT_MAX_ITERS))
    }
}

pub mod check {
    //! Brute-force scalar minimization used to audit [`LossSpec::prox`].

    use super::{LossSpec, ProxParams};
    use rand::Rng;

    const GRID_POINTS: usize = 100_000;
    const INV_PHI: f64 = 0.618_033_988_749_894_9;

    /// Minimizer of the prox objective found by a dense grid over a
    /// window containing 0 and `b`, refined by golden-section search.
    pub fn brute_force_prox(loss: &LossSpec, tau: ProxParams, b: f64) -> f64 {
        let obj = |a: f64| loss.prox_objective(tau, a, b);
        let lo = b.min(0.0) - 1.0;
        let hi = b.max(0.0) + 1.0;
        let step = (hi - lo) / (GRID_POINTS - 1) as f64;
        let mut best = 0usize;
        let mut best_val = f64::INFINITY;
        for i in 0..GRID_POINTS {
            let v = obj(lo + step * i as f64);
            if v < best_val {
                best_val = v;
                best = i;
            }
        }
        let mut a = lo + step * best.saturating_sub(1) as f64;
        let mut c = lo + step * (best + 1).min(GRID_POINTS - 1) as f64;
        let mut x1 = c - INV_PHI * (c - a);
        let mut x2 = a + INV_PHI * (c - a);
        let (mut f1, mut f2) = (obj(x1), obj(x2));
        for _ in 0..200 {
            if c - a < 1e-13 {
                break;
            }
            if f1 <= f2 {
                c = x2;
                x2 = x1;
                f2 = f1;
                x1 = c - INV_PHI * (c - a);
                f1 = obj(x1);
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + INV_PHI * (c - a);
                f2 = obj(x2);
            }
        }
        0.5 * (a + c)
    }

    /// Largest |prox - brute force| per loss kind.
    #[derive(Debug, Clone, PartialEq)]
    pub struct ProxCheckReport {
        pub rows: Vec<(&'static str, usize, f64)>,
    }

    impl ProxCheckReport {
        pub fn max_deviation(&self) -> f64 {
            self.rows.iter().map(|r| r.2).fold(0.0, f64::max)
        }
    }

    /// Random loss of the given kind with `b` in [-20, 20], `tau` in
    /// [0.01, 10], `p` in (1, 2) and `R` in (0.1, 5).
    pub fn random_instance<R: Rng + ?Sized>(kind: &str, rng: &mut R) -> (LossSpec, ProxParams, f64) {
        let loss = match kind {
            "l1" => LossSpec::L1,
            "l2" => LossSpec::L2,
            "lp" => LossSpec::Lp {
                p: loop {
                    let p: f64 = rng.random_range(1.0..2.0);
                    if p > 1.0 {
                        break p;
                    }
                },
            },
            "huber" => LossSpec::Huber {
                radius: rng.random_range(0.1..5.0),
            },
            other => panic!("unknown loss kind {other}"),
        };
        let tau = ProxParams::new(rng.random_range(0.01..10.0)).expect("positive");
        let b = rng.random_range(-20.0..20.0);
        (loss, tau, b)
    }

    /// Compares the closed-form/bisection prox against the brute-force
    /// oracle on `instances` random problems per loss kind.
    pub fn run<R: Rng + ?Sized>(instances: usize, rng: &mut R) -> ProxCheckReport {
        let mut rows = Vec::new();
        for kind in ["l1", "lp", "l2", "huber"] {
            let mut worst = 0.0f64;
            for _ in 0..instances {
                let (loss, tau, b) = random_instance(kind, rng);
                let fast = loss.prox(tau, b).expect("prox defined");
                worst = worst.max((fast - brute_force_prox(&loss, tau, b)).abs());
            }
            rows.push((kind, instances, worst));
        }
        ProxCheckReport { rows }
    }
}
