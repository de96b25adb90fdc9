//! Right-hand-side abstraction `dx/dt = f(x, t)` on `[0, horizon)`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("domain exceeded: t={t} is not below the horizon {horizon}")]
    DomainExceeded { t: f64, horizon: f64 },
    #[error("state dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// `f(x, t, out)`; writes the derivative into `out`.
pub type RhsFn = dyn Fn(&[f64], f64, &mut [f64]) -> Result<(), DynamicsError> + Send + Sync;
/// Scalar field `g(x, t)`.
pub type ScalarFn = dyn Fn(&[f64], f64) -> f64 + Send + Sync;

/// Lyapunov data: `V(x, t)` and optionally its analytic derivative along
/// trajectories.
#[derive(Clone)]
pub struct Lyapunov {
    pub value: Arc<ScalarFn>,
    pub derivative: Option<Arc<ScalarFn>>,
}

impl Lyapunov {
    pub fn new(value: Arc<ScalarFn>, derivative: Option<Arc<ScalarFn>>) -> Self {
        Self { value, derivative }
    }
}

/// A dynamical system together with the metadata the integrator and the
/// certificate checker need.
#[derive(Clone)]
pub struct DynamicsSpec {
    dim: usize,
    horizon: f64,
    rhs: Arc<RhsFn>,
    lyapunov: Option<Lyapunov>,
    label: String,
    decoupled: bool,
    sign_eps: f64,
}

impl fmt::Debug for DynamicsSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DynamicsSpec")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("horizon", &self.horizon)
            .field("has_lyapunov", &self.lyapunov.is_some())
            .field("decoupled", &self.decoupled)
            .field("sign_eps", &self.sign_eps)
            .finish()
    }
}

impl DynamicsSpec {
    /// `horizon` is the right end of the time domain; use `f64::INFINITY`
    /// for time-invariant systems.
    pub fn new(dim: usize, horizon: f64, rhs: Arc<RhsFn>, label: impl Into<String>) -> Self {
        assert!(dim >= 1, "state dimension must be at least 1");
        Self {
            dim,
            horizon,
            rhs,
            lyapunov: None,
            label: label.into(),
            decoupled: false,
            sign_eps: 0.0,
        }
    }

    pub fn with_lyapunov(mut self, lyapunov: Lyapunov) -> Self {
        self.lyapunov = Some(lyapunov);
        self
    }

    /// Declares that every coordinate evolves independently and has its own
    /// equilibrium at zero, so the integrator may absorb coordinates one at a
    /// time.
    pub fn decoupled(mut self, decoupled: bool) -> Self {
        self.decoupled = decoupled;
        self
    }

    /// Regularization width used by the sign term; 0 means exact sign.
    pub fn with_sign_eps(mut self, sign_eps: f64) -> Self {
        self.sign_eps = sign_eps;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn lyapunov(&self) -> Option<&Lyapunov> {
        self.lyapunov.as_ref()
    }

    pub fn is_decoupled(&self) -> bool {
        self.decoupled
    }

    pub fn sign_eps(&self) -> f64 {
        self.sign_eps
    }

    pub fn eval_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<(), DynamicsError> {
        if x.len() != self.dim || out.len() != self.dim {
            return Err(DynamicsError::DimensionMismatch {
                expected: self.dim,
                got: x.len().min(out.len()),
            });
        }
        if !(t < self.horizon) {
            return Err(DynamicsError::DomainExceeded { t, horizon: self.horizon });
        }
        (self.rhs)(x, t, out)
    }

    pub fn eval(&self, x: &[f64], t: f64) -> Result<Vec<f64>, DynamicsError> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(x, t, &mut out)?;
        Ok(out)
    }

    pub fn v(&self, x: &[f64], t: f64) -> Option<f64> {
        self.lyapunov.as_ref().map(|l| (l.value)(x, t))
    }

    pub fn vdot(&self, x: &[f64], t: f64) -> Option<f64> {
        self.lyapunov
            .as_ref()
            .and_then(|l| l.derivative.as_ref())
            .map(|d| d(x, t))
    }

    pub fn rhs_handle(&self) -> Arc<RhsFn> {
        Arc::clone(&self.rhs)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InvariantViolation {
    #[error("rhs(0, t) != 0 at t={t}: |f|={norm}")]
    NotAnEquilibrium { t: f64, norm: f64 },
    #[error("V(0, t)={value} at t={t}; expected 0")]
    NonzeroAtOrigin { t: f64, value: f64 },
    #[error("V(x, t)={value} <= 0 at |x|={radius}, t={t}")]
    NotPositive { t: f64, radius: f64, value: f64 },
    #[error("no Lyapunov function attached to {0}")]
    MissingLyapunov(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

const SAMPLE_TIMES: usize = 16;
const POINTS_PER_DECADE: usize = 64;
const SEED: u64 = 0x7b_a1;

fn sample_times(horizon: f64) -> Vec<f64> {
    let span = if horizon.is_finite() { horizon } else { SAMPLE_TIMES as f64 };
    (0..SAMPLE_TIMES)
        .map(|k| span * k as f64 / SAMPLE_TIMES as f64)
        .collect()
}

/// Origin plus 64 random points per decade of radius over `[1e-6, 1e3]`.
fn sample_points(dim: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut points = vec![vec![0.0; dim]];
    for decade in -6..3 {
        for _ in 0..POINTS_PER_DECADE {
            let radius = 10f64.powf(decade as f64 + rng.gen::<f64>());
            let mut dir: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = dir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if norm == 0.0 {
                dir[0] = 1.0;
            } else {
                dir.iter_mut().for_each(|v| *v /= norm);
            }
            points.push(dir.into_iter().map(|v| v * radius).collect());
        }
    }
    points
}

/// Checks `rhs(0, t) = 0` at 16 sample times of the domain.
pub fn check_equilibrium(spec: &DynamicsSpec) -> Result<(), InvariantViolation> {
    let origin = vec![0.0; spec.dim()];
    for t in sample_times(spec.horizon()) {
        let f = spec.eval(&origin, t)?;
        let norm = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if norm != 0.0 {
            return Err(InvariantViolation::NotAnEquilibrium { t, norm });
        }
    }
    Ok(())
}

/// Checks `V(0, t) = 0` and `V(x, t) > 0` on the sampled points.
pub fn check_positive_definite(spec: &DynamicsSpec) -> Result<(), InvariantViolation> {
    if spec.lyapunov().is_none() {
        return Err(InvariantViolation::MissingLyapunov(spec.label().to_string()));
    }
    let points = sample_points(spec.dim());
    for t in sample_times(spec.horizon()) {
        for x in &points {
            let value = spec.v(x, t).unwrap_or(f64::NAN);
            let radius = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if radius == 0.0 {
                if value != 0.0 {
                    return Err(InvariantViolation::NonzeroAtOrigin { t, value });
                }
            } else if !(value > 0.0) {
                return Err(InvariantViolation::NotPositive { t, radius, value });
            }
        }
    }
    Ok(())
}
