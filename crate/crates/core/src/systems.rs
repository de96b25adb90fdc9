//! Built-in dynamics: the scalar time-barrier law, its componentwise
//! extension, and the autonomous power-law comparator.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::dynamics::{DynamicsError, DynamicsSpec, Lyapunov, RhsFn, ScalarFn};
use crate::params::{BarrierParams, NumericPolicy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error("invalid system parameter: {0}")]
    InvalidParameter(String),
}

/// Sign function, regularized as `x / max(|x|, eps)` when `eps > 0`.
pub fn regularized_sign(x: f64, eps: f64) -> f64 {
    if eps > 0.0 {
        x / x.abs().max(eps)
    } else if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `-beta x / (T_c - t) - q |x|^alpha sgn(x)`; caller guarantees `t < T_c`.
#[inline]
fn barrier_law(x: f64, t: f64, t_c: f64, beta: f64, q: f64, alpha: f64, sign_eps: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    -beta * x / (t_c - t) - q * x.abs().powf(alpha) * regularized_sign(x, sign_eps)
}

/// Dissipation rate of `V = |x|` under the barrier law with exact sign.
#[inline]
fn barrier_dissipation(v: f64, t: f64, t_c: f64, beta: f64, q: f64, alpha: f64) -> f64 {
    if v == 0.0 {
        return 0.0;
    }
    -beta * v / (t_c - t) - q * v.powf(alpha)
}

fn check_law_params(p: &BarrierParams) -> Result<(), SystemError> {
    if !p.is_finite() {
        return Err(SystemError::InvalidParameter(format!("non-finite parameters: {p}")));
    }
    if p.t_c() <= 0.0 {
        return Err(SystemError::InvalidParameter("T_c > 0 required".into()));
    }
    if p.beta() < 0.0 {
        return Err(SystemError::InvalidParameter("beta >= 0 required".into()));
    }
    if p.q() < 0.0 {
        return Err(SystemError::InvalidParameter("q >= 0 required".into()));
    }
    if !(p.alpha() > 0.0 && p.alpha() < 1.0) {
        return Err(SystemError::InvalidParameter("alpha in (0,1) required".into()));
    }
    Ok(())
}

/// Scalar time-barrier system
///
/// ```text
/// dx/dt = -beta x / (T_c - t) - q |x|^alpha sgn(x)
/// ```
///
/// with `V(x) = |x|`. Admissibility is not required: `q = 0` gives the
/// pure-barrier flow used as an integrator oracle.
pub fn make_time_barrier_scalar(
    p: &BarrierParams,
    policy: &NumericPolicy,
) -> Result<DynamicsSpec, SystemError> {
    check_law_params(p)?;
    let (t_c, beta, q, alpha, sign_eps) = (p.t_c(), p.beta(), p.q(), p.alpha(), policy.sign_eps);
    let rhs: Arc<RhsFn> = Arc::new(move |x: &[f64], t: f64, out: &mut [f64]| {
        if t >= t_c {
            return Err(DynamicsError::DomainExceeded { t, horizon: t_c });
        }
        out[0] = barrier_law(x[0], t, t_c, beta, q, alpha, sign_eps);
        Ok(())
    });
    let value: Arc<ScalarFn> = Arc::new(|x: &[f64], _t: f64| x[0].abs());
    let derivative: Arc<ScalarFn> =
        Arc::new(move |x: &[f64], t: f64| barrier_dissipation(x[0].abs(), t, t_c, beta, q, alpha));
    Ok(DynamicsSpec::new(1, t_c, rhs, format!("time-barrier scalar ({p})"))
        .with_lyapunov(Lyapunov::new(value, Some(derivative)))
        .with_sign_eps(sign_eps))
}

/// The scalar law applied to every coordinate, with the max-norm as
/// Lyapunov function.
pub fn make_time_barrier_componentwise(
    p: &BarrierParams,
    dim: usize,
    policy: &NumericPolicy,
) -> Result<DynamicsSpec, SystemError> {
    check_law_params(p)?;
    if dim == 0 {
        return Err(SystemError::InvalidParameter("dim >= 1 required".into()));
    }
    let (t_c, beta, q, alpha, sign_eps) = (p.t_c(), p.beta(), p.q(), p.alpha(), policy.sign_eps);
    let rhs: Arc<RhsFn> = Arc::new(move |x: &[f64], t: f64, out: &mut [f64]| {
        if t >= t_c {
            return Err(DynamicsError::DomainExceeded { t, horizon: t_c });
        }
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = barrier_law(xi, t, t_c, beta, q, alpha, sign_eps);
        }
        Ok(())
    });
    let value: Arc<ScalarFn> = Arc::new(|x: &[f64], _t: f64| max_norm(x));
    // Every coordinate attaining the max decays at the same rate, so the
    // upper Dini derivative of the max-norm is the scalar dissipation.
    let derivative: Arc<ScalarFn> =
        Arc::new(move |x: &[f64], t: f64| barrier_dissipation(max_norm(x), t, t_c, beta, q, alpha));
    Ok(DynamicsSpec::new(dim, t_c, rhs, format!("time-barrier componentwise n={dim} ({p})"))
        .with_lyapunov(Lyapunov::new(value, Some(derivative)))
        .decoupled(true)
        .with_sign_eps(sign_eps))
}

pub(crate) fn max_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Adds a constant `bias` to every component of the right-hand side. The
/// analytic `dV/dt` is dropped because it no longer matches the flow; the
/// certificate checker then falls back to finite differences.
pub fn with_bias(spec: &DynamicsSpec, bias: f64) -> DynamicsSpec {
    let inner = spec.rhs_handle();
    let rhs: Arc<RhsFn> = Arc::new(move |x: &[f64], t: f64, out: &mut [f64]| {
        inner(x, t, out)?;
        out.iter_mut().for_each(|o| *o += bias);
        Ok(())
    });
    let mut biased = DynamicsSpec::new(
        spec.dim(),
        spec.horizon(),
        rhs,
        format!("{} + bias {bias}", spec.label()),
    )
    .with_sign_eps(spec.sign_eps());
    if let Some(l) = spec.lyapunov() {
        biased = biased.with_lyapunov(Lyapunov::new(Arc::clone(&l.value), None));
    }
    biased
}

/// Decay-rate function `Phi` of an autonomous dissipation law
/// `dV/dt <= -Phi(V)`.
#[derive(Clone)]
pub struct AutonomousLaw {
    phi: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    label: String,
    params: Vec<(String, f64)>,
    power_law: Option<(f64, f64)>,
}

impl fmt::Debug for AutonomousLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AutonomousLaw")
            .field("label", &self.label)
            .field("params", &self.params)
            .finish()
    }
}

impl AutonomousLaw {
    /// A general law. No closed-form settling integral is assumed.
    pub fn new(
        phi: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        label: impl Into<String>,
        params: Vec<(String, f64)>,
    ) -> Self {
        Self {
            phi,
            label: label.into(),
            params,
            power_law: None,
        }
    }

    pub fn phi(&self, v: f64) -> f64 {
        (self.phi)(v)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn params(&self) -> &[(String, f64)] {
        &self.params
    }

    /// `(q, alpha)` when this is the built-in `q V^alpha` law.
    pub fn power_law(&self) -> Option<(f64, f64)> {
        self.power_law
    }

    /// Sampled check of `Phi(V) > 0` on `[1e-12, 1e6]` (ten points per decade).
    pub fn check_positive(&self) -> Result<(), SystemError> {
        for k in 0..=180 {
            let v = 10f64.powf(-12.0 + k as f64 / 10.0);
            let rate = self.phi(v);
            if !(rate > 0.0) {
                return Err(SystemError::InvalidParameter(format!(
                    "Phi({v}) = {rate} is not positive"
                )));
            }
        }
        Ok(())
    }
}

/// Autonomous finite-time comparator `Phi(V) = q V^alpha` and the matching
/// scalar system `dx/dt = -q |x|^alpha sgn(x)`.
pub fn make_autonomous_power_law(
    q: f64,
    alpha: f64,
) -> Result<(AutonomousLaw, DynamicsSpec), SystemError> {
    if !(q.is_finite() && q > 0.0) {
        return Err(SystemError::InvalidParameter("q > 0 required".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(SystemError::InvalidParameter("alpha in (0,1) required".into()));
    }
    let law = AutonomousLaw {
        phi: Arc::new(move |v: f64| q * v.powf(alpha)),
        label: format!("power law q={q} alpha={alpha}"),
        params: vec![("q".into(), q), ("alpha".into(), alpha)],
        power_law: Some((q, alpha)),
    };
    let rhs: Arc<RhsFn> = Arc::new(move |x: &[f64], _t: f64, out: &mut [f64]| {
        out[0] = if x[0] == 0.0 { 0.0 } else { -q * x[0].abs().powf(alpha) * x[0].signum() };
        Ok(())
    });
    let value: Arc<ScalarFn> = Arc::new(|x: &[f64], _t: f64| x[0].abs());
    let derivative: Arc<ScalarFn> = Arc::new(move |x: &[f64], _t: f64| {
        let v = x[0].abs();
        if v == 0.0 { 0.0 } else { -q * v.powf(alpha) }
    });
    let spec = DynamicsSpec::new(1, f64::INFINITY, rhs, law.label.clone())
        .with_lyapunov(Lyapunov::new(value, Some(derivative)));
    Ok((law, spec))
}
