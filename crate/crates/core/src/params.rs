//! Barrier parameters, the admissibility test and numeric policy.

use std::fmt;

use thiserror::Error;

/// Parameters `(T_c, beta, q, alpha)` of the time-barrier dissipation law
///
/// ```text
/// dV/dt <= -beta * V / (T_c - t) - q * V^alpha
/// ```
///
/// The barrier exponent `m = beta * (1 - alpha)` is computed once at
/// construction and every module reads it from here, so admissibility
/// decisions are bit-identical across the crate.
///
/// Construction never fails: the type also carries inadmissible tuples
/// (e.g. `q = 0` for the pure-barrier flow). Use [`validate_params`] to
/// classify a tuple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierParams {
    t_c: f64,
    beta: f64,
    q: f64,
    alpha: f64,
    m: f64,
}

impl BarrierParams {
    pub fn new(t_c: f64, beta: f64, q: f64, alpha: f64) -> Self {
        Self {
            t_c,
            beta,
            q,
            alpha,
            m: beta * (1.0 - alpha),
        }
    }

    /// Deadline `T_c`.
    pub fn t_c(&self) -> f64 {
        self.t_c
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Barrier exponent `beta * (1 - alpha)`.
    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn is_finite(&self) -> bool {
        self.t_c.is_finite() && self.beta.is_finite() && self.q.is_finite() && self.alpha.is_finite()
    }

    pub fn with_beta(self, beta: f64) -> Self {
        Self::new(self.t_c, beta, self.q, self.alpha)
    }

    pub fn with_q(self, q: f64) -> Self {
        Self::new(self.t_c, self.beta, q, self.alpha)
    }
}

impl fmt::Display for BarrierParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "T_c={} beta={} q={} alpha={} (m={})",
            self.t_c, self.beta, self.q, self.alpha, self.m
        )
    }
}

/// Constraint names reported by [`validate_params`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Constraint {
    DeadlinePositive,
    BetaPositive,
    GainPositive,
    AlphaInUnitInterval,
    BarrierExponent,
}

impl Constraint {
    pub fn name(&self) -> &'static str {
        match self {
            Constraint::DeadlinePositive => "T_c > 0",
            Constraint::BetaPositive => "beta > 0",
            Constraint::GainPositive => "q > 0",
            Constraint::AlphaInUnitInterval => "alpha in (0,1)",
            Constraint::BarrierExponent => "beta*(1-alpha) >= 1",
        }
    }
}

/// Outcome of [`validate_params`].
#[derive(Debug, Clone, PartialEq)]
pub enum Admissibility {
    Admissible { m: f64 },
    Inadmissible { constraint: Constraint, reason: String },
    NonFinite { field: &'static str },
}

impl Admissibility {
    pub fn is_admissible(&self) -> bool {
        matches!(self, Admissibility::Admissible { .. })
    }

    pub fn reason(&self) -> Option<String> {
        match self {
            Admissibility::Admissible { .. } => None,
            Admissibility::Inadmissible { reason, .. } => Some(reason.clone()),
            Admissibility::NonFinite { field } => Some(format!("non-finite parameter: {field}")),
        }
    }
}

impl fmt::Display for Admissibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Admissibility::Admissible { m } => write!(f, "admissible (m={m})"),
            other => write!(f, "inadmissible: {}", other.reason().unwrap_or_default()),
        }
    }
}

/// Classifies a parameter tuple. Positivity constraints are checked in the
/// order `T_c`, `beta`, `q`, `alpha`, then the barrier-exponent condition;
/// the first violated one is reported.
pub fn validate_params(p: &BarrierParams) -> Admissibility {
    for (field, value) in [("T_c", p.t_c), ("beta", p.beta), ("q", p.q), ("alpha", p.alpha)] {
        if !value.is_finite() {
            return Admissibility::NonFinite { field };
        }
    }
    let fail = |constraint: Constraint, reason: String| Admissibility::Inadmissible { constraint, reason };
    if p.t_c <= 0.0 {
        return fail(Constraint::DeadlinePositive, format!("T_c > 0 violated (T_c={})", p.t_c));
    }
    if p.beta <= 0.0 {
        return fail(Constraint::BetaPositive, format!("beta > 0 violated (beta={})", p.beta));
    }
    if p.q <= 0.0 {
        return fail(Constraint::GainPositive, format!("q > 0 violated (q={})", p.q));
    }
    if !(p.alpha > 0.0 && p.alpha < 1.0) {
        return fail(
            Constraint::AlphaInUnitInterval,
            format!("alpha in (0,1) violated (alpha={})", p.alpha),
        );
    }
    if p.m < 1.0 {
        return fail(Constraint::BarrierExponent, format!("beta*(1-alpha)={} < 1", p.m));
    }
    Admissibility::Admissible { m: p.m }
}

/// `beta * (1 - alpha)`, as stored in the parameter record.
pub fn barrier_exponent(p: &BarrierParams) -> f64 {
    p.m()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("policy field {field} must be strictly positive and finite (got {value})")]
    NotPositive { field: &'static str, value: f64 },
    #[error("sign_eps must be finite and nonnegative (got {0})")]
    SignEps(f64),
    #[error("terminal guard delta_end={delta_end} must be smaller than T_c={t_c}")]
    GuardTooLarge { delta_end: f64, t_c: f64 },
}

/// Tolerances and thresholds shared by the integrator and the certificate
/// checker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NumericPolicy {
    /// Max-norm threshold that fires the convergence event.
    pub eps_conv: f64,
    /// Terminal guard: integration stops at `T_c - delta_end`. `None`
    /// selects `max(1e-9 * T_c, 1e-12)`.
    pub delta_end: Option<f64>,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Regularization width of `sgn`; 0 selects the exact sign with
    /// arrival-time localization in the integrator.
    pub sign_eps: f64,
    /// Slack for inequality checks along sampled data.
    pub residual_tol: f64,
}

impl Default for NumericPolicy {
    fn default() -> Self {
        Self {
            eps_conv: 1e-8,
            delta_end: None,
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            sign_eps: 0.0,
            residual_tol: 1e-7,
        }
    }
}

impl NumericPolicy {
    pub fn delta_end(&self, t_c: f64) -> f64 {
        self.delta_end.unwrap_or_else(|| (1e-9 * t_c).max(1e-12))
    }

    pub fn validate(&self, t_c: f64) -> Result<(), PolicyError> {
        let positive = [
            ("eps_conv", self.eps_conv),
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("residual_tol", self.residual_tol),
            ("delta_end", self.delta_end(t_c)),
        ];
        for (field, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(PolicyError::NotPositive { field, value });
            }
        }
        if !(self.sign_eps.is_finite() && self.sign_eps >= 0.0) {
            return Err(PolicyError::SignEps(self.sign_eps));
        }
        let delta_end = self.delta_end(t_c);
        if delta_end >= t_c {
            return Err(PolicyError::GuardTooLarge { delta_end, t_c });
        }
        Ok(())
    }
}
