//! Numerical checks of the time-barrier dissipation inequality
//!
//! ```text
//! dV/dt <= -beta V / (T_c - t) - q V^alpha
//! ```
//!
//! along recorded trajectories, plus witnesses that the dissipation field is
//! not a function of `V` alone.

use thiserror::Error;

use crate::integrate::Trajectory;
use crate::params::{validate_params, Admissibility, BarrierParams, NumericPolicy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertifyError {
    #[error("domain error: t={t} must lie in [0, {t_c})")]
    Domain { t: f64, t_c: f64 },
    #[error("trajectory carries no Lyapunov values")]
    MissingLyapunov,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// `W = V / (T_c - t)^beta`, in log space when `beta > 30`.
// Kept out of line: with a constant `beta` the optimizer rewrites `powf`
// (e.g. into `x * x`), and recorded W values must match this function bit
// for bit.
#[inline(never)]
pub fn w_transform(v: f64, t: f64, p: &BarrierParams) -> Result<f64, CertifyError> {
    let t_c = p.t_c();
    if !(t >= 0.0 && t < t_c) {
        return Err(CertifyError::Domain { t, t_c });
    }
    if !(v >= 0.0) {
        return Err(CertifyError::InvalidInput(format!("V must be nonnegative, got {v}")));
    }
    if v == 0.0 {
        return Ok(0.0);
    }
    let gap = t_c - t;
    if p.beta() > 30.0 {
        Ok((v.ln() - p.beta() * gap.ln()).exp())
    } else {
        Ok(v / gap.powf(p.beta()))
    }
}

/// Right side of the dissipation inequality at `(V, t)`.
pub fn dissipation_bound(p: &BarrierParams, v: f64, t: f64) -> f64 {
    -p.beta() * v / (p.t_c() - t) - p.q() * v.powf(p.alpha())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub t: f64,
    pub v: f64,
    pub lhs: f64,
    pub rhs_bound: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeSource {
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateReport {
    pub checked_samples: usize,
    pub violations: Vec<Violation>,
    /// Largest positive `lhs - rhs_bound`, or 0.
    pub max_residual: f64,
    pub w_monotone: bool,
    /// Largest increase of `W` between consecutive samples, or 0.
    pub worst_w_increase: f64,
    pub admissibility: Admissibility,
    pub derivative_source: DerivativeSource,
}

impl CertificateReport {
    pub fn passes(&self) -> bool {
        self.violations.is_empty() && self.w_monotone && self.admissibility.is_admissible()
    }
}

/// Second-order finite-difference `dV/dt` from the dense output. Centered
/// where the stencil fits inside the integrated part of the trajectory,
/// one-sided at the ends.
fn fd_vdot(traj: &Trajectory, t: f64, t_c: f64) -> Option<f64> {
    let d = (1e-6 * t_c).min(0.01 * (t_c - t));
    let upper = traj.integrated_until();
    let v = |s: f64| traj.v_at(s).ok().flatten();
    if t - d >= 0.0 && t + d <= upper {
        Some((v(t + d)? - v(t - d)?) / (2.0 * d))
    } else if t - 2.0 * d >= 0.0 && t <= upper {
        Some((3.0 * v(t)? - 4.0 * v(t - d)? + v(t - 2.0 * d)?) / (2.0 * d))
    } else if t + 2.0 * d <= upper {
        Some((-3.0 * v(t)? + 4.0 * v(t + d)? - v(t + 2.0 * d)?) / (2.0 * d))
    } else {
        None
    }
}

/// Checks the dissipation inequality at every sample with `V > eps_conv`
/// and `W` monotonicity over all consecutive samples.
pub fn check_dissipation(
    traj: &Trajectory,
    p: &BarrierParams,
    policy: &NumericPolicy,
) -> Result<CertificateReport, CertifyError> {
    if !p.is_finite() {
        return Err(CertifyError::InvalidInput(format!("non-finite parameters: {p}")));
    }
    let samples = traj.samples();
    if samples.iter().any(|s| s.v.is_none()) {
        return Err(CertifyError::MissingLyapunov);
    }
    let t_c = p.t_c();
    let analytic = samples.iter().all(|s| s.vdot.is_some());
    let source = if analytic { DerivativeSource::Analytic } else { DerivativeSource::FiniteDifference };

    let mut checked = 0;
    let mut violations = Vec::new();
    let mut max_residual = 0.0f64;
    for s in samples {
        let v = s.v.unwrap_or(0.0);
        if !(v > policy.eps_conv) || s.t >= t_c {
            continue;
        }
        let lhs = match s.vdot {
            Some(d) if analytic => d,
            _ => match fd_vdot(traj, s.t, t_c) {
                Some(d) => d,
                None => continue,
            },
        };
        checked += 1;
        let rhs_bound = dissipation_bound(p, v, s.t);
        let residual = lhs - rhs_bound;
        max_residual = max_residual.max(residual);
        if residual > policy.residual_tol * (1.0 + rhs_bound.abs()) {
            violations.push(Violation { t: s.t, v, lhs, rhs_bound, residual });
        }
    }

    let mut worst_w_increase = 0.0f64;
    let mut w_monotone = true;
    let mut prev: Option<f64> = None;
    for s in samples {
        let w = match s.v {
            Some(v) if s.t < t_c => w_transform(v, s.t, p)?,
            _ => continue,
        };
        if let Some(w0) = prev {
            let inc = w - w0;
            worst_w_increase = worst_w_increase.max(inc);
            if inc > policy.residual_tol {
                w_monotone = false;
            }
        }
        prev = Some(w);
    }

    Ok(CertificateReport {
        checked_samples: checked,
        violations,
        max_residual,
        w_monotone,
        worst_w_increase,
        admissibility: validate_params(p),
        derivative_source: source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WitnessVerdict {
    /// The two rates differ at the same `V`.
    Witness,
    /// No barrier term, so the rates coincide.
    AutonomousLimit,
}

impl std::fmt::Display for WitnessVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WitnessVerdict::Witness => f.write_str("witness"),
            WitnessVerdict::AutonomousLimit => f.write_str("no witness (autonomous limit)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonAutonomyWitness {
    pub v_level: f64,
    pub t1: f64,
    pub t2: f64,
    pub vdot1: f64,
    pub vdot2: f64,
    pub gap: f64,
    pub verdict: WitnessVerdict,
}

/// Evaluates the equality dissipation rate at one `V` and two times. A gap
/// above `residual_tol * max(|vdot1|, |vdot2|)` shows the rate is not a
/// function of `V` alone.
pub fn find_nonautonomy_witness(
    p: &BarrierParams,
    v_level: f64,
    t1: f64,
    t2: f64,
) -> Result<NonAutonomyWitness, CertifyError> {
    let t_c = p.t_c();
    if !p.is_finite() || !(t_c > 0.0) {
        return Err(CertifyError::InvalidInput(format!("invalid parameters: {p}")));
    }
    if !(v_level > 0.0 && v_level.is_finite()) {
        return Err(CertifyError::InvalidInput(format!("V level must be positive, got {v_level}")));
    }
    for t in [t1, t2] {
        if !(t >= 0.0 && t < t_c) {
            return Err(CertifyError::Domain { t, t_c });
        }
    }
    if t1 == t2 {
        return Err(CertifyError::InvalidInput("t1 must differ from t2".into()));
    }
    let vdot1 = dissipation_bound(p, v_level, t1);
    let vdot2 = dissipation_bound(p, v_level, t2);
    let gap = (vdot1 - vdot2).abs();
    let tol = NumericPolicy::default().residual_tol * vdot1.abs().max(vdot2.abs());
    let verdict = if gap > tol { WitnessVerdict::Witness } else { WitnessVerdict::AutonomousLimit };
    Ok(NonAutonomyWitness { v_level, t1, t2, vdot1, vdot2, gap, verdict })
}
