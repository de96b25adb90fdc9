//! Closed forms for the scalar time-barrier law.
//!
//! With `z = |x|^(1-alpha)` the scalar law becomes the linear equation
//!
//! ```text
//! dz/dt = -m z / (T_c - t) - q (1 - alpha),      m = beta (1 - alpha)
//! ```
//!
//! whose solution is `z(t) = (T_c - t)^m [ z0 T_c^-m - q (1 - alpha) I(t) ]`
//! with the barrier integral `I(t) = ∫_0^t (T_c - s)^-m ds`. Everything in
//! this module is built on that identity and is used as a test oracle for
//! the integrator.

use thiserror::Error;

use crate::params::BarrierParams;
use crate::quadrature::{self, QuadFailure};
use crate::systems::AutonomousLaw;

/// Above this exponent powers of `T_c - t` are formed in log space.
const LOG_SPACE_EXPONENT: f64 = 30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticError {
    #[error("t={t} outside the domain [0, {t_c})")]
    Domain { t: f64, t_c: f64 },
    #[error("barrier integral diverges at t=T_c for m={m} >= 1")]
    DivergentIntegral { m: f64 },
    #[error("result exceeds the floating-point range")]
    Overflow,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("settling integral may diverge (estimate {estimate}, error {error})")]
    MayDiverge { estimate: f64, error: f64 },
    #[error("decay rate Phi is not positive and finite at V={at}")]
    NonPositiveRate { at: f64 },
}

/// `ln(expm1(l))` for `l > 0` without overflow.
fn ln_expm1(l: f64) -> f64 {
    if l > 30.0 { l + (-(-l).exp()).ln_1p() } else { l.exp_m1().ln() }
}

/// `ln(1 + e^l)` without overflow.
fn ln1p_exp(l: f64) -> f64 {
    if l > 30.0 { l + (-l).exp().ln_1p() } else { l.exp().ln_1p() }
}

/// `I(t) = ∫_0^t (T_c - s)^-m ds`.
pub fn barrier_integral(p: &BarrierParams, t: f64) -> Result<f64, AnalyticError> {
    let (t_c, m) = (p.t_c(), p.m());
    if !p.is_finite() || !(t_c > 0.0) {
        return Err(AnalyticError::InvalidInput(format!("parameters {p}")));
    }
    if !(t.is_finite() && t >= 0.0) {
        return Err(AnalyticError::Domain { t, t_c });
    }
    if t >= t_c {
        return if m >= 1.0 {
            Err(AnalyticError::DivergentIntegral { m })
        } else if t == t_c {
            Ok(t_c.powf(1.0 - m) / (1.0 - m))
        } else {
            Err(AnalyticError::Domain { t, t_c })
        };
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    // ln((T_c - t) / T_c)
    let ln_r = (-t / t_c).ln_1p();
    if m == 1.0 {
        return Ok(-ln_r);
    }
    // T_c^(1-m) * expm1((1-m) ln r) / (m-1)
    let l = (1.0 - m) * ln_r;
    if m <= LOG_SPACE_EXPONENT {
        let direct = t_c.powf(1.0 - m) * l.exp_m1() / (m - 1.0);
        if direct.is_finite() {
            return Ok(direct);
        }
    }
    let ln_value = if m > 1.0 {
        (1.0 - m) * t_c.ln() + ln_expm1(l) - (m - 1.0).ln()
    } else {
        (1.0 - m) * t_c.ln() + (-l.exp_m1()).ln() - (1.0 - m).ln()
    };
    let value = ln_value.exp();
    if value.is_finite() { Ok(value) } else { Err(AnalyticError::Overflow) }
}

/// Time at which the proof's `W^(1-alpha)` envelope reaches zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SettlingBound {
    pub tau_bound: f64,
    /// A finite crossing exists in `[0, T_c]`.
    pub reaches_zero: bool,
    pub v0: f64,
}

/// Solves `W0^(1-alpha) = q (1-alpha) I(tau)` for `tau`, `W0 = V0 / T_c^beta`.
///
/// For `m >= 1` and `q > 0` the crossing always exists. For `m < 1` the
/// barrier integral stays finite and the crossing exists only when
/// `V0^(1-alpha) T_c^-m <= q (1-alpha) T_c^(1-m) / (1-m)`; otherwise
/// `reaches_zero` is false and `tau_bound = T_c`.
pub fn settling_bound(p: &BarrierParams, v0: f64) -> Result<SettlingBound, AnalyticError> {
    if !(v0.is_finite() && v0 >= 0.0) {
        return Err(AnalyticError::InvalidInput(format!("V0 must be finite and nonnegative, got {v0}")));
    }
    let (t_c, m, q, alpha) = (p.t_c(), p.m(), p.q(), p.alpha());
    if !p.is_finite() || !(t_c > 0.0) || !(alpha > 0.0 && alpha < 1.0) || m < 0.0 {
        return Err(AnalyticError::InvalidInput(format!("parameters {p}")));
    }
    if v0 == 0.0 {
        return Ok(SettlingBound { tau_bound: 0.0, reaches_zero: true, v0 });
    }
    if !(q > 0.0) {
        return Ok(SettlingBound { tau_bound: t_c, reaches_zero: false, v0 });
    }
    // target value of I(tau), in log form
    let ln_target = (1.0 - alpha) * v0.ln() - m * t_c.ln() - (q * (1.0 - alpha)).ln();
    let (tau_bound, reaches_zero) = if m == 1.0 {
        (-t_c * (-ln_target.exp()).exp_m1(), true)
    } else if m > 1.0 {
        let ln_u = ln_target + (m - 1.0).ln() + (m - 1.0) * t_c.ln();
        let l = ln1p_exp(ln_u);
        (-t_c * (-l / (m - 1.0)).exp_m1(), true)
    } else {
        let u = (ln_target + (1.0 - m).ln() - (1.0 - m) * t_c.ln()).exp();
        if u <= 1.0 {
            ((-t_c * ((-u).ln_1p() / (1.0 - m)).exp_m1()).min(t_c), true)
        } else {
            (t_c, false)
        }
    };
    Ok(SettlingBound { tau_bound, reaches_zero, v0 })
}

/// Exact solution of the scalar law with exact sign, absorbed at zero after
/// the crossing time.
pub fn exact_solution_scalar(p: &BarrierParams, x0: f64, t: f64) -> Result<f64, AnalyticError> {
    let (t_c, beta, q, alpha, m) = (p.t_c(), p.beta(), p.q(), p.alpha(), p.m());
    if !p.is_finite() || !(t_c > 0.0) || beta < 0.0 || q < 0.0 || !(alpha > 0.0 && alpha < 1.0) {
        return Err(AnalyticError::InvalidInput(format!("parameters {p}")));
    }
    if !x0.is_finite() {
        return Err(AnalyticError::InvalidInput(format!("x0={x0}")));
    }
    if !(t >= 0.0 && t < t_c) {
        return Err(AnalyticError::Domain { t, t_c });
    }
    if x0 == 0.0 || t == 0.0 {
        return Ok(x0);
    }
    let ln_r = (-t / t_c).ln_1p();
    let decay = (m * ln_r).exp();
    // (T_c - t)^m I(t) / (T_c - t)
    let g = if m == 1.0 { -ln_r } else { -((m - 1.0) * ln_r).exp_m1() / (m - 1.0) };
    let z0 = x0.abs().powf(1.0 - alpha);
    let ratio = decay - q * (1.0 - alpha) * (t_c - t) * g / z0;
    if ratio <= 0.0 {
        return Ok(0.0);
    }
    Ok(x0 * ratio.powf(1.0 / (1.0 - alpha)))
}

const SETTLING_REL_TOL: f64 = 1e-8;
// The Kronrod error estimate is optimistic on endpoint singularities, so the
// quadrature aims two digits below the contract.
const SETTLING_QUAD_TARGET: f64 = 1e-2 * SETTLING_REL_TOL;
const SETTLING_MAX_PANELS: usize = 4000;

/// `∫_0^V0 dV / Phi(V)`, the settling-time bound of an autonomous law.
///
/// The power-law comparator is evaluated in closed form. Otherwise the
/// substitution `V = u^2` removes the `V = 0` endpoint from the integrand's
/// worst behaviour and the result is computed by adaptive Gauss–Kronrod
/// quadrature.
pub fn autonomous_settling_integral(law: &AutonomousLaw, v0: f64) -> Result<f64, AnalyticError> {
    if !(v0.is_finite() && v0 >= 0.0) {
        return Err(AnalyticError::InvalidInput(format!("V0 must be finite and nonnegative, got {v0}")));
    }
    if v0 == 0.0 {
        return Ok(0.0);
    }
    if let Some((q, alpha)) = law.power_law() {
        return Ok(v0.powf(1.0 - alpha) / (q * (1.0 - alpha)));
    }
    settling_integral_by_quadrature(law, v0)
}

pub(crate) fn settling_integral_by_quadrature(law: &AutonomousLaw, v0: f64) -> Result<f64, AnalyticError> {
    let integrand = |u: f64| {
        let v = u * u;
        let rate = law.phi(v);
        if rate > 0.0 { 2.0 * u / rate } else { f64::NAN }
    };
    quadrature::integrate(integrand, 0.0, v0.sqrt(), SETTLING_QUAD_TARGET, 0.0, SETTLING_MAX_PANELS).map_err(
        |failure| match failure {
            // refinement ran into underflow of u^2: still unbounded near V = 0
            QuadFailure::NonFinite { at } if at * at == 0.0 => {
                AnalyticError::MayDiverge { estimate: f64::INFINITY, error: f64::INFINITY }
            }
            QuadFailure::NonFinite { at } => AnalyticError::NonPositiveRate { at: at * at },
            QuadFailure::NoConvergence { estimate, error } => AnalyticError::MayDiverge { estimate, error },
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::make_autonomous_power_law;
    use std::sync::Arc;

    fn p(t_c: f64, beta: f64, q: f64, alpha: f64) -> BarrierParams {
        BarrierParams::new(t_c, beta, q, alpha)
    }

    /// Composite Simpson on `(T_c - s)^-m`; smooth on `[0, t]` for `t < T_c`.
    fn simpson_barrier(t_c: f64, m: f64, t: f64) -> f64 {
        let n = 200_000;
        let h = t / n as f64;
        let f = |s: f64| (t_c - s).powf(-m);
        let mut acc = f(0.0) + f(t);
        for k in 1..n {
            acc += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    }

    #[test]
    fn barrier_integral_examples() {
        let i1 = barrier_integral(&p(1.0, 2.0, 1.0, 0.5), 0.5).unwrap();
        assert!((i1 - std::f64::consts::LN_2).abs() < 1e-15);
        let i2 = barrier_integral(&p(1.0, 4.0, 1.0, 0.5), 0.5).unwrap();
        assert!((i2 - 1.0).abs() < 1e-15, "{i2}");
        for beta in [0.5, 2.0, 3.0, 80.0] {
            assert_eq!(barrier_integral(&p(1.0, beta, 1.0, 0.5), 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn barrier_integral_matches_quadrature_oracle() {
        for &(t_c, m, t) in &[(1.0, 0.25, 0.9), (2.0, 1.0, 1.5), (0.5, 1.7, 0.3), (3.0, 4.0, 2.0), (1.0, 1.0 + 1e-9, 0.7)] {
            let params = p(t_c, m / 0.5, 1.0, 0.5);
            let closed = barrier_integral(&params, t).unwrap();
            let oracle = simpson_barrier(t_c, params.m(), t);
            assert!(((closed - oracle) / oracle).abs() < 1e-10, "m={m}: {closed} vs {oracle}");
        }
    }

    #[test]
    fn barrier_integral_log_space_branch() {
        // m = 40: direct and log-space paths agree where both are finite
        let params = p(1.0, 80.0, 1.0, 0.5);
        let t = 0.5;
        let expected = (0.5f64.powf(-39.0) - 1.0) / 39.0;
        let got = barrier_integral(&params, t).unwrap();
        assert!(((got - expected) / expected).abs() < 1e-13);
        // (1e-12)^-399 overflows
        let huge = p(1.0, 800.0, 1.0, 0.5);
        assert_eq!(barrier_integral(&huge, 1.0 - 1e-12), Err(AnalyticError::Overflow));
    }

    #[test]
    fn barrier_integral_domain() {
        let params = p(1.0, 2.0, 1.0, 0.5);
        assert_eq!(barrier_integral(&params, 1.0), Err(AnalyticError::DivergentIntegral { m: 1.0 }));
        assert!(matches!(barrier_integral(&params, -0.1), Err(AnalyticError::Domain { .. })));
        let sub = p(1.0, 0.5, 1.0, 0.5);
        assert!((barrier_integral(&sub, 1.0).unwrap() - 1.0 / 0.75).abs() < 1e-15);
        assert!(matches!(barrier_integral(&sub, 1.5), Err(AnalyticError::Domain { .. })));
    }

    #[test]
    fn barrier_integral_diverges_near_deadline() {
        for m in [1.0, 1.5, 2.0] {
            let params = p(1.0, m / 0.5, 1.0, 0.5);
            assert!(barrier_integral(&params, 1.0 - 1e-12).unwrap() > 10.0);
        }
    }

    #[test]
    fn settling_bound_reference() {
        let b = settling_bound(&p(1.0, 2.0, 1.0, 0.5), 1.0).unwrap();
        assert!((b.tau_bound - (1.0 - (-2.0f64).exp())).abs() < 1e-15);
        assert!((b.tau_bound - 0.864665).abs() < 1e-6);
        assert!(b.reaches_zero);
        assert_eq!(settling_bound(&p(1.0, 2.0, 1.0, 0.5), 0.0).unwrap().tau_bound, 0.0);
        assert!(settling_bound(&p(1.0, 2.0, 1.0, 0.5), f64::NAN).is_err());
        assert!(settling_bound(&p(1.0, 2.0, 1.0, 0.5), -1.0).is_err());
    }

    #[test]
    fn settling_bound_subcritical_threshold() {
        // m = 0.25: crossing iff z0 <= q(1-alpha) T_c / (1-m) = 2/3
        let params = p(1.0, 0.5, 1.0, 0.5);
        let z_star: f64 = 0.5 / 0.75;
        let below = settling_bound(&params, (0.99 * z_star).powi(2)).unwrap();
        assert!(below.reaches_zero && below.tau_bound < 1.0);
        let above = settling_bound(&params, (1.01 * z_star).powi(2)).unwrap();
        assert!(!above.reaches_zero);
        assert_eq!(above.tau_bound, 1.0);
        // the spec's example: V0^0.5 > 0.5 T_c^0.75 / 0.75 * T_c^0.25
        assert!(!settling_bound(&params, 1e6).unwrap().reaches_zero);
    }

    #[test]
    fn settling_bound_without_gain() {
        let b = settling_bound(&p(1.0, 2.0, 0.0, 0.5), 1.0).unwrap();
        assert!(!b.reaches_zero);
        assert_eq!(b.tau_bound, 1.0);
    }

    #[test]
    fn settling_bound_is_first_zero_of_exact_solution() {
        for &(t_c, beta, q, alpha, x0) in &[
            (1.0, 2.0, 1.0, 0.5, 1.0),
            (2.0, 3.0, 0.5, 0.25, 40.0),
            (0.5, 8.0, 2.0, 0.75, 0.01),
            (1.0, 0.5, 1.0, 0.5, 0.2),
            (3.0, 1.5, 0.7, 0.3, 5.0),
        ] {
            let params = p(t_c, beta, q, alpha);
            let b = settling_bound(&params, f64::abs(x0)).unwrap();
            assert!(b.reaches_zero);
            // bisection on the clamped closed form
            let (mut lo, mut hi) = (0.0, t_c * (1.0 - 1e-15));
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if exact_solution_scalar(&params, x0, mid).unwrap() == 0.0 { hi = mid } else { lo = mid }
            }
            assert!((hi - b.tau_bound).abs() <= 1e-10 * t_c, "{params}: {hi} vs {}", b.tau_bound);
        }
    }

    /// Fixed-step RK4 on the original equation. The state touches zero
    /// tangentially, so the crossing is read off `z = |x|^(1-alpha)`, which is
    /// locally linear in time, once `x` changes sign or falls below 1e-12.
    fn rk4_crossing(params: &BarrierParams, x0: f64, steps: usize) -> f64 {
        let (t_c, beta, q, alpha) = (params.t_c(), params.beta(), params.q(), params.alpha());
        let f = |x: f64, t: f64| -beta * x / (t_c - t) - q * x.abs().powf(alpha) * x.signum();
        let h = t_c * 0.999 / steps as f64;
        let (mut t, mut x) = (0.0, x0);
        for _ in 0..steps {
            let k1 = f(x, t);
            let k2 = f(x + 0.5 * h * k1, t + 0.5 * h);
            let k3 = f(x + 0.5 * h * k2, t + 0.5 * h);
            let k4 = f(x + h * k3, t + h);
            let next = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            let crossed = next.signum() != x.signum() || next == 0.0;
            if crossed || next.abs() < 1e-12 {
                let z0 = x.abs().powf(1.0 - alpha);
                let z1 = next.abs().powf(1.0 - alpha) * if crossed { -1.0 } else { 1.0 };
                return t + h * z0 / (z0 - z1);
            }
            x = next;
            t += h;
        }
        t
    }

    #[test]
    fn settling_bound_agrees_with_rk4_oracle() {
        let params = p(1.0, 2.0, 1.0, 0.5);
        let crossing = rk4_crossing(&params, 1.0, 400_000);
        let tau = settling_bound(&params, 1.0).unwrap().tau_bound;
        assert!((crossing - tau).abs() < 1e-4, "{crossing} vs {tau}");
    }

    #[test]
    fn exact_solution_examples() {
        let pure = p(2.0, 3.0, 0.0, 0.5);
        assert!((exact_solution_scalar(&pure, 2.0, 1.0).unwrap() - 0.25).abs() < 1e-15);
        let params = p(1.0, 2.0, 1.0, 0.5);
        assert_eq!(exact_solution_scalar(&params, 0.0, 0.3).unwrap(), 0.0);
        assert_eq!(exact_solution_scalar(&params, 1.0, 0.9).unwrap(), 0.0);
        assert!(matches!(exact_solution_scalar(&params, 1.0, 1.0), Err(AnalyticError::Domain { .. })));
    }

    #[test]
    fn exact_solution_matches_rk4_before_crossing() {
        let params = p(1.0, 2.0, 1.0, 0.5);
        let (t_c, beta, q, alpha) = (1.0, 2.0, 1.0, 0.5);
        let f = |x: f64, t: f64| -beta * x / (t_c - t) - q * f64::abs(x).powf(alpha) * x.signum();
        let steps = 100_000;
        let h = 0.5 / steps as f64;
        let (mut t, mut x) = (0.0, 3.0);
        for _ in 0..steps {
            let k1 = f(x, t);
            let k2 = f(x + 0.5 * h * k1, t + 0.5 * h);
            let k3 = f(x + 0.5 * h * k2, t + 0.5 * h);
            let k4 = f(x + h * k3, t + h);
            x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            t += h;
        }
        let exact = exact_solution_scalar(&params, 3.0, 0.5).unwrap();
        assert!((x - exact).abs() < 1e-10, "{x} vs {exact}");
    }

    #[test]
    fn autonomous_settling_examples() {
        let (law, _) = make_autonomous_power_law(1.0, 0.5).unwrap();
        assert_eq!(autonomous_settling_integral(&law, 1.0).unwrap(), 2.0);
        assert_eq!(autonomous_settling_integral(&law, 4.0).unwrap(), 4.0);
        assert_eq!(autonomous_settling_integral(&law, 0.0).unwrap(), 0.0);
        assert!(autonomous_settling_integral(&law, 1e12).unwrap() > 1.0);
    }

    #[test]
    fn quadrature_path_matches_closed_form() {
        for alpha in [0.25, 0.5, 0.75, 0.9] {
            let (reference, _) = make_autonomous_power_law(1.5, alpha).unwrap();
            let opaque = AutonomousLaw::new(Arc::new(move |v: f64| 1.5 * v.powf(alpha)), "opaque", vec![]);
            for v0 in [1e-4, 1.0, 37.0] {
                let want = autonomous_settling_integral(&reference, v0).unwrap();
                let got = autonomous_settling_integral(&opaque, v0).unwrap();
                assert!(((got - want) / want).abs() < 1e-8, "alpha={alpha} V0={v0}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn divergent_settling_integral_is_signalled() {
        // Phi(V) = V is only asymptotically stable
        let linear = AutonomousLaw::new(Arc::new(|v: f64| v), "linear", vec![]);
        assert!(matches!(
            autonomous_settling_integral(&linear, 1.0),
            Err(AnalyticError::MayDiverge { .. })
        ));
        let zero = AutonomousLaw::new(Arc::new(|_v: f64| 0.0), "zero", vec![]);
        assert!(matches!(
            autonomous_settling_integral(&zero, 1.0),
            Err(AnalyticError::NonPositiveRate { .. })
        ));
    }
}
