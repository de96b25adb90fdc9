//! Adaptive Dormand–Prince 5(4) integration up to `T_c - delta_end`.
//!
//! Steps are limited to `h <= 0.5 (T_c - t)` so they shrink geometrically
//! into the barrier. When the max-norm of the state drops to `eps_conv` the
//! convergence event fires. With the exact sign term the integrator then
//! keeps following the solution under scale-relative error control until a
//! Newton step on `z = V^(1-alpha)` (which is locally linear in time for the
//! finite-time term) pins the arrival time to `1e-10 T_c`; the state is then
//! set to zero and held. With a regularized sign the event time itself is
//! reported.

#![allow(clippy::needless_range_loop)] // stage arithmetic reads clearer indexed

use thiserror::Error;

use crate::certify::w_transform;
use crate::dynamics::{DynamicsError, DynamicsSpec, Lyapunov};
use crate::params::{BarrierParams, NumericPolicy, PolicyError};
use crate::systems::max_norm;

/// Minimum number of uniformly spaced output points.
pub const OUTPUT_POINTS: usize = 512;

const STEP_FRACTION: f64 = 0.5;
const MAX_STEPS: usize = 2_000_000;
const MAX_TERMINAL_STEPS: usize = 200_000;
const ARRIVAL_TOL: f64 = 1e-10;

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

// PI step-size controller.
const SAFETY: f64 = 0.9;
const PI_BETA: f64 = 0.04;
const PI_EXPO: f64 = 0.2 - PI_BETA * 0.75;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulateError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("integration stalled at t={t} (step {h}) with state {x:?}")]
    Stall { t: f64, h: f64, x: Vec<f64> },
    #[error("dynamics blow-up: non-finite derivative at t={t}, x={x:?}")]
    BlowUp { t: f64, x: Vec<f64> },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResampleError {
    #[error("time {t} outside the trajectory range [0, {end}]")]
    OutOfRange { t: f64, end: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub x: Vec<f64>,
    pub v: Option<f64>,
    pub w: Option<f64>,
    /// Analytic `dV/dt` when the dynamics supply it.
    pub vdot: Option<f64>,
}

/// One accepted step with its continuous extension.
#[derive(Debug, Clone)]
struct Segment {
    t0: f64,
    h: f64,
    // five coefficient blocks of length dim
    coeffs: Vec<f64>,
}

impl Segment {
    fn eval(&self, t: f64, out: &mut [f64]) {
        let n = out.len();
        let theta = ((t - self.t0) / self.h).clamp(0.0, 1.0);
        let theta1 = 1.0 - theta;
        let c = &self.coeffs;
        for i in 0..n {
            out[i] = c[i]
                + theta * (c[n + i] + theta1 * (c[2 * n + i] + theta * (c[3 * n + i] + theta1 * c[4 * n + i])));
        }
    }

    fn end(&self) -> f64 {
        self.t0 + self.h
    }
}

/// Result of [`simulate`].
#[derive(Clone)]
pub struct Trajectory {
    samples: Vec<TrajectorySample>,
    converged_at: Option<f64>,
    terminal_norm: f64,
    step_count: usize,
    rejected_steps: usize,
    segments: Vec<Segment>,
    // state at the end of the last integrated segment (before clamping)
    last_state: Vec<f64>,
    lyapunov: Option<Lyapunov>,
    params: BarrierParams,
    t_end: f64,
}

impl std::fmt::Debug for Trajectory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trajectory")
            .field("samples", &self.samples.len())
            .field("converged_at", &self.converged_at)
            .field("terminal_norm", &self.terminal_norm)
            .field("step_count", &self.step_count)
            .field("rejected_steps", &self.rejected_steps)
            .finish()
    }
}

impl Trajectory {
    pub fn samples(&self) -> &[TrajectorySample] {
        &self.samples
    }

    /// Time at which the state was absorbed at the origin.
    pub fn converged_at(&self) -> Option<f64> {
        self.converged_at
    }

    /// Max-norm of the state after the last accepted step, before any clamp.
    pub fn terminal_norm(&self) -> f64 {
        self.terminal_norm
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn rejected_steps(&self) -> usize {
        self.rejected_steps
    }

    pub fn params(&self) -> &BarrierParams {
        &self.params
    }

    /// Right end of the integration interval, `T_c - delta_end`.
    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn dim(&self) -> usize {
        self.last_state.len()
    }

    pub fn has_lyapunov(&self) -> bool {
        self.lyapunov.is_some()
    }

    pub fn last_time(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }

    /// End of the last integrated step; past it the trajectory is either
    /// absorbed or held.
    pub fn integrated_until(&self) -> f64 {
        self.segments.last().map_or(0.0, Segment::end)
    }

    /// State at time `t` from the continuous extension.
    pub fn state_at(&self, t: f64) -> Result<Vec<f64>, ResampleError> {
        let end = self.last_time();
        if !(t >= 0.0 && t <= end) {
            return Err(ResampleError::OutOfRange { t, end });
        }
        let dim = self.dim();
        if self.converged_at.is_some_and(|tc| t >= tc) {
            return Ok(vec![0.0; dim]);
        }
        if let Ok(k) = self.samples.binary_search_by(|s| s.t.total_cmp(&t)) {
            return Ok(self.samples[k].x.clone());
        }
        let mut out = vec![0.0; dim];
        let seg_end = self.segments.last().map_or(0.0, Segment::end);
        if t <= seg_end {
            let k = self.segments.partition_point(|s| s.end() < t);
            self.segments[k.min(self.segments.len() - 1)].eval(t, &mut out);
        } else if let Some(tc) = self.converged_at {
            // linear bridge from the last integrated state to the absorbed origin
            let frac = ((tc - t) / (tc - seg_end)).clamp(0.0, 1.0);
            for (o, &x) in out.iter_mut().zip(&self.last_state) {
                *o = x * frac;
            }
        } else {
            out.copy_from_slice(&self.last_state);
        }
        Ok(out)
    }

    /// Lyapunov value of the interpolated state, when the dynamics carry one.
    pub fn v_at(&self, t: f64) -> Result<Option<f64>, ResampleError> {
        let x = self.state_at(t)?;
        Ok(self.lyapunov.as_ref().map(|l| (l.value)(&x, t)))
    }

    /// Samples at the requested times: dense output between steps, exact
    /// zero from `converged_at` on, and stored values at sample times.
    pub fn resample(&self, times: &[f64]) -> Result<Vec<TrajectorySample>, ResampleError> {
        times
            .iter()
            .map(|&t| {
                let x = self.state_at(t)?;
                Ok(self.make_sample(t, x))
            })
            .collect()
    }

    fn make_sample(&self, t: f64, x: Vec<f64>) -> TrajectorySample {
        make_sample(self.lyapunov.as_ref(), &self.params, t, x)
    }
}

fn make_sample(lyapunov: Option<&Lyapunov>, p: &BarrierParams, t: f64, x: Vec<f64>) -> TrajectorySample {
    let (v, vdot) = match lyapunov {
        Some(l) => ((Some((l.value)(&x, t))), l.derivative.as_ref().map(|d| d(&x, t))),
        None => (None, None),
    };
    let w = v.and_then(|v| w_transform(v, t, p).ok());
    TrajectorySample { t, x, v, w, vdot }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Normal,
    Terminal,
}

struct Stepper<'a> {
    spec: &'a DynamicsSpec,
    dim: usize,
    k: [Vec<f64>; 7],
    stage: Vec<f64>,
    y1: Vec<f64>,
    err: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(spec: &'a DynamicsSpec) -> Self {
        let dim = spec.dim();
        Self {
            spec,
            dim,
            k: std::array::from_fn(|_| vec![0.0; dim]),
            stage: vec![0.0; dim],
            y1: vec![0.0; dim],
            err: vec![0.0; dim],
        }
    }

    fn eval(&mut self, slot: usize, t: f64) -> Result<bool, DynamicsError> {
        let mut out = std::mem::take(&mut self.k[slot]);
        let r = self.spec.eval_into(&self.stage, t, &mut out);
        let finite = out.iter().all(|v| v.is_finite());
        self.k[slot] = out;
        r.map(|_| finite)
    }

    /// One trial step from `(t, y)` with `k[0] = f(t, y)`. Returns `false`
    /// when some stage produced a non-finite derivative.
    fn attempt(&mut self, t: f64, y: &[f64], h: f64) -> Result<bool, DynamicsError> {
        let n = self.dim;
        let rows: [(&[f64], f64); 5] = [
            (&[A21], C2),
            (&[A31, A32], C3),
            (&[A41, A42, A43], C4),
            (&[A51, A52, A53, A54], C5),
            (&[A61, A62, A63, A64, A65], 1.0),
        ];
        for (s, (a, c)) in rows.iter().enumerate() {
            for i in 0..n {
                let mut acc = 0.0;
                for (j, aj) in a.iter().enumerate() {
                    acc += aj * self.k[j][i];
                }
                self.stage[i] = y[i] + h * acc;
            }
            if !self.eval(s + 1, t + c * h)? {
                return Ok(false);
            }
        }
        for i in 0..n {
            self.y1[i] = y[i]
                + h * (A71 * self.k[0][i] + A73 * self.k[2][i] + A74 * self.k[3][i] + A75 * self.k[4][i]
                    + A76 * self.k[5][i]);
        }
        self.stage.copy_from_slice(&self.y1);
        if !self.eval(6, t + h)? {
            return Ok(false);
        }
        for i in 0..n {
            self.err[i] = h
                * (E1 * self.k[0][i] + E3 * self.k[2][i] + E4 * self.k[3][i] + E5 * self.k[4][i]
                    + E6 * self.k[5][i] + E7 * self.k[6][i]);
        }
        Ok(self.y1.iter().all(|v| v.is_finite()))
    }

    fn segment(&self, t: f64, y: &[f64], h: f64) -> Segment {
        let n = self.dim;
        let mut coeffs = vec![0.0; 5 * n];
        for i in 0..n {
            let diff = self.y1[i] - y[i];
            let bspl = h * self.k[0][i] - diff;
            coeffs[i] = y[i];
            coeffs[n + i] = diff;
            coeffs[2 * n + i] = bspl;
            coeffs[3 * n + i] = diff - h * self.k[6][i] - bspl;
            coeffs[4 * n + i] = h
                * (D1 * self.k[0][i] + D3 * self.k[2][i] + D4 * self.k[3][i] + D5 * self.k[4][i]
                    + D6 * self.k[5][i] + D7 * self.k[6][i]);
        }
        Segment { t0: t, h, coeffs }
    }
}

fn rms(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    (values.map(|v| v * v).sum::<f64>() / n as f64).sqrt()
}

/// Tolerance scales for the current phase. In the terminal phase the
/// absolute part shrinks with the state so the control stays relative.
fn scales(phase: Phase, policy: &NumericPolicy, y: &[f64], y1: &[f64], out: &mut [f64]) {
    let abs = match phase {
        Phase::Normal => policy.abs_tol,
        Phase::Terminal => (policy.abs_tol * max_norm(y) / policy.eps_conv).max(f64::MIN_POSITIVE),
    };
    for i in 0..out.len() {
        out[i] = abs + policy.rel_tol * y[i].abs().max(y1[i].abs());
    }
}

/// Time remaining until the origin is reached, from one Newton step on
/// `V^(1-alpha)`.
fn arrival_estimate(v: f64, vdot: f64, homogeneity: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else if vdot < 0.0 {
        v / (homogeneity * -vdot)
    } else {
        f64::INFINITY
    }
}

/// Integrates `spec` from `x0` at `t = 0` to `T_c - delta_end`.
pub fn simulate(
    spec: &DynamicsSpec,
    x0: &[f64],
    p: &BarrierParams,
    policy: &NumericPolicy,
) -> Result<Trajectory, SimulateError> {
    let t_c = p.t_c();
    if !(t_c.is_finite() && t_c > 0.0) {
        return Err(SimulateError::InvalidInput(format!("T_c must be positive and finite, got {t_c}")));
    }
    policy.validate(t_c)?;
    let dim = spec.dim();
    if x0.len() != dim {
        return Err(SimulateError::InvalidInput(format!(
            "initial state has dimension {}, dynamics expect {dim}",
            x0.len()
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(SimulateError::InvalidInput(format!("initial state {x0:?} is not finite")));
    }
    if spec.horizon() < t_c {
        return Err(SimulateError::InvalidInput(format!(
            "dynamics are defined up to {} but T_c={t_c}",
            spec.horizon()
        )));
    }

    let t_end = t_c - policy.delta_end(t_c);
    let h_min = 8.0 * f64::EPSILON * t_c;
    let arrival_tol = ARRIVAL_TOL * t_c;
    let refine = spec.sign_eps() == 0.0;
    let decoupled = spec.is_decoupled();
    let homogeneity = if p.alpha() > 0.0 && p.alpha() < 1.0 { 1.0 - p.alpha() } else { 1.0 };
    let lyapunov = spec.lyapunov().cloned();
    let grid: Vec<f64> = (0..OUTPUT_POINTS)
        .map(|k| t_end * k as f64 / (OUTPUT_POINTS - 1) as f64)
        .collect();

    let mut rec = Recorder {
        lyapunov: lyapunov.as_ref(),
        params: p,
        samples: Vec::with_capacity(2 * OUTPUT_POINTS),
        grid: &grid,
        next_grid: 1,
    };
    let mut segments: Vec<Segment> = Vec::new();
    let mut stepper = Stepper::new(spec);
    let mut sc = vec![0.0; dim];

    let mut t = 0.0;
    let mut y = x0.to_vec();
    rec.push(t, y.clone());

    // Local dissipation rate used for the arrival estimate.
    let rate = |x: &[f64], f: &[f64], t: f64| -> (f64, f64) {
        match lyapunov.as_ref() {
            Some(l) if l.derivative.is_some() => {
                ((l.value)(x, t), l.derivative.as_ref().map_or(0.0, |d| d(x, t)))
            }
            _ => {
                let (k, v) = x
                    .iter()
                    .enumerate()
                    .fold((0, 0.0f64), |(bk, bv), (i, xi)| if xi.abs() > bv { (i, xi.abs()) } else { (bk, bv) });
                (v, x[k].signum() * f[k])
            }
        }
    };

    let mut phase = Phase::Normal;
    let mut converged_at: Option<f64> = None;
    let mut last_arrival = 0.0f64;
    let mut steps = 0usize;
    let mut terminal_steps = 0usize;
    let mut rejected = 0usize;

    let eval_k0 = |stepper: &mut Stepper, y: &[f64], t: f64| -> Result<(), SimulateError> {
        stepper.stage.copy_from_slice(y);
        if !stepper.eval(0, t)? {
            return Err(SimulateError::BlowUp { t, x: y.to_vec() });
        }
        Ok(())
    };
    eval_k0(&mut stepper, &y, t)?;

    if max_norm(&y) <= policy.eps_conv {
        if refine && max_norm(&y) > 0.0 {
            phase = Phase::Terminal;
        } else {
            converged_at = Some(0.0);
        }
    }

    // initial step size
    let mut h = {
        let h_cap = (STEP_FRACTION * (t_c - t)).min(t_end - t);
        scales(phase, policy, &y, &y, &mut sc);
        let d0 = rms(y.iter().zip(&sc).map(|(a, s)| a / s), dim);
        let d1 = rms(stepper.k[0].iter().zip(&sc).map(|(a, s)| a / s), dim);
        let h0 = if d0 < 1e-10 || d1 < 1e-10 { 1e-6 * t_c } else { 0.01 * d0 / d1 }.min(h_cap);
        for i in 0..dim {
            stepper.stage[i] = y[i] + h0 * stepper.k[0][i];
        }
        let d2 = if stepper.eval(1, t + h0)? {
            rms(stepper.k[1].iter().zip(&stepper.k[0]).zip(&sc).map(|((a, b), s)| (a - b) / s), dim) / h0
        } else {
            f64::INFINITY
        };
        let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6 * t_c) } else { (0.01 / d1.max(d2)).powf(0.2) };
        (100.0 * h0).min(h1).min(h_cap).max(h_min)
    };

    let mut fac_old = 1e-4f64;
    let mut last_rejected = false;

    while converged_at.is_none() && t < t_end {
        if steps + rejected >= MAX_STEPS {
            return Err(SimulateError::Stall { t, h, x: y });
        }
        let h_cap = (STEP_FRACTION * (t_c - t)).min(t_end - t);
        h = h.min(h_cap);
        if h_cap <= h_min {
            // the guard is closer than one resolvable step
            break;
        }
        if h < h_min {
            match phase {
                Phase::Normal => return Err(SimulateError::Stall { t, h, x: y }),
                Phase::Terminal => {
                    let (v, vdot) = rate(&y, &stepper.k[0], t);
                    let dt = arrival_estimate(v, vdot, homogeneity);
                    converged_at = Some(if dt.is_finite() { (t + dt).min(t_end) } else { t });
                    break;
                }
            }
        }

        let finite = stepper.attempt(t, &y, h)?;
        let mut accept = false;
        let mut err = f64::INFINITY;
        if finite {
            scales(phase, policy, &y, &stepper.y1, &mut sc);
            err = rms(stepper.err.iter().zip(&sc).map(|(e, s)| e / s), dim);
            let crossed = phase == Phase::Terminal
                && y.iter().zip(&stepper.y1).any(|(a, b)| a * b < 0.0);
            accept = err <= 1.0 && !crossed;
            if crossed {
                err = err.max(2.0);
            }
        }

        if !accept {
            rejected += 1;
            last_rejected = true;
            h = if err.is_finite() {
                h / FAC_MAX.recip().max(FAC_MIN.recip().min(err.powf(PI_EXPO) / SAFETY))
            } else {
                0.25 * h
            };
            if !finite && h < h_min {
                return Err(SimulateError::BlowUp { t: t + h, x: stepper.stage.clone() });
            }
            continue;
        }

        // accepted
        steps += 1;
        let fac11 = err.powf(PI_EXPO);
        let fac = (fac11 / fac_old.powf(PI_BETA)).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN) / SAFETY;
        let fac = fac.clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
        let mut h_new = h / fac;
        fac_old = err.max(1e-4);
        if last_rejected {
            h_new = h_new.min(h);
        }
        last_rejected = false;

        let segment = stepper.segment(t, &y, h);
        let t0 = t;
        let norm0 = max_norm(&y);
        t = if h == t_end - t0 { t_end } else { t0 + h };
        y.copy_from_slice(&stepper.y1);
        stepper.k.swap(0, 6);
        rec.fill_grid_until(t, &segment, dim);

        // threshold crossing inside the step
        let norm1 = max_norm(&y);
        let mut clamped = false;
        if phase == Phase::Normal && norm1 <= policy.eps_conv && norm0 > policy.eps_conv {
            let t_event = locate_threshold(&segment, norm0, policy.eps_conv, dim);
            if t_event < t && t_event > t0 {
                let mut x_event = vec![0.0; dim];
                segment.eval(t_event, &mut x_event);
                rec.push(t_event, x_event);
            }
            if refine {
                phase = Phase::Terminal;
            } else {
                converged_at = Some(t_event);
            }
        } else if decoupled && phase == Phase::Normal {
            for yi in y.iter_mut() {
                if *yi != 0.0 && yi.abs() <= policy.eps_conv {
                    *yi = 0.0;
                    clamped = true;
                }
            }
        }
        segments.push(segment);

        if phase == Phase::Terminal && converged_at.is_none() {
            terminal_steps += 1;
            if decoupled {
                for i in 0..dim {
                    if y[i] == 0.0 {
                        continue;
                    }
                    let f = stepper.k[0][i];
                    let dt = if y[i] * f < 0.0 { y[i].abs() / (homogeneity * f.abs()) } else { f64::INFINITY };
                    if dt <= arrival_tol {
                        last_arrival = last_arrival.max(t + dt);
                        y[i] = 0.0;
                        clamped = true;
                    }
                }
                if y.iter().all(|&v| v == 0.0) {
                    converged_at = Some(last_arrival.max(t).min(t_end));
                }
            } else {
                let (v, vdot) = rate(&y, &stepper.k[0], t);
                let dt = arrival_estimate(v, vdot, homogeneity);
                if dt <= arrival_tol {
                    converged_at = Some((t + dt).min(t_end));
                }
            }
            if converged_at.is_none() && (t >= t_end || terminal_steps >= MAX_TERMINAL_STEPS) {
                let (v, vdot) = rate(&y, &stepper.k[0], t);
                let dt = arrival_estimate(v, vdot, homogeneity);
                converged_at = Some(if dt.is_finite() { (t + dt).min(t_end) } else { t });
            }
        }

        rec.push(t, y.clone());
        if clamped && converged_at.is_none() {
            eval_k0(&mut stepper, &y, t)?;
        }
        h = h_new;
    }

    let terminal_norm = max_norm(&y);
    let last_state = y.clone();

    if let Some(tc) = converged_at {
        rec.absorb(tc, dim);
    } else if rec.samples.last().is_some_and(|s| s.t < t_end) {
        // the guard was reached without a final step landing on it
        let y_end = y.clone();
        rec.push(t_end, y_end);
    }

    Ok(Trajectory {
        samples: rec.samples,
        converged_at,
        terminal_norm,
        step_count: steps,
        rejected_steps: rejected,
        segments,
        last_state,
        lyapunov,
        params: *p,
        t_end,
    })
}

/// Bisection on the continuous extension for the first time the max-norm
/// drops to `eps`.
fn locate_threshold(segment: &Segment, norm0: f64, eps: f64, dim: usize) -> f64 {
    if norm0 <= eps {
        return segment.t0;
    }
    let mut buf = vec![0.0; dim];
    let (mut lo, mut hi) = (segment.t0, segment.end());
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        segment.eval(mid, &mut buf);
        if max_norm(&buf) <= eps {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

struct Recorder<'a> {
    lyapunov: Option<&'a Lyapunov>,
    params: &'a BarrierParams,
    samples: Vec<TrajectorySample>,
    grid: &'a [f64],
    next_grid: usize,
}

impl Recorder<'_> {
    fn push(&mut self, t: f64, x: Vec<f64>) {
        if let Some(last) = self.samples.last_mut() {
            if t < last.t {
                return;
            }
            if t == last.t {
                *last = make_sample(self.lyapunov, self.params, t, x);
                return;
            }
        }
        self.samples.push(make_sample(self.lyapunov, self.params, t, x));
    }

    /// Grid points strictly inside the step `(segment.t0, t1)`.
    fn fill_grid_until(&mut self, t1: f64, segment: &Segment, dim: usize) {
        while self.next_grid < self.grid.len() && self.grid[self.next_grid] < t1 {
            let tg = self.grid[self.next_grid];
            if tg > segment.t0 {
                let mut x = vec![0.0; dim];
                segment.eval(tg, &mut x);
                self.push(tg, x);
            }
            self.next_grid += 1;
        }
        while self.next_grid < self.grid.len() && self.grid[self.next_grid] == t1 {
            self.next_grid += 1;
        }
    }

    /// Appends the convergence sample and zeros on the remaining grid.
    fn absorb(&mut self, tc: f64, dim: usize) {
        self.push(tc, vec![0.0; dim]);
        let tail: Vec<f64> = self.grid[self.next_grid..].iter().copied().filter(|&tg| tg > tc).collect();
        for tg in tail {
            self.push(tg, vec![0.0; dim]);
        }
        self.next_grid = self.grid.len();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{exact_solution_scalar, settling_bound};
    use crate::dynamics::RhsFn;
    use std::sync::Arc;
    use crate::systems::{make_autonomous_power_law, make_time_barrier_componentwise, make_time_barrier_scalar};

    fn reference() -> BarrierParams {
        BarrierParams::new(1.0, 2.0, 1.0, 0.5)
    }

    fn run(p: &BarrierParams, x0: f64) -> Trajectory {
        let policy = NumericPolicy::default();
        let spec = make_time_barrier_scalar(p, &policy).unwrap();
        simulate(&spec, &[x0], p, &policy).unwrap()
    }

    #[test]
    fn tableau_is_consistent() {
        let b = [A71, 0.0, A73, A74, A75, A76];
        assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let e = [E1, 0.0, E3, E4, E5, E6, E7];
        assert!(e.iter().sum::<f64>().abs() < 1e-15);
        for (row, c) in [
            (vec![A21], C2),
            (vec![A31, A32], C3),
            (vec![A41, A42, A43], C4),
            (vec![A51, A52, A53, A54], C5),
            (vec![A61, A62, A63, A64, A65], 1.0),
        ] {
            assert!((row.iter().sum::<f64>() - c).abs() < 1e-14);
        }
    }

    #[test]
    fn fifth_order_on_smooth_problem() {
        // y' = -t y^2 ... use y' = y cos t, y(0) = 1: y = exp(sin t)
        let rhs: Arc<RhsFn> = Arc::new(|x: &[f64], t: f64, out: &mut [f64]| {
            out[0] = x[0] * t.cos();
            Ok(())
        });
        let spec = DynamicsSpec::new(1, f64::INFINITY, rhs, "exp-sin");
        let p = BarrierParams::new(3.0, 1.0, 1.0, 0.5);
        let policy = NumericPolicy { eps_conv: 1e-30, ..NumericPolicy::default() };
        let traj = simulate(&spec, &[1.0], &p, &policy).unwrap();
        for s in traj.samples() {
            let want = s.t.sin().exp();
            // global error of a 1e-9 local tolerance over a few oscillations
            assert!((s.x[0] - want).abs() < 1e-7 * want, "t={} {} vs {}", s.t, s.x[0], want);
        }
        assert!(traj.converged_at().is_none());
    }

    #[test]
    fn reference_settling_time() {
        let traj = run(&reference(), 1.0);
        let tc = traj.converged_at().unwrap();
        assert!((tc - 0.864665).abs() < 1e-4, "{tc}");
        let tau = settling_bound(&reference(), 1.0).unwrap().tau_bound;
        assert!((tc - tau).abs() < 1e-8, "{tc} vs {tau}");
    }

    #[test]
    fn equilibrium_start() {
        let traj = run(&reference(), 0.0);
        assert_eq!(traj.converged_at(), Some(0.0));
        assert!(traj.samples().iter().all(|s| s.x[0] == 0.0));
        assert!(traj.samples().len() >= OUTPUT_POINTS);
    }

    #[test]
    fn pure_barrier_closed_form() {
        let p = BarrierParams::new(2.0, 3.0, 0.0, 0.5);
        let traj = run(&p, 2.0);
        let x1 = traj.resample(&[1.0]).unwrap()[0].x[0];
        assert!(((x1 - 0.25) / 0.25).abs() < 1e-6, "{x1}");
    }

    #[test]
    fn samples_strictly_increasing_and_guarded() {
        for x0 in [1e-7, 0.3, -5.0, 1e6] {
            let traj = run(&reference(), x0);
            let s = traj.samples();
            assert!(s.len() >= OUTPUT_POINTS);
            assert!(s.windows(2).all(|w| w[0].t < w[1].t));
            assert!(traj.last_time() <= 1.0 - 1e-9);
            let tc = traj.converged_at().unwrap();
            assert!(s.iter().filter(|x| x.t >= tc).all(|x| x.x[0] == 0.0));
            assert!(s.iter().all(|x| x.w.unwrap().is_finite() && x.w.unwrap() >= 0.0));
        }
    }

    #[test]
    fn resample_contract() {
        let traj = run(&reference(), 3.0);
        let times: Vec<f64> = traj.samples().iter().map(|s| s.t).step_by(7).collect();
        let again = traj.resample(&times).unwrap();
        for (a, b) in again.iter().zip(traj.samples().iter().step_by(7)) {
            assert_eq!(a, b);
        }
        let tc = traj.converged_at().unwrap();
        let after = traj.resample(&[tc, 0.5 * (tc + traj.last_time())]).unwrap();
        assert!(after.iter().all(|s| s.x[0] == 0.0));
        assert!(traj.resample(&[-0.1]).is_err());
        assert!(traj.resample(&[1.0]).is_err());
        // dense output between nodes against the closed form
        for k in 1..40 {
            let t = 0.02 * k as f64 + 0.0037;
            let got = traj.resample(&[t]).unwrap()[0].x[0];
            let want = exact_solution_scalar(&reference(), 3.0, t).unwrap();
            assert!((got - want).abs() < 1e-7, "t={t}: {got} vs {want}");
        }
    }

    #[test]
    fn three_quarter_exponent_arrival_is_sharp() {
        for &(t_c, beta, q, x0) in &[(0.5, 4.0, 0.5, 1e-3), (0.5, 8.0, 0.5, 1e-2), (2.0, 4.0, 2.0, 10.0)] {
            let p = BarrierParams::new(t_c, beta, q, 0.75);
            let traj = run(&p, x0);
            let tau = settling_bound(&p, x0).unwrap().tau_bound.min(traj.t_end());
            let tc = traj.converged_at().unwrap();
            assert!((tc - tau).abs() <= 1e-6 * t_c, "{p} x0={x0}: {tc} vs {tau}");
        }
    }

    #[test]
    fn subcritical_regime_does_not_reach_zero() {
        let p = BarrierParams::new(1.0, 0.5, 1.0, 0.5);
        let traj = run(&p, 1e6);
        assert!(traj.converged_at().is_none());
        assert!(traj.terminal_norm() > 0.0);
        let end = traj.samples().last().unwrap();
        assert_eq!(end.t, traj.t_end());
    }

    #[test]
    fn componentwise_components_settle_in_order() {
        let policy = NumericPolicy::default();
        let p = reference();
        let spec = make_time_barrier_componentwise(&p, 3, &policy).unwrap();
        let x0 = [1.0, -0.01, 4.0];
        let traj = simulate(&spec, &x0, &p, &policy).unwrap();
        let tc = traj.converged_at().unwrap();
        let tau = settling_bound(&p, 4.0).unwrap().tau_bound;
        assert!((tc - tau).abs() < 1e-8, "{tc} vs {tau}");
        for s in traj.samples() {
            for (i, &xi) in s.x.iter().enumerate() {
                let want = exact_solution_scalar(&p, x0[i], s.t.min(traj.t_end())).unwrap();
                assert!((xi - want).abs() <= 1e-7, "t={} comp {i}: {xi} vs {want}", s.t);
            }
        }
    }

    #[test]
    fn regularized_sign_reports_threshold_time() {
        let policy = NumericPolicy { sign_eps: 1e-10, ..NumericPolicy::default() };
        let p = reference();
        let spec = make_time_barrier_scalar(&p, &policy).unwrap();
        let traj = simulate(&spec, &[1.0], &p, &policy).unwrap();
        let tc = traj.converged_at().unwrap();
        // |x| = 0.25 (tau - t)^2 near the crossing, so eps_conv is met 2e-4 early
        let tau = settling_bound(&p, 1.0).unwrap().tau_bound;
        assert!(tc < tau && tau - tc < 3e-4, "{tc} vs {tau}");
    }

    #[test]
    fn autonomous_law_settles_at_closed_form_time() {
        let (_, spec) = make_autonomous_power_law(1.0, 0.5).unwrap();
        let p = BarrierParams::new(10.0, 2.0, 1.0, 0.5);
        let traj = simulate(&spec, &[1.0], &p, &NumericPolicy::default()).unwrap();
        assert!((traj.converged_at().unwrap() - 2.0).abs() < 1e-8);
    }

    #[test]
    fn blow_up_and_bad_input() {
        let rhs: Arc<RhsFn> = Arc::new(|x: &[f64], _t: f64, out: &mut [f64]| {
            out[0] = if x[0] > 2.0 { f64::NAN } else { x[0] * x[0] };
            Ok(())
        });
        let spec = DynamicsSpec::new(1, f64::INFINITY, rhs, "finite escape");
        let p = BarrierParams::new(5.0, 2.0, 1.0, 0.5);
        let err = simulate(&spec, &[1.0], &p, &NumericPolicy::default()).unwrap_err();
        assert!(matches!(err, SimulateError::BlowUp { .. }), "{err:?}");

        let scalar = make_time_barrier_scalar(&reference(), &NumericPolicy::default()).unwrap();
        assert!(simulate(&scalar, &[1.0, 2.0], &reference(), &NumericPolicy::default()).is_err());
        assert!(simulate(&scalar, &[f64::NAN], &reference(), &NumericPolicy::default()).is_err());
        let late = BarrierParams::new(2.0, 2.0, 1.0, 0.5);
        assert!(simulate(&scalar, &[1.0], &late, &NumericPolicy::default()).is_err());
    }

    #[test]
    fn linear_escape_stalls_or_blows_up() {
        // x' = x^3 escapes in finite time at t = 1/(2 x0^2) = 0.5
        let rhs: Arc<RhsFn> = Arc::new(|x: &[f64], _t: f64, out: &mut [f64]| {
            out[0] = x[0].powi(3);
            Ok(())
        });
        let spec = DynamicsSpec::new(1, f64::INFINITY, rhs, "cubic");
        let p = BarrierParams::new(1.0, 2.0, 1.0, 0.5);
        let err = simulate(&spec, &[1.0], &p, &NumericPolicy::default()).unwrap_err();
        assert!(matches!(err, SimulateError::Stall { .. } | SimulateError::BlowUp { .. }), "{err:?}");
    }
}
