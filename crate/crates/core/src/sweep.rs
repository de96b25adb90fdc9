//! Batch runs over parameter grids and initial-condition decades.

use std::collections::BTreeSet;
use std::io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::analytic::{autonomous_settling_integral, exact_solution_scalar, settling_bound};
use crate::certify::check_dissipation;
use crate::integrate::simulate;
use crate::params::{validate_params, BarrierParams, NumericPolicy};
use crate::systems::{make_autonomous_power_law, make_time_barrier_componentwise, make_time_barrier_scalar};

/// Allowed distance between the simulated settling time and the analytic
/// bound, relative to `T_c`.
pub const BOUND_TOL: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("invalid sweep config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrid {
    pub t_c: Vec<f64>,
    pub beta: Vec<f64>,
    pub q: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl Default for ParamGrid {
    /// Three values per parameter; every tuple has `beta (1 - alpha) >= 1`.
    fn default() -> Self {
        Self {
            t_c: vec![0.5, 1.0, 2.0],
            beta: vec![4.0, 6.0, 8.0],
            q: vec![0.5, 1.0, 2.0],
            alpha: vec![0.25, 0.5, 0.75],
        }
    }
}

impl ParamGrid {
    pub fn single(p: &BarrierParams) -> Self {
        Self { t_c: vec![p.t_c()], beta: vec![p.beta()], q: vec![p.q()], alpha: vec![p.alpha()] }
    }

    pub fn len(&self) -> usize {
        self.t_c.len() * self.beta.len() * self.q.len() * self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Tuples in lexicographic order of `(T_c, beta, q, alpha)` positions.
    pub fn tuples(&self) -> Vec<BarrierParams> {
        let mut out = Vec::with_capacity(self.len());
        for &t_c in &self.t_c {
            for &beta in &self.beta {
                for &q in &self.q {
                    for &alpha in &self.alpha {
                        out.push(BarrierParams::new(t_c, beta, q, alpha));
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Law {
    Scalar,
    Componentwise { dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Check {
    Deadline,
    Certificate,
    BoundTightness,
    OracleError,
}

impl Check {
    pub const ALL: [Check; 4] = [Check::Deadline, Check::Certificate, Check::BoundTightness, Check::OracleError];

    pub fn name(&self) -> &'static str {
        match self {
            Check::Deadline => "deadline",
            Check::Certificate => "certificate",
            Check::BoundTightness => "bound_tightness",
            Check::OracleError => "oracle_error",
        }
    }

    pub fn parse(s: &str) -> Option<Check> {
        Check::ALL.into_iter().find(|c| c.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub grid: ParamGrid,
    /// Inclusive range of `log10 |x0|`.
    pub x0_decades: (i32, i32),
    pub law: Law,
    pub checks: BTreeSet<Check>,
    /// Drives the sign (and, for vector laws, the spread) of each `x0`.
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            grid: ParamGrid::default(),
            x0_decades: (-6, 6),
            law: Law::Scalar,
            checks: Check::ALL.into_iter().collect(),
            seed: 0,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), SweepError> {
        let g = &self.grid;
        for (name, values) in [("T_c", &g.t_c), ("beta", &g.beta), ("q", &g.q), ("alpha", &g.alpha)] {
            if values.is_empty() {
                return Err(SweepError::InvalidConfig(format!("{name} grid is empty")));
            }
            if let Some(v) = values.iter().find(|v| !v.is_finite()) {
                return Err(SweepError::InvalidConfig(format!("{name} grid has non-finite value {v}")));
            }
        }
        let (lo, hi) = self.x0_decades;
        if lo > hi {
            return Err(SweepError::InvalidConfig(format!("x0 decades {lo}..{hi} are empty")));
        }
        if !(-300..=300).contains(&lo) || !(-300..=300).contains(&hi) {
            return Err(SweepError::InvalidConfig(format!("x0 decades {lo}..{hi} out of range")));
        }
        if let Law::Componentwise { dim: 0 } = self.law {
            return Err(SweepError::InvalidConfig("componentwise law needs dim >= 1".into()));
        }
        Ok(())
    }

    pub fn initial_count(&self) -> usize {
        (self.x0_decades.1 - self.x0_decades.0 + 1) as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub index: usize,
    pub params: BarrierParams,
    pub admissible: bool,
    pub x0: Vec<f64>,
    pub converged_at: Option<f64>,
    pub tau_bound: Option<f64>,
    pub reaches_zero: Option<bool>,
    pub step_count: usize,
    pub rejected_steps: usize,
    pub deadline_pass: Option<bool>,
    pub bound_error: Option<f64>,
    pub bound_pass: Option<bool>,
    pub certificate_pass: Option<bool>,
    pub violations: Option<usize>,
    pub max_residual: Option<f64>,
    pub oracle_error: Option<f64>,
    pub oracle_pass: Option<bool>,
    /// Numerical failure message (stall, blow-up, ...).
    pub error: Option<String>,
}

impl SweepRow {
    fn failed(&self, check: Check) -> bool {
        let pass = match check {
            Check::Deadline => self.deadline_pass,
            Check::Certificate => self.certificate_pass,
            Check::BoundTightness => self.bound_pass,
            Check::OracleError => self.oracle_pass,
        };
        pass == Some(false)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepSummary {
    pub rows: usize,
    pub inadmissible_rows: usize,
    pub numerical_failures: usize,
    /// Failures per enabled check, over admissible rows.
    pub failures: Vec<(Check, usize)>,
    pub worst_bound_row: Option<usize>,
    pub worst_oracle_row: Option<usize>,
    /// Row whose `converged_at / T_c` is largest.
    pub latest_settling_row: Option<usize>,
}

impl SweepSummary {
    pub fn failures_of(&self, check: Check) -> usize {
        self.failures.iter().find(|(c, _)| *c == check).map_or(0, |(_, n)| *n)
    }

    pub fn any_failure(&self) -> bool {
        self.numerical_failures > 0 || self.failures.iter().any(|(_, n)| *n > 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub summary: SweepSummary,
}

fn initial_states(cfg: &SweepConfig, n_tuples: usize) -> Vec<Vec<f64>> {
    let dim = match cfg.law {
        Law::Scalar => 1,
        Law::Componentwise { dim } => dim,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(n_tuples * cfg.initial_count());
    for _ in 0..n_tuples {
        for k in cfg.x0_decades.0..=cfg.x0_decades.1 {
            let magnitude = 10f64.powi(k);
            let x: Vec<f64> = (0..dim)
                .map(|i| {
                    let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                    // first coordinate carries the decade, the rest spread below it
                    let scale = if i == 0 { 1.0 } else { rng.gen_range(0.01..1.0) };
                    sign * magnitude * scale
                })
                .collect();
            out.push(x);
        }
    }
    out
}

fn run_row(index: usize, p: BarrierParams, x0: Vec<f64>, cfg: &SweepConfig, policy: &NumericPolicy) -> SweepRow {
    let admissible = validate_params(&p).is_admissible();
    let v0 = x0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let bound = settling_bound(&p, v0).ok();
    let mut row = SweepRow {
        index,
        params: p,
        admissible,
        x0: x0.clone(),
        converged_at: None,
        tau_bound: bound.map(|b| b.tau_bound),
        reaches_zero: bound.map(|b| b.reaches_zero),
        step_count: 0,
        rejected_steps: 0,
        deadline_pass: None,
        bound_error: None,
        bound_pass: None,
        certificate_pass: None,
        violations: None,
        max_residual: None,
        oracle_error: None,
        oracle_pass: None,
        error: None,
    };
    let spec = match cfg.law {
        Law::Scalar => make_time_barrier_scalar(&p, policy),
        Law::Componentwise { dim } => make_time_barrier_componentwise(&p, dim, policy),
    };
    let spec = match spec {
        Ok(s) => s,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    let traj = match simulate(&spec, &x0, &p, policy) {
        Ok(t) => t,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    row.converged_at = traj.converged_at();
    row.step_count = traj.step_count();
    row.rejected_steps = traj.rejected_steps();
    let t_end = traj.t_end();

    if cfg.checks.contains(&Check::Deadline) {
        row.deadline_pass = Some(traj.converged_at().is_some_and(|t| t <= t_end));
    }
    if cfg.checks.contains(&Check::BoundTightness) {
        if let (Some(tc), Some(b)) = (traj.converged_at(), bound) {
            let err = (tc - b.tau_bound.min(t_end)).abs();
            row.bound_error = Some(err);
            row.bound_pass = Some(err <= BOUND_TOL * p.t_c());
        } else if admissible {
            row.bound_pass = Some(false);
        }
    }
    if cfg.checks.contains(&Check::Certificate) {
        match check_dissipation(&traj, &p, policy) {
            Ok(r) => {
                row.certificate_pass = Some(r.passes());
                row.violations = Some(r.violations.len());
                row.max_residual = Some(r.max_residual);
            }
            Err(e) => row.error = Some(e.to_string()),
        }
    }
    if cfg.checks.contains(&Check::OracleError) {
        let mut worst = 0.0f64;
        for s in traj.samples() {
            for (xi, &x0i) in s.x.iter().zip(&x0) {
                match exact_solution_scalar(&p, x0i, s.t) {
                    Ok(want) => worst = worst.max((xi - want).abs()),
                    Err(_) => worst = f64::INFINITY,
                }
            }
        }
        row.oracle_error = Some(worst);
        row.oracle_pass = Some(worst <= (1e-6 * v0).max(10.0 * policy.eps_conv));
    }
    row
}

/// Simulates, certifies and compares every `(params, x0)` pair. Rows run in
/// parallel and come back in grid order, so results depend only on the
/// config and the policy.
pub fn run_sweep(cfg: &SweepConfig, policy: &NumericPolicy) -> Result<SweepResult, SweepError> {
    cfg.validate()?;
    let tuples = cfg.grid.tuples();
    let x0s = initial_states(cfg, tuples.len());
    let per = cfg.initial_count();
    let jobs: Vec<(usize, BarrierParams, Vec<f64>)> = x0s
        .into_iter()
        .enumerate()
        .map(|(i, x0)| (i, tuples[i / per], x0))
        .collect();
    let rows: Vec<SweepRow> = jobs
        .into_par_iter()
        .map(|(i, p, x0)| run_row(i, p, x0, cfg, policy))
        .collect();
    let summary = summarize(&rows, &cfg.checks);
    Ok(SweepResult { rows, summary })
}

fn argmax(rows: &[SweepRow], key: impl Fn(&SweepRow) -> Option<f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for r in rows {
        if let Some(v) = key(r) {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((r.index, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

fn summarize(rows: &[SweepRow], checks: &BTreeSet<Check>) -> SweepSummary {
    let admissible: Vec<&SweepRow> = rows.iter().filter(|r| r.admissible).collect();
    let failures = checks
        .iter()
        .map(|&c| (c, admissible.iter().filter(|r| r.failed(c)).count()))
        .collect();
    SweepSummary {
        rows: rows.len(),
        inadmissible_rows: rows.len() - admissible.len(),
        numerical_failures: rows.iter().filter(|r| r.error.is_some()).count(),
        failures,
        worst_bound_row: argmax(rows, |r| r.bound_error.filter(|_| r.admissible).map(|e| e / r.params.t_c())),
        worst_oracle_row: argmax(rows, |r| r.oracle_error.filter(|_| r.admissible)),
        latest_settling_row: argmax(rows, |r| r.converged_at.map(|t| t / r.params.t_c())),
    }
}

pub const CSV_HEADER: [&str; 21] = [
    "index",
    "t_c",
    "beta",
    "q",
    "alpha",
    "m",
    "admissible",
    "x0",
    "converged_at",
    "tau_bound",
    "reaches_zero",
    "deadline_pass",
    "bound_error",
    "bound_pass",
    "certificate_pass",
    "violations",
    "max_residual",
    "oracle_error",
    "oracle_pass",
    "steps",
    "error",
];

/// Fixed-width scientific notation with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt<T>(v: Option<T>, f: impl Fn(T) -> String) -> String {
    v.map(f).unwrap_or_default()
}

impl SweepResult {
    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), SweepError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            let p = &r.params;
            let x0 = r.x0.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(";");
            w.write_record([
                r.index.to_string(),
                fmt_f64(p.t_c()),
                fmt_f64(p.beta()),
                fmt_f64(p.q()),
                fmt_f64(p.alpha()),
                fmt_f64(p.m()),
                r.admissible.to_string(),
                x0,
                opt(r.converged_at, fmt_f64),
                opt(r.tau_bound, fmt_f64),
                opt(r.reaches_zero, |b| b.to_string()),
                opt(r.deadline_pass, |b| b.to_string()),
                opt(r.bound_error, fmt_f64),
                opt(r.bound_pass, |b| b.to_string()),
                opt(r.certificate_pass, |b| b.to_string()),
                opt(r.violations, |n| n.to_string()),
                opt(r.max_residual, fmt_f64),
                opt(r.oracle_error, fmt_f64),
                opt(r.oracle_pass, |b| b.to_string()),
                r.step_count.to_string(),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparationRow {
    pub x0: f64,
    /// Settling time of the barrier law with `beta = 1 / (1 - alpha)`.
    pub barrier_settling: Option<f64>,
    pub autonomous_settling: f64,
    pub autonomous_exceeds_deadline: bool,
}

/// Barrier law at the smallest admissible `beta` next to the autonomous
/// power law `dV/dt = -q V^alpha` from the same initial conditions.
pub fn separation_table(
    t_c: f64,
    q: f64,
    alpha: f64,
    x0_list: &[f64],
    policy: &NumericPolicy,
) -> Result<Vec<SeparationRow>, SweepError> {
    let beta = 1.0 / (1.0 - alpha);
    let p = BarrierParams::new(t_c, beta, q, alpha);
    if let Some(reason) = validate_params(&p).reason() {
        return Err(SweepError::InvalidConfig(reason));
    }
    if let Some(x) = x0_list.iter().find(|x| !x.is_finite()) {
        return Err(SweepError::InvalidConfig(format!("non-finite x0 {x}")));
    }
    let spec = make_time_barrier_scalar(&p, policy).map_err(|e| SweepError::InvalidConfig(e.to_string()))?;
    let (law, _) = make_autonomous_power_law(q, alpha).map_err(|e| SweepError::InvalidConfig(e.to_string()))?;
    x0_list
        .par_iter()
        .map(|&x0| {
            let barrier_settling = simulate(&spec, &[x0], &p, policy).ok().and_then(|t| t.converged_at());
            let autonomous_settling = autonomous_settling_integral(&law, x0.abs())
                .map_err(|e| SweepError::InvalidConfig(e.to_string()))?;
            Ok(SeparationRow {
                x0,
                barrier_settling,
                autonomous_settling,
                autonomous_exceeds_deadline: autonomous_settling > t_c,
            })
        })
        .collect()
}
