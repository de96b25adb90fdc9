//! Command-line front end for the `timebarrier` crate.
//!
//! Exit codes: 0 success, 1 invalid input, 2 numerical failure, 3 a checked
//! property failed.

pub mod config;
pub mod output;

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use timebarrier::{
    check_dissipation, find_nonautonomy_witness, make_time_barrier_componentwise, make_time_barrier_scalar,
    run_sweep, settling_bound, simulate, validate_params, with_bias, Admissibility, BarrierParams, DynamicsSpec,
    NumericPolicy, SimulateError,
};

use config::RunConfig;
use output::{write_trajectory, Report};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_PROPERTY: i32 = 3;

const TERM_WIDTH: usize = 100;

#[derive(Debug, Parser)]
#[command(
    name = "timebarrier",
    version,
    about = "Simulate and certify time-barrier predefined-time stabilization",
    term_width = TERM_WIDTH,
    max_term_width = TERM_WIDTH
)]
pub struct Cli {
    /// TOML run configuration; flags override its values [default: none]
    #[arg(long, global = true, value_name = "PATH", display_order = 100)]
    pub config: Option<PathBuf>,
    /// Output file [default: trajectory.csv, certificate.txt or sweep.csv]
    #[arg(long, global = true, value_name = "PATH", display_order = 100)]
    pub out: Option<PathBuf>,
    /// Only print the key=value report [default: off]
    #[arg(long, global = true, display_order = 100)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the time-barrier law and write the trajectory
    Simulate(SimulateArgs),
    /// Check the dissipation inequality along a simulated trajectory
    Certify(CertifyArgs),
    /// Run a parameter sweep from the [sweep] config section
    Sweep,
    /// Print the analytic settling-time bound
    Bound(BoundArgs),
    /// Compare dissipation rates at one V and two times
    Witness(WitnessArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ParamArgs {
    /// Deadline T_c [default: 1]
    #[arg(long = "tc", value_name = "T_C", allow_negative_numbers = true)]
    pub tc: Option<f64>,
    /// Barrier gain beta [default: 2]
    #[arg(long, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    /// Finite-time gain q [default: 1]
    #[arg(long, allow_negative_numbers = true)]
    pub q: Option<f64>,
    /// Exponent alpha [default: 0.5]
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    /// Initial state, comma separated; more than one value uses the componentwise law [default: 1]
    #[arg(long, value_name = "X0", value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub sim: SimulateArgs,
    /// Constant added to the right-hand side to demonstrate violations [default: 0]
    #[arg(long, allow_negative_numbers = true)]
    pub bias: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct BoundArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    /// Initial state; the bound uses its max-norm [default: 1]
    #[arg(long, value_name = "X0", value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct WitnessArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    /// Common Lyapunov level [default: 0.25]
    #[arg(long, value_name = "V", allow_negative_numbers = true)]
    pub vlevel: Option<f64>,
    /// First time [default: 0]
    #[arg(long, allow_negative_numbers = true)]
    pub t1: Option<f64>,
    /// Second time [default: 0.5]
    #[arg(long, allow_negative_numbers = true)]
    pub t2: Option<f64>,
}

/// A command outcome that maps onto an exit code.
#[derive(Debug)]
enum Failure {
    Invalid(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Invalid(_) => EXIT_INVALID,
            Failure::Numerical(_) => EXIT_NUMERICAL,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Invalid(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Invalid(format!("i/o error: {e}"))
    }
}

type Outcome = Result<i32, Failure>;

struct Ctx<'a> {
    config: RunConfig,
    out: Option<PathBuf>,
    quiet: bool,
    stdout: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn say(&mut self, line: impl AsRef<str>) -> std::io::Result<()> {
        if !self.quiet {
            writeln!(self.stdout, "{}", line.as_ref())?;
        }
        Ok(())
    }

    fn params(&self, a: &ParamArgs) -> BarrierParams {
        self.config.params(a.tc, a.beta, a.q, a.alpha)
    }

    fn policy(&self, p: &BarrierParams) -> Result<NumericPolicy, Failure> {
        let policy = self.config.policy();
        policy.validate(p.t_c()).map_err(|e| Failure::Invalid(e.to_string()))?;
        Ok(policy)
    }

    fn out_path(&self, from_config: &Option<PathBuf>, default: &str) -> PathBuf {
        self.out.clone().or_else(|| from_config.clone()).unwrap_or_else(|| PathBuf::from(default))
    }
}

/// Rejects tuples the law itself cannot be built from; inadmissibility
/// alone (e.g. `m < 1`) is reported, not rejected.
fn domain_check(p: &BarrierParams) -> Result<(), Failure> {
    match validate_params(p) {
        Admissibility::NonFinite { field } => Err(Failure::Invalid(format!("{field} must be finite"))),
        Admissibility::Inadmissible { constraint, reason } => {
            use timebarrier::params::Constraint::*;
            match constraint {
                DeadlinePositive | AlphaInUnitInterval => Err(Failure::Invalid(reason)),
                BetaPositive if p.beta() < 0.0 => Err(Failure::Invalid(reason)),
                GainPositive if p.q() < 0.0 => Err(Failure::Invalid(reason)),
                _ => Ok(()),
            }
        }
        Admissibility::Admissible { .. } => Ok(()),
    }
}

fn build_spec(p: &BarrierParams, dim: usize, policy: &NumericPolicy) -> Result<DynamicsSpec, Failure> {
    let spec = if dim == 1 {
        make_time_barrier_scalar(p, policy)
    } else {
        make_time_barrier_componentwise(p, dim, policy)
    };
    spec.map_err(|e| Failure::Invalid(e.to_string()))
}

fn check_x0(x0: &[f64]) -> Result<(), Failure> {
    if let Some(v) = x0.iter().find(|v| !v.is_finite()) {
        return Err(Failure::Invalid(format!("x0 must be finite, got {v}")));
    }
    Ok(())
}

fn numerical(e: SimulateError) -> Failure {
    match e {
        SimulateError::InvalidInput(_) | SimulateError::Policy(_) => Failure::Invalid(e.to_string()),
        _ => Failure::Numerical(e.to_string()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Invalid(format!("cannot create {}: {e}", path.display())))
}

fn v0_of(x0: &[f64]) -> f64 {
    x0.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn cmd_simulate(ctx: &mut Ctx, args: &SimulateArgs) -> Outcome {
    let p = ctx.params(&args.params);
    domain_check(&p)?;
    let policy = ctx.policy(&p)?;
    let x0 = ctx.config.x0(Some(args.x0.clone()));
    check_x0(&x0)?;
    let spec = build_spec(&p, x0.len(), &policy)?;
    let traj = simulate(&spec, &x0, &p, &policy).map_err(numerical)?;

    let path = ctx.out_path(&ctx.config.output.trajectory, "trajectory.csv");
    let mut file = create(&path)?;
    write_trajectory(&mut file, traj.samples()).map_err(|e| Failure::Invalid(e.to_string()))?;
    file.flush()?;

    let bound = settling_bound(&p, v0_of(&x0)).ok();
    let pass = traj.converged_at().is_some_and(|t| t <= traj.t_end());
    let admissibility = validate_params(&p);
    ctx.say(spec.label())?;
    ctx.say(format!("wrote {} samples to {}", traj.samples().len(), path.display()))?;
    if let Some(reason) = admissibility.reason() {
        ctx.say(format!("warning: parameters are not admissible: {reason}"))?;
    }
    ctx.say(format!(
        "steps: {} accepted, {} rejected; deadline {}",
        traj.step_count(),
        traj.rejected_steps(),
        if pass { "PASS" } else { "FAIL" }
    ))?;
    let mut report = Report::new();
    report
        .set_opt_f64("converged_at", traj.converged_at())
        .set_opt_f64("tau_bound", bound.map(|b| b.tau_bound))
        .set("deadline_pass", pass)
        .set("admissible", admissibility.is_admissible())
        .set_f64("terminal_norm", traj.terminal_norm())
        .set("steps", traj.step_count())
        .set("rejected_steps", traj.rejected_steps());
    report.write_to(ctx.stdout)?;
    Ok(if pass { EXIT_OK } else { EXIT_PROPERTY })
}

fn cmd_certify(ctx: &mut Ctx, args: &CertifyArgs) -> Outcome {
    let p = ctx.params(&args.sim.params);
    domain_check(&p)?;
    if let Some(reason) = validate_params(&p).reason() {
        return Err(Failure::Invalid(format!("parameters are not admissible: {reason}")));
    }
    let policy = ctx.policy(&p)?;
    let x0 = ctx.config.x0(Some(args.sim.x0.clone()));
    check_x0(&x0)?;
    let bias = args.bias.or(ctx.config.initial.bias).unwrap_or(0.0);
    if !bias.is_finite() {
        return Err(Failure::Invalid(format!("bias must be finite, got {bias}")));
    }
    let mut spec = build_spec(&p, x0.len(), &policy)?;
    if bias != 0.0 {
        spec = with_bias(&spec, bias);
    }
    let traj = simulate(&spec, &x0, &p, &policy).map_err(numerical)?;
    let cert = check_dissipation(&traj, &p, &policy).map_err(|e| Failure::Invalid(e.to_string()))?;

    let mut report = Report::new();
    report
        .set_opt_f64("converged_at", traj.converged_at())
        .set_opt_f64("tau_bound", settling_bound(&p, v0_of(&x0)).ok().map(|b| b.tau_bound))
        .set("deadline_pass", traj.converged_at().is_some_and(|t| t <= traj.t_end()))
        .set("checked_samples", cert.checked_samples)
        .set("violations", cert.violations.len())
        .set_f64("max_residual", cert.max_residual)
        .set("w_monotone", cert.w_monotone)
        .set_f64("worst_w_increase", cert.worst_w_increase)
        .set("certificate_pass", cert.passes());

    let path = ctx.out_path(&ctx.config.output.certificate, "certificate.txt");
    let mut file = create(&path)?;
    report.write_to(&mut file)?;
    for v in &cert.violations {
        writeln!(
            file,
            "violation t={} V={} lhs={} rhs_bound={} residual={}",
            v.t, v.v, v.lhs, v.rhs_bound, v.residual
        )?;
    }
    file.flush()?;

    ctx.say(spec.label())?;
    ctx.say(format!(
        "{} of {} checked samples violate the dissipation bound (max residual {:e})",
        cert.violations.len(),
        cert.checked_samples,
        cert.max_residual
    ))?;
    if let Some(v) = cert.violations.first() {
        ctx.say(format!("first violation at t={}: dV/dt={} > bound {}", v.t, v.lhs, v.rhs_bound))?;
    }
    ctx.say(format!(
        "W monotone: {} (worst increase {:e}); certificate {}",
        if cert.w_monotone { "yes" } else { "no" },
        cert.worst_w_increase,
        if cert.passes() { "PASS" } else { "FAIL" }
    ))?;
    report.write_to(ctx.stdout)?;
    Ok(if cert.passes() { EXIT_OK } else { EXIT_PROPERTY })
}

fn cmd_sweep(ctx: &mut Ctx) -> Outcome {
    let cfg = ctx.config.sweep().map_err(Failure::Invalid)?;
    let policy = ctx.config.policy();
    for &t_c in &cfg.grid.t_c {
        policy.validate(t_c).map_err(|e| Failure::Invalid(e.to_string()))?;
    }
    let result = run_sweep(&cfg, &policy).map_err(|e| Failure::Invalid(e.to_string()))?;
    let path = ctx.out_path(&ctx.config.output.sweep, "sweep.csv");
    let mut file = create(&path)?;
    result.write_csv(&mut file).map_err(|e| Failure::Invalid(e.to_string()))?;
    file.flush()?;

    let s = &result.summary;
    ctx.say(format!("wrote {} rows to {}", s.rows, path.display()))?;
    for check in &cfg.checks {
        ctx.say(format!("{} failures: {}", check.name().replace('_', " "), s.failures_of(*check)))?;
    }
    ctx.say(format!("numerical failures: {}", s.numerical_failures))?;
    ctx.say(format!("inadmissible rows (excluded from failures): {}", s.inadmissible_rows))?;
    for (label, row) in [("worst bound row", s.worst_bound_row), ("worst oracle row", s.worst_oracle_row)] {
        if let Some(i) = row {
            ctx.say(format!("{label}: {i}"))?;
        }
    }
    let mut report = Report::new();
    report.set("rows", s.rows);
    for check in &cfg.checks {
        report.set(&format!("{}_failures", check.name()), s.failures_of(*check));
    }
    report
        .set("numerical_failures", s.numerical_failures)
        .set("inadmissible_rows", s.inadmissible_rows);
    report.write_to(ctx.stdout)?;
    Ok(if s.any_failure() { EXIT_PROPERTY } else { EXIT_OK })
}

fn cmd_bound(ctx: &mut Ctx, args: &BoundArgs) -> Outcome {
    let p = ctx.params(&args.params);
    domain_check(&p)?;
    let x0 = ctx.config.x0(Some(args.x0.clone()));
    check_x0(&x0)?;
    let b = settling_bound(&p, v0_of(&x0)).map_err(|e| Failure::Invalid(e.to_string()))?;
    let admissibility = validate_params(&p);
    if b.reaches_zero {
        ctx.say(format!("|x0|={} reaches 0 at t={} (T_c={})", b.v0, b.tau_bound, p.t_c()))?;
    } else {
        ctx.say(format!("|x0|={} does not reach 0 before T_c={}", b.v0, p.t_c()))?;
    }
    let mut report = Report::new();
    report
        .set_f64("v0", b.v0)
        .set_f64("tau_bound", b.tau_bound)
        .set("reaches_zero", b.reaches_zero)
        .set_f64("m", p.m())
        .set("admissible", admissibility.is_admissible());
    report.write_to(ctx.stdout)?;
    Ok(EXIT_OK)
}

fn cmd_witness(ctx: &mut Ctx, args: &WitnessArgs) -> Outcome {
    let p = ctx.params(&args.params);
    let w = find_nonautonomy_witness(&p, args.vlevel.unwrap_or(0.25), args.t1.unwrap_or(0.0), args.t2.unwrap_or(0.5))
        .map_err(|e| Failure::Invalid(e.to_string()))?;
    ctx.say(format!("dV/dt at V={}: {} at t1={}, {} at t2={}", w.v_level, w.vdot1, w.t1, w.vdot2, w.t2))?;
    ctx.say(format!("gap {} -> {}", w.gap, w.verdict))?;
    let mut report = Report::new();
    report
        .set_f64("v_level", w.v_level)
        .set_f64("t1", w.t1)
        .set_f64("t2", w.t2)
        .set_f64("vdot1", w.vdot1)
        .set_f64("vdot2", w.vdot2)
        .set_f64("gap", w.gap)
        .set("verdict", w.verdict);
    report.write_to(ctx.stdout)?;
    Ok(EXIT_OK)
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let rendered = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{rendered}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(stderr, "{rendered}");
                    EXIT_INVALID
                }
            };
        }
    };
    let config = match cli.config.as_deref().map(RunConfig::load).transpose() {
        Ok(c) => c.unwrap_or_default(),
        Err(msg) => {
            let _ = writeln!(stderr, "error: {msg}");
            return EXIT_INVALID;
        }
    };
    let mut ctx = Ctx { config, out: cli.out.clone(), quiet: cli.quiet, stdout };
    let outcome = match &cli.command {
        Command::Simulate(a) => cmd_simulate(&mut ctx, a),
        Command::Certify(a) => cmd_certify(&mut ctx, a),
        Command::Sweep => cmd_sweep(&mut ctx),
        Command::Bound(a) => cmd_bound(&mut ctx, a),
        Command::Witness(a) => cmd_witness(&mut ctx, a),
    };
    match outcome {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message());
            f.code()
        }
    }
}
