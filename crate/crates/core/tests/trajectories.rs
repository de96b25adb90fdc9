use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use timebarrier::sweep::{Check, Law, ParamGrid};
use timebarrier::{
    check_dissipation, exact_solution_scalar, make_time_barrier_scalar, run_sweep, settling_bound, simulate,
    with_bias, BarrierParams, NumericPolicy, SweepConfig, Trajectory,
};

fn random_admissible(rng: &mut ChaCha8Rng) -> BarrierParams {
    let t_c = 10f64.powf(rng.gen_range(-1.0..1.0));
    let alpha = rng.gen_range(0.05..0.95);
    let m = rng.gen_range(1.0..6.0);
    let q = 10f64.powf(rng.gen_range(-1.0..1.0));
    BarrierParams::new(t_c, m / (1.0 - alpha), q, alpha)
}

fn run(p: &BarrierParams, x0: f64, policy: &NumericPolicy) -> Trajectory {
    let spec = make_time_barrier_scalar(p, policy).unwrap();
    simulate(&spec, &[x0], p, policy).unwrap()
}

fn decades() -> Vec<f64> {
    (-6..=6).flat_map(|k| [10f64.powi(k), -10f64.powi(k)]).collect()
}

#[test]
fn matches_closed_form_on_random_tuples() {
    let policy = NumericPolicy::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let p = random_admissible(&mut rng);
        let x0 = rng.gen_range(-1e3..1e3);
        let traj = run(&p, x0, &policy);
        let tol = (1e-6 * f64::abs(x0)).max(10.0 * policy.eps_conv);
        for s in traj.samples() {
            let want = exact_solution_scalar(&p, x0, s.t).unwrap();
            assert!((s.x[0] - want).abs() <= tol, "{p} x0={x0} t={}: {} vs {want}", s.t, s.x[0]);
        }
    }
}

#[test]
fn every_decade_meets_the_deadline_with_monotone_w() {
    let policy = NumericPolicy::default();
    let p = BarrierParams::new(1.0, 2.0, 1.0, 0.5);
    for x0 in decades() {
        let traj = run(&p, x0, &policy);
        let tc = traj.converged_at().expect("converged");
        assert!(tc <= 1.0 - 1e-9, "x0={x0}: {tc}");
        for w in traj.samples().windows(2) {
            let (a, b) = (w[0].w.unwrap(), w[1].w.unwrap());
            assert!(b <= a + policy.residual_tol, "x0={x0} t={}: W {a} -> {b}", w[1].t);
        }
    }
}

#[test]
fn pure_barrier_flow_is_linear() {
    let policy = NumericPolicy::default();
    let p = BarrierParams::new(2.0, 3.0, 0.0, 0.5);
    let base = run(&p, 1.5, &policy);
    let times: Vec<f64> = (0..200).map(|k| 1.9 * k as f64 / 200.0).collect();
    let reference = base.resample(&times).unwrap();
    for lambda in [-2.0, 0.5, 10.0] {
        let scaled = run(&p, lambda * 1.5, &policy).resample(&times).unwrap();
        for (a, b) in reference.iter().zip(&scaled) {
            let want = lambda * a.x[0];
            assert!((b.x[0] - want).abs() <= 1e-9 * want.abs(), "lambda={lambda} t={}: {} vs {want}", a.t, b.x[0]);
        }
    }
}

#[test]
fn built_in_law_certifies_on_random_pairs() {
    let policy = NumericPolicy::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let p = random_admissible(&mut rng);
        let x0 = 10f64.powf(rng.gen_range(-6.0..6.0)) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let report = check_dissipation(&run(&p, x0, &policy), &p, &policy).unwrap();
        assert!(report.passes(), "{p} x0={x0}: {:?}", report.violations.first());
    }
}

#[test]
fn injected_bias_is_detected_and_ordered() {
    let policy = NumericPolicy::default();
    let p = BarrierParams::new(1.0, 2.0, 1.0, 0.5);
    let clean = make_time_barrier_scalar(&p, &policy).unwrap();
    let mut last = 0.0;
    for c in [0.01, 0.1, 1.0] {
        let traj = simulate(&with_bias(&clean, c), &[1.0], &p, &policy).unwrap();
        let report = check_dissipation(&traj, &p, &policy).unwrap();
        assert!(!report.violations.is_empty(), "c={c}");
        assert!(report.max_residual >= last, "c={c}: {} < {last}", report.max_residual);
        last = report.max_residual;
    }
}

#[test]
fn default_grid_has_no_failures_and_tight_bounds() {
    let policy = NumericPolicy::default();
    let cfg = SweepConfig::default();
    let res = run_sweep(&cfg, &policy).unwrap();
    assert_eq!(res.rows.len(), 81 * 13);
    assert_eq!(res.summary.inadmissible_rows, 0);
    for check in Check::ALL {
        assert_eq!(res.summary.failures_of(check), 0, "{}", check.name());
    }
    assert_eq!(res.summary.numerical_failures, 0);
    for r in &res.rows {
        let tau = settling_bound(&r.params, r.x0[0].abs()).unwrap().tau_bound;
        assert!((r.converged_at.unwrap() - tau).abs() <= 1e-4 * r.params.t_c(), "{:?}", r);
    }
}

#[test]
fn componentwise_grid_meets_the_deadline() {
    let cfg = SweepConfig {
        grid: ParamGrid { t_c: vec![1.0], beta: vec![2.0, 4.0], q: vec![1.0], alpha: vec![0.5, 0.75] },
        law: Law::Componentwise { dim: 4 },
        ..SweepConfig::default()
    };
    let res = run_sweep(&cfg, &NumericPolicy::default()).unwrap();
    assert!(!res.summary.any_failure(), "{:?}", res.summary);
}
