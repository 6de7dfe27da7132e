//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use ussf_boost::estimators::DobGains;
use ussf_boost::harness::{
    compare, dob_step_response, run_scenario, sweep_initial_conditions, write_trace_csv, OrderingCheck, Role,
    Scenario,
};
use ussf_boost::plant::{reference_energy, step_rk4, to_transformed, LoadSchedule, PlantParams, PlantState};
use ussf_boost::ussf::{certify_epsilon, UssfKind};

/// Recovery window after each event (s).
const RECOVERY_WINDOW: f64 = 0.05;
/// Bound on the startup settling time across initial voltages (s).
const FIXED_TIME_BOUND: f64 = 0.05;
/// Bound on the disturbance-observer time-to-band (s).
const DOB_BOUND: f64 = 0.02;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn slope_limit_constants() -> Outcome {
    let start = Instant::now();
    let want = [
        (UssfKind::Tanh, 0.4392288),
        (UssfKind::ScaledArctan, 0.6366198),
        (UssfKind::AlgebraicSigmoid, 0.3849002),
        (UssfKind::ErrorFunction, 0.4151075),
    ];
    let mut pass = true;
    let mut got = Vec::new();
    for (kind, eps) in want {
        let cert = certify_epsilon(&kind, 1e3, 1e-6).expect("certification");
        pass &= (cert.epsilon - eps).abs() <= 1e-5;
        got.push(format!("{kind}={:.7}", cert.epsilon));
    }
    let took = start.elapsed();
    pass &= took < Duration::from_secs(5);
    outcome(pass, format!("{} in {took:.2?}", got.join(" ")))
}

fn residual_bound() -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut worst = f64::NEG_INFINITY;
    for kind in UssfKind::BUILT_IN {
        let eps = certify_epsilon(&kind, 1e3, 1e-9).expect("certification").epsilon;
        let n = 10_000;
        let max_g = (0..n)
            .map(|i| -1e3 + 2e3 * i as f64 / (n - 1) as f64)
            .map(|x| x.abs() - x * kind.value(x))
            .fold(f64::NEG_INFINITY, f64::max);
        pass &= max_g <= eps + 1e-9;
        worst = worst.max(max_g - eps);
    }
    let took = start.elapsed();
    pass &= took < Duration::from_secs(1);
    outcome(pass, format!("max(M - eps) = {worst:.3e} in {took:.2?}"))
}

fn open_loop_equilibrium() -> Outcome {
    let start = Instant::now();
    let p = PlantParams::default();
    let sched = LoadSchedule::constant(10.0).unwrap();
    let h = 1e-6;
    let mut s = PlantState::new(6.0, 0.0);
    for _ in 0..200_000 {
        s = step_rk4(&s, 0.5, &sched, &p, h).unwrap();
    }
    // v0 = Vi / (1 - u), iL = v0 / ((1 - u) R)
    let (v_eq, i_eq) = (6.0 / 0.5, 12.0 / (0.5 * 10.0));
    let took = start.elapsed();
    let pass = (s.v0 - v_eq).abs() <= 0.01 * v_eq && (s.i_l - i_eq).abs() <= 0.01 * i_eq && took.as_secs_f64() < 5.0;
    outcome(pass, format!("v0 = {:.6} V, iL = {:.6} A at t = 0.2 s in {took:.2?}", s.v0, s.i_l))
}

fn transform_consistency() -> Outcome {
    let p = PlantParams::default();
    let x1 = to_transformed(&PlantState::new(12.0, 2.4), 10.0, 10.0, &p).x1;
    let xr = reference_energy(12.0, 10.0, &p);
    let oracle = 7.2288e-3;
    let rel = ((x1 - xr) / xr).abs().max(((xr - oracle) / oracle).abs());
    outcome(rel <= 1e-6, format!("x1 = {x1:.7e}, xr = {xr:.7e}, rel err {rel:.1e}"))
}

fn regulation() -> (Outcome, Duration) {
    let start = Instant::now();
    let res = run_scenario(&Scenario::reference()).expect("run");
    let took = start.elapsed();
    let times: Vec<String> = res
        .settling_events
        .iter()
        .map(|e| match e.recovery_time {
            Some(r) => format!("{:.3} ms after t={}", r * 1e3, e.t_event),
            None => format!("never after t={}", e.t_event),
        })
        .collect();
    let all = res.settling_events.len() == 3
        && res.settling_events.iter().all(|e| e.recovery_time.is_some_and(|r| r <= RECOVERY_WINDOW));
    let pass = all && res.faults.is_empty() && took < Duration::from_secs(60);
    (outcome(pass, format!("{} in {took:.2?}", times.join(", "))), took)
}

fn ordering() -> Outcome {
    let sc = Scenario::reference();
    let methods: Vec<_> = sc.methods.iter().map(|(r, c)| (*r, c.clone())).collect();
    let report = compare(&sc, &methods).expect("compare");
    let (f, b, p) = (report.mse(Role::Ftc), report.mse(Role::Baseline), report.mse(Role::Pid));
    let pass = report.ordering == OrderingCheck::Holds && f < 0.05;
    outcome(pass, format!("mse ftc {f:.6e} < baseline {b:.6e} < pid {p:.6e}"))
}

fn fixed_time() -> Outcome {
    let mut sc = Scenario::reference();
    sc.sim.t_end = 0.1;
    let table = sweep_initial_conditions(&sc, &[2.0, 6.0, 10.0]).expect("sweep");
    let times: Vec<String> = table
        .rows
        .iter()
        .map(|r| format!("v0={}: {:?}", r.v0, r.settling_time.map(|t| t * 1e3)))
        .collect();
    outcome(
        table.fixed_time_holds(FIXED_TIME_BOUND),
        format!("settling ms [{}], spread {:?}, bound {} ms", times.join(", "), table.spread, FIXED_TIME_BOUND * 1e3),
    )
}

fn lyapunov() -> Outcome {
    let res = run_scenario(&Scenario::reference()).expect("run");
    let a = res.lyapunov.expect("ftc audit");
    outcome(
        a.violations == 0,
        format!(
            "{} violations over {} steps with V > 10 C (C = {:.3e}, max V = {:.3e})",
            a.violations, a.eligible_steps, a.residual_c, a.max_v
        ),
    )
}

fn dob_convergence() -> Outcome {
    let gains = DobGains {
        enabled: true,
        ..Default::default()
    };
    let rows = dob_step_response(&gains, 7.2, &[1e-3, 1.0, 1e3], 1e-6, 0.05).expect("dob");
    let pass = rows.iter().all(|r| r.time_to_band.is_some_and(|t| t <= DOB_BOUND) && r.final_error.abs() <= r.band);
    let times: Vec<String> = rows
        .iter()
        .map(|r| format!("{:e}: {:?}", r.x1_error0, r.time_to_band.map(|t| t * 1e3)))
        .collect();
    outcome(
        pass,
        format!("time-to-band ms [{}], band {:.4} W, bound {} ms", times.join(", "), rows[0].band, DOB_BOUND * 1e3),
    )
}

fn determinism(reference: Duration) -> Outcome {
    let mut sc = Scenario::reference();
    sc.sim.noise_sigma = 0.01;
    sc.sim.seed = 7;
    // Each run, including CSV serialization, is held to twice the
    // regulation run.
    let timed = || {
        let start = Instant::now();
        let bytes = csv_bytes(&sc);
        (bytes, start.elapsed())
    };
    let (a, ta) = timed();
    let (b, tb) = timed();
    let slowest = ta.max(tb);
    let pass = a == b && !a.is_empty() && slowest < 2 * reference;
    outcome(
        pass,
        format!("{} bytes, identical = {}, slowest run {slowest:.2?} vs limit {:.2?}", a.len(), a == b, 2 * reference),
    )
}

fn csv_bytes(sc: &Scenario) -> Vec<u8> {
    let res = run_scenario(sc).expect("run");
    let mut buf = Vec::new();
    write_trace_csv(&res.trace, &mut buf).unwrap();
    buf
}

fn main() -> ExitCode {
    let (c5, t5) = regulation();
    let results = [
        ("1 slope-limit constants", slope_limit_constants()),
        ("2 residual bound", residual_bound()),
        ("3 open-loop equilibrium", open_loop_equilibrium()),
        ("4 transform consistency", transform_consistency()),
        ("5 reference scenario regulation", c5),
        ("6 comparative ordering", ordering()),
        ("7 fixed-time settling", fixed_time()),
        ("8 Lyapunov audit", lyapunov()),
        ("9 disturbance observer convergence", dob_convergence()),
        ("10 determinism", determinism(t5)),
    ];
    let mut failed = 0;
    for (name, o) in &results {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += !o.pass as usize;
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
