use ussf_boost::controllers::CrossTerm;
use ussf_boost::harness::{
    compare, run_scenario, write_trace_csv, BaselineConfig, ControllerConfig, FtcConfig, FtcGainValues, PidConfig,
    PlantModel, Role, Scenario, SETTLING_BAND,
};
use ussf_boost::plant::LoadSchedule;
use ussf_boost::SimError;

fn constant_load(t_end: f64) -> Scenario {
    let mut sc = Scenario::reference();
    sc.sim.t_end = t_end;
    sc.load_schedule = LoadSchedule::constant(10.0).unwrap();
    sc
}

fn csv(sc: &Scenario) -> Vec<u8> {
    let mut buf = Vec::new();
    write_trace_csv(&run_scenario(sc).unwrap().trace, &mut buf).unwrap();
    buf
}

#[test]
fn trace_has_expected_record_count() {
    let mut sc = constant_load(0.0123);
    sc.sim.decimation = 7;
    let res = run_scenario(&sc).unwrap();
    let expected = (sc.sim.t_end / (sc.sim.step * 7.0)).floor() as usize + 1;
    assert_eq!(res.trace.len(), expected);
    assert_eq!(res.steps, 12_301);
    assert_eq!(res.trace[1].t, 7.0 * sc.sim.step);
}

#[test]
fn zero_horizon_is_a_validation_error() {
    let mut sc = Scenario::reference();
    sc.sim.t_end = 0.0;
    assert!(matches!(run_scenario(&sc), Err(SimError::Validation(_))));
}

#[test]
fn seeded_noise_is_reproducible() {
    let mut sc = constant_load(0.01);
    sc.sim.noise_sigma = 0.05;
    sc.sim.seed = 11;
    assert_eq!(csv(&sc), csv(&sc));
    let mut other = sc.clone();
    other.sim.seed = 12;
    assert_ne!(csv(&sc), csv(&other));
}

#[test]
fn switched_runs_are_reproducible_and_regulate() {
    let mut sc = constant_load(0.05);
    sc.sim.model = PlantModel::Switched;
    assert_eq!(csv(&sc), csv(&sc));
    let res = run_scenario(&sc).unwrap();
    assert!(res.faults.is_empty());
    // Cycle-averaged output over the last 10 ms.
    let tail: Vec<f64> = res.trace.iter().filter(|r| r.t >= 0.04).map(|r| r.v0).collect();
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    assert!((mean - 12.0).abs() < SETTLING_BAND * 12.0, "mean {mean}");
}

#[test]
fn conductance_estimate_converges_before_first_load_step() {
    let sc = constant_load(0.2);
    let res = run_scenario(&sc).unwrap();
    let late = res.trace.iter().rev().find(|r| r.t < 0.2).unwrap();
    let g_hat = 1.0 / late.r_hat;
    assert!((g_hat - 0.1).abs() < 0.05 * 0.1, "G_hat {g_hat}");
}

#[test]
fn reference_run_is_chattering_free_and_metrics_are_consistent() {
    let sc = Scenario::reference();
    let res = run_scenario(&sc).unwrap();
    assert!(res.max_steady_duty_step < 1e-3, "{}", res.max_steady_duty_step);
    let m = res.metrics.unwrap();
    assert!((m.rmse * m.rmse - m.mse).abs() <= 1e-12 * m.mse);
    assert!(m.mae <= m.rmse);
    assert!(res.trace.iter().all(|r| r.x1 >= 0.0));
    let last = res.trace.last().unwrap();
    assert!((last.v0 - 12.0).abs() < 1e-6);
}

#[test]
fn pid_regulates_but_recovers_more_slowly_than_ftc() {
    let sc = Scenario::reference();
    let ftc = run_scenario(&sc).unwrap();
    let pid = run_scenario(&sc.with_controller(ControllerConfig::Pid(PidConfig::default()))).unwrap();
    assert!(pid.faults.is_empty());
    let tail: Vec<f64> = pid.trace.iter().filter(|r| r.t >= 0.9).map(|r| r.v0).collect();
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    assert!((mean - 12.0).abs() < SETTLING_BAND * 12.0, "mean {mean}");
    assert!(pid.startup_settling().unwrap() > ftc.startup_settling().unwrap());
}

#[test]
fn degenerate_ftc_lands_near_the_linear_baseline() {
    // With the saturating terms off and the e2 cross term, the law is linear
    // backstepping with gains k3 and k6.
    let sc = Scenario::reference();
    let linear = ControllerConfig::Ftc(FtcConfig {
        gains: FtcGainValues {
            k1: 0.0,
            k2: 0.0,
            k3: 1e5,
            k4: 0.0,
            k5: 0.0,
            k6: 1e5,
        },
        cross_term: CrossTerm::E2,
        ..Default::default()
    });
    let deg = run_scenario(&sc.with_controller(linear)).unwrap().metrics.unwrap().mse;
    let base = run_scenario(&sc.with_controller(ControllerConfig::Baseline(BaselineConfig::default())))
        .unwrap()
        .metrics
        .unwrap()
        .mse;
    assert!((deg - base).abs() < 0.25 * base, "degenerate {deg} baseline {base}");
}

#[test]
fn disturbance_compensation_runs_clean() {
    let mut sc = Scenario::reference();
    sc.sim.t_end = 0.3;
    sc.dob.enabled = true;
    sc.controller = ControllerConfig::Ftc(FtcConfig {
        use_dob: true,
        ..Default::default()
    });
    let res = run_scenario(&sc).unwrap();
    assert!(res.faults.is_empty());
    assert!(res.settling_events.iter().all(|e| e.recovery_time.is_some_and(|r| r < 0.05)));
    assert!(res.trace.iter().any(|r| r.d1_hat != 0.0));
}

#[test]
fn overflowing_gain_terms_become_a_controller_fault() {
    let mut sc = constant_load(0.01);
    sc.controller = ControllerConfig::Ftc(FtcConfig {
        iota: 200.0,
        ..Default::default()
    });
    let res = run_scenario(&sc).unwrap();
    assert_eq!(res.faults.len(), 1);
    assert_eq!(res.faults[0].kind, "controller");
    assert!(res.trace.is_empty());
    assert!(res.metrics.is_none());
}

#[test]
fn compare_reports_expected_ordering() {
    let sc = Scenario::reference();
    let methods: Vec<_> = sc.methods.iter().rev().map(|(r, c)| (*r, c.clone())).collect();
    let report = compare(&sc, &methods).unwrap();
    assert!(report.mse(Role::Ftc) < report.mse(Role::Baseline));
    assert!(report.mse(Role::Baseline) < report.mse(Role::Pid));
    assert!(report.mse(Role::Ftc) < 0.05);
}
