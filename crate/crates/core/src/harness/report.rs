use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::time::Instant;

use serde::Serialize;

use super::metrics::{Metrics, SettlingEvent};
use super::run::{run_scenario, Fault, LyapunovAudit, ScenarioResult, Simulation, TraceRecord};
use super::scenario::{ControllerConfig, Role, Scenario};
use crate::error::{Result, SimError};
use crate::estimators::{DisturbanceObserver, DobGains};
use crate::ussf::certify_epsilon;

pub const CSV_HEADER: &str = "t,v0,iL,u,R,R_hat,x1,x2,e1,e2,d1,d2";

/// Shortest digits that parse back to the same `f64`, in exponent form
/// outside `[1e-3, 1e7)`.
struct Num(f64);

impl fmt::Display for Num {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = self.0.abs();
        if a == 0.0 || (1e-3..1e7).contains(&a) {
            write!(f, "{}", self.0)
        } else {
            write!(f, "{:e}", self.0)
        }
    }
}

/// Write the trace as CSV.
pub fn write_trace_csv<W: Write>(trace: &[TraceRecord], mut w: W) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in trace {
        let row = [r.t, r.v0, r.i_l, r.u, r.r, r.r_hat, r.x1, r.x2, r.e1, r.e2, r.d1, r.d2];
        for (i, v) in row.into_iter().enumerate() {
            if i > 0 {
                w.write_all(b",")?;
            }
            write!(w, "{}", Num(v))?;
        }
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub controller: &'static str,
    pub metrics: Option<Metrics>,
    pub settling_events: Vec<SettlingEvent>,
    pub faults: Vec<Fault>,
    #[serde(rename = "implied_C")]
    pub implied_c: f64,
    pub disturbance_bounds: [f64; 2],
    pub lyapunov_audit: Option<LyapunovAudit>,
    pub max_steady_duty_step: f64,
    pub steps: usize,
    pub clamped_steps: usize,
}

impl From<&ScenarioResult> for Summary {
    fn from(r: &ScenarioResult) -> Self {
        Self {
            controller: r.controller,
            metrics: r.metrics,
            settling_events: r.settling_events.clone(),
            faults: r.faults.clone(),
            implied_c: r.implied_c,
            disturbance_bounds: [r.disturbance_bounds.0, r.disturbance_bounds.1],
            lyapunov_audit: r.lyapunov,
            max_steady_duty_step: r.max_steady_duty_step,
            steps: r.steps,
            clamped_steps: r.clamped_steps,
        }
    }
}

/// Outcome of the `mse_ftc < mse_baseline < mse_pid` check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderingCheck {
    Holds,
    Tie,
    Violated,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub methods: BTreeMap<Role, Summary>,
    pub ordering: OrderingCheck,
}

impl CompareReport {
    /// NaN when the run produced no samples.
    pub fn mse(&self, role: Role) -> f64 {
        self.methods[&role].metrics.map_or(f64::NAN, |m| m.mse)
    }
}

fn ordering_of(ftc: f64, baseline: f64, pid: f64) -> OrderingCheck {
    let tie = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
    let pairs = [(ftc, baseline), (baseline, pid)];
    if [ftc, baseline, pid].iter().any(|m| !m.is_finite()) {
        return OrderingCheck::Violated;
    }
    if pairs.iter().any(|&(a, b)| a > b && !tie(a, b)) {
        OrderingCheck::Violated
    } else if pairs.iter().any(|&(a, b)| tie(a, b)) {
        OrderingCheck::Tie
    } else {
        OrderingCheck::Holds
    }
}

fn run_parallel(jobs: Vec<Scenario>) -> Vec<Result<ScenarioResult>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = jobs.iter().map(|sc| s.spawn(move || run_scenario(sc))).collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
    })
}

/// Run each role's controller on the same scenario, in parallel, and check
/// the MSE ordering. Each role must appear exactly once; the listing order
/// does not matter.
pub fn compare(sc: &Scenario, methods: &[(Role, ControllerConfig)]) -> Result<CompareReport> {
    let mut by_role = BTreeMap::new();
    for (role, cfg) in methods {
        if by_role.insert(*role, cfg.clone()).is_some() {
            return Err(SimError::invalid(format!("method `{role}` listed twice")));
        }
    }
    if let Some(missing) = Role::ALL.iter().find(|r| !by_role.contains_key(r)) {
        return Err(SimError::invalid(format!("method `{missing}` is missing")));
    }
    let jobs: Vec<Scenario> = by_role.values().map(|c| sc.with_controller(c.clone())).collect();
    let mut results = BTreeMap::new();
    for (role, res) in by_role.keys().zip(run_parallel(jobs)) {
        results.insert(*role, Summary::from(&res?));
    }
    let mut report = CompareReport {
        methods: results,
        ordering: OrderingCheck::Violated,
    };
    report.ordering = ordering_of(report.mse(Role::Ftc), report.mse(Role::Baseline), report.mse(Role::Pid));
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub v0: f64,
    /// Time from t = 0 until `v0` stays in the ±2% band.
    pub settling_time: Option<f64>,
    pub faults: Vec<Fault>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// `None` if any run never settled.
    pub max_settling_time: Option<f64>,
    /// Largest over smallest settling time.
    pub spread: Option<f64>,
}

impl SweepTable {
    /// All runs settled, within `bound`, and within a factor 2 of each other.
    pub fn fixed_time_holds(&self, bound: f64) -> bool {
        self.max_settling_time.is_some_and(|m| m <= bound) && self.spread.is_some_and(|s| s < 2.0)
    }
}

/// Re-run the scenario from each initial output voltage (the inductor
/// current keeps its configured value) and tabulate the startup settling time.
pub fn sweep_initial_conditions(sc: &Scenario, v0_list: &[f64]) -> Result<SweepTable> {
    if v0_list.is_empty() {
        return Err(SimError::invalid("initial-voltage list is empty"));
    }
    let vr = sc.plant.v_ref;
    if let Some(bad) = v0_list.iter().find(|&&v| !(v > 0.0 && v <= 2.0 * vr)) {
        return Err(SimError::invalid(format!("initial voltage {bad} outside (0, {}]", 2.0 * vr)));
    }
    let jobs: Vec<Scenario> = v0_list
        .iter()
        .map(|&v0| {
            let mut s = sc.clone();
            s.initial_state.v0 = v0;
            s
        })
        .collect();
    let mut rows = Vec::with_capacity(jobs.len());
    for (&v0, res) in v0_list.iter().zip(run_parallel(jobs)) {
        let res = res?;
        rows.push(SweepRow {
            v0,
            settling_time: res.startup_settling(),
            faults: res.faults,
        });
    }
    let times: Option<Vec<f64>> = rows.iter().map(|r| r.settling_time).collect();
    let (max_settling_time, spread) = match times {
        Some(ts) => {
            let max = ts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = ts.iter().copied().fold(f64::INFINITY, f64::min);
            let spread = if max == 0.0 { 1.0 } else { max / min };
            (Some(max), Some(spread))
        }
        None => (None, None),
    };
    Ok(SweepTable {
        rows,
        max_settling_time,
        spread,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Latency {
    pub controller: &'static str,
    pub iterations: usize,
    /// Seconds per step.
    pub mean: f64,
    pub p99: f64,
}

/// Wall-clock time of one combined controller, observer and plant step.
pub fn benchmark_step_latency(sc: &Scenario, iterations: usize) -> Result<Latency> {
    if iterations < 10_000 {
        return Err(SimError::invalid(format!("need at least 10000 iterations, got {iterations}")));
    }
    let mut sim = Simulation::new(sc)?;
    let mut ns = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let start = Instant::now();
        let s = sim.step()?;
        ns.push(start.elapsed().as_nanos() as f64);
        std::hint::black_box(s);
    }
    let mean = ns.iter().sum::<f64>() / iterations as f64;
    ns.sort_by(f64::total_cmp);
    let p99 = ns[((iterations as f64 * 0.99).ceil() as usize).min(iterations) - 1];
    Ok(Latency {
        controller: sc.controller.name(),
        iterations,
        mean: mean * 1e-9,
        p99: p99 * 1e-9,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DobConvergence {
    pub x1_error0: f64,
    /// Width of the `d̃1` residual band (W).
    pub band: f64,
    /// Time after which `|d̂1 - d1|` stays within the band.
    pub time_to_band: Option<f64>,
    pub final_error: f64,
}

/// Disturbance observer response to a constant `d1` injection on a frozen
/// plant (`ẋ1 = x2 + d1 = 0`, `ẋ2 = 0`), started from each initial `x̃1`.
pub fn dob_step_response(gains: &DobGains, d1: f64, x1_errors: &[f64], h: f64, t_end: f64) -> Result<Vec<DobConvergence>> {
    gains.validate()?;
    if !(h > 0.0 && t_end > h) {
        return Err(SimError::invalid("need 0 < h < t_end"));
    }
    let band = gains.d1_band(certify_epsilon(&gains.ussf, 1e3, 1e-9)?.epsilon);
    let (x1, x2) = (7.2288e-3, -d1);
    let n = (t_end / h).round() as usize;
    x1_errors
        .iter()
        .map(|&err0| {
            let mut dob = DisturbanceObserver::new(gains.clone(), x1 + err0, x2);
            let mut entered: Option<f64> = None;
            let mut final_error = f64::NAN;
            for k in 0..=n {
                let t = k as f64 * h;
                let (d1_hat, _) = dob.estimates(x1, x2);
                final_error = d1_hat - d1;
                if final_error.abs() <= band {
                    entered.get_or_insert(t);
                } else {
                    entered = None;
                }
                if k < n {
                    dob.step(x1, x2, 0.0, h).map_err(|e| match e {
                        SimError::Observer { term, .. } => SimError::Observer { t, term },
                        other => other,
                    })?;
                }
            }
            Ok(DobConvergence {
                x1_error0: err0,
                band,
                time_to_band: entered,
                final_error,
            })
        })
        .collect()
}
