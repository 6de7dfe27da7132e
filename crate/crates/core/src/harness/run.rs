use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::metrics::{MetricAccumulator, Metrics, SettlingEvent, SettlingTracker};
use super::scenario::{ControllerConfig, PlantModel, Scenario};
use crate::controllers::{
    baseline_step, ftc_step, lyapunov_bound, lyapunov_value, pid_step, BaselineGains, FtcGains, FtcState, PidGains,
    PidState, ReferenceTracker,
};
use crate::error::{Result, SimError};
use crate::estimators::{AdaptiveObserver, DisturbanceObserver};
use crate::plant::{duty_to_nu, nu_to_duty, step_rk4, step_switched, to_transformed, PlantState};
use crate::ussf::certify_epsilon;

/// Settled time after which duty increments count as steady state (s).
const STEADY_WINDOW: f64 = 0.05;
/// Slack added to the Lyapunov decay bound.
const LYAPUNOV_SLACK: f64 = 1e-6;
/// Only steps with `V` above this multiple of the residual constant are audited.
const RESIDUAL_FACTOR: f64 = 10.0;

#[derive(Debug, Clone)]
enum Law {
    Ftc {
        gains: Box<FtcGains>,
        state: FtcState,
        use_dob: bool,
    },
    Baseline(BaselineGains),
    Pid {
        gains: PidGains,
        state: PidState,
    },
}

/// Everything computed at one sample instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    /// True plant state.
    pub v0: f64,
    pub i_l: f64,
    pub u: f64,
    /// Transformed input implied by the applied duty.
    pub nu: f64,
    pub r: f64,
    pub r_hat: f64,
    pub x1: f64,
    pub x2: f64,
    /// For PID, the voltage and current loop errors.
    pub e1: f64,
    pub e2: f64,
    pub d1: f64,
    pub d2: f64,
    pub d1_hat: f64,
    pub d2_hat: f64,
    pub lyapunov: f64,
    pub clamped: bool,
    pub singular: bool,
}

/// Closed loop of plant, observers and controller advanced in lockstep.
#[derive(Debug, Clone)]
pub struct Simulation {
    sc: Scenario,
    law: Law,
    truth: PlantState,
    observer: AdaptiveObserver,
    dob: Option<DisturbanceObserver>,
    tracker: ReferenceTracker,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
    phase: f64,
    /// One PWM period of true states for the cycle-averaged measurement.
    window: Option<CycleAverage>,
    prev_u: f64,
    k: usize,
}

/// Moving average over the last switching period.
#[derive(Debug, Clone)]
struct CycleAverage {
    len: usize,
    buf: VecDeque<(f64, f64)>,
    sum: (f64, f64),
}

impl CycleAverage {
    fn new(len: usize) -> Self {
        Self {
            len: len.max(1),
            buf: VecDeque::with_capacity(len + 1),
            sum: (0.0, 0.0),
        }
    }

    fn push(&mut self, s: &PlantState) -> (f64, f64) {
        self.buf.push_back((s.v0, s.i_l));
        self.sum.0 += s.v0;
        self.sum.1 += s.i_l;
        if self.buf.len() > self.len {
            let (v, i) = self.buf.pop_front().unwrap();
            self.sum.0 -= v;
            self.sum.1 -= i;
        }
        let n = self.buf.len() as f64;
        (self.sum.0 / n, self.sum.1 / n)
    }
}

impl Simulation {
    pub fn new(sc: &Scenario) -> Result<Self> {
        sc.validate()?;
        let p = &sc.plant;
        let law = match &sc.controller {
            ControllerConfig::Ftc(c) => Law::Ftc {
                gains: Box::new(c.build()?),
                state: FtcState::default(),
                use_dob: c.use_dob,
            },
            ControllerConfig::Baseline(c) => Law::Baseline(c.gains),
            ControllerConfig::Pid(c) => Law::Pid {
                gains: c.gains,
                state: PidState::default(),
            },
        };
        let truth = PlantState::new(sc.initial_state.v0, sc.initial_state.i_l);
        let observer = AdaptiveObserver::new(sc.observer, &truth);
        let dob = sc.dob.enabled.then(|| {
            let x = to_transformed(&truth, sc.load_schedule.at(0.0), observer.r_hat(), p);
            DisturbanceObserver::new(sc.dob.clone(), x.x1, x.x2)
        });
        let noise = (sc.sim.noise_sigma > 0.0)
            .then(|| Normal::new(0.0, sc.sim.noise_sigma).map_err(|e| SimError::invalid(e.to_string())))
            .transpose()?;
        Ok(Self {
            law,
            truth,
            observer,
            dob,
            tracker: ReferenceTracker::new(p.v_ref, sc.sim.step),
            rng: ChaCha8Rng::seed_from_u64(sc.sim.seed),
            noise,
            phase: 0.0,
            window: (sc.sim.model == PlantModel::Switched)
                .then(|| CycleAverage::new((1.0 / (p.switching_frequency * sc.sim.step)).round() as usize)),
            prev_u: 1.0 - p.input_voltage / p.v_ref,
            k: 0,
            sc: sc.clone(),
        })
    }

    pub fn time(&self) -> f64 {
        self.k as f64 * self.sc.sim.step
    }

    pub fn truth(&self) -> &PlantState {
        &self.truth
    }

    pub fn observer(&self) -> &AdaptiveObserver {
        &self.observer
    }

    /// Sensor reading; with the switched plant, the average over the last
    /// PWM period so the ripple does not reach the averaged-model estimators.
    fn measure(&mut self) -> PlantState {
        let mut m = self.truth;
        if let Some(w) = &mut self.window {
            (m.v0, m.i_l) = w.push(&self.truth);
        }
        if let Some(n) = self.noise {
            m.v0 += n.sample(&mut self.rng);
            m.i_l += n.sample(&mut self.rng);
        }
        m
    }

    /// Measure, estimate and compute the control for the current instant,
    /// then advance every state by one step.
    pub fn step(&mut self) -> Result<Sample> {
        let p = self.sc.plant;
        let h = self.sc.sim.step;
        let t = self.time();
        self.truth.t = t;
        let r = self.sc.load_schedule.at(t);
        let meas = self.measure();

        let r_hat = self.observer.r_hat();
        let reference = self.tracker.update(self.observer.state.g_hat, self.observer.g_hat_rate(&meas), &p);
        let seen = to_transformed(&meas, r, r_hat, &p);
        let actual = to_transformed(&self.truth, r, r_hat, &p);
        let d_hat = self.dob.as_ref().map(|d| d.estimates(seen.x1, seen.x2));

        let (u, e1, e2, clamped, singular) = match &mut self.law {
            Law::Ftc { gains, state, use_dob } => {
                let dh = if *use_dob { d_hat } else { None };
                let out = ftc_step(gains, state, seen.x1, seen.x2, &reference, dh, h, t)?;
                let cmd = nu_to_duty(out.nu, &meas, r_hat, &p, self.prev_u);
                (cmd.duty, out.e1, out.e2, cmd.clamped, cmd.singular)
            }
            Law::Baseline(gains) => {
                let out = baseline_step(gains, seen.x1, seen.x2, &reference);
                if !out.nu.is_finite() {
                    return Err(SimError::Controller { t, term: "nu" });
                }
                let cmd = nu_to_duty(out.nu, &meas, r_hat, &p, self.prev_u);
                (cmd.duty, out.e1, out.e2, cmd.clamped, cmd.singular)
            }
            Law::Pid { gains, state } => {
                let out = pid_step(gains, &meas, p.v_ref, h, state);
                (out.duty, out.v_error, out.i_error, out.clamped, false)
            }
        };
        let nu = duty_to_nu(u, &meas, r_hat, &p);
        let (d1_hat, d2_hat) = d_hat.unwrap_or((0.0, 0.0));
        let sample = Sample {
            t,
            v0: self.truth.v0,
            i_l: self.truth.i_l,
            u,
            nu,
            r,
            r_hat,
            x1: actual.x1,
            x2: actual.x2,
            e1,
            e2,
            d1: actual.d1,
            d2: actual.d2,
            d1_hat,
            d2_hat,
            lyapunov: lyapunov_value(e1, e2),
            clamped,
            singular,
        };

        self.truth = match self.sc.sim.model {
            PlantModel::Averaged => step_rk4(&self.truth, u, &self.sc.load_schedule, &p, h)?,
            PlantModel::Switched => {
                let (next, phase) = step_switched(&self.truth, u, &self.sc.load_schedule, &p, h, self.phase)?;
                self.phase = phase;
                next
            }
        };
        self.observer.step(&meas, u, &p, h)?;
        if let Some(d) = &mut self.dob {
            d.step(seen.x1, seen.x2, nu, h).map_err(|e| match e {
                SimError::Observer { term, .. } => SimError::Observer { t, term },
                other => other,
            })?;
        }
        self.prev_u = u;
        self.k += 1;
        Ok(sample)
    }
}

/// One CSV row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRecord {
    pub t: f64,
    pub v0: f64,
    #[serde(rename = "iL")]
    pub i_l: f64,
    pub u: f64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "R_hat")]
    pub r_hat: f64,
    pub x1: f64,
    pub x2: f64,
    pub e1: f64,
    pub e2: f64,
    pub d1: f64,
    pub d2: f64,
    #[serde(rename = "V")]
    pub lyapunov: f64,
    pub d1_hat: f64,
    pub d2_hat: f64,
}

impl From<&Sample> for TraceRecord {
    fn from(s: &Sample) -> Self {
        Self {
            t: s.t,
            v0: s.v0,
            i_l: s.i_l,
            u: s.u,
            r: s.r,
            r_hat: s.r_hat,
            x1: s.x1,
            x2: s.x2,
            e1: s.e1,
            e2: s.e2,
            d1: s.d1,
            d2: s.d2,
            lyapunov: s.lyapunov,
            d1_hat: s.d1_hat,
            d2_hat: s.d2_hat,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fault {
    pub t: f64,
    pub kind: &'static str,
    pub message: String,
}

impl Fault {
    fn from_error(e: &SimError, t: f64) -> Self {
        let kind = match e {
            SimError::Integration { .. } => "integration",
            SimError::Controller { .. } => "controller",
            SimError::Observer { .. } => "observer",
            _ => "other",
        };
        Self {
            t,
            kind,
            message: e.to_string(),
        }
    }
}

/// Discrete check of `ΔV/h ≤ -κ1 V^½ - κ2 V^{ι/2} + C + slack` over the
/// steps with `V > 10 C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovAudit {
    pub kappa1: f64,
    pub kappa2: f64,
    pub residual_c: f64,
    pub epsilon: f64,
    pub eligible_steps: usize,
    pub violations: usize,
    pub max_v: f64,
}

impl LyapunovAudit {
    pub fn violation_fraction(&self) -> f64 {
        if self.eligible_steps == 0 {
            0.0
        } else {
            self.violations as f64 / self.eligible_steps as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioResult {
    pub controller: &'static str,
    pub trace: Vec<TraceRecord>,
    /// `None` only when a fault stopped the run before the first sample.
    pub metrics: Option<Metrics>,
    pub settling_events: Vec<SettlingEvent>,
    pub faults: Vec<Fault>,
    /// Residual constant implied by the measured disturbance bounds.
    pub implied_c: f64,
    /// Largest `|d1|`, `|d2|` (or `|d - d̂|` with compensation) along the run.
    pub disturbance_bounds: (f64, f64),
    pub lyapunov: Option<LyapunovAudit>,
    /// Largest `|u_k - u_{k-1}|` once `v0` has been in band for 50 ms.
    pub max_steady_duty_step: f64,
    pub steps: usize,
    pub clamped_steps: usize,
    pub singular_steps: usize,
}

impl ScenarioResult {
    pub fn has_fault(&self) -> bool {
        !self.faults.is_empty()
    }

    /// Recovery after the first event (the run start).
    pub fn startup_settling(&self) -> Option<f64> {
        self.settling_events.first().and_then(|e| e.recovery_time)
    }
}

/// Run the closed loop over the horizon. Runtime faults end the run early and
/// come back as a partial result with a fault record.
pub fn run_scenario(sc: &Scenario) -> Result<ScenarioResult> {
    let mut sim = Simulation::new(sc)?;
    let n = sc.steps();
    let dec = sc.sim.decimation;
    let vr = sc.plant.v_ref;

    let (epsilon, ftc_gains, compensated) = match &sim.law {
        Law::Ftc { gains, use_dob, .. } => {
            let ef = certify_epsilon(&gains.f_kind, 1e3, 1e-9)?.epsilon;
            let eg = certify_epsilon(&gains.g_kind, 1e3, 1e-9)?.epsilon;
            (ef.max(eg), Some(gains.as_ref().clone()), *use_dob)
        }
        _ => (0.0, None, false),
    };

    let mut trace = Vec::with_capacity(n / dec + 1);
    let mut acc = MetricAccumulator::default();
    let mut settling = SettlingTracker::new(vr, sc.load_schedule.change_times().filter(|&t| t <= sc.sim.t_end));
    let mut faults = Vec::new();
    let mut d_bar = (0.0f64, 0.0f64);
    let mut lyap = Vec::new();
    let mut max_steady_du = 0.0f64;
    let mut prev_u: Option<f64> = None;
    let (mut clamped, mut singular, mut steps) = (0, 0, 0);

    for k in 0..=n {
        let t = sim.time();
        let s = match sim.step() {
            Ok(s) => s,
            Err(e) if e.is_fault() => {
                faults.push(Fault::from_error(&e, t));
                break;
            }
            Err(e) => return Err(e),
        };
        if k % dec == 0 {
            trace.push(TraceRecord::from(&s));
        }
        if s.t >= sc.sim.t_skip {
            acc.push(s.v0 - vr);
        }
        settling.push(s.t, s.v0);
        if let Some(pu) = prev_u.filter(|_| settling.settled_for(s.t, STEADY_WINDOW)) {
            max_steady_du = max_steady_du.max((s.u - pu).abs());
        }
        prev_u = Some(s.u);
        steps += 1;
        let (r1, r2) = if compensated { (s.d1 - s.d1_hat, s.d2 - s.d2_hat) } else { (s.d1, s.d2) };
        d_bar = (d_bar.0.max(r1.abs()), d_bar.1.max(r2.abs()));
        if ftc_gains.is_some() {
            lyap.push(s.lyapunov);
        }
        clamped += s.clamped as usize;
        singular += s.singular as usize;
    }

    let implied_c = match &ftc_gains {
        Some(g) => g.residual_constant(d_bar.0, d_bar.1, epsilon),
        None => 0.5 * (d_bar.0 * d_bar.0 + d_bar.1 * d_bar.1),
    };
    let lyapunov = ftc_gains.map(|g| audit(&g, &lyap, implied_c, epsilon, sc.sim.step));
    Ok(ScenarioResult {
        controller: sc.controller.name(),
        trace,
        metrics: acc.finish().ok(),
        settling_events: settling.finish(),
        faults,
        implied_c,
        disturbance_bounds: d_bar,
        lyapunov,
        max_steady_duty_step: max_steady_du,
        steps,
        clamped_steps: clamped,
        singular_steps: singular,
    })
}

fn audit(g: &FtcGains, v: &[f64], c: f64, epsilon: f64, h: f64) -> LyapunovAudit {
    let (kappa1, kappa2) = g.decay_rates();
    let threshold = RESIDUAL_FACTOR * c;
    let mut eligible = 0;
    let mut violations = 0;
    for w in v.windows(2) {
        if w[0] > threshold {
            eligible += 1;
            let rate = (w[1] - w[0]) / h;
            if rate > lyapunov_bound(w[0], kappa1, kappa2, g.iota, c) + LYAPUNOV_SLACK {
                violations += 1;
            }
        }
    }
    LyapunovAudit {
        kappa1,
        kappa2,
        residual_c: c,
        epsilon,
        eligible_steps: eligible,
        violations,
        max_v: v.iter().copied().fold(0.0, f64::max),
    }
}
