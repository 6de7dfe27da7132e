//! Boost converter models and the energy-coordinate transform.
//!
//! The averaged model is
//!
//! ```text
//! dv0/dt = (1 - u) iL / C - v0 / (R C)
//! diL/dt = -(1 - u) v0 / L + Vi / L
//! ```
//!
//! and the transformed coordinates are the stored energy
//! `x1 = (C v0² + L iL²) / 2` and the energy rate `x2 = Vi iL - v0² / R̂`,
//! which obey `ẋ1 = x2 + d1`, `ẋ2 = ν + d2` with `d1`, `d2` vanishing when the
//! load estimate `R̂` equals the true load `R`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Lower duty bound applied by [`nu_to_duty`].
pub const DUTY_MIN: f64 = 0.01;
/// Upper duty bound applied by [`nu_to_duty`].
pub const DUTY_MAX: f64 = 0.99;
/// Smallest denominator magnitude accepted when inverting ν.
pub const DENOMINATOR_GUARD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantParams {
    /// Inductance (H).
    #[serde(rename = "L")]
    pub inductance: f64,
    /// Output capacitance (F).
    #[serde(rename = "C")]
    pub capacitance: f64,
    /// Input voltage (V).
    #[serde(rename = "Vi")]
    pub input_voltage: f64,
    /// Output voltage reference (V).
    #[serde(rename = "vr", default = "default_vr")]
    pub v_ref: f64,
    /// PWM switching frequency (Hz).
    #[serde(rename = "fs")]
    pub switching_frequency: f64,
}

fn default_vr() -> f64 {
    12.0
}

impl Default for PlantParams {
    /// 10 µH, 100 µF, 6 V in, 12 V reference, 100 kHz switching.
    fn default() -> Self {
        Self {
            inductance: 10e-6,
            capacitance: 100e-6,
            input_voltage: 6.0,
            v_ref: 12.0,
            switching_frequency: 100e3,
        }
    }
}

impl PlantParams {
    pub fn validate(&self, step: f64) -> Result<()> {
        let named = [
            ("L", self.inductance),
            ("C", self.capacitance),
            ("Vi", self.input_voltage),
            ("vr", self.v_ref),
            ("fs", self.switching_frequency),
        ];
        for (name, v) in named {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::invalid(format!("plant parameter {name} must be positive, got {v}")));
            }
        }
        if !(step > 0.0) {
            return Err(SimError::invalid(format!("step must be positive, got {step}")));
        }
        if self.switching_frequency * step > 1.0 + 1e-12 {
            return Err(SimError::invalid(format!(
                "step {step} s exceeds one switching period ({} s)",
                1.0 / self.switching_frequency
            )));
        }
        Ok(())
    }
}

/// One piece of a piecewise-constant load profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadSegment {
    pub t_start: f64,
    pub resistance: f64,
}

/// Piecewise-constant load resistance, serialized as `[[t, R], ...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct LoadSchedule {
    segments: Vec<LoadSegment>,
}

impl LoadSchedule {
    pub fn new(segments: Vec<(f64, f64)>) -> Result<Self> {
        let Some(&(t0, _)) = segments.first() else {
            return Err(SimError::invalid("load schedule is empty"));
        };
        if t0 != 0.0 {
            return Err(SimError::invalid(format!("load schedule must start at t = 0, starts at {t0}")));
        }
        for w in segments.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(SimError::invalid(format!(
                    "load schedule times must increase strictly ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        if let Some(&(t, r)) = segments.iter().find(|(t, r)| !(*r > 0.0 && r.is_finite() && t.is_finite())) {
            return Err(SimError::invalid(format!("load segment at t = {t} has invalid resistance {r}")));
        }
        Ok(Self {
            segments: segments
                .into_iter()
                .map(|(t_start, resistance)| LoadSegment { t_start, resistance })
                .collect(),
        })
    }

    pub fn constant(resistance: f64) -> Result<Self> {
        Self::new(vec![(0.0, resistance)])
    }

    /// 10 Ω, stepping to 20 Ω at 0.2 s and back to 10 Ω at 0.6 s.
    pub fn reference() -> Self {
        Self::new(vec![(0.0, 10.0), (0.2, 20.0), (0.6, 10.0)]).expect("static schedule")
    }

    pub fn segments(&self) -> &[LoadSegment] {
        &self.segments
    }

    /// Times at which the load changes (excluding `t = 0`).
    pub fn change_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.segments.iter().skip(1).map(|s| s.t_start)
    }

    /// Load resistance in force at time `t`.
    pub fn at(&self, t: f64) -> f64 {
        let idx = self.segments.partition_point(|s| s.t_start <= t);
        self.segments[idx.saturating_sub(1)].resistance
    }
}

impl TryFrom<Vec<(f64, f64)>> for LoadSchedule {
    type Error = SimError;

    fn try_from(v: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<LoadSchedule> for Vec<(f64, f64)> {
    fn from(s: LoadSchedule) -> Self {
        s.segments.iter().map(|s| (s.t_start, s.resistance)).collect()
    }
}

impl Default for LoadSchedule {
    fn default() -> Self {
        Self::reference()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    /// Output (capacitor) voltage, V.
    pub v0: f64,
    /// Inductor current, A.
    #[serde(rename = "iL")]
    pub i_l: f64,
    #[serde(default)]
    pub t: f64,
}

impl PlantState {
    pub fn new(v0: f64, i_l: f64) -> Self {
        Self { v0, i_l, t: 0.0 }
    }

    fn is_finite(&self) -> bool {
        self.v0.is_finite() && self.i_l.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct TransformedState {
    /// Stored energy, J.
    pub x1: f64,
    /// Energy rate, W.
    pub x2: f64,
    /// Mismatch in `ẋ1` caused by `R̂ ≠ R`, W.
    pub d1: f64,
    /// Mismatch in `ẋ2` caused by `R̂ ≠ R`, W/s.
    pub d2: f64,
}

/// Right-hand side of the averaged converter model.
#[inline]
pub fn plant_deriv(state: &PlantState, u: f64, resistance: f64, p: &PlantParams) -> (f64, f64) {
    let off = 1.0 - u;
    let dv0 = off / p.capacitance * state.i_l - state.v0 / (resistance * p.capacitance);
    let dil = -off / p.inductance * state.v0 + p.input_voltage / p.inductance;
    (dv0, dil)
}

/// Classical fourth-order Runge-Kutta step for an autonomous system.
#[inline]
pub fn rk4<const N: usize, F>(y: [f64; N], h: f64, f: F) -> [f64; N]
where
    F: Fn(&[f64; N]) -> [f64; N],
{
    let add = |a: &[f64; N], b: &[f64; N], s: f64| -> [f64; N] {
        let mut out = *a;
        for (o, bi) in out.iter_mut().zip(b) {
            *o += s * bi;
        }
        out
    };
    let k1 = f(&y);
    let k2 = f(&add(&y, &k1, 0.5 * h));
    let k3 = f(&add(&y, &k2, 0.5 * h));
    let k4 = f(&add(&y, &k3, h));
    let mut out = y;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

fn advance(state: &PlantState, u: f64, resistance: f64, p: &PlantParams, h: f64) -> PlantState {
    let [v0, i_l] = rk4([state.v0, state.i_l], h, |y| {
        let (a, b) = plant_deriv(&PlantState::new(y[0], y[1]), u, resistance, p);
        [a, b]
    });
    PlantState { v0, i_l, t: state.t + h }
}

/// Advance the averaged model by `h` with `u` held and the load sampled at
/// the start of the step.
pub fn step_rk4(state: &PlantState, u: f64, schedule: &LoadSchedule, p: &PlantParams, h: f64) -> Result<PlantState> {
    let next = advance(state, u, schedule.at(state.t), p, h);
    if next.is_finite() {
        Ok(next)
    } else {
        Err(SimError::Integration {
            t: state.t,
            last_good: *state,
        })
    }
}

/// Switch signal of trailing-edge PWM: on while the carrier is below the duty.
#[inline]
pub fn switch_signal(u: f64, carrier_phase: f64) -> f64 {
    if carrier_phase < u {
        1.0
    } else {
        0.0
    }
}

/// Advance the switched model by `h`. The step is split at every PWM edge so
/// the binary switch signal is integrated exactly in time. Returns the new
/// state and the carrier phase at the end of the step.
pub fn step_switched(
    state: &PlantState,
    u: f64,
    schedule: &LoadSchedule,
    p: &PlantParams,
    h: f64,
    carrier_phase: f64,
) -> Result<(PlantState, f64)> {
    let resistance = schedule.at(state.t);
    let fs = p.switching_frequency;
    let mut phase = carrier_phase.rem_euclid(1.0);
    let mut s = *state;
    let mut remaining = h;
    while remaining > 1e-18 {
        let sw = switch_signal(u, phase);
        let edge = if sw > 0.0 { u.min(1.0) } else { 1.0 };
        let to_edge = (edge - phase) / fs;
        if to_edge <= remaining {
            s = advance(&s, sw, resistance, p, to_edge);
            remaining -= to_edge;
            phase = if edge >= 1.0 { 0.0 } else { edge };
        } else {
            s = advance(&s, sw, resistance, p, remaining);
            phase += remaining * fs;
            remaining = 0.0;
        }
    }
    s.t = state.t + h;
    if s.is_finite() {
        Ok((s, (carrier_phase + h * fs).rem_euclid(1.0)))
    } else {
        Err(SimError::Integration {
            t: state.t,
            last_good: *state,
        })
    }
}

/// Energy coordinates and lumped disturbances for estimate `r_hat` of the
/// true load `resistance`.
pub fn to_transformed(state: &PlantState, resistance: f64, r_hat: f64, p: &PlantParams) -> TransformedState {
    let v2 = state.v0 * state.v0;
    TransformedState {
        x1: 0.5 * (p.capacitance * v2 + p.inductance * state.i_l * state.i_l),
        x2: p.input_voltage * state.i_l - v2 / r_hat,
        d1: v2 / r_hat - v2 / resistance,
        d2: 2.0 / (r_hat * p.capacitance) * (v2 / resistance - v2 / r_hat),
    }
}

/// The transformed input `ν` produced by duty `u`.
pub fn duty_to_nu(u: f64, state: &PlantState, r_hat: f64, p: &PlantParams) -> f64 {
    let (free, coupling) = nu_terms(state, r_hat, p);
    free - coupling * (1.0 - u)
}

/// `ν = free - coupling · (1 - u)`.
#[inline]
fn nu_terms(state: &PlantState, r_hat: f64, p: &PlantParams) -> (f64, f64) {
    let v0 = state.v0;
    let vi = p.input_voltage;
    let free = vi * vi / p.inductance + 2.0 * v0 * v0 / (r_hat * r_hat * p.capacitance);
    let coupling = vi * v0 / p.inductance + 2.0 * state.i_l * v0 / (r_hat * p.capacitance);
    (free, coupling)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DutyCommand {
    pub duty: f64,
    /// The unclamped solution fell outside `[DUTY_MIN, DUTY_MAX]`.
    pub clamped: bool,
    /// The inversion was singular; `duty` repeats the previous command.
    pub singular: bool,
}

/// Invert the `ν` definition for the duty ratio, clamped to
/// `[DUTY_MIN, DUTY_MAX]`. Falls back to `prev_duty` when the coupling term is
/// too small to divide by.
pub fn nu_to_duty(nu: f64, state: &PlantState, r_hat: f64, p: &PlantParams, prev_duty: f64) -> DutyCommand {
    let (free, coupling) = nu_terms(state, r_hat, p);
    if !(coupling.abs() >= DENOMINATOR_GUARD) {
        return DutyCommand {
            duty: prev_duty,
            clamped: false,
            singular: true,
        };
    }
    let u = 1.0 - (free - nu) / coupling;
    let duty = if u.is_nan() { prev_duty } else { u.clamp(DUTY_MIN, DUTY_MAX) };
    DutyCommand {
        duty,
        clamped: duty != u,
        singular: u.is_nan(),
    }
}

/// Implementable energy reference `x̂r = L/(2 Vi²) (vr²/R̂)² + C vr²/2`.
pub fn reference_energy(vr: f64, r_hat: f64, p: &PlantParams) -> f64 {
    let power = vr * vr / r_hat;
    p.inductance / (2.0 * p.input_voltage * p.input_voltage) * power * power + 0.5 * p.capacitance * vr * vr
}
