//! Duty-ratio controllers.
//!
//! * [`ftc_step`]: fixed-time backstepping on the energy coordinates with USSF
//!   nonlinear gains. All fractional powers carry the sign of their base, so
//!   no term is singular at zero error.
//! * [`baseline_step`]: linear backstepping with `α = -c1 e1 + ẋ̂r`.
//! * [`pid_step`]: cascaded voltage/current PID acting directly on the duty.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::plant::{reference_energy, PlantParams, PlantState, DUTY_MAX, DUTY_MIN};
use crate::ussf::{apow, spow, verify_axioms, UssfKind};

/// Which error multiplies `k6` in the second control law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrossTerm {
    #[default]
    E1,
    E2,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FtcGains {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub k5: f64,
    pub k6: f64,
    pub iota: f64,
    pub f_kind: UssfKind,
    pub g_kind: UssfKind,
    pub cross_term: CrossTerm,
}

impl FtcGains {
    /// Validates `k3, k6 > ½`, `ι > 2`, nonnegative saturating gains, and
    /// admits custom USSFs only if they pass the axiom check.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        k: [f64; 6],
        iota: f64,
        f_kind: UssfKind,
        g_kind: UssfKind,
        cross_term: CrossTerm,
    ) -> Result<Self> {
        let [k1, k2, k3, k4, k5, k6] = k;
        if k.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(SimError::invalid(format!("controller gains must be finite and nonnegative: {k:?}")));
        }
        if !(k3 > 0.5 && k6 > 0.5) {
            return Err(SimError::invalid(format!("k3 and k6 must exceed 1/2 (got {k3}, {k6})")));
        }
        if !(iota > 2.0 && iota.is_finite()) {
            return Err(SimError::invalid(format!("iota must exceed 2, got {iota}")));
        }
        for kind in [&f_kind, &g_kind] {
            if kind.is_custom() && !verify_axioms(kind, 10_000, 1e3).all_pass() {
                return Err(SimError::invalid(format!("`{kind}` is not an admissible USSF")));
            }
        }
        Ok(Self {
            k1,
            k2,
            k3,
            k4,
            k5,
            k6,
            iota,
            f_kind,
            g_kind,
            cross_term,
        })
    }

    /// k1 = k2 = 10⁴, k3 = 1, k4 = k5 = 9·10⁴, k6 = 1, ι = 3, f = g = x/√(1+x²).
    pub fn reference() -> Self {
        Self::new(
            [1e4, 1e4, 1.0, 9e4, 9e4, 1.0],
            3.0,
            UssfKind::AlgebraicSigmoid,
            UssfKind::AlgebraicSigmoid,
            CrossTerm::E1,
        )
        .expect("static gains")
    }

    /// `(κ1, κ2) = (2 min(k1, k4), 2 min(k2, k5))` of the Lyapunov decay bound.
    pub fn decay_rates(&self) -> (f64, f64) {
        (2.0 * self.k1.min(self.k4), 2.0 * self.k2.min(self.k5))
    }

    /// Residual `½(d̄1² + d̄2²) + (k1 + k2 + k4 + k5) ε`.
    pub fn residual_constant(&self, d1_bar: f64, d2_bar: f64, epsilon: f64) -> f64 {
        0.5 * (d1_bar * d1_bar + d2_bar * d2_bar) + (self.k1 + self.k2 + self.k4 + self.k5) * epsilon
    }
}

/// `x̂r` and its first two time derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ReferenceSignal {
    pub xr: f64,
    pub xr_dot: f64,
    pub xr_ddot: f64,
}

impl ReferenceSignal {
    pub fn stationary(xr: f64) -> Self {
        Self { xr, ..Default::default() }
    }
}

/// Tracks `x̂r(R̂)` as the load estimate adapts.
///
/// `ẋ̂r` is exact via the chain rule through the adaptation law; `ẍ̂r` is a
/// backward difference of `ẋ̂r` passed through a first-order low-pass with
/// time constant `10 h`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTracker {
    vr: f64,
    h: f64,
    prev_xr_dot: Option<f64>,
    xr_ddot: f64,
}

impl ReferenceTracker {
    pub fn new(vr: f64, h: f64) -> Self {
        Self {
            vr,
            h,
            prev_xr_dot: None,
            xr_ddot: 0.0,
        }
    }

    pub fn update(&mut self, g_hat: f64, g_hat_rate: f64, p: &PlantParams) -> ReferenceSignal {
        let vr2 = self.vr * self.vr;
        let xr = reference_energy(self.vr, 1.0 / g_hat, p);
        // d/dt [L vr⁴ Ĝ² / (2 Vi²)]
        let xr_dot = p.inductance * vr2 * vr2 * g_hat * g_hat_rate / (p.input_voltage * p.input_voltage);
        if let Some(prev) = self.prev_xr_dot {
            let raw = (xr_dot - prev) / self.h;
            let tau = 10.0 * self.h;
            self.xr_ddot += self.h / (tau + self.h) * (raw - self.xr_ddot);
        }
        self.prev_xr_dot = Some(xr_dot);
        ReferenceSignal {
            xr,
            xr_dot,
            xr_ddot: self.xr_ddot,
        }
    }
}

/// Reference energy and derivatives along a series of `(Ĝ, dĜ/dt)` samples.
pub fn reference_derivatives(samples: &[(f64, f64)], vr: f64, p: &PlantParams, h: f64) -> Result<Vec<ReferenceSignal>> {
    if samples.len() < 3 {
        return Err(SimError::invalid("reference derivatives need at least three samples"));
    }
    if !(h > 0.0) {
        return Err(SimError::invalid(format!("step must be positive, got {h}")));
    }
    let mut tracker = ReferenceTracker::new(vr, h);
    Ok(samples.iter().map(|&(g, gd)| tracker.update(g, gd, p)).collect())
}

/// Per-run controller memory.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FtcState {
    /// Virtual control at the previous step.
    pub alpha_prev: Option<f64>,
    /// Backward difference of `α`, kept as a cross-check on `α̇̂`.
    pub alpha_dot_fd: f64,
    pub singularity_flag: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct FtcOutput {
    pub nu: f64,
    pub alpha: f64,
    pub alpha_dot_hat: f64,
    pub e1: f64,
    pub e2: f64,
}

fn finite(t: f64, term: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(SimError::Controller { t, term })
    }
}

/// `k_a f(e) + k_b |e|^{ι-1} f(sig(e)^ι)` and its derivative in `e`.
#[inline]
fn saturating_pair(f: &UssfKind, e: f64, iota: f64, ka: f64, kb: f64) -> (f64, f64) {
    let e_pow = spow(e, iota);
    let f1 = f.value(e);
    let f2 = f.value(e_pow);
    let value = ka * f1 + kb * apow(e, iota - 1.0) * f2;
    let slope = ka * f.slope(e)
        + kb * (iota - 1.0) * spow(e, iota - 2.0) * f2
        + kb * iota * apow(e, 2.0 * iota - 2.0) * f.slope(e_pow);
    (value, slope)
}

/// One evaluation of the fixed-time backstepping law.
///
/// `d_hat`, when given, is subtracted from `α` and `ν`; it does not enter `α̇̂`.
/// `t` only labels faults.
pub fn ftc_step(
    gains: &FtcGains,
    st: &mut FtcState,
    x1: f64,
    x2: f64,
    reference: &ReferenceSignal,
    d_hat: Option<(f64, f64)>,
    h: f64,
    t: f64,
) -> Result<FtcOutput> {
    let g = gains;
    let (d1_hat, d2_hat) = d_hat.unwrap_or((0.0, 0.0));
    let e1 = x1 - reference.xr;
    let (sat1, sat1_slope) = saturating_pair(&g.f_kind, e1, g.iota, g.k1, g.k2);
    let alpha = finite(t, "alpha", -sat1 - g.k3 * e1 - d1_hat + reference.xr_dot)?;
    let e2 = x2 - alpha;

    let dalpha_de1 = finite(t, "dalpha/de1", -sat1_slope - g.k3)?;
    let alpha_dot_hat = finite(t, "alpha_dot_hat", (x2 - reference.xr_dot) * dalpha_de1 + reference.xr_ddot)?;

    let (sat2, _) = saturating_pair(&g.g_kind, e2, g.iota, g.k4, g.k5);
    let cross = match g.cross_term {
        CrossTerm::E1 => e1,
        CrossTerm::E2 => e2,
    };
    let nu = finite(t, "nu", -sat2 - g.k6 * cross - d2_hat + alpha_dot_hat)?;

    if let Some(prev) = st.alpha_prev {
        st.alpha_dot_fd = (alpha - prev) / h;
    }
    st.alpha_prev = Some(alpha);
    Ok(FtcOutput {
        nu,
        alpha,
        alpha_dot_hat,
        e1,
        e2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineGains {
    pub c1: f64,
    pub c2: f64,
}

impl Default for BaselineGains {
    fn default() -> Self {
        Self { c1: 1e5, c2: 1e5 }
    }
}

impl BaselineGains {
    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0 && self.c2 > 0.0) {
            return Err(SimError::invalid(format!("c1, c2 must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct BaselineOutput {
    pub nu: f64,
    pub alpha: f64,
    pub e1: f64,
    pub e2: f64,
}

/// Linear backstepping: `α = -c1 e1 + ẋ̂r`, `ν = -c2 e2 + ẍ̂r`.
pub fn baseline_step(gains: &BaselineGains, x1: f64, x2: f64, reference: &ReferenceSignal) -> BaselineOutput {
    let e1 = x1 - reference.xr;
    let alpha = -gains.c1 * e1 + reference.xr_dot;
    let e2 = x2 - alpha;
    BaselineOutput {
        nu: -gains.c2 * e2 + reference.xr_ddot,
        alpha,
        e1,
        e2,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PidGains {
    pub kv_p: f64,
    pub kv_i: f64,
    pub kv_d: f64,
    pub ki_p: f64,
    pub ki_i: f64,
    pub ki_d: f64,
    /// Bound on `|∫ e_v dt|` (V·s).
    pub v_integral_limit: f64,
    /// Bound on `|∫ e_i dt|` (A·s).
    pub i_integral_limit: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            kv_p: 5.0,
            kv_i: 40.0,
            kv_d: 0.0,
            ki_p: 20.0,
            ki_i: 1.0,
            ki_d: 0.0,
            v_integral_limit: 100.0,
            i_integral_limit: 100.0,
        }
    }
}

impl PidGains {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.kv_p,
            self.kv_i,
            self.kv_d,
            self.ki_p,
            self.ki_i,
            self.ki_d,
            self.v_integral_limit,
            self.i_integral_limit,
        ];
        if all.iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
            return Err(SimError::invalid(format!("PID gains must be finite and nonnegative: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PidState {
    pub v_integral: f64,
    pub i_integral: f64,
    prev: Option<(f64, f64)>,
    v_deriv: f64,
    i_deriv: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct PidOutput {
    pub duty: f64,
    /// Inductor current reference from the voltage loop (A).
    pub current_ref: f64,
    pub v_error: f64,
    pub i_error: f64,
    pub clamped: bool,
}

/// One step of the cascaded PID. Integrators advance by the rectangle rule
/// after the output is formed, and stop whenever the duty is saturated and
/// the error would push it further into saturation.
pub fn pid_step(gains: &PidGains, meas: &PlantState, vr: f64, h: f64, state: &mut PidState) -> PidOutput {
    let ev = vr - meas.v0;
    let tau = 10.0 * h;
    let blend = h / (tau + h);
    if let Some((pv, _)) = state.prev {
        state.v_deriv += blend * ((ev - pv) / h - state.v_deriv);
    }
    let current_ref = gains.kv_p * ev + gains.kv_i * state.v_integral + gains.kv_d * state.v_deriv;

    let ei = current_ref - meas.i_l;
    if let Some((_, pi)) = state.prev {
        state.i_deriv += blend * ((ei - pi) / h - state.i_deriv);
    }
    let raw = gains.ki_p * ei + gains.ki_i * state.i_integral + gains.ki_d * state.i_deriv;
    let duty = raw.clamp(DUTY_MIN, DUTY_MAX);
    let high = raw > DUTY_MAX;
    let low = raw < DUTY_MIN;

    // Both errors raise the duty when positive.
    let frozen = |e: f64| (high && e > 0.0) || (low && e < 0.0);
    if !frozen(ev) {
        state.v_integral = (state.v_integral + ev * h).clamp(-gains.v_integral_limit, gains.v_integral_limit);
    }
    if !frozen(ei) {
        state.i_integral = (state.i_integral + ei * h).clamp(-gains.i_integral_limit, gains.i_integral_limit);
    }
    state.prev = Some((ev, ei));

    PidOutput {
        duty,
        current_ref,
        v_error: ev,
        i_error: ei,
        clamped: high || low,
    }
}

/// `V = ½ e1² + ½ e2²`.
pub fn lyapunov_value(e1: f64, e2: f64) -> f64 {
    0.5 * (e1 * e1 + e2 * e2)
}

/// Right-hand side `-κ1 V^{1/2} - κ2 V^{ι/2} + C` of the fixed-time decay bound.
pub fn lyapunov_bound(v: f64, kappa1: f64, kappa2: f64, iota: f64, c: f64) -> f64 {
    -kappa1 * v.sqrt() - kappa2 * v.powf(iota / 2.0) + c
}
