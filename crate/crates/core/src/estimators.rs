//! Load and disturbance estimation.
//!
//! [`AdaptiveObserver`] reconstructs `(iL, v0)` and the load conductance
//! `G = 1/R` from measurements. [`DisturbanceObserver`] estimates the lumped
//! disturbances `d1`, `d2` of the energy-coordinate model using USSF
//! correction terms.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::plant::{rk4, PlantParams, PlantState};
use crate::ussf::{apow, spow, UssfKind};

/// Projection bounds for the conductance estimate (S).
pub const G_HAT_MIN: f64 = 1e-3;
pub const G_HAT_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveObserverGains {
    #[serde(rename = "K1")]
    pub k1: f64,
    #[serde(rename = "K2")]
    pub k2: f64,
    /// Adaptation gain of `dĜ/dt = -κ v0 (v0 - v̂0)`.
    pub kappa: f64,
    /// Initial conductance estimate.
    #[serde(rename = "G0")]
    pub g0: f64,
}

impl Default for AdaptiveObserverGains {
    fn default() -> Self {
        Self {
            k1: 4165.0,
            k2: 4165.0,
            kappa: 200.0,
            g0: 0.05,
        }
    }
}

impl AdaptiveObserverGains {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("K1", self.k1), ("K2", self.k2), ("kappa", self.kappa)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::invalid(format!("observer gain {name} must be positive, got {v}")));
            }
        }
        if !(G_HAT_MIN..=G_HAT_MAX).contains(&self.g0) {
            return Err(SimError::invalid(format!(
                "initial conductance G0 = {} outside [{G_HAT_MIN}, {G_HAT_MAX}]",
                self.g0
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdaptiveObserverState {
    pub i_l_hat: f64,
    pub v0_hat: f64,
    pub g_hat: f64,
}

/// State observer with conductance adaptation.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveObserver {
    pub gains: AdaptiveObserverGains,
    pub state: AdaptiveObserverState,
    /// Set when the last step hit a projection bound.
    pub projected: bool,
}

impl AdaptiveObserver {
    /// Start from the given measurement with `Ĝ = G0`.
    pub fn new(gains: AdaptiveObserverGains, initial: &PlantState) -> Self {
        Self {
            gains,
            state: AdaptiveObserverState {
                i_l_hat: initial.i_l,
                v0_hat: initial.v0,
                g_hat: gains.g0.clamp(G_HAT_MIN, G_HAT_MAX),
            },
            projected: false,
        }
    }

    pub fn r_hat(&self) -> f64 {
        1.0 / self.state.g_hat
    }

    /// Current adaptation rate `dĜ/dt`, zero when projection holds `Ĝ` at a bound.
    pub fn g_hat_rate(&self, meas: &PlantState) -> f64 {
        let rate = -self.gains.kappa * meas.v0 * (meas.v0 - self.state.v0_hat);
        let g = self.state.g_hat;
        if (g <= G_HAT_MIN && rate < 0.0) || (g >= G_HAT_MAX && rate > 0.0) {
            0.0
        } else {
            rate
        }
    }

    /// Advance by `h` with measurement and duty held over the step.
    pub fn step(&mut self, meas: &PlantState, u: f64, p: &PlantParams, h: f64) -> Result<()> {
        let AdaptiveObserverGains { k1, k2, kappa, .. } = self.gains;
        let s = self.state;
        let off = 1.0 - u;
        let (l, c, vi) = (p.inductance, p.capacitance, p.input_voltage);
        let (v0, il) = (meas.v0, meas.i_l);
        let [i_l_hat, v0_hat, g_hat] = rk4([s.i_l_hat, s.v0_hat, s.g_hat], h, |y| {
            [
                -off * y[1] / l + vi / l + k1 * (il - y[0]),
                off * y[0] / c - y[2] * v0 / c + k2 * (v0 - y[1]),
                -kappa * v0 * (v0 - y[1]),
            ]
        });
        if !(i_l_hat.is_finite() && v0_hat.is_finite() && g_hat.is_finite()) {
            return Err(SimError::Observer {
                t: meas.t,
                term: "adaptive observer state",
            });
        }
        let clamped = g_hat.clamp(G_HAT_MIN, G_HAT_MAX);
        self.projected = clamped != g_hat;
        self.state = AdaptiveObserverState {
            i_l_hat,
            v0_hat,
            g_hat: clamped,
        };
        Ok(())
    }

    /// `½ L ĩL² + ½ C ṽ0² + G̃²/(2κ)`, non-increasing while the load is constant.
    pub fn error_energy(&self, truth: &PlantState, g_true: f64, p: &PlantParams) -> f64 {
        let ei = truth.i_l - self.state.i_l_hat;
        let ev = truth.v0 - self.state.v0_hat;
        let eg = g_true - self.state.g_hat;
        0.5 * p.inductance * ei * ei + 0.5 * p.capacitance * ev * ev + eg * eg / (2.0 * self.gains.kappa)
    }
}

/// Free function form of [`AdaptiveObserver::step`].
pub fn adaptive_observer_step(
    obs: &AdaptiveObserver,
    meas: &PlantState,
    u: f64,
    p: &PlantParams,
    h: f64,
) -> Result<AdaptiveObserver> {
    let mut next = obs.clone();
    next.step(meas, u, p, h)?;
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DobGains {
    pub enabled: bool,
    pub kappa1: f64,
    pub kappa2: f64,
    pub kappa3: f64,
    pub kappa4: f64,
    pub kappa5: f64,
    pub kappa6: f64,
    /// Exponent of the high-order correction terms, `θ > 2`.
    pub theta: f64,
    /// USSF used for both `r(·)` and `h(·)`.
    pub ussf: UssfKind,
}

impl Default for DobGains {
    fn default() -> Self {
        Self {
            enabled: false,
            kappa1: 50.0,
            kappa2: 100.0,
            kappa3: 1000.0,
            kappa4: 1000.0,
            kappa5: 1.0,
            kappa6: 10_000.0,
            theta: 3.0,
            ussf: UssfKind::AlgebraicSigmoid,
        }
    }
}

impl DobGains {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("kappa1", self.kappa1),
            ("kappa2", self.kappa2),
            ("kappa3", self.kappa3),
            ("kappa4", self.kappa4),
            ("kappa5", self.kappa5),
            ("kappa6", self.kappa6),
        ];
        for (name, v) in named {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::invalid(format!("disturbance observer gain {name} must be positive, got {v}")));
            }
        }
        if !(self.theta > 2.0) {
            return Err(SimError::invalid(format!("theta must exceed 2, got {}", self.theta)));
        }
        if self.ussf.is_custom() && !crate::ussf::verify_axioms(&self.ussf, 10_000, 1e3).all_pass() {
            return Err(SimError::invalid(format!("`{}` is not an admissible USSF", self.ussf)));
        }
        Ok(())
    }

    /// Residual width `2 (κ1 + κ2) ε / κ3` of the `d̃1` band.
    pub fn d1_band(&self, epsilon: f64) -> f64 {
        2.0 * (self.kappa1 + self.kappa2) * epsilon / self.kappa3
    }

    fn correction(&self, err: f64, k: [f64; 3]) -> f64 {
        let f = &self.ussf;
        let th = self.theta;
        -k[0] * f.value(err) - k[1] * apow(err, th - 1.0) * f.value(spow(err, th)) - k[2] * err
    }

    /// `d̂1` as a function of `x̃1 = x̂1 - x1`.
    pub fn d1_hat(&self, x1_err: f64) -> f64 {
        self.correction(x1_err, [self.kappa1, self.kappa2, self.kappa3])
    }

    /// `d̂2` as a function of `x̃2 = x̂2 - x2`.
    pub fn d2_hat(&self, x2_err: f64) -> f64 {
        self.correction(x2_err, [self.kappa4, self.kappa5, self.kappa6])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct DisturbanceObserverState {
    pub x1_hat: f64,
    pub x2_hat: f64,
    pub d1_hat: f64,
    pub d2_hat: f64,
}

/// Fixed-time disturbance observer for `ẋ1 = x2 + d1`, `ẋ2 = ν + d2`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceObserver {
    pub gains: DobGains,
    pub state: DisturbanceObserverState,
}

impl DisturbanceObserver {
    pub fn new(gains: DobGains, x1: f64, x2: f64) -> Self {
        Self {
            gains,
            state: DisturbanceObserverState {
                x1_hat: x1,
                x2_hat: x2,
                d1_hat: 0.0,
                d2_hat: 0.0,
            },
        }
    }

    /// Disturbance estimates for the current measurement.
    pub fn estimates(&self, x1: f64, x2: f64) -> (f64, f64) {
        (
            self.gains.d1_hat(self.state.x1_hat - x1),
            self.gains.d2_hat(self.state.x2_hat - x2),
        )
    }

    /// Advance by `h` with `(x1, x2, ν)` held over the step.
    pub fn step(&mut self, x1: f64, x2: f64, nu: f64, h: f64) -> Result<()> {
        let g = &self.gains;
        let (d1, d2) = self.estimates(x1, x2);
        let [x1_hat, x2_hat] = rk4([self.state.x1_hat, self.state.x2_hat], h, |y| {
            [x2 + g.d1_hat(y[0] - x1), nu + g.d2_hat(y[1] - x2)]
        });
        if !(x1_hat.is_finite() && x2_hat.is_finite() && d1.is_finite() && d2.is_finite()) {
            return Err(SimError::Observer {
                t: f64::NAN,
                term: "disturbance observer state",
            });
        }
        self.state = DisturbanceObserverState {
            x1_hat,
            x2_hat,
            d1_hat: d1,
            d2_hat: d2,
        };
        Ok(())
    }
}

/// Free function form of [`DisturbanceObserver::step`].
pub fn disturbance_observer_step(
    dob: &DisturbanceObserver,
    transformed: (f64, f64),
    nu: f64,
    h: f64,
) -> Result<DisturbanceObserver> {
    let mut next = dob.clone();
    next.step(transformed.0, transformed.1, nu, h)?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{step_rk4, LoadSchedule};
    use crate::ussf::certify_epsilon;

    #[test]
    fn perfect_initialization_is_stationary() {
        let p = PlantParams::default();
        let meas = PlantState::new(12.0, 2.4);
        let gains = AdaptiveObserverGains { g0: 0.1, ..Default::default() };
        let mut obs = AdaptiveObserver::new(gains, &meas);
        for _ in 0..1000 {
            obs.step(&meas, 0.5, &p, 1e-6).unwrap();
        }
        assert!((obs.state.i_l_hat - 2.4).abs() < 1e-9);
        assert!((obs.state.v0_hat - 12.0).abs() < 1e-9);
        assert!((obs.state.g_hat - 0.1).abs() < 1e-9);
    }

    #[test]
    fn zero_voltage_freezes_adaptation() {
        let p = PlantParams::default();
        let meas = PlantState::new(0.0, 1.0);
        let mut obs = AdaptiveObserver::new(AdaptiveObserverGains::default(), &PlantState::new(3.0, 0.0));
        let g0 = obs.state.g_hat;
        for _ in 0..100 {
            obs.step(&meas, 0.5, &p, 1e-6).unwrap();
        }
        assert_eq!(obs.state.g_hat, g0);
    }

    #[test]
    fn conductance_projection_is_flagged() {
        let p = PlantParams::default();
        let gains = AdaptiveObserverGains { g0: G_HAT_MIN, kappa: 1e6, ..Default::default() };
        // v0 above the estimate pushes Ĝ down.
        let mut obs = AdaptiveObserver::new(gains, &PlantState::new(5.0, 0.0));
        obs.step(&PlantState::new(12.0, 0.0), 0.5, &p, 1e-6).unwrap();
        assert!(obs.projected);
        assert_eq!(obs.state.g_hat, G_HAT_MIN);
        assert_eq!(obs.g_hat_rate(&PlantState::new(12.0, 0.0)), 0.0);
    }

    #[test]
    fn open_loop_conductance_converges() {
        // Plant at u = 0.5 with R = 10 Ω; observer starts believing 20 Ω.
        let p = PlantParams::default();
        let sched = LoadSchedule::constant(10.0).unwrap();
        let mut plant = PlantState::new(12.0, 2.4);
        let mut obs = AdaptiveObserver::new(AdaptiveObserverGains::default(), &plant);
        let h = 1e-6;
        for _ in 0..20_000 {
            obs.step(&plant, 0.5, &p, h).unwrap();
            plant = step_rk4(&plant, 0.5, &sched, &p, h).unwrap();
        }
        assert!((obs.state.g_hat - 0.1).abs() < 0.005, "{:?}", obs.state);
    }

    #[test]
    fn error_energy_is_non_increasing_at_constant_load() {
        let p = PlantParams::default();
        let sched = LoadSchedule::constant(10.0).unwrap();
        let mut plant = PlantState::new(12.0, 2.4);
        let mut obs = AdaptiveObserver::new(AdaptiveObserverGains::default(), &PlantState::new(11.0, 2.0));
        let h = 1e-6;
        let mut prev = obs.error_energy(&plant, 0.1, &p);
        for k in 0..20_000 {
            obs.step(&plant, 0.5, &p, h).unwrap();
            plant = step_rk4(&plant, 0.5, &sched, &p, h).unwrap();
            let w = obs.error_energy(&plant, 0.1, &p);
            assert!(w <= prev * (1.0 + 1e-9) + 1e-18, "step {k}: {w} > {prev}");
            prev = w;
        }
    }

    #[test]
    fn zero_error_gives_zero_disturbance_estimate() {
        let g = DobGains::default();
        assert_eq!(g.d1_hat(0.0), 0.0);
        assert_eq!(g.d2_hat(0.0), 0.0);
        let dob = DisturbanceObserver::new(g, 1.0, 2.0);
        assert_eq!(dob.estimates(1.0, 2.0), (0.0, 0.0));
    }

    #[test]
    fn every_d1_term_opposes_positive_error() {
        let g = DobGains::default();
        for e in [1e-6, 1e-3, 0.5, 3.0, 100.0] {
            let f = &g.ussf;
            let terms = [
                -g.kappa1 * f.value(e),
                -g.kappa2 * apow(e, g.theta - 1.0) * f.value(spow(e, g.theta)),
                -g.kappa3 * e,
            ];
            assert!(terms.iter().all(|t| *t < 0.0), "{terms:?}");
            assert!((g.d1_hat(-e) + g.d1_hat(e)).abs() < 1e-12 * g.d1_hat(e).abs());
        }
    }

    /// Frozen plant: x2 = 0 and a constant d1 drives x1. The scalar error ODE
    /// x̃̇1 = d̂1(x̃1) - d1 is integrated independently as the oracle.
    fn frozen_plant_run(x1_err0: f64, d1: f64, h: f64, t_end: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let g = DobGains::default();
        let mut x1 = 0.0;
        let mut dob = DisturbanceObserver::new(g.clone(), x1 + x1_err0, 0.0);
        let (mut errs, mut dtil, mut oracle) = (Vec::new(), Vec::new(), Vec::new());
        let mut e = x1_err0;
        for _ in 0..(t_end / h).round() as usize {
            let (d1_hat, _) = dob.estimates(x1, 0.0);
            errs.push(dob.state.x1_hat - x1);
            dtil.push(d1_hat - d1);
            oracle.push(e);
            dob.step(x1, 0.0, 0.0, h).unwrap();
            x1 += h * d1;
            // Oracle: fine-step explicit midpoint on the error ODE.
            let sub = 20;
            let dt = h / sub as f64;
            for _ in 0..sub {
                let mid = e + 0.5 * dt * (g.d1_hat(e) - d1);
                e += dt * (g.d1_hat(mid) - d1);
            }
        }
        (errs, dtil, oracle)
    }

    #[test]
    fn disturbance_observer_matches_scalar_error_oracle() {
        let (errs, dtil, oracle) = frozen_plant_run(1.0, 7.2, 1e-6, 0.03);
        for (k, (a, b)) in errs.iter().zip(&oracle).enumerate() {
            // The observer samples x1 once per step, so agreement is O(h), not O(h^4).
            assert!((a - b).abs() <= 1e-3 * b.abs() + 1e-5, "step {k}: {a} vs {b}");
        }
        let g = DobGains::default();
        let eps = certify_epsilon(&g.ussf, 1e3, 1e-6).unwrap().epsilon;
        let band = g.d1_band(eps);
        let tail = &dtil[dtil.len() / 2..];
        assert!(tail.iter().all(|d| d.abs() < band), "band {band}, last {}", dtil.last().unwrap());
    }

    #[test]
    fn disturbance_observer_lyapunov_inequality_holds() {
        let g = DobGains::default();
        let eps = certify_epsilon(&g.ussf, 1e3, 1e-6).unwrap().epsilon;
        let d1_bar: f64 = 7.2;
        let h = 1e-6;
        for x0 in [1e-3, 1.0, 1e3] {
            let (errs, _, _) = frozen_plant_run(x0, d1_bar, h, 0.02);
            let mut violations = 0;
            for w in errs.windows(2) {
                let l0 = 0.5 * w[0] * w[0];
                let l1 = 0.5 * w[1] * w[1];
                let bound = -2.0 * g.kappa1 * l0.sqrt() - 2.0 * g.kappa2 * l0.powf(g.theta / 2.0)
                    + (g.kappa1 + g.kappa2) * eps
                    + 0.5 * d1_bar * d1_bar
                    + 1e-6;
                if (l1 - l0) / h > bound {
                    violations += 1;
                }
            }
            assert_eq!(violations, 0, "x̃1(0) = {x0}");
        }
    }
}
