use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controllers::{BaselineGains, CrossTerm, FtcGains, PidGains};
use crate::error::{Result, SimError};
use crate::estimators::{AdaptiveObserverGains, DobGains};
use crate::plant::{LoadSchedule, PlantParams, PlantState};
use crate::ussf::UssfKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlantModel {
    #[default]
    Averaged,
    Switched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Horizon (s).
    pub t_end: f64,
    /// Integration and control step (s).
    pub step: f64,
    pub model: PlantModel,
    /// Standard deviation of additive Gaussian noise on v0 (V) and iL (A).
    pub noise_sigma: f64,
    /// Keep one trace record every `decimation` steps.
    pub decimation: usize,
    pub seed: u64,
    /// Samples before this time are left out of the error metrics (s).
    pub t_skip: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            t_end: 1.0,
            step: 1e-6,
            model: PlantModel::Averaged,
            noise_sigma: 0.0,
            decimation: 10,
            seed: 0,
            t_skip: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FtcGainValues {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub k5: f64,
    pub k6: f64,
}

impl Default for FtcGainValues {
    fn default() -> Self {
        Self {
            k1: 1e4,
            k2: 1e4,
            k3: 1.0,
            k4: 9e4,
            k5: 9e4,
            k6: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FtcConfig {
    pub gains: FtcGainValues,
    /// USSF used for `f`, and for `g` unless `g_ussf` is set.
    pub ussf: UssfKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_ussf: Option<UssfKind>,
    pub iota: f64,
    /// Subtract the disturbance-observer estimates in both laws.
    pub use_dob: bool,
    pub cross_term: CrossTerm,
}

impl Default for FtcConfig {
    fn default() -> Self {
        Self {
            gains: FtcGainValues::default(),
            ussf: UssfKind::AlgebraicSigmoid,
            g_ussf: None,
            iota: 3.0,
            use_dob: false,
            cross_term: CrossTerm::E1,
        }
    }
}

impl FtcConfig {
    pub fn build(&self) -> Result<FtcGains> {
        let g = self.gains;
        FtcGains::new(
            [g.k1, g.k2, g.k3, g.k4, g.k5, g.k6],
            self.iota,
            self.ussf.clone(),
            self.g_ussf.clone().unwrap_or_else(|| self.ussf.clone()),
            self.cross_term,
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PidConfig {
    pub gains: PidGains,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub gains: BaselineGains,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ControllerConfig {
    Ftc(FtcConfig),
    Pid(PidConfig),
    Baseline(BaselineConfig),
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig::Ftc(FtcConfig::default())
    }
}

impl ControllerConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ControllerConfig::Ftc(_) => "ftc",
            ControllerConfig::Pid(_) => "pid",
            ControllerConfig::Baseline(_) => "baseline",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ControllerConfig::Ftc(c) => c.build().map(|_| ()),
            ControllerConfig::Pid(c) => c.gains.validate(),
            ControllerConfig::Baseline(c) => c.gains.validate(),
        }
    }

    pub fn uses_dob(&self) -> bool {
        matches!(self, ControllerConfig::Ftc(c) if c.use_dob)
    }
}

/// Method slots of a comparison run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Ftc,
    Baseline,
    Pid,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Ftc, Role::Baseline, Role::Pid];
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Ftc => "ftc",
            Role::Baseline => "baseline",
            Role::Pid => "pid",
        })
    }
}

/// The three controllers of the comparison with their default gains.
pub fn default_methods() -> BTreeMap<Role, ControllerConfig> {
    BTreeMap::from([
        (Role::Ftc, ControllerConfig::Ftc(FtcConfig::default())),
        (Role::Baseline, ControllerConfig::Baseline(BaselineConfig::default())),
        (Role::Pid, ControllerConfig::Pid(PidConfig::default())),
    ])
}

/// A complete simulation run description. Every key is optional and
/// defaults to the reference scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub plant: PlantParams,
    pub load_schedule: LoadSchedule,
    pub initial_state: PlantState,
    pub sim: SimConfig,
    pub observer: AdaptiveObserverGains,
    pub dob: DobGains,
    pub controller: ControllerConfig,
    /// Controllers used by `compare`.
    pub methods: BTreeMap<Role, ControllerConfig>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            plant: PlantParams::default(),
            load_schedule: LoadSchedule::reference(),
            initial_state: PlantState::new(6.0, 0.0),
            sim: SimConfig::default(),
            observer: AdaptiveObserverGains::default(),
            dob: DobGains::default(),
            controller: ControllerConfig::default(),
            methods: default_methods(),
        }
    }
}

impl Scenario {
    /// 10 Ω / 20 Ω / 10 Ω with steps at 0.2 s and 0.6 s, 1 s horizon at 1 µs.
    pub fn reference() -> Self {
        Self::default()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let sc: Scenario = serde_json::from_str(text)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn with_controller(&self, controller: ControllerConfig) -> Self {
        Self {
            controller,
            ..self.clone()
        }
    }

    /// Number of integration steps, `round(t_end / h)`.
    pub fn steps(&self) -> usize {
        (self.sim.t_end / self.sim.step).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.sim;
        if !(s.t_end > 0.0 && s.t_end.is_finite()) {
            return Err(SimError::invalid(format!("t_end must be positive, got {}", s.t_end)));
        }
        if !(s.step > 0.0 && s.step.is_finite()) {
            return Err(SimError::invalid(format!("step must be positive, got {}", s.step)));
        }
        if self.steps() == 0 {
            return Err(SimError::invalid("horizon is shorter than one step; the trace would be empty"));
        }
        if s.decimation == 0 {
            return Err(SimError::invalid("decimation must be at least 1"));
        }
        if !(s.noise_sigma >= 0.0 && s.noise_sigma.is_finite()) {
            return Err(SimError::invalid(format!("noise_sigma must be nonnegative, got {}", s.noise_sigma)));
        }
        if !(s.t_skip >= 0.0 && s.t_skip < s.t_end) {
            return Err(SimError::invalid(format!("t_skip must lie in [0, t_end), got {}", s.t_skip)));
        }
        self.plant.validate(s.step)?;
        let init = &self.initial_state;
        if !(init.v0.is_finite() && init.i_l.is_finite() && init.v0 >= 0.0) {
            return Err(SimError::invalid(format!("invalid initial state {init:?}")));
        }
        self.observer.validate()?;
        if self.dob.enabled {
            self.dob.validate()?;
        }
        self.controller.validate()?;
        if self.controller.uses_dob() && !self.dob.enabled {
            return Err(SimError::invalid("controller uses the disturbance observer but dob.enabled is false"));
        }
        for c in self.methods.values() {
            c.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_reference_scenario() {
        let sc = Scenario::from_json("{}").unwrap();
        assert_eq!(sc, Scenario::reference());
        assert_eq!(sc.steps(), 1_000_000);
    }

    #[test]
    fn full_document_round_trips() {
        let text = serde_json::to_string(&Scenario::reference()).unwrap();
        assert_eq!(Scenario::from_json(&text).unwrap(), Scenario::reference());
    }

    #[test]
    fn controller_variants_parse() {
        let sc = Scenario::from_json(
            r#"{"controller": {"type": "ftc", "ussf": "tanh", "iota": 2.5, "cross_term": "e2",
                "gains": {"k1": 1, "k2": 2, "k3": 3, "k4": 4, "k5": 5, "k6": 6}}}"#,
        )
        .unwrap();
        let ControllerConfig::Ftc(c) = &sc.controller else { panic!() };
        assert_eq!(c.ussf, UssfKind::Tanh);
        assert_eq!(c.cross_term, CrossTerm::E2);
        assert_eq!(c.gains.k6, 6.0);

        let sc = Scenario::from_json(r#"{"controller": {"type": "pid", "gains": {"kv_p": 2}}}"#).unwrap();
        let ControllerConfig::Pid(c) = &sc.controller else { panic!() };
        assert_eq!(c.gains.kv_p, 2.0);
        assert_eq!(c.gains.kv_i, 40.0);

        let sc = Scenario::from_json(r#"{"controller": {"type": "baseline"}}"#).unwrap();
        assert_eq!(sc.controller.name(), "baseline");
    }

    #[test]
    fn invalid_documents_are_rejected() {
        for text in [
            r#"{"sim": {"t_end": 0}}"#,
            r#"{"sim": {"t_end": 1e-7}}"#,
            r#"{"sim": {"step": -1}}"#,
            r#"{"sim": {"decimation": 0}}"#,
            r#"{"sim": {"t_skip": 2}}"#,
            r#"{"load_schedule": [[0.1, 10]]}"#,
            r#"{"load_schedule": [[0, -10]]}"#,
            r#"{"controller": {"type": "ftc", "gains": {"k1": 1, "k2": 1, "k3": 0.5, "k4": 1, "k5": 1, "k6": 1}}}"#,
            r#"{"controller": {"type": "ftc", "iota": 2}}"#,
            r#"{"controller": {"type": "ftc", "use_dob": true}}"#,
            r#"{"controller": {"type": "lqr"}}"#,
            r#"{"controller": {"type": "ftc", "ussf": "relu"}}"#,
            r#"{"observer": {"K1": 1, "K2": 1, "kappa": -1, "G0": 0.1}}"#,
            r#"{"dob": {"enabled": true, "theta": 1.5}}"#,
            r#"{"unknown": 1}"#,
            r#"{"sim": {"model": "spice"}}"#,
        ] {
            assert!(Scenario::from_json(text).is_err(), "{text}");
        }
    }

    #[test]
    fn dob_flag_pairs_with_controller() {
        let sc = Scenario::from_json(r#"{"dob": {"enabled": true}, "controller": {"type": "ftc", "use_dob": true}}"#).unwrap();
        assert!(sc.controller.uses_dob());
    }
}
