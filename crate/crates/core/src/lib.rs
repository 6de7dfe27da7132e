//! Fixed-time voltage regulation for DC-DC boost converters built on
//! unit-safe saturating functions (USSFs).
//!
//! * [`ussf`] defines the saturating function family and certifies its
//!   slope-limit constant.
//! * [`plant`] simulates the averaged and PWM-switched converter and maps
//!   between physical and energy coordinates.
//! * [`estimators`] holds the adaptive load observer and the USSF
//!   disturbance observer.
//! * [`controllers`] implements the fixed-time backstepping law and the two
//!   comparison baselines.
//! * [`harness`] runs scenarios, computes metrics and drives the CLI.

pub mod controllers;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod plant;
pub mod ussf;

pub use error::{Result, SimError};
