//! Attribute-level privacy defenses for VR motion telemetry, plus the
//! synthetic population, adversary estimators and evaluation harness used to
//! measure them.

pub mod adversary;
pub mod calibration;
pub mod harness;
pub mod mechanisms;
pub mod netshield;
pub mod rng;
pub mod session;
pub mod synthpop;
pub mod telemetry;
pub mod transforms;
