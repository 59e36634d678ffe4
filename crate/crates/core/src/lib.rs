//! Simulation and certification of H∞ performance for discrete-time
//! nonlinear stochastic systems.

pub mod builtin;
pub mod certificate;
pub mod certify;
pub mod dynamics;
pub mod error;
pub mod fd;
pub mod linalg;
pub mod noise;
pub mod storage;
pub mod synth;

pub use certificate::{Certificate, Status, Tolerance};
pub use dynamics::{
    AffineSystem, ControlLaw, ControlledSystem, Dims, DisturbanceEnsemble, DisturbancePolicy,
    Dynamics, GeneralSystem, LinearSystem, Trajectory,
};
pub use error::{Error, Result};
pub use noise::{Distribution, Estimate, ExpectationMode, ExpectationRule, ExpectationScheme, NoiseModel};
pub use storage::{DomainBox, Sampling, StorageFunction};
pub use synth::FeedbackLaw;
