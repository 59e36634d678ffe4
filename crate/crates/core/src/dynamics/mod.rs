//! System tiers, stepping and trajectory simulation.

mod simulate;
mod system;

pub use simulate::{
    energy_ratio, ensemble_seeds, lasalle_probe, simulate, simulate_ensemble, step, ControlLaw,
    DisturbanceEnsemble, DisturbanceMap, DisturbancePolicy, LaSalleReport, Trajectory,
    OVERFLOW_BOUND,
};
pub use system::{
    AffineBuilder, AffineSystem, ControlledBuilder, ControlledDriftFn, ControlledOutputFn,
    ControlledSystem, Dims, DriftFn, Dynamics, FeedthroughFn, GainFn, GeneralOutputFn,
    GeneralSystem, LinearSystem, OutputFn, TransitionFn,
};
