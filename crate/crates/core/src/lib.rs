//! Monte Carlo and semi-analytic simulation of atomic clocks interrogated
//! with squeezed spin states and adaptive weak measurements.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod clock;
pub mod csv;
pub mod error;
pub mod measurement;
pub mod noise;
pub mod numerics;
pub mod optimize;
pub mod protocol;
pub mod rng;
pub mod spin;

pub use analytics::{AnalyticTermReport, ReferenceLimits};
pub use clock::{ClockConfig, ClockRunResult, LoopMode, Stability, StabilityMethod};
pub use error::{Error, Result};
pub use measurement::{PhaseEstimate, WeakMeasurementRecord};
pub use noise::{LoTrace, NoiseKind, NoiseModel, Spectrum};
pub use optimize::{OptimizationResult, OptimizerSettings};
pub use protocol::{Branch, ConventionalEstimator, Interrogator, MeasurementSchedule, Protocol, SequenceResult};
pub use spin::{EnsembleMoments, SpinStateVector};
