//! Cooperative uplink CDMA with multiuser detection and network-coded
//! relaying.
//!
//! * [`channel`]: geometry, signature correlations, correlated noise and the
//!   matched-filter-bank observation.
//! * [`mud`]: matched-filter, successive-cancellation and jointly optimal
//!   detectors.
//! * [`analysis`]: closed-form error rates, bounds, coding gain and
//!   efficiency, relay/coded-set selection.
//! * [`protocols`]: the two-stage relaying state machine.
//! * [`montecarlo`]: seeded parallel trials, Wilson intervals and sweeps.
//!
//! Numerics are generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix the usual `f64` instantiation.

pub mod analysis;
pub mod channel;
pub mod error;
pub mod matrix;
pub mod montecarlo;
pub mod mud;
pub mod protocols;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::{Arith, Scalar};

pub type Real = f64;

pub type Topology = channel::Topology<Real>;
pub type CorrelationMatrix = channel::CorrelationMatrix<Real>;
pub type Observation = channel::Observation<Real>;
pub type LinkBerTable = analysis::LinkBerTable<Real>;
pub type EfficiencyInputs = analysis::EfficiencyInputs<Real>;
pub type CooperativeSystem = protocols::CooperativeSystem<Real>;
pub type CorrelationSource = protocols::CorrelationSource<Real>;

pub type Topology32 = channel::Topology<f32>;
pub type CorrelationMatrix32 = channel::CorrelationMatrix<f32>;
pub type CooperativeSystem32 = protocols::CooperativeSystem<f32>;
