//! Two-point metric bitensors on curved charts, geodesic transport, and
//! multi-event wavefields with their stress-energy audits.

pub mod bitensor;
pub mod chart;
pub mod dynamics;
pub mod error;
pub mod geodesic;
pub mod ode;
pub mod stress;
pub mod transport;
pub mod wavefield;

pub use bitensor::{BitensorValue, Construction};
pub use chart::{EventCoords, MetricChart, TangentVec};
pub use error::{Error, Result};
pub use geodesic::{Geodesic, GeodesicBundle, SearchConfig};
pub use stress::{Condition, StressField, Verdict};
pub use transport::Propagator;
pub use wavefield::{Geometry, GridSpec, LagrangianParams, WaveField};
