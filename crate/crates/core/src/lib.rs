//! Exact simulation of rank-one flows built by cutting and stacking.
//!
//! The core types are generic over the scalar (`f32` or `f64`); the aliases
//! at the crate root fix `f64`.

pub mod analysis;
pub mod construction;
pub mod dynamics;
pub mod error;
pub mod linalg;
mod scalar;
pub mod spectral;
pub mod time;

pub use construction::{build_stages, ConstructionParams, EpsBlock, EpsSchedule, Family, Stage, StageHierarchy};
pub use dynamics::{PointAddress, Strip, TowerSet};
pub use error::{Error, Result};
pub use scalar::Real;
pub use time::FlowTime;

pub type Stages = StageHierarchy<f64>;
pub type Params = ConstructionParams<f64>;
pub type Set = TowerSet<f64>;
pub type Time = FlowTime<f64>;
