//! Rigid point cloud registration with learned rotation-invariant
//! embeddings and confidence-weighted consensus.
//!
//! The numeric core is generic over [`scalar::Real`] (`f32` or `f64`); the
//! aliases below fix the scalar for callers that do not need the choice.

pub mod cli;
pub mod consensus;
pub mod error;
pub mod fen;
pub mod geom3d;
pub mod icp;
pub mod losses;
pub mod ri_desc;
pub mod scalar;
pub mod softcorr;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Real;

pub type PointCloud64 = geom3d::PointCloud<f64>;
pub type PointCloud32 = geom3d::PointCloud<f32>;
pub type RigidTransform64 = geom3d::RigidTransform<f64>;
pub type RigidTransform32 = geom3d::RigidTransform<f32>;
pub type FenModel64 = fen::FenModel<f64>;
pub type FenModel32 = fen::FenModel<f32>;
pub type SoftCorrespondence64 = softcorr::SoftCorrespondence<f64>;
pub type SoftCorrespondence32 = softcorr::SoftCorrespondence<f32>;
pub type TrainState64 = trainer::TrainState<f64>;
pub type TrainState32 = trainer::TrainState<f32>;
