//! Joint image reconstruction and parametric registration guided by a
//! structural side-information image.
//!
//! The solver minimizes `D(A(u o P(phi)); f) + alpha * dTV(u; v)` over an image
//! `u` and deformation parameters `phi` with proximal alternating linearized
//! minimization inside a coarse-to-fine scale space. All numerical code is
//! generic over [`Real`] (`f32` or `f64`); the aliases below fix `f64`.

pub mod baseline;
pub mod dtv;
pub mod error;
pub mod fidelity;
pub mod grid;
pub mod metrics;
pub mod operators;
pub mod palm;
pub mod scalar;
pub mod scalespace;
pub mod simulate;
pub mod warp;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Geometry = grid::Geometry<f64>;
pub type ImageGrid = grid::ImageGrid<f64>;
pub type VectorField = grid::VectorField<f64>;
pub type DeformationField = warp::DeformationField<f64>;
pub type AffineParams = warp::AffineParams<f64>;
pub type RigidParams = warp::RigidParams<f64>;
pub type LinearOperator = operators::LinearOperator<f64>;
pub type Fidelity = fidelity::Fidelity<f64>;
pub type DtvContext = dtv::DtvContext<f64>;
pub type PalmState = palm::PalmState<f64>;
pub type ScaleSchedule = scalespace::ScaleSchedule;

pub type ImageGrid32 = grid::ImageGrid<f32>;
pub type Geometry32 = grid::Geometry<f32>;
