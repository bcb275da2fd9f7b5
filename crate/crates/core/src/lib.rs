//! Polyconvex principal-stretch neural hyperelasticity: kinematics, a small
//! reverse-mode tape, input-convex networks, closed-form and neural energies,
//! uniaxial/biaxial/shear loading, data generation and training.

// `!(x > 0.0)` is the NaN-rejecting guard used throughout; index loops mirror
// the tensor notation they implement.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod autodiff;
pub mod datagen;
pub mod error;
pub mod kinematics;
pub mod linalg;
pub mod loading;
pub mod models;
pub mod networks;
pub mod training;

pub use error::{AutodiffError, DataError, KinematicsError, LoadingError, ModelError, NetworkError, TrainError};
pub use kinematics::{spectral, DefGrad, SpectralState};
pub use models::{EnergyModel, ModelKind};
