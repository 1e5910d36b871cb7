//! Unsupervised identification of hyperelastic material laws from full-field
//! displacements and reaction forces, using input-convex neural networks.

pub mod constitutive;
pub mod dual;
pub mod error;
pub mod evaluation;
pub mod fem;
pub mod icnn;
pub mod materials;
pub mod mesh;
pub mod pipeline;
pub mod tensor;
pub mod trainer;

pub use constitutive::{ConstitutiveModel, PlaneResponse};
pub use error::{Error, Result};
