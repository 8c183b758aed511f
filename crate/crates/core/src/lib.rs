//! Differentiable XPBD cloth swatches and inverse material estimation.
//!
//! Units are CGS throughout: cm, g, s, dyn.

pub mod descriptor;
pub mod error;
pub mod estimate;
pub mod material;
pub mod math;
pub mod mesh;
pub mod rng;
pub mod scenario;
pub mod sensitivity;
pub mod spectral;
pub mod xpbd;

pub use error::{Error, Result};
pub use material::{EngineeringParams, MaterialParams};
pub use mesh::GridMesh;
