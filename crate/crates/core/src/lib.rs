//! Variational bounds on mean thermal dissipation for steady and unsteady
//! advection–diffusion with balanced heat sources and sinks.

pub mod bounds;
pub mod boussinesq;
pub mod error;
pub mod field;
pub mod gallery;
pub mod harness;
pub mod neumann;
pub mod norms;
pub mod optimal;
pub mod spectral;
pub mod transport;

pub use error::{FluxError, Result};
pub use field::{domain_average, l2_inner, project_mean_free, Domain, Grid, ScalarField, VectorField};
