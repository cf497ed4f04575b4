//! Numerical laboratory for the logarithmic-diffusion gradient flow
//! `∂ₜe^w = Δw + e^w − λ/|Ω|` on a flat torus.
//!
//! Everything is generic over the scalar type through [`Real`]; the aliases
//! at the crate root fix it to `f64`, which is what the solvers are tuned for.

pub mod error;
pub mod flow;
pub mod functionals;
pub mod initial;
pub mod io;
pub mod krylov;
pub mod linops;
pub mod manifold;
pub mod rates;
pub mod scalar;
pub mod stationary;
pub mod torus;

pub use error::{Error, GridError, Result};
pub use scalar::Real;
pub use torus::{Dealias, Field, TorusGrid};

pub type Grid = torus::TorusGrid<f64>;
pub type ScalarField = torus::Field<f64>;
pub type Grid32 = torus::TorusGrid<f32>;
pub type ScalarField32 = torus::Field<f32>;
