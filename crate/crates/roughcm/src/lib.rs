//! Taylor approximations of local random center manifolds for rough
//! differential equations.
//!
//! The crate derives the coefficient equations of a polynomial ansatz for the
//! center manifold symbolically ([`invariance`]), solves them as stationary
//! rough differential equations along sampled geometric rough paths
//! ([`stationary`]) and checks the approximation order against a discretized
//! Lyapunov–Perron fixed point ([`manifold`]).

pub mod controlled;
pub mod error;
pub mod gubinelli;
pub mod invariance;
pub mod linalg;
pub mod manifold;
pub mod par;
pub mod pipeline;
pub mod rde;
pub mod roughpath;
pub mod spectral;
pub mod stationary;

pub use controlled::{ControlledPath, D2GNorm};
pub use error::{Error, Result};
pub use roughpath::{Grid, RoughPath};
