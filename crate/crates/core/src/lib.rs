//! Learning conserved quantities from trajectory data and enforcing them in
//! learned dynamics.
//!
//! The pipeline has two stages. A scalar (or low-dimensional) invariant map
//! `H` is trained contrastively with the square ratio loss, using the
//! trajectory index as the class label ([`conservation`]). A dynamics network
//! `f` is then trained through a projection layer that removes the component
//! of `f(x)` along `∇H(x)`, so the learned vector field keeps `H` constant
//! ([`dynamics`]). High-dimensional systems are first compressed with an
//! autoencoder and lifted by the chain rule ([`latent`]).
//!
//! Everything is fp64, deterministic per seed, and built on a small
//! reverse-mode differentiation tape ([`autodiff`]).

pub mod autodiff;
pub mod conservation;
pub mod dynamics;
mod error;
pub mod exec;
pub mod experiment;
pub mod io;
pub mod latent;
pub mod linalg;
pub mod rng;
pub mod simeval;
pub mod systems;

pub use error::{Error, Result};
