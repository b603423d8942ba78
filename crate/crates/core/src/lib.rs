//! Optimal transport maps as gradients of input convex neural networks.
//!
//! The network potential `u` is trained so that `det D²u = f / g(∇u)` on
//! collocation points inside the source domain, while a discrete two-sided
//! nearest-neighbour loss pushes `∇u(∂X)` onto `∂Y`. Convexity of `u` is
//! structural (nonnegative hidden weights, convex increasing activation),
//! so `∇u` is a Brenier map candidate at every iterate.

pub mod analytic_maps;
pub mod autodiff;
pub mod batch;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod densities;
pub mod domains;
pub mod icnn;
pub mod io;
pub mod loss;
pub mod optim;
pub mod training;
pub mod seed;

pub use error::{Error, Result};
