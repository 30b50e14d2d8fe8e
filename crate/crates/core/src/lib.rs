//! Reconstruction of absorption inclusions in diffusive optical tomography
//! from boundary Cauchy data.
//!
//! The crate contains the full pipeline:
//!
//! * [`geometry`]: Cartesian grids, random level-set inclusions and masks.
//! * [`pde`]: finite-difference solves of `-Δu + μu = 0` with Neumann and
//!   Dirichlet data, the background Neumann-to-Dirichlet map and the
//!   point-source problem.
//! * [`data`]: boundary flux bases, noise, limited-data interpolation and the
//!   Cauchy difference functions fed to the network.
//! * [`dsm`]: the classical direct sampling index, probing functions and the
//!   Picard-series spectral diagnostic.
//! * [`nn`] and [`model`]: a small CPU convolutional network engine and the
//!   encoder/decoder that learns the index functional.
//! * [`store`]: binary dataset/model files and field exports.

pub mod data;
pub mod dsm;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod model;
pub mod nn;
pub mod pde;
pub mod store;

pub use data::{CauchyPair, Sample, SampleConfig};
pub use error::{Error, ErrorClass, Result};
pub use geometry::{Grid, InclusionSet, Primitive, ScalarField, Scenario};
pub use model::{Metrics, Network, NetworkConfig};
pub use pde::{BoundaryTrace, CoefficientField};
