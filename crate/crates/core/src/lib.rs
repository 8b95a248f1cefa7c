//! Ptychographic imaging engine: forward simulation of diffraction data under
//! a realistic camera noise model, and maximum-likelihood reconstruction of
//! complex object and probe fields under Poisson, Gaussian, or mixed
//! Poisson-Gaussian statistics.

pub mod dataset;
pub mod error;
pub mod field;
pub mod forward;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod noise;
pub mod propagation;
pub mod scan;
pub mod scene;
pub mod solver;
pub mod sweep;

pub use error::{Error, Result};
pub use field::{ComplexField, RealField};
