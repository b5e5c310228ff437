//! Numerical laboratory for sub-Riemannian shortest paths and the regularity of
//! their controls: moduli of continuity, Besov seminorms, a discrete primal/dual
//! pair for the K-functional, the endpoint variation, and Fourier diagnostics.

pub mod convex;
pub mod error;
pub mod geodesics;
pub mod interpdual;
pub mod io;
pub mod optim;
pub mod poly;
pub mod regularity;
pub mod spectral;
pub mod srgeom;
pub mod stats;
pub mod variation;

pub use error::{Result, SrError};
pub use geodesics::{SolverOptions, ShortestPath, Trajectory, VariationalFlow};
pub use poly::{PolyField, Polynomial};
pub use srgeom::{BoxDomain, JacobianMode, SrStructure};
