//! Weighted least-squares approximation on plane domains with sampling
//! densities driven by the inverse Christoffel function.
//!
//! The crate provides: built-in test domains with exact moment oracles
//! ([`geometry`]), graded polynomial spaces orthonormalized either exactly or
//! against discrete samples ([`polyspace`]), evaluation and sampling of the
//! inverse Christoffel function and the optimal measure it induces
//! ([`christoffel`]), the offline/online sampling algorithms with their
//! multilevel and hierarchical variants ([`algorithms`]), weighted
//! least-squares fits with stability safeguards ([`least_squares`]), and
//! a-priori growth bounds and sample-budget calculators ([`bounds`]).

pub mod algorithms;
pub mod bounds;
pub mod christoffel;
pub mod dd;
pub mod error;
pub mod geometry;
pub mod hexfloat;
pub mod least_squares;
pub mod polyspace;
pub mod qr;
pub mod quadrature;

pub use error::{Error, Result};
pub use geometry::{BuiltinDomain, Domain};
pub use polyspace::{
    space_dimension, DiscreteInnerProduct, OrthonormalBasis, PolynomialSpace, Provenance,
};
