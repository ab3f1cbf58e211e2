//! Numerical laboratory for the harmonic crystal with uniformly elliptic
//! random conductances on Z^d, d ≥ 3.
//!
//! The crate is organised bottom-up: [`lattice`] geometry, [`environment`]
//! conductances, [`linalg`] sparse SPD solvers, [`potential`] theory on finite
//! domains, the Gaussian free field in [`gff`], level-set events in
//! [`percolation`], local densities and porous interfaces in [`interfaces`],
//! and scaling experiments in [`homogenization`].

pub mod environment;
pub mod error;
pub mod gff;
pub mod homogenization;
pub mod interfaces;
pub mod lattice;
pub mod percolation;
pub mod linalg;
pub mod potential;
pub mod registry;
pub mod rng;
pub mod stats;
pub mod testfn;

pub use error::{Error, Result};
