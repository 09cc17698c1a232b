//! Numerical laboratory for the spectra of deformed i.i.d. random matrices
//! `A + X`, where `A` is a deterministic deformation and `X` has independent
//! centred entries of variance `1/N`.
//!
//! The crate is organised around the self-consistent (Dyson-type) equation for
//! the Hermitisation of `A + X - z`, the geometry of the limiting spectral
//! support in the complex plane, deformation paths that connect a general
//! model to the Ginibre ensemble, and Monte Carlo experiments that compare
//! finite-`N` samples against the deterministic predictions.

pub mod brown;
pub mod ensembles;
pub mod erf;
pub mod experiments;
pub mod flows;
pub mod mde;
pub mod util;

pub use util::{c64, Error, Result};
