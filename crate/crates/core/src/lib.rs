//! Synthetic speckle-image datasets and a Bayesian encoder-decoder for
//! dense displacement estimation.

pub mod bspline;
pub mod dataset;
pub mod eval;
pub mod grid;
pub mod io;
pub mod net;
pub mod seed;
pub mod speckle;
pub mod warp;

pub use grid::{DisplacementField, Grid, ScalarField};
