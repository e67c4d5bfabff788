//! Forward/backward kernels on raw slices, independent of the tape.

pub mod conv;
pub mod resample;

pub use conv::{ConvGeom, ConvShape, DeconvShape, DepthwiseShape};
