//! Pixel-registered vibrotactile texture maps.
//!
//! This crate holds the pure algorithmic half of the pipeline and builds under
//! `#![no_std]` with `alloc`:
//!
//! - [`geometry`]: planar calibration, world to pixel projection and
//!   perspective rectification.
//! - [`scansim`]: a synthetic raster-scan rig (trapezoidal robot sweeps and an
//!   independently clocked accelerometer) used as a ground-truth oracle.
//! - [`alignment`]: cruise-segment extraction, motion line fitting and the
//!   mapping from accelerometer samples to world positions.
//! - [`vibmap`]: intensity transform, 1 mm taxel binning, rasterization,
//!   min-max normalization and map statistics.
//! - [`pipeline`]: the chained session to map build with per-pass fault isolation.
//! - [`protocol`]: the vibrotactile frame codec and the binary wire format.
//! - [`render`]: bilinear UV lookup, depth modulation and the streaming
//!   sample synthesizer used by the server.
//!
//! File formats, sockets and the command line live in the `taxelmap` crate.

#![no_std]
#![deny(rust_2018_idioms, unsafe_code)]
// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod alignment;
pub mod geometry;
pub mod grid;
pub mod pipeline;
pub mod protocol;
pub mod render;
pub mod scansim;
pub mod vibmap;

pub use grid::Grid;
