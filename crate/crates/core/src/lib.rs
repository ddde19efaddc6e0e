//! CPU-parallel sparse convolution for voxelized 3D point clouds.
//!
//! The engine keeps voxel coordinates bit-packed in a single machine word
//! end to end: quantization, downsampling, kernel-map construction and the
//! query arithmetic all operate on packed values. Kernel maps are built
//! with a grouped one-shot search over sorted packed coordinates and can be
//! laid out for output-stationary, weight-stationary or hybrid dual-dataflow
//! feature computation. A network runner indexes every layer's coordinates
//! and kernel map up front (sequentially or concurrently) and streams the
//! feature steps over them.
//!
//! Brute-force reference implementations live in [`oracle`] and are used by
//! the test suites only; they are deliberately slow and literal.

pub mod coords;
pub mod error;
pub mod features;
pub mod io;
pub mod kmap;
pub mod network;
pub mod oracle;
pub mod synth;
pub mod timing;

pub use error::{Error, Result};
