//! Support library for the `restore` binary: synthetic data, metrics,
//! Adam, the training loop, the scaling benchmark, and PPM image I/O.

pub mod adam;
pub mod bench;
pub mod metrics;
pub mod ppm;
pub mod synth;
pub mod train;
