//! Numerical core: split-form DGSEM solver for compressible decaying turbulence,
//! exact DNS-to-LES closure extraction, a from-scratch 3D residual CNN and the
//! data-driven eddy-viscosity LES models built on it.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod basis;
pub mod dgsem;
pub mod dns;
pub mod error;
pub mod fft;
pub mod field;
pub mod filter;
pub mod flux;
pub mod gas;
pub mod les;
pub mod metrics;
pub mod nn;
pub mod time;
pub mod turb;

pub use error::{Error, Result};
