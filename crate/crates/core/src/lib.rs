#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dynamics;
pub mod energy;
pub mod ergodicity;
pub mod error;
pub mod io;
pub mod markov;
pub mod noise;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
pub use spectral::{Grid, Norm, SpectralField};
