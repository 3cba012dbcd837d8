//! Guided diffusion over mel spectrograms: a linear-schedule DDPM with
//! classifier-free and gradient-normalized classifier guidance, the mel
//! front-end it generates for, closed-form Gaussian oracles, small
//! hand-differentiated networks, and the file formats that tie them together.

pub mod audiodsp;
pub mod conditioning;
pub mod error;
pub mod guidance;
pub mod models;
pub mod persistence;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod sweep;
pub mod tensor;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{EpsEstimate, Matrix, MelTensor, Shape};
