//! Acoustic scattering control with a latent wave surrogate.
//!
//! The crate contains the 2D free-field environment ([`acoustic_env`]), the 1D
//! latent wave dynamics with a trainable absorbing layer ([`latent_dynamics`],
//! [`pml`]), the encoders mapping observations and designs into latent
//! conditions ([`encoders`]), discrete-adjoint training ([`training`]) and
//! random-shooting model-predictive control ([`mpc`]).

// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acoustic_env;
pub mod encoders;
pub mod error;
pub mod field_grid;
pub mod latent_dynamics;
pub mod mpc;
pub mod pml;
pub mod storage;
pub mod training;

pub use error::{Error, Result};
