//! Multifold cross-modal contrastive learning on a small reverse-mode
//! autodiff engine.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar for the common cases.

pub mod cli;
pub mod error;
pub mod evalkit;
pub mod grouping;
pub mod losses;
pub mod scalar;
pub mod synthdata;
pub mod teacher;
pub mod tensorgrad;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = tensorgrad::Tensor<f64>;
pub type Tape = tensorgrad::Tape<f64>;
pub type Var<'t> = tensorgrad::Var<'t, f64>;
pub type EncoderPair = train::EncoderPair<f64>;
pub type TeacherPair = teacher::TeacherPair<f64>;

pub type Tensor32 = tensorgrad::Tensor<f32>;
pub type Tape32 = tensorgrad::Tape<f32>;
pub type Var32<'t> = tensorgrad::Var<'t, f32>;
pub type EncoderPair32 = train::EncoderPair<f32>;
pub type TeacherPair32 = teacher::TeacherPair<f32>;
