//! Minimal reverse-mode automatic differentiation over dense 2-D arrays.
//!
//! A [`Tape`] records every operation in creation order; [`Tape::backward`]
//! sweeps it in reverse from a scalar root. Masking for contrastive
//! denominators uses [`MASK_FILL`], which underflows to an exact zero after
//! `exp` in 64-bit arithmetic.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

/// Finite stand-in for −∞ when excluding entries from a softmax.
pub const MASK_FILL: f64 = -1e30;

/// Guard used when L2-normalizing rows.
pub const NORM_EPS: f64 = 1e-12;

#[cfg(test)]
mod tests;
