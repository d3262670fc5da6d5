//! Numeric core: tape-based reverse-mode differentiation and Adam.
//!
//! All tensors are 64-bit; the model is small enough that precision is cheap
//! and it keeps the finite-difference checks sharp.

pub mod adam;
pub mod gradcheck;
pub mod math;
pub mod tape;

pub use adam::{AdamState, ParamUpdate};
pub use tape::{Tape, TensorId, CE_CLAMP};
