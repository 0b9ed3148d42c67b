//! Differentiable building blocks for a compact multi-label chest X-ray
//! classifier: a tape-based tensor engine, windowed multi-head attention
//! fused in parallel with a learnable ROI + CBAM gating block, a
//! teacher-adapter distillation loss stack, and the training/evaluation
//! harness around them.

pub mod error;
pub mod attention;
pub mod checks;
pub mod distill;
pub mod model;
pub mod mxa;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
