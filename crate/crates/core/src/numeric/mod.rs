//! Minimal dense-tensor engine with reverse-mode differentiation.

pub mod checkpoint;
pub mod gradcheck;
mod kernels;
pub mod params;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, grad_check_many, GradCheckConfig, GradCheckReport, GradChecker, Probe};
pub use params::{ParamId, ParamStore};
pub use tape::{BatchStats, Branches, Gradients, NormMode, Tape, Var, BN_EPS};
pub use tensor::Tensor;
