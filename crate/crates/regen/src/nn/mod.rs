//! Minimal reverse-mode autodiff: tensors, a gradient tape, parameter
//! containers, AdamW, initialization, and binary checkpoints. Built for
//! clarity and desk-scale models over raw speed; every op carries its own
//! finite-difference gradient test.

pub mod checkpoint;
pub mod gradcheck;
pub mod init;
mod ops_conv;
mod ops_linear;
mod ops_shape;
mod ops_spectral;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use params::{check_nonzero_rows, format_param_count, weight_norm, BoundParams, GradientSet, ParamSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
