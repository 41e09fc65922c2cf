//! Desk-scale deepfake-detection framework.
//!
//! Everything numeric is built in-repo: a tape-based reverse-mode autodiff
//! engine over dense tensors, radix-2 FFTs with magnitude spectra, local
//! binary patterns, the neural layers assembled into three detector
//! architectures, and a training/evaluation loop with plateau stopping.
//!
//! Kernels are generic over [`tensor::Real`]; `f32` is the training default
//! and `f64` backs the gradient-verification suite (see [`verify`]).

pub mod cli;
pub mod data;
pub mod error;
pub mod lbp;
pub mod models;
pub mod nn;
pub mod spectral;
pub mod tensor;
pub mod train;
pub mod verify;
