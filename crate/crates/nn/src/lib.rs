//! A compact reverse-mode autodiff engine for the convolutional encoders,
//! policy heads and critics of the benchmark.
//!
//! The engine is generic over `f32` (training) and `f64` (gradient checks).
//! Convolutions run through im2col and a blocked GEMM, which makes every
//! output element's reduction order independent of the batch size.

pub mod conv;
pub mod elem;
pub mod graph;
pub mod init;
pub mod io;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tensor;

pub use elem::Elem;
pub use graph::{Gradients, Graph, Var};
pub use layers::{BatchNorm, Conv2d, LayerNorm, Linear, Mlp};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamKind, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("archive format error: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(String),
}
