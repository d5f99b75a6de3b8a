//! Dense tensors, reverse-mode gradients, Adam, and least squares.

pub mod adam;
pub mod gradcheck;
pub mod linalg;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use adam::{clip_global_norm, AdamConfig, AdamState};
pub use gradcheck::{gradcheck, gradcheck_with, GradcheckOptions, GradcheckReport, Stencil};
pub use linalg::{lstsq_koopman, lstsq_map, pinv};
pub use params::{Bound, ParamId, ParamSet};
pub use rng::Rng;
pub use tape::{Gradients, Graph, Var};
pub use tensor::{matmul, matpow, Tensor};
