//! Minimal rank-4 tensor engine with reverse-mode gradients.
//!
//! Everything is double precision. Forward operators are pure functions over
//! [`Tensor`]; [`Graph`] records them so a scalar loss can be differentiated
//! with respect to any leaf. Convolution kernels live in [`conv`] and are
//! shared between the forward ops and their adjoints.

pub mod conv;
pub mod gradcheck;
pub mod graph;
pub mod tensor;

pub use conv::{ConvSpec, Padding};
pub use gradcheck::grad_check;
pub use graph::{Graph, NodeId};
pub use tensor::Tensor;
