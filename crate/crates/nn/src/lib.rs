//! Float64 neural-network substrate: dense tensors, a reverse-mode autodiff
//! graph that supports higher-order gradients, convolution and transposed
//! convolution layers, batch norm, dropout, and Adam.
//!
//! ```
//! use jepa_nn::{grad, Tensor, Var};
//!
//! let w = Var::leaf(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
//! let loss = w.square().sum();
//! let g = grad(&loss, &[w], false).unwrap();
//! assert_eq!(g[0].value().data(), &[2.0, 4.0]);
//! ```

pub mod error;
pub mod functional;
pub mod jacobian;
pub mod kernels;
pub mod layers;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod var;

pub use error::{NnError, Result};
pub use functional::Mode;
pub use jacobian::jacobian_frobenius_sq;
pub use layers::Ctx;
pub use optim::{clip_grad_norm, Adam};
pub use params::{gradients, Bindings, ParameterSet};
pub use rng::RngState;
pub use tensor::Tensor;
pub use var::{grad, no_grad, Var};
