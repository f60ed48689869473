//! Finetuning, Reptile and first-order MAML expressed as interchangeable
//! outer-update strategies of one gradient-based optimization loop, plus the
//! synthetic task distributions and analysis protocols used to compare them.
//!
//! Layout:
//! - [`numerics`]: dense tensors, a reverse-mode tape, gradient checking, SGD.
//! - [`model`]: body/head partitioned MLP parameters.
//! - [`tasks`]: toy loss landscapes, sine regression, N-way k-shot episodes.
//! - [`metaopt`]: inner adaptation, outer updates, the meta-training loop.
//! - [`experiments`]: toy convergence, head ablation, shot sweep, joint accuracy.
//! - [`io`]: configuration, checkpoints, CSV result tables.

pub mod error;
pub mod experiments;
pub mod io;
pub mod metaopt;
pub mod model;
pub mod numerics;
pub mod tasks;

pub use error::{Error, Result};
pub use metaopt::{Algorithm, AlgorithmSpec};
pub use model::{Activation, LayeredParams, ModelConfig};
pub use numerics::Tensor;
