//! Graph semantic saliency network: knowledge-graph construction, region
//! proximity prediction, spatial graph attention, a center-biased saliency
//! head and the standard fixation metrics, all on a small tape-based
//! autodiff engine.

pub mod error;
pub mod gradcheck;
pub mod head;
pub mod knowledge;
pub mod metrics;
pub mod model;
pub mod par;
pub mod proposals;
pub mod rng;
pub mod sgat;
pub mod spn;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
