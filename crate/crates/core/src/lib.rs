//! Windowed multi-scale attention for speech sequence models.
//!
//! The crate contains a small `f64` autodiff engine ([`numerics`]), full and
//! windowed multi-head attention ([`attention`]), the sigmoid gate that blends
//! the two ([`gate`]), CTC / focal training objectives ([`loss`]), a
//! stage-structured encoder ([`model`]) and the training, benchmarking and
//! gradient-checking tooling behind the `echomsa` CLI ([`harness`]).

pub mod attention;
pub mod error;
pub mod gate;
pub mod harness;
pub mod layers;
pub mod loss;
pub mod model;
pub mod numerics;

pub use error::{Error, Result};
