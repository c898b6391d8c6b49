//! Two-stream video classification with spatial-temporal attention,
//! static-motion collaborative learning and per-category adaptive fusion,
//! operating on per-frame activation grids.

pub mod collab;
pub mod data;
pub mod error;
pub mod fusion;
pub mod gradsuite;
pub mod pipeline;
pub mod spatial;
pub mod temporal;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Graph, Tensor, Var};
