//! Operator-graph IR for computational imaging forward models.

pub mod calibration;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod primitives;
pub mod protocol;
pub mod registry;
pub mod rng;
pub mod runbundle;
pub mod solvers;
pub mod templates;
pub mod tensor;
pub mod triad;
pub mod tensor_io;

pub use error::{Error, Result};
pub use graph::{compile, parse_spec, GraphOperator, GraphSpec};
pub use registry::Registry;
pub use tensor::{Dtype, Tensor};
