//! Small reverse-mode differentiation engine over dense `f64` matrices.

mod gradcheck;
mod graph;
mod mlp;
mod params;
mod tensor;

pub use gradcheck::{gradient_check, GradCheckReport};
pub use graph::{Graph, Node, Op, Var};
pub(crate) use graph::sigmoid;
pub use mlp::{Dense, MlpSpec, MlpTrace, Trunk, TrunkTrace};
pub use params::{GradMap, ParamSet};
pub(crate) use params::hex_digest;
pub use tensor::Tensor2;
