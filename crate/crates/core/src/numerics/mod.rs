//! Dense-tensor arithmetic with reverse-mode automatic differentiation,
//! the Adam optimizer, gradient checking, and the checkpoint container.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod param;
pub mod tensor;

pub use adam::{Adam, AdamConfig, AdamState, LrSchedule};
pub use gradcheck::{finite_difference_check, finite_difference_check_sampled, GradCheckReport};
pub use graph::{Graph, NodeId, RowMasks, NEG_SENTINEL};
pub use param::{Attached, ParamId, ParamStore};
pub use tensor::Tensor;
