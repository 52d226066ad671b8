//! Graph networks with a bottlenecked message function, trained on simulated
//! n-body and spring systems, together with the tooling to read physical laws
//! back out of the learned messages.
//!
//! The pipeline is split across these modules:
//!
//! * [`sim`] generates ground-truth trajectories and velocity-update targets.
//! * [`tensor`] is a small dense kernel with a reverse-mode tape.
//! * [`gn`] is the graph network (message MLP, sum pooling, node MLP).
//! * [`train`] fits a graph network with Adam on the L1 loss.
//! * [`analysis`] records messages, fits them linearly against true forces
//!   and runs the body-count generalization sweep.
//! * [`symreg`] is a genetic-programming symbolic regressor with a Pareto
//!   front and an Occam selection rule.

pub mod analysis;
mod error;
pub mod fmt17;
pub mod gn;
pub mod sim;
pub mod symreg;
pub mod tensor;
pub mod train;

pub use analysis::{LinearFitReport, MessageTable, SweepMatrix};
pub use error::{Error, Result};
pub use gn::{GNParams, GraphTopology, ModelConfig, NodeAttrs};
pub use sim::{EnvConfig, ForceLaw, SystemState, TrajectoryDataset};
pub use symreg::{Expr, GPConfig, ParetoFront};
pub use tensor::{Tape, Tensor2, Var};
pub use train::{AdamState, TrainConfig};

/// Version tag written into every file this crate produces.
pub const FORMAT_VERSION: u32 = 1;

/// SplitMix64 finalizer, used to derive independent sub-seeds.
pub fn mix_seed(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
