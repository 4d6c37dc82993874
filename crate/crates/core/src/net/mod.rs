//! Network descriptions, stochastic wiring and execution.

mod block;
mod connectivity;
mod network;
mod spec;

pub use block::{Block, ConvUnit, PreActBody, SecondConv};
pub use connectivity::{edge_allowed, gate_weights, sample_connectivity};
pub use network::{build_network, NetOutput, Network};
pub use spec::{BlockSpec, Downsampling, EdgeGate, NetOptions, NetworkSpec, StagePlan, Structure, Version};
