//! Certified H2 performance bounds for homogeneous multi-agent systems that
//! communicate over arbitrarily switching undirected graphs with Bernoulli
//! packet loss.
//!
//! The crate is `no_std` (it needs `alloc`) and has no IO. Modules:
//!
//! - [`graphs`]: graphs, Laplacians, spectra, loss masks and switching
//!   indices
//! - [`model`]: decomposable jump-linear agent model and mode enumeration
//! - [`sdp`]: dense barrier solver for small LMI problems
//! - [`lmi`]: the mode-enumerated and the agent-count-independent H2
//!   analysis LMIs, certificates and their lifting check
//! - [`montecarlo`]: impulse-response simulation for empirical H2 estimates
//! - [`oracles`]: brute-force and closed-form reference computations
//!
//! The companion `swmas` crate carries the text formats and the CLI.

#![no_std]

extern crate alloc;

pub mod graphs;
pub mod linalg;
pub mod lmi;
pub mod model;
pub mod montecarlo;
pub mod oracles;
pub mod sdp;

pub use graphs::{Edge, EdgeIndexer, Graph, GraphError, GraphFamily, LossMask, SwitchingIndex};
pub use linalg::Matrix;
pub use lmi::{BoundInstance, LmiCertificate, LmiError};
pub use model::{DecomposableMatrices, ModelError, SwitchedMas};
pub use montecarlo::{McConfig, McEstimate, SwitchingSequence};
