//! Speculative exploration for tree-of-thought search.
//!
//! The crate is `no_std` (with `alloc`). It holds the search tree, the
//! selection policies, speculative selection, budget allocation, early
//! termination and a deterministic discrete-event model of a batched
//! inference server that drives all of them.

#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod budget;
pub mod executor;
pub mod metrics;
pub mod policy;
pub mod sim;
pub mod speculation;
pub mod termination;
pub mod tree;

pub use budget::{allocate_budgets, roofline_batch, roofline_k_total, HardwareProfile, QueryState};
pub use policy::{Family, PolicyConfig};
pub use speculation::{SpeculationLedger, SpeculationPlan};
pub use termination::{should_terminate, AnswerTally};
pub use tree::{ExpansionSlot, NodeId, NodeStatus, SearchTree, ThoughtNode};
