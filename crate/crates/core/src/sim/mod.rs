//! Discrete-event model of a batched inference server and its workloads.

pub mod clock;
pub mod cost;
pub mod workload;

pub use clock::SimClock;
pub use cost::{step_latency, BatchMember, CostError};
pub use workload::{content, generate_workload, oracle_reward, NodeContent, QuerySpec, RewardOracle, WorkloadSpec};
