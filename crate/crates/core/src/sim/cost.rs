//! Roofline cost of one synchronous decode step.

use alloc::collections::BTreeSet;

use crate::budget::HardwareProfile;
use crate::tree::{NodeId, SearchTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum CostError {
    #[error("decode step over an empty batch")]
    EmptyBatch,
}

/// One sequence in the decode batch: the node being generated in the tree
/// identified by `key`.
#[derive(Debug, Clone, Copy)]
pub struct BatchMember<'a> {
    pub key: u32,
    pub tree: &'a SearchTree,
    pub node: NodeId,
}

/// KV tokens read in one step. Each tree node's tokens, and each tree's
/// prompt, count once however many members descend from them. The tokens a
/// member is currently producing are not counted.
pub fn unique_kv_tokens(batch: &[BatchMember<'_>]) -> u64 {
    let mut seen: BTreeSet<(u32, NodeId)> = BTreeSet::new();
    let mut prompts: BTreeSet<u32> = BTreeSet::new();
    let mut tokens = 0u64;
    for m in batch {
        if prompts.insert(m.key) {
            tokens += m.tree.prompt_tokens as u64;
        }
        let mut cur = m.tree.node(m.node).parent;
        while let Some(id) = cur {
            if !seen.insert((m.key, id)) {
                break;
            }
            let n = m.tree.node(id);
            tokens += n.token_len as u64;
            cur = n.parent;
        }
    }
    tokens
}

pub fn compute_time(batch_len: usize, hw: &HardwareProfile) -> f64 {
    batch_len as f64 * hw.flops_per_token / hw.peak_compute
}

pub fn memory_time(kv_tokens: u64, hw: &HardwareProfile) -> f64 {
    (hw.weight_bytes + kv_tokens as f64 * hw.kv_bytes_per_token) / hw.mem_bandwidth
}

pub fn step_latency(batch: &[BatchMember<'_>], hw: &HardwareProfile) -> Result<f64, CostError> {
    if batch.is_empty() {
        return Err(CostError::EmptyBatch);
    }
    let c = compute_time(batch.len(), hw);
    let m = memory_time(unique_kv_tokens(batch), hw);
    Ok(c.max(m))
}
