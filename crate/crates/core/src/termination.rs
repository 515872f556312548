//! Confidence accounting over answer hypotheses and the early stopping rule.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::tree::{NodeId, NodeStatus, SearchTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum TerminationError {
    #[error("answer weight must be non-negative")]
    NegativeWeight,
    #[error("no answers recorded")]
    EmptyTally,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub count: u32,
    pub weight_sum: f64,
}

impl Hypothesis {
    pub fn avg_weight(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.weight_sum / self.count as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnswerTally {
    pub labels: BTreeMap<String, Hypothesis>,
    pub n_total: u32,
}

impl AnswerTally {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_answer(&mut self, label: &str, weight: f64) -> Result<(), TerminationError> {
        if !(weight >= 0.0) {
            return Err(TerminationError::NegativeWeight);
        }
        let h = self.labels.entry(String::from(label)).or_default();
        h.count += 1;
        h.weight_sum += weight;
        self.n_total += 1;
        Ok(())
    }

    pub fn confidence(&self, label: &str) -> f64 {
        self.labels.get(label).map_or(0.0, |h| h.weight_sum)
    }

    /// Hypotheses by descending weight sum; equal sums keep label order.
    pub fn ranked(&self) -> Vec<(&str, Hypothesis)> {
        let mut v: Vec<(&str, Hypothesis)> =
            self.labels.iter().map(|(k, h)| (k.as_str(), *h)).collect();
        // stable sort over the BTreeMap order gives the lexicographic tie rule
        v.sort_by(|a, b| b.1.weight_sum.total_cmp(&a.1.weight_sum));
        v
    }

    /// Weighted majority vote.
    pub fn leader(&self) -> Option<&str> {
        self.ranked().first().map(|(l, _)| *l)
    }
}

/// Default answer threshold: a majority of the answer budget.
pub fn default_t(target_answers: u32) -> u32 {
    ((target_answers as u64 * 3).div_ceil(5)).max(1) as u32
}

pub fn should_terminate(tally: &AnswerTally, t: u32, alpha: f64) -> bool {
    if tally.n_total < t {
        return false;
    }
    let ranked = tally.ranked();
    match ranked.as_slice() {
        [] => false,
        [_] => true,
        [(_, first), (_, second), ..] => {
            first.weight_sum - second.weight_sum > alpha * second.avg_weight()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminationOutcome {
    pub answer: String,
    /// Every node that moved to `Pruned`, in id order.
    pub pruned: Vec<NodeId>,
}

impl TerminationOutcome {
    pub fn pruned_count(&self) -> usize {
        self.pruned.len()
    }
}

/// Settle the vote and quiesce the tree. Work attached to the returned nodes
/// has to be cancelled by the caller.
pub fn on_terminate(
    tree: &mut SearchTree,
    tally: &AnswerTally,
) -> Result<TerminationOutcome, TerminationError> {
    let answer = String::from(tally.leader().ok_or(TerminationError::EmptyTally)?);
    Ok(TerminationOutcome {
        answer,
        pruned: quiesce(tree),
    })
}

/// Prune everything still pending, in flight or speculative.
pub fn quiesce(tree: &mut SearchTree) -> Vec<NodeId> {
    let live: Vec<NodeId> = tree
        .nodes()
        .filter(|n| n.status.is_in_flight() || n.status == NodeStatus::SpeculativeDone)
        .map(|n| n.id)
        .collect();
    let before: Vec<bool> = tree.nodes().map(|n| n.status == NodeStatus::Pruned).collect();
    for id in live {
        let _ = tree.prune_subtree(id);
    }
    tree.nodes()
        .filter(|n| n.status == NodeStatus::Pruned && !before[n.id.index()])
        .map(|n| n.id)
        .collect()
}
