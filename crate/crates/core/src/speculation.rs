//! Intra-query speculative branch selection.
//!
//! DFS families predict the next `k` primary selections by replaying the
//! policy on a statistics overlay of the live tree. Every simulated pick bumps
//! visit counts along its path and reserves the slots it would consume, so the
//! following pick is conditioned on it. Targets already being speculated are
//! skipped; finished ones first fold their stored reward into the overlay.
//!
//! BFS families hand idle slots at the reward barrier to nodes that already
//! finished, widths drawn from the same softmax the baseline uses, and prune
//! whatever the real frontier expansion does not confirm.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::policy::{self, free_slots, step_width, PolicyConfig, Rounding, SearchView};
use crate::tree::{ExpansionSlot, NodeId, SearchTree};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SpeculationError {
    #[error("no expandable node in the snapshot")]
    NothingExpandable,
    #[error("no outstanding speculation at {0:?}")]
    UnknownSpeculation(ExpansionSlot),
}

/// Copy-on-write `(value, visits)` overlay over a shared tree, plus slot
/// reservations for picks that have no node yet.
#[derive(Debug, Clone)]
pub struct SimulatedStats<'a> {
    tree: &'a SearchTree,
    visits: BTreeMap<NodeId, u64>,
    values: BTreeMap<NodeId, f64>,
    reserved: BTreeMap<NodeId, u32>,
}

impl<'a> SimulatedStats<'a> {
    pub fn new(tree: &'a SearchTree) -> Self {
        Self {
            tree,
            visits: BTreeMap::new(),
            values: BTreeMap::new(),
            reserved: BTreeMap::new(),
        }
    }

    pub fn reserve(&mut self, node: NodeId, slots: u32) {
        *self.reserved.entry(node).or_default() += slots;
    }

    /// Visit bump along root..=node without touching values.
    pub fn increment_visits(&mut self, node: NodeId) {
        for n in self.tree.path(node) {
            let v = self.visits(n);
            self.visits.insert(n, v + 1);
        }
    }

    /// One simulated backpropagation of `reward` along root..=node.
    pub fn apply_reward(&mut self, node: NodeId, reward: f64) {
        for n in self.tree.path(node) {
            let v = self.visits(n) + 1;
            let q = self.value(n);
            self.visits.insert(n, v);
            self.values.insert(n, q + (reward - q) / v as f64);
        }
    }
}

impl SearchView for SimulatedStats<'_> {
    fn tree(&self) -> &SearchTree {
        self.tree
    }

    fn visits(&self, id: NodeId) -> u64 {
        self.visits
            .get(&id)
            .copied()
            .unwrap_or_else(|| self.tree.node(id).visits)
    }

    fn value(&self, id: NodeId) -> f64 {
        self.values
            .get(&id)
            .copied()
            .unwrap_or_else(|| self.tree.node(id).value)
    }

    fn reserved_slots(&self, id: NodeId) -> u32 {
        self.reserved.get(&id).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanTarget {
    pub target: ExpansionSlot,
    /// Children the step creates starting at `target.slot`.
    pub width: u32,
    /// 1-based position in the simulated selection sequence.
    pub predicted_distance: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeculationPlan {
    pub targets: Vec<PlanTarget>,
    pub created_at: f64,
}

impl SpeculationPlan {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Outstanding and finished speculation for one query, plus hit statistics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpeculationLedger {
    pub active_expansions: BTreeSet<ExpansionSlot>,
    pub completed_speculations: BTreeMap<ExpansionSlot, f64>,
    /// Issued predictions awaiting an outcome, with their predicted distance.
    pub planned: BTreeMap<ExpansionSlot, u32>,
    pub hits_by_distance: BTreeMap<u32, u64>,
    pub misses_by_distance: BTreeMap<u32, u64>,
    pub misses: u64,
}

impl SpeculationLedger {
    pub fn is_outstanding(&self, slot: &ExpansionSlot) -> bool {
        self.active_expansions.contains(slot) || self.completed_speculations.contains_key(slot)
    }

    /// Registers an issued prediction.
    pub fn track(&mut self, slot: ExpansionSlot, distance: u32) {
        self.active_expansions.insert(slot);
        self.planned.insert(slot, distance);
    }

    /// Moves a speculation from in-flight to finished with its stored reward.
    pub fn complete(&mut self, slot: ExpansionSlot, reward: f64) {
        if self.active_expansions.remove(&slot) {
            self.completed_speculations.insert(slot, reward);
        }
    }

    pub fn record_outcome(
        &mut self,
        slot: ExpansionSlot,
        hit: bool,
        distance: u32,
    ) -> Result<(), SpeculationError> {
        if self.planned.remove(&slot).is_none() {
            return Err(SpeculationError::UnknownSpeculation(slot));
        }
        self.active_expansions.remove(&slot);
        self.completed_speculations.remove(&slot);
        if hit {
            *self.hits_by_distance.entry(distance).or_default() += 1;
        } else {
            *self.misses_by_distance.entry(distance).or_default() += 1;
            self.misses += 1;
        }
        Ok(())
    }

    /// Drops bookkeeping for a slot without scoring it.
    pub fn forget(&mut self, slot: &ExpansionSlot) {
        self.active_expansions.remove(slot);
        self.completed_speculations.remove(slot);
    }
}

/// The expansion the primary policy would pick next on this view.
pub fn simulate_next<V: SearchView + ?Sized>(
    view: &V,
    cfg: &PolicyConfig,
) -> Result<ExpansionSlot, SpeculationError> {
    policy::select_target(view, cfg).ok_or(SpeculationError::NothingExpandable)
}

/// Predicts up to `k` future primary selections (DFS families).
pub fn dfs_speculative_select(
    tree: &SearchTree,
    ledger: &SpeculationLedger,
    k: u32,
    cfg: &PolicyConfig,
    now: f64,
) -> SpeculationPlan {
    plan_dfs(SimulatedStats::new(tree), ledger, k, cfg, now)
}

/// [`dfs_speculative_select`] on a caller-prepared overlay, e.g. one that
/// already counts a rollout still in flight. `predicted_distance` is the
/// position in the simulated selection sequence, outstanding picks included.
pub fn plan_dfs(
    mut sim: SimulatedStats<'_>,
    ledger: &SpeculationLedger,
    k: u32,
    cfg: &PolicyConfig,
    now: f64,
) -> SpeculationPlan {
    let mut targets = Vec::new();
    let mut position = 0;
    'outer: for _ in 0..k {
        let mut pick = match simulate_next(&sim, cfg) {
            Ok(p) => p,
            Err(_) => break,
        };
        position += 1;
        while ledger.is_outstanding(&pick) {
            if let Some(&reward) = ledger.completed_speculations.get(&pick) {
                sim.apply_reward(pick.parent, reward);
            }
            let width = step_width(cfg, free_slots(&sim, cfg, pick.parent));
            sim.reserve(pick.parent, width.max(1));
            pick = match simulate_next(&sim, cfg) {
                Ok(p) => p,
                Err(_) => break 'outer,
            };
            position += 1;
        }
        let width = step_width(cfg, free_slots(&sim, cfg, pick.parent));
        targets.push(PlanTarget {
            target: pick,
            width,
            predicted_distance: position,
        });
        sim.increment_visits(pick.parent);
        sim.reserve(pick.parent, width);
    }
    SpeculationPlan {
        targets,
        created_at: now,
    }
}

/// Frontier entry for BFS allocation: `(node, reward, finished)`.
pub type FrontierStatus = (NodeId, f64, bool);

/// Speculative widths for the finished part of a BFS frontier. The budget is
/// the number of finished nodes, split by the policy's softmax with
/// largest-remainder rounding so it is consumed exactly.
pub fn bfs_speculative_allocate(frontier: &[FrontierStatus], cfg: &PolicyConfig) -> Vec<(NodeId, u32)> {
    let finished: Vec<(NodeId, f64)> = frontier
        .iter()
        .filter(|f| f.2)
        .map(|f| (f.0, f.1))
        .collect();
    if finished.is_empty() {
        return Vec::new();
    }
    let rewards: Vec<f64> = finished.iter().map(|f| f.1).collect();
    let widths = policy::rebase_widths(
        &rewards,
        finished.len() as u32,
        cfg.balance_temperature,
        Rounding::SumPreserving,
    )
    .expect("nonempty rewards");
    finished.iter().map(|f| f.0).zip(widths).collect()
}

/// Splits predictions into those the real frontier expansion also issued
/// (matched by parent and slot) and those it did not.
pub fn verify_bfs_speculation(
    predicted: &[ExpansionSlot],
    actual: &[ExpansionSlot],
) -> (Vec<ExpansionSlot>, Vec<ExpansionSlot>) {
    let actual: BTreeSet<&ExpansionSlot> = actual.iter().collect();
    predicted.iter().partition(|p| actual.contains(p))
}
