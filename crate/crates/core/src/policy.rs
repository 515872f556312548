//! Baseline tree-of-thought search policies.
//!
//! * UCB selection and mean-value backpropagation (MCTS family).
//! * REBASE softmax width allocation for breadth-first search.
//! * Target selection shared by the pure-DFS (RSTAR) and hybrid (REST) drivers.
//!
//! Selection is written against [`SearchView`] so the same code runs on the
//! live tree and on the copy-on-write statistics overlays used for speculation.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::tree::{ExpansionSlot, NodeId, NodeStatus, SearchTree, TreeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "RSTAR_DFS")]
    RstarDfs,
    #[serde(rename = "REST_HYBRID")]
    RestHybrid,
    #[serde(rename = "REBASE_BFS")]
    RebaseBfs,
}

impl Family {
    pub fn is_dfs(self) -> bool {
        !matches!(self, Family::RebaseBfs)
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::RstarDfs => "RSTAR_DFS",
            Family::RestHybrid => "REST_HYBRID",
            Family::RebaseBfs => "REBASE_BFS",
        }
    }
}

/// Per-depth budget: `default` unless overridden by `per_depth[i]`.
///
/// For DFS families this is the branching limit of a node at depth `i`; for
/// REST it is also the sibling count of one step; for REBASE it is the
/// sampling budget of depth `i` before completed answers are subtracted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthBudget {
    pub default: u32,
    #[serde(default)]
    pub per_depth: Vec<u32>,
}

impl DepthBudget {
    pub fn uniform(b: u32) -> Self {
        Self {
            default: b,
            per_depth: Vec::new(),
        }
    }

    pub fn at(&self, depth: u32) -> u32 {
        self.per_depth
            .get(depth as usize)
            .copied()
            .unwrap_or(self.default)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub family: Family,
    pub exploration_c: f64,
    pub balance_temperature: f64,
    pub depth_budget: DepthBudget,
    pub target_answers: u32,
    pub max_depth: u32,
}

impl PolicyConfig {
    pub fn rstar(rollouts: u32, branching: u32) -> Self {
        Self {
            family: Family::RstarDfs,
            exploration_c: 1.0,
            balance_temperature: 1.0,
            depth_budget: DepthBudget::uniform(branching),
            target_answers: rollouts,
            max_depth: 24,
        }
    }

    pub fn rest(rollouts: u32, siblings: u32) -> Self {
        Self {
            family: Family::RestHybrid,
            depth_budget: DepthBudget::uniform(siblings),
            ..Self::rstar(rollouts, siblings)
        }
    }

    pub fn rebase(width: u32) -> Self {
        Self {
            family: Family::RebaseBfs,
            exploration_c: 1.0,
            balance_temperature: 0.2,
            depth_budget: DepthBudget::uniform(width),
            target_answers: width,
            max_depth: 24,
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.balance_temperature > 0.0) || !self.balance_temperature.is_finite() {
            return Err(PolicyError::InvalidConfig("balance_temperature must be > 0"));
        }
        if !(self.exploration_c >= 0.0) || !self.exploration_c.is_finite() {
            return Err(PolicyError::InvalidConfig("exploration_c must be >= 0"));
        }
        if self.depth_budget.default == 0 || self.depth_budget.per_depth.contains(&0) {
            return Err(PolicyError::InvalidConfig("depth_budget entries must be >= 1"));
        }
        if self.target_answers == 0 {
            return Err(PolicyError::InvalidConfig("target_answers must be >= 1"));
        }
        if self.max_depth == 0 {
            return Err(PolicyError::InvalidConfig("max_depth must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("UCB needs at least one visit on node and parent")]
    ZeroVisits,
    #[error("node {0} has no selectable children")]
    NoChildren(NodeId),
    #[error("no rewards to allocate over")]
    EmptyRewards,
    #[error("search is complete")]
    SearchComplete,
    #[error("node {0} is not committed")]
    NotCommitted(NodeId),
    #[error("invalid policy config: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// `Q + c * sqrt(ln N(s) / N(s,a))`.
pub fn ucb_score(value: f64, visits_node: u64, visits_parent: u64, c: f64) -> Result<f64, PolicyError> {
    if visits_node == 0 || visits_parent == 0 {
        return Err(PolicyError::ZeroVisits);
    }
    Ok(value + c * libm::sqrt(libm::log(visits_parent as f64) / visits_node as f64))
}

/// Read access to node statistics, overridable by speculation overlays.
pub trait SearchView {
    fn tree(&self) -> &SearchTree;

    fn visits(&self, id: NodeId) -> u64 {
        self.tree().node(id).visits
    }

    fn value(&self, id: NodeId) -> f64 {
        self.tree().node(id).value
    }

    /// Child slots reserved by simulated selections that have no node yet.
    fn reserved_slots(&self, _id: NodeId) -> u32 {
        0
    }
}

impl SearchView for SearchTree {
    fn tree(&self) -> &SearchTree {
        self
    }
}

/// UCB argmax over `candidates` (children of `parent`). Unvisited candidates
/// win first, in id order; otherwise ties go to the lowest id.
pub fn ucb_select_among<V: SearchView + ?Sized>(
    view: &V,
    parent: NodeId,
    candidates: impl IntoIterator<Item = NodeId>,
    c: f64,
) -> Result<NodeId, PolicyError> {
    let mut best: Option<(NodeId, f64)> = None;
    let mut first_unvisited: Option<NodeId> = None;
    let parent_visits = view.visits(parent);
    for id in candidates {
        let n = view.visits(id);
        if n == 0 {
            if first_unvisited.is_none_or(|u| id < u) {
                first_unvisited = Some(id);
            }
            continue;
        }
        let score = ucb_score(view.value(id), n, parent_visits, c)?;
        match best {
            Some((bid, bs)) if score < bs || (score == bs && bid < id) => {}
            _ => best = Some((id, score)),
        }
    }
    first_unvisited
        .or(best.map(|b| b.0))
        .ok_or(PolicyError::NoChildren(parent))
}

/// UCB choice among the live (non-pruned, non-speculative) children of `node`.
pub fn ucb_select(tree: &SearchTree, node: NodeId, c: f64) -> Result<NodeId, PolicyError> {
    tree.get(node)?;
    let live = tree
        .children(node)
        .iter()
        .copied()
        .filter(|&ch| tree.node(ch).status.is_primary());
    ucb_select_among(tree, node, live, c)
}

/// Adds one visit and folds `reward` into the running mean on every node
/// from `leaf` up to the root.
pub fn backpropagate(tree: &mut SearchTree, leaf: NodeId, reward: f64) -> Result<(), PolicyError> {
    let status = tree.get(leaf)?.status;
    if !matches!(status, NodeStatus::Committed | NodeStatus::TerminalAnswer) {
        return Err(PolicyError::NotCommitted(leaf));
    }
    let mut cur = Some(leaf);
    while let Some(id) = cur {
        let node = tree.get_mut(id)?;
        node.visits += 1;
        node.value += (reward - node.value) / node.visits as f64;
        cur = node.parent;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Rounding {
    /// Round each width half away from zero; the sum may miss the budget.
    #[default]
    Nearest,
    /// Largest-remainder apportionment; widths sum to the budget exactly.
    SumPreserving,
}

fn softmax(rewards: &[f64], temperature: f64) -> Vec<f64> {
    // shifting by the max leaves the ratios unchanged
    let max = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = rewards
        .iter()
        .map(|r| libm::exp((r - max) / temperature))
        .collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// REBASE expansion widths: `Round(B * softmax(R / T_b))`.
pub fn rebase_widths(
    rewards: &[f64],
    budget: u32,
    temperature: f64,
    rounding: Rounding,
) -> Result<Vec<u32>, PolicyError> {
    if rewards.is_empty() {
        return Err(PolicyError::EmptyRewards);
    }
    let quotas: Vec<f64> = softmax(rewards, temperature)
        .into_iter()
        .map(|p| p * budget as f64)
        .collect();
    Ok(match rounding {
        Rounding::Nearest => quotas.iter().map(|&q| libm::round(q) as u32).collect(),
        Rounding::SumPreserving => largest_remainder(&quotas, budget),
    })
}

fn largest_remainder(quotas: &[f64], total: u32) -> Vec<u32> {
    let mut widths: Vec<u32> = quotas.iter().map(|&q| libm::floor(q) as u32).collect();
    let assigned: u32 = widths.iter().sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - libm::floor(quotas[a]);
        let rb = quotas[b] - libm::floor(quotas[b]);
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned) as usize) {
        widths[i] += 1;
    }
    widths
}

/// Frontier widths as the REBASE driver uses them: nearest rounding, and if
/// every width rounds to zero the best node (lowest index on ties) gets one.
pub fn rebase_frontier_widths(
    rewards: &[f64],
    budget: u32,
    temperature: f64,
) -> Result<Vec<u32>, PolicyError> {
    let mut widths = rebase_widths(rewards, budget, temperature, Rounding::Nearest)?;
    if budget > 0 && widths.iter().all(|&w| w == 0) {
        let best = rewards
            .iter()
            .enumerate()
            .fold(0, |b, (i, r)| if *r > rewards[b] { i } else { b });
        widths[best] = 1;
    }
    Ok(widths)
}

/// Children a DFS selection step creates at `target.parent`: one for RSTAR,
/// all remaining free slots for REST.
pub fn step_width(cfg: &PolicyConfig, free_slots: u32) -> u32 {
    match cfg.family {
        Family::RestHybrid => free_slots,
        _ => free_slots.min(1),
    }
}

/// Unreserved child slots at `id` under the branching limit.
pub fn free_slots<V: SearchView + ?Sized>(view: &V, cfg: &PolicyConfig, id: NodeId) -> u32 {
    let tree = view.tree();
    let used = tree.primary_child_count(id) + view.reserved_slots(id);
    cfg.depth_budget.at(tree.node(id).depth).saturating_sub(used)
}

/// Marks nodes that a DFS selection may still reach: committed, non-terminal,
/// above the depth limit, and either with a free slot or an open child.
/// Children always carry larger ids than their parents, so one reverse pass suffices.
pub fn open_nodes<V: SearchView + ?Sized>(view: &V, cfg: &PolicyConfig) -> Vec<bool> {
    let tree = view.tree();
    let mut open = alloc::vec![false; tree.len()];
    for node in tree.nodes().collect::<Vec<_>>().into_iter().rev() {
        let expandable = node.status == NodeStatus::Committed
            && node.generated
            && !node.terminal
            && node.depth < cfg.max_depth;
        if !expandable {
            continue;
        }
        open[node.id.index()] = free_slots(view, cfg, node.id) > 0
            || node.children.iter().any(|c| open[c.index()]);
    }
    open
}

/// The next DFS expansion point: descend from the root by UCB until a node
/// with a free slot is found. Returns the first slot of the step.
pub fn select_target<V: SearchView + ?Sized>(view: &V, cfg: &PolicyConfig) -> Option<ExpansionSlot> {
    let open = open_nodes(view, cfg);
    let tree = view.tree();
    let mut cur = tree.root();
    if !open[cur.index()] {
        return None;
    }
    loop {
        if free_slots(view, cfg, cur) > 0 {
            let slot = tree.primary_child_count(cur) + view.reserved_slots(cur);
            return Some(ExpansionSlot::new(cur, slot));
        }
        let candidates = tree
            .children(cur)
            .iter()
            .copied()
            .filter(|c| open[c.index()]);
        cur = ucb_select_among(view, cur, candidates, cfg.exploration_c).ok()?;
    }
}

pub fn answers_found(tree: &SearchTree) -> u32 {
    tree.nodes()
        .filter(|n| n.status == NodeStatus::TerminalAnswer)
        .count() as u32
}

/// The next primary expansion requests for the current tree state.
///
/// DFS families return the step at the UCB-selected node; REBASE expands the
/// tree's frontier by softmax widths, with the depth budget reduced by the
/// answers already found.
pub fn policy_step(tree: &SearchTree, cfg: &PolicyConfig) -> Result<Vec<ExpansionSlot>, PolicyError> {
    let answers = answers_found(tree);
    if answers >= cfg.target_answers {
        return Err(PolicyError::SearchComplete);
    }
    match cfg.family {
        Family::RstarDfs | Family::RestHybrid => {
            let target = select_target(tree, cfg).ok_or(PolicyError::SearchComplete)?;
            let width = step_width(cfg, free_slots(tree, cfg, target.parent));
            Ok((0..width)
                .map(|i| ExpansionSlot::new(target.parent, target.slot + i))
                .collect())
        }
        Family::RebaseBfs => {
            let expandable: Vec<NodeId> = tree
                .frontier
                .iter()
                .copied()
                .filter(|&n| {
                    let node = tree.node(n);
                    !node.terminal && node.depth < cfg.max_depth && node.status != NodeStatus::Pruned
                })
                .collect();
            let depth = match expandable.first() {
                Some(&n) => tree.node(n).depth,
                None => return Err(PolicyError::SearchComplete),
            };
            let budget = cfg.depth_budget.at(depth).saturating_sub(answers);
            if budget == 0 {
                return Err(PolicyError::SearchComplete);
            }
            let rewards: Vec<f64> = expandable
                .iter()
                .map(|&n| tree.node(n).reward.unwrap_or(0.0))
                .collect();
            let widths = rebase_frontier_widths(&rewards, budget, cfg.balance_temperature)?;
            Ok(expandable
                .iter()
                .zip(widths)
                .flat_map(|(&n, w)| (0..w).map(move |s| ExpansionSlot::new(n, s)))
                .collect())
        }
    }
}
