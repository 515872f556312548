//! Search-tree data model: node identity, status lifecycle and prefix accounting.
//!
//! Nodes are never removed. Pruning tombstones a node (status [`NodeStatus::Pruned`])
//! so that wasted work stays attributable after the fact.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

/// Tree-local node identifier. Allocated monotonically, never reused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    #[inline]
    pub const fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// A child position under a parent. Content in the simulator is keyed by the
/// slot path, so two expansions of the same slot are the same thought.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ExpansionSlot {
    pub parent: NodeId,
    pub slot: u32,
}

impl ExpansionSlot {
    pub const fn new(parent: NodeId, slot: u32) -> Self {
        Self { parent, slot }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeStatus {
    PendingExpansion,
    Expanding,
    AwaitingReward,
    Committed,
    Speculative,
    SpeculativeDone,
    Pruned,
    TerminalAnswer,
}

impl NodeStatus {
    /// Legal lifecycle edges. `Pruned` is reachable from every live state.
    pub fn can_transition_to(self, next: NodeStatus) -> bool {
        use NodeStatus::*;
        match (self, next) {
            (Pruned, _) => false,
            (_, Pruned) => true,
            (PendingExpansion, Expanding)
            | (Expanding, AwaitingReward)
            | (AwaitingReward, Committed)
            | (AwaitingReward, TerminalAnswer)
            | (Speculative, SpeculativeDone)
            | (Speculative, Expanding)
            | (SpeculativeDone, Committed)
            | (Committed, TerminalAnswer) => true,
            _ => false,
        }
    }

    /// Part of the primary search (as opposed to speculative or dead).
    pub fn is_primary(self) -> bool {
        matches!(
            self,
            NodeStatus::Expanding
                | NodeStatus::AwaitingReward
                | NodeStatus::Committed
                | NodeStatus::TerminalAnswer
        )
    }

    pub fn is_speculative(self) -> bool {
        matches!(self, NodeStatus::Speculative | NodeStatus::SpeculativeDone)
    }

    /// Work is still outstanding for this node.
    pub fn is_in_flight(self) -> bool {
        matches!(
            self,
            NodeStatus::PendingExpansion
                | NodeStatus::Expanding
                | NodeStatus::AwaitingReward
                | NodeStatus::Speculative
        )
    }
}

impl fmt::Display for NodeStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThoughtNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub slot: u32,
    pub depth: u32,
    pub token_len: u32,
    /// Process reward from the reward model, once it has been delivered.
    pub reward: Option<f64>,
    /// Running mean of rewards backpropagated through this node.
    pub value: f64,
    pub visits: u64,
    pub status: NodeStatus,
    /// The step produced a final answer.
    pub terminal: bool,
    /// Generation finished (content known), independent of reward delivery.
    pub generated: bool,
    /// Issued as speculative work, even if later promoted.
    pub speculative_origin: bool,
    pub answer_label: Option<String>,
    pub answer_weight: Option<f64>,
    pub children: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommittedNode {
    pub path: Vec<u32>,
    pub token_len: u32,
    pub reward: Option<f64>,
    pub visits: u64,
    pub value: f64,
    pub status: NodeStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TreeError {
    #[error("unknown parent {0}")]
    UnknownParent(NodeId),
    #[error("parent {0} is pruned")]
    ParentPruned(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} is not speculative")]
    NotSpeculative(NodeId),
    #[error("illegal transition {from} -> {to} on {node}")]
    IllegalTransition {
        node: NodeId,
        from: NodeStatus,
        to: NodeStatus,
    },
    #[error("token length must be positive")]
    ZeroTokens,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTree {
    nodes: Vec<ThoughtNode>,
    /// Prompt tokens charged to the root's KV state.
    pub prompt_tokens: u32,
    /// Current BFS frontier, maintained by breadth-first drivers.
    pub frontier: Vec<NodeId>,
}

impl SearchTree {
    /// A fresh tree whose root is already committed (the prompt).
    pub fn new(prompt_tokens: u32) -> Self {
        let root = ThoughtNode {
            id: NodeId::ROOT,
            parent: None,
            slot: 0,
            depth: 0,
            token_len: 0,
            reward: None,
            value: 0.0,
            visits: 0,
            status: NodeStatus::Committed,
            terminal: false,
            generated: true,
            speculative_origin: false,
            answer_label: None,
            answer_weight: None,
            children: Vec::new(),
        };
        Self {
            nodes: alloc::vec![root],
            prompt_tokens,
            frontier: alloc::vec![NodeId::ROOT],
        }
    }

    pub fn root(&self) -> NodeId {
        NodeId::ROOT
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id.index() < self.nodes.len()
    }

    pub fn get(&self, id: NodeId) -> Result<&ThoughtNode, TreeError> {
        self.nodes.get(id.index()).ok_or(TreeError::UnknownNode(id))
    }

    pub fn get_mut(&mut self, id: NodeId) -> Result<&mut ThoughtNode, TreeError> {
        self.nodes
            .get_mut(id.index())
            .ok_or(TreeError::UnknownNode(id))
    }

    /// Panicking accessor for ids known to come from this tree.
    pub fn node(&self, id: NodeId) -> &ThoughtNode {
        &self.nodes[id.index()]
    }

    pub fn nodes(&self) -> impl Iterator<Item = &ThoughtNode> + '_ {
        self.nodes.iter()
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.index()].children
    }

    pub fn child_at(&self, parent: NodeId, slot: u32) -> Option<NodeId> {
        self.nodes
            .get(parent.index())?
            .children
            .iter()
            .copied()
            .find(|&c| self.nodes[c.index()].slot == slot)
    }

    /// Next slot index not yet used under `parent`, counting tombstones.
    pub fn next_free_slot(&self, parent: NodeId) -> u32 {
        self.children(parent)
            .iter()
            .map(|&c| self.nodes[c.index()].slot + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn primary_child_count(&self, id: NodeId) -> u32 {
        self.children(id)
            .iter()
            .filter(|&&c| self.nodes[c.index()].status.is_primary())
            .count() as u32
    }

    /// Adds a child at the next free slot.
    pub fn add_node(
        &mut self,
        parent: NodeId,
        token_len: u32,
        speculative: bool,
    ) -> Result<NodeId, TreeError> {
        let slot = self
            .get(parent)
            .map_err(|_| TreeError::UnknownParent(parent))
            .map(|_| self.next_free_slot(parent))?;
        self.add_node_at(parent, slot, token_len, speculative)
    }

    /// Adds a child at an explicit slot. The caller keeps slots unique.
    pub fn add_node_at(
        &mut self,
        parent: NodeId,
        slot: u32,
        token_len: u32,
        speculative: bool,
    ) -> Result<NodeId, TreeError> {
        if token_len == 0 {
            return Err(TreeError::ZeroTokens);
        }
        let p = self
            .nodes
            .get(parent.index())
            .ok_or(TreeError::UnknownParent(parent))?;
        if p.status == NodeStatus::Pruned {
            return Err(TreeError::ParentPruned(parent));
        }
        debug_assert!(self.child_at(parent, slot).is_none(), "slot reused");
        let id = NodeId(self.nodes.len() as u32);
        let depth = p.depth + 1;
        self.nodes.push(ThoughtNode {
            id,
            parent: Some(parent),
            slot,
            depth,
            token_len,
            reward: None,
            value: 0.0,
            visits: 0,
            status: if speculative {
                NodeStatus::Speculative
            } else {
                NodeStatus::Expanding
            },
            terminal: false,
            generated: false,
            speculative_origin: speculative,
            answer_label: None,
            answer_weight: None,
            children: Vec::new(),
        });
        self.nodes[parent.index()].children.push(id);
        Ok(id)
    }

    /// Moves `id` to `next`, rejecting edges outside the lifecycle.
    pub fn transition(&mut self, id: NodeId, next: NodeStatus) -> Result<(), TreeError> {
        let node = self.get_mut(id)?;
        if !node.status.can_transition_to(next) {
            return Err(TreeError::IllegalTransition {
                node: id,
                from: node.status,
                to: next,
            });
        }
        if next == NodeStatus::Pruned {
            // keep the no-live-node-under-a-tombstone rule
            self.prune_subtree(id)?;
        } else {
            node.status = next;
        }
        Ok(())
    }

    /// Hands a speculative node to the primary search. Returns the new status.
    pub fn promote(&mut self, id: NodeId) -> Result<NodeStatus, TreeError> {
        let node = self.get_mut(id)?;
        let next = match node.status {
            NodeStatus::Speculative => NodeStatus::Expanding,
            NodeStatus::SpeculativeDone => NodeStatus::Committed,
            _ => return Err(TreeError::NotSpeculative(id)),
        };
        node.status = next;
        Ok(next)
    }

    /// Tombstones `id` and its whole subtree; returns how many nodes changed.
    pub fn prune_subtree(&mut self, id: NodeId) -> Result<usize, TreeError> {
        self.get(id)?;
        let mut pruned = 0;
        let mut stack = alloc::vec![id];
        while let Some(n) = stack.pop() {
            let node = &mut self.nodes[n.index()];
            if node.status != NodeStatus::Pruned {
                node.status = NodeStatus::Pruned;
                pruned += 1;
            }
            stack.extend(node.children.iter().copied());
        }
        Ok(pruned)
    }

    /// Root-to-node path, root first.
    pub fn path(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = Vec::with_capacity(self.nodes[id.index()].depth as usize + 1);
        let mut cur = Some(id);
        while let Some(n) = cur {
            path.push(n);
            cur = self.nodes[n.index()].parent;
        }
        path.reverse();
        path
    }

    /// Slot indices from the root down to `id`; the content key in simulation.
    /// Committed nodes keyed by slot path, in path order. Two searches that
    /// differ only in speculative work have equal views.
    pub fn committed_view(&self) -> Vec<CommittedNode> {
        let mut v: Vec<CommittedNode> = self
            .nodes
            .iter()
            .filter(|n| matches!(n.status, NodeStatus::Committed | NodeStatus::TerminalAnswer))
            .map(|n| CommittedNode {
                path: self.slot_path(n.id),
                token_len: n.token_len,
                reward: n.reward,
                visits: n.visits,
                value: n.value,
                status: n.status,
            })
            .collect();
        v.sort_by(|a, b| a.path.cmp(&b.path));
        v
    }

    pub fn slot_path(&self, id: NodeId) -> Vec<u32> {
        self.path(id)
            .into_iter()
            .skip(1)
            .map(|n| self.nodes[n.index()].slot)
            .collect()
    }

    /// Slot path of the child that would be created at `target`.
    pub fn slot_path_of(&self, target: ExpansionSlot) -> Vec<u32> {
        let mut p = self.slot_path(target.parent);
        p.push(target.slot);
        p
    }

    /// Prompt plus every token on the root-to-node path, inclusive.
    pub fn prefix_tokens(&self, id: NodeId) -> Result<u64, TreeError> {
        let mut total = self.prompt_tokens as u64;
        let mut cur = Some(self.get(id)?.id);
        while let Some(n) = cur {
            let node = &self.nodes[n.index()];
            total += node.token_len as u64;
            cur = node.parent;
        }
        Ok(total)
    }

    /// KV tokens an expansion of `id` reuses: prompt plus the path up to its parent.
    pub fn shared_prefix_tokens(&self, id: NodeId) -> Result<u64, TreeError> {
        match self.get(id)?.parent {
            Some(p) => self.prefix_tokens(p),
            None => Ok(self.prompt_tokens as u64),
        }
    }

    pub fn is_ancestor_or_self(&self, ancestor: NodeId, mut id: NodeId) -> bool {
        loop {
            if id == ancestor {
                return true;
            }
            match self.nodes[id.index()].parent {
                Some(p) => id = p,
                None => return false,
            }
        }
    }

    /// Full structural check: single root, acyclic parent links, consistent
    /// depths, and no live node under a pruned one.
    pub fn check_well_formed(&self) -> Result<(), &'static str> {
        if self.nodes.is_empty() || self.nodes[0].parent.is_some() {
            return Err("missing root");
        }
        let mut seen = alloc::vec![false; self.nodes.len()];
        let mut stack = alloc::vec![NodeId::ROOT];
        while let Some(n) = stack.pop() {
            if core::mem::replace(&mut seen[n.index()], true) {
                return Err("cycle or shared child");
            }
            let node = &self.nodes[n.index()];
            for &c in &node.children {
                let child = self.nodes.get(c.index()).ok_or("dangling child")?;
                if child.parent != Some(n) {
                    return Err("parent link mismatch");
                }
                if child.depth != node.depth + 1 {
                    return Err("depth mismatch");
                }
                if node.status == NodeStatus::Pruned && child.status != NodeStatus::Pruned {
                    return Err("live node under pruned parent");
                }
                stack.push(c);
            }
        }
        if seen.iter().all(|&s| s) {
            Ok(())
        } else {
            Err("unreachable node")
        }
    }

    /// Serializable view for trace export.
    pub fn snapshot(&self) -> TreeSnapshot {
        TreeSnapshot {
            prompt_tokens: self.prompt_tokens,
            nodes: self
                .nodes
                .iter()
                .map(|n| SnapshotNode {
                    id: n.id,
                    parent: n.parent,
                    slot: n.slot,
                    depth: n.depth,
                    status: n.status,
                    reward: n.reward,
                    visits: n.visits,
                    value: n.value,
                    token_len: n.token_len,
                    answer: n.answer_label.clone(),
                })
                .collect(),
        }
    }
}

/// JSON trace shape: `{"prompt_tokens":..,"nodes":[{"id","parent","slot","depth",
/// "status","reward","visits","value","token_len","answer"}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSnapshot {
    pub prompt_tokens: u32,
    pub nodes: Vec<SnapshotNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub slot: u32,
    pub depth: u32,
    pub status: NodeStatus,
    pub reward: Option<f64>,
    pub visits: u64,
    pub value: f64,
    pub token_len: u32,
    pub answer: Option<String>,
}
