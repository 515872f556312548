//! Producer-consumer driver over the simulated server.
//!
//! A single consumer owns every tree, ledger and tally. Producers are virtual
//! decode slots: each active expansion advances one token per synchronous
//! decode step, and the step costs the roofline latency of the whole batch.
//! Completed generations surface as finish events; their rewards arrive a
//! fixed latency later. Primary decisions only ever wait on rewards.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::budget::{self, allocate_budgets, roofline_batch, roofline_k_total, HardwareProfile, QueryState};
use crate::metrics::{QueryOutcome, RunMetrics};
use crate::policy::{self, backpropagate, free_slots, step_width, Family, PolicyConfig, PolicyError};
use crate::sim::cost::{self, BatchMember};
use crate::sim::workload::{self, NodeContent, QuerySpec, WorkloadSpec};
use crate::sim::SimClock;
use crate::speculation::{self, plan_dfs, PlanTarget, SimulatedStats, SpeculationLedger};
use crate::termination::{default_t, on_terminate, quiesce, should_terminate, AnswerTally};
use crate::tree::{ExpansionSlot, NodeId, NodeStatus, SearchTree};

/// Independently switchable parts of speculative execution.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Flags {
    /// Intra-query speculative selection.
    pub t1: bool,
    /// Inter-query budget allocation.
    pub t2: bool,
    /// Early termination.
    pub t3: bool,
}

impl Flags {
    pub const NONE: Flags = Flags {
        t1: false,
        t2: false,
        t3: false,
    };
    pub const ALL: Flags = Flags {
        t1: true,
        t2: true,
        t3: true,
    };

    pub fn any(self) -> bool {
        self.t1 || self.t2 || self.t3
    }

    /// Comma-separated names, `none` when empty.
    pub fn label(self) -> String {
        let names: Vec<&str> = [("t1", self.t1), ("t2", self.t2), ("t3", self.t3)]
            .iter()
            .filter(|f| f.1)
            .map(|f| f.0)
            .collect();
        if names.is_empty() {
            String::from("none")
        } else {
            names.join(",")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpexConfig {
    pub flags: Flags,
    /// Speculation depth per query: plan length and concurrent speculative
    /// expansions.
    pub spec_k: u32,
    /// Softmax sharpness of the inter-query split.
    pub tau: f64,
    pub ema_alpha: f64,
    pub term_alpha: f64,
    /// Answers required before early termination; derived from the answer
    /// target when absent.
    pub term_t: Option<u32>,
    pub max_producers: u32,
    /// Let terminal answers of speculative DFS branches count towards early
    /// termination once their rewards are in.
    pub count_speculative_answers: bool,
    /// Keep an event trace in the output.
    pub trace: bool,
}

impl Default for SpexConfig {
    fn default() -> Self {
        Self {
            flags: Flags::ALL,
            spec_k: 8,
            tau: 2.0,
            ema_alpha: 0.2,
            term_alpha: 0.5,
            term_t: None,
            max_producers: 256,
            count_speculative_answers: false,
            trace: false,
        }
    }
}

impl SpexConfig {
    pub fn baseline() -> Self {
        Self {
            flags: Flags::NONE,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ExecError> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(ExecError::ConfigInvalid(String::from("spex.tau must be > 0")));
        }
        if !(self.ema_alpha > 0.0 && self.ema_alpha <= 1.0) {
            return Err(ExecError::ConfigInvalid(String::from("spex.ema_alpha must be in (0, 1]")));
        }
        if !(self.term_alpha > 0.0) || self.term_alpha.is_nan() {
            return Err(ExecError::ConfigInvalid(String::from("spex.term_alpha must be > 0")));
        }
        if self.term_t == Some(0) {
            return Err(ExecError::ConfigInvalid(String::from("spex.term_t must be >= 1")));
        }
        if self.max_producers == 0 {
            return Err(ExecError::ConfigInvalid(String::from("spex.max_producers must be >= 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExecError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("completion for pruned node {node} of query {query}")]
    StaleEvent { query: u32, node: NodeId },
    #[error("query {0} stopped making progress")]
    Stalled(u32),
    #[error("policy failure: {0}")]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionRequest {
    pub query_id: u32,
    pub node: NodeId,
    pub parent: NodeId,
    pub slot: u32,
    pub speculative: bool,
    pub issue_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletionEvent {
    pub query_id: u32,
    pub parent: NodeId,
    pub child: NodeId,
    pub token_len: u32,
    pub finish_time: f64,
    pub reward_ready_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    QueryStart,
    /// A node was created for a generation request (`status` is its initial state).
    Issue,
    /// A queued request got a decode slot.
    Admit,
    /// Generation finished; `tokens` were produced.
    Finish,
    /// A node changed status.
    Status,
    /// A speculative node was handed to the primary search; `tokens` were
    /// already generated at that moment.
    Promote,
    /// A generation finished for a pruned node; its `tokens` are wasted.
    Stale,
    Answer,
    Terminate,
    QueryDone,
    RunEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time: f64,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speculative: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<NodeStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// `RunEnd` only: committed, reused and wasted token totals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub totals: Option<[u64; 3]>,
}

impl TraceEvent {
    fn new(time: f64, kind: EventKind) -> Self {
        Self {
            time,
            kind,
            query: None,
            node: None,
            parent: None,
            slot: None,
            tokens: None,
            speculative: None,
            status: None,
            label: None,
            totals: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub trace: Vec<TraceEvent>,
    pub trees: Vec<SearchTree>,
    pub requests: Vec<ExpansionRequest>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Waiting,
    Active,
    Done,
}

#[derive(Debug, Clone)]
struct QueryRun {
    spec: QuerySpec,
    tree: SearchTree,
    tally: AnswerTally,
    ledger: SpeculationLedger,
    budget: QueryState,
    phase: Phase,
    started_at: f64,
    finished_at: f64,
    /// Current primary step (DFS) or depth level (BFS) awaiting rewards.
    step: Vec<NodeId>,
    contents: BTreeMap<NodeId, NodeContent>,
    /// Chain position of speculative nodes; plan targets are 1.
    chain: BTreeMap<NodeId, u32>,
    /// Speculative step each node was issued in: `(parent, first slot, width)`.
    group: BTreeMap<NodeId, (NodeId, u32, u32)>,
    tallied: BTreeSet<NodeId>,
    /// Tokens already generated when a speculative node was promoted.
    promoted: BTreeMap<NodeId, u64>,
    /// Speculative concurrency granted in the last scheduling round.
    k_alloc: u32,
    primary_answers: u32,
    answer: Option<String>,
    early: bool,
}

#[derive(Debug, Clone, Copy)]
struct Gen {
    q: usize,
    node: NodeId,
    remaining: u32,
    total: u32,
}

#[derive(Debug, Clone, Copy)]
enum Ev {
    Reward { q: usize, node: NodeId },
}

/// Drives a batch of queries to completion on the simulated server.
pub struct Executor<'a> {
    wl: &'a WorkloadSpec,
    hw: &'a HardwareProfile,
    policy: &'a PolicyConfig,
    spex: &'a SpexConfig,
    batch_size: usize,
    queries: Vec<QueryRun>,
    next_waiting: usize,
    gens: Vec<Gen>,
    queue: VecDeque<(usize, NodeId)>,
    clock: SimClock<Ev>,
    producers: u32,
    /// Step latency and unique KV tokens of the current batch.
    batch_cost: Option<(f64, u64)>,
    requests: Vec<ExpansionRequest>,
    trace: Vec<TraceEvent>,
    metrics: RunMetrics,
    term_t: u32,
}

fn family_is_dfs(cfg: &PolicyConfig) -> bool {
    cfg.family.is_dfs()
}

impl<'a> Executor<'a> {
    pub fn new(
        queries: &[QuerySpec],
        wl: &'a WorkloadSpec,
        policy: &'a PolicyConfig,
        hw: &'a HardwareProfile,
        spex: &'a SpexConfig,
        batch_size: u32,
    ) -> Result<Self, ExecError> {
        wl.validate()
            .map_err(|e| ExecError::ConfigInvalid(format!("workload: {e}")))?;
        policy
            .validate()
            .map_err(|e| ExecError::ConfigInvalid(format!("policy: {e}")))?;
        hw.validate()
            .map_err(|e| ExecError::ConfigInvalid(format!("hardware: {e}")))?;
        spex.validate()?;
        if batch_size == 0 {
            return Err(ExecError::ConfigInvalid(String::from("batch_size must be >= 1")));
        }
        let runs = queries
            .iter()
            .map(|q| QueryRun {
                spec: q.clone(),
                tree: SearchTree::new(wl.prompt_tokens),
                tally: AnswerTally::new(),
                ledger: SpeculationLedger::default(),
                budget: QueryState::new(q.index),
                phase: Phase::Waiting,
                started_at: 0.0,
                finished_at: 0.0,
                step: Vec::new(),
                contents: BTreeMap::new(),
                chain: BTreeMap::new(),
                group: BTreeMap::new(),
                tallied: BTreeSet::new(),
                promoted: BTreeMap::new(),
                k_alloc: 0,
                primary_answers: 0,
                answer: None,
                early: false,
            })
            .collect();
        let producers = roofline_batch(hw, 0.0)
            .unwrap_or(spex.max_producers)
            .min(spex.max_producers)
            .max(1);
        Ok(Self {
            wl,
            hw,
            policy,
            spex,
            batch_size: batch_size as usize,
            queries: runs,
            next_waiting: 0,
            gens: Vec::new(),
            queue: VecDeque::new(),
            clock: SimClock::new(),
            producers,
            batch_cost: None,
            requests: Vec::new(),
            trace: Vec::new(),
            metrics: RunMetrics::default(),
            term_t: spex.term_t.unwrap_or_else(|| default_t(policy.target_answers)),
        })
    }

    fn now(&self) -> f64 {
        self.clock.now()
    }

    fn speculating(&self) -> bool {
        self.spex.flags.t1
    }

    fn log(&mut self, ev: TraceEvent) {
        if self.spex.trace {
            self.trace.push(ev);
        }
    }

    fn log_node(&mut self, kind: EventKind, q: usize, node: NodeId, f: impl FnOnce(&mut TraceEvent)) {
        if !self.spex.trace {
            return;
        }
        let mut ev = TraceEvent::new(self.now(), kind);
        ev.query = Some(self.queries[q].spec.index);
        ev.node = Some(node.0);
        f(&mut ev);
        self.trace.push(ev);
    }

    fn set_status(&mut self, q: usize, node: NodeId, next: NodeStatus) {
        self.queries[q]
            .tree
            .transition(node, next)
            .expect("executor only takes legal edges");
        self.log_node(EventKind::Status, q, node, |e| e.status = Some(next));
    }

    fn log_pruned(&mut self, q: usize, pruned: &[NodeId]) {
        for &n in pruned {
            self.log_node(EventKind::Status, q, n, |e| e.status = Some(NodeStatus::Pruned));
        }
    }

    fn prune(&mut self, q: usize, node: NodeId) -> Vec<NodeId> {
        let tree = &mut self.queries[q].tree;
        let before: Vec<NodeId> = {
            let mut out = Vec::new();
            let mut stack = alloc::vec![node];
            while let Some(n) = stack.pop() {
                if tree.node(n).status != NodeStatus::Pruned {
                    out.push(n);
                }
                stack.extend(tree.children(n).iter().copied());
            }
            out.sort_unstable();
            out
        };
        tree.prune_subtree(node).expect("known node");
        self.log_pruned(q, &before);
        self.cancel(q, &before);
        before
    }

    /// Drops queued requests for `nodes`; in-flight generations keep running
    /// and resolve as stale. Returns the number of queued requests removed.
    pub fn cancel(&mut self, q: usize, nodes: &[NodeId]) -> usize {
        let set: BTreeSet<NodeId> = nodes.iter().copied().collect();
        let before = self.queue.len();
        self.queue.retain(|&(qq, n)| !(qq == q && set.contains(&n)));
        before - self.queue.len()
    }

    // ---- request issue -------------------------------------------------

    fn issue(&mut self, q: usize, parent: NodeId, slot: u32, speculative: bool) -> NodeId {
        let seed = self.queries[q].spec.query_seed;
        let path = self.queries[q]
            .tree
            .slot_path_of(ExpansionSlot::new(parent, slot));
        let c = workload::content(self.wl, seed, &path);
        let run = &mut self.queries[q];
        let node = run
            .tree
            .add_node_at(parent, slot, c.token_len, speculative)
            .expect("parent is live");
        let len = c.token_len;
        run.contents.insert(node, c);
        let req = ExpansionRequest {
            query_id: run.spec.index,
            node,
            parent,
            slot,
            speculative,
            issue_time: self.clock.now(),
        };
        self.requests.push(req);
        let admitted = (self.gens.len() as u32) < self.producers && (speculative || self.queue.is_empty());
        if !admitted && !speculative {
            self.queries[q].tree.get_mut(node).expect("new node").status = NodeStatus::PendingExpansion;
        }
        let status = self.queries[q].tree.node(node).status;
        self.log_node(EventKind::Issue, q, node, |e| {
            e.parent = Some(parent.0);
            e.slot = Some(slot);
            e.speculative = Some(speculative);
            e.status = Some(status);
            e.tokens = Some(len as u64);
        });
        if admitted {
            self.start_gen(q, node, len);
        } else {
            self.queue.push_back((q, node));
        }
        node
    }

    fn start_gen(&mut self, q: usize, node: NodeId, len: u32) {
        self.gens.push(Gen {
            q,
            node,
            remaining: len,
            total: len,
        });
        self.batch_cost = None;
    }

    fn admit(&mut self) {
        while (self.gens.len() as u32) < self.producers {
            // primary work goes first
            let pos = self
                .queue
                .iter()
                .position(|&(q, n)| self.queries[q].tree.node(n).status != NodeStatus::Speculative)
                .unwrap_or(0);
            let Some((q, node)) = self.queue.remove(pos) else { break };
            let status = self.queries[q].tree.node(node).status;
            if status == NodeStatus::Pruned {
                continue;
            }
            if status == NodeStatus::PendingExpansion {
                self.set_status(q, node, NodeStatus::Expanding);
            }
            self.log_node(EventKind::Admit, q, node, |_| {});
            let len = self.queries[q].tree.node(node).token_len;
            self.start_gen(q, node, len);
        }
    }

    /// Primary expansion of `(parent, slot)`: takes over a speculative node
    /// there if one exists, else requests a fresh generation.
    fn issue_primary(&mut self, q: usize, parent: NodeId, slot: u32) -> NodeId {
        let existing = self.queries[q].tree.child_at(parent, slot);
        match existing {
            Some(n) if self.queries[q].tree.node(n).status.is_speculative() => {
                self.promote(q, n);
                n
            }
            Some(n) => panic!("slot {slot} under {parent} already primary ({n})"),
            None => self.issue(q, parent, slot, false),
        }
    }

    fn promote(&mut self, q: usize, n: NodeId) {
        let progress = self
            .gens
            .iter()
            .find(|g| g.q == q && g.node == n)
            .map_or_else(
                || self.queries[q].tree.node(n).token_len as u64,
                |g| (g.total - g.remaining) as u64,
            );
        self.log_node(EventKind::Promote, q, n, |e| e.tokens = Some(progress));
        self.queries[q].promoted.insert(n, progress);
        let generated = self.queries[q].tree.node(n).generated;
        let next = self.queries[q].tree.promote(n).expect("speculative node");
        self.log_node(EventKind::Status, q, n, |e| e.status = Some(next));
        let run = &mut self.queries[q];
        run.chain.remove(&n);
        run.group.remove(&n);
        if next == NodeStatus::Expanding && generated {
            self.set_status(q, n, NodeStatus::AwaitingReward);
        }
    }

    // ---- simulation loop -------------------------------------------------

    fn batch_cost(&mut self) -> (f64, u64) {
        if let Some(c) = self.batch_cost {
            return c;
        }
        let members: Vec<BatchMember<'_>> = self
            .gens
            .iter()
            .map(|g| BatchMember {
                key: g.q as u32,
                tree: &self.queries[g.q].tree,
                node: g.node,
            })
            .collect();
        let kv = cost::unique_kv_tokens(&members);
        let lat = cost::step_latency(&members, self.hw).expect("nonempty batch");
        self.batch_cost = Some((lat, kv));
        (lat, kv)
    }

    fn start_queries(&mut self) {
        let active = self.queries.iter().filter(|r| r.phase == Phase::Active).count();
        let mut room = self.batch_size.saturating_sub(active);
        while room > 0 && self.next_waiting < self.queries.len() {
            let q = self.next_waiting;
            self.next_waiting += 1;
            room -= 1;
            self.start_query(q);
        }
    }

    fn start_query(&mut self, q: usize) {
        let now = self.now();
        let run = &mut self.queries[q];
        run.phase = Phase::Active;
        run.started_at = now;
        self.log_node(EventKind::QueryStart, q, NodeId::ROOT, |_| {});
        if family_is_dfs(self.policy) {
            self.new_rollout(q).expect("fresh tree has a target");
        } else {
            self.bfs_expand(q);
        }
    }

    /// Runs every query to completion.
    pub fn run(mut self) -> Result<RunOutput, ExecError> {
        self.start_queries();
        self.schedule_round();
        while self.advance() {
            self.schedule_round();
            self.admit();
        }
        if let Some(r) = self.queries.iter().find(|r| r.phase != Phase::Done) {
            return Err(ExecError::Stalled(r.spec.index));
        }
        Ok(self.finish())
    }

    /// Moves virtual time to the next finish or reward event and handles
    /// everything due then. Returns false once nothing is left.
    fn advance(&mut self) -> bool {
        self.admit();
        if self.gens.is_empty() {
            let Some((_, ev)) = self.clock.pop() else {
                return false;
            };
            self.handle(ev);
            self.drain_due();
            return true;
        }
        let (lat, _) = self.batch_cost();
        let now = self.now();
        let m = self.gens.iter().map(|g| g.remaining).min().expect("nonempty");
        let t_finish = now + m as f64 * lat;
        match self.clock.peek_time() {
            Some(te) if te < t_finish => {
                // requests issued in response join at the next step boundary
                let steps = if te <= now { 0 } else { libm::ceil((te - now) / lat) as u32 };
                let steps = steps.min(m);
                self.step_gens(steps, lat);
                if steps == m {
                    self.finish_gens();
                }
                self.drain_due();
            }
            _ => {
                self.step_gens(m, lat);
                self.finish_gens();
                self.drain_due();
            }
        }
        true
    }

    fn step_gens(&mut self, steps: u32, lat: f64) {
        if steps == 0 {
            return;
        }
        for g in &mut self.gens {
            g.remaining -= steps;
        }
        let t = self.now() + steps as f64 * lat;
        self.clock.advance_to(t);
    }

    fn drain_due(&mut self) {
        let now = self.now();
        while let Some((_, ev)) = self.clock.pop_due(now) {
            self.handle(ev);
        }
    }

    fn handle(&mut self, ev: Ev) {
        match ev {
            Ev::Reward { q, node } => {
                let _ = self.on_reward(q, node);
            }
        }
    }

    fn finish_gens(&mut self) {
        let (done, running): (Vec<Gen>, Vec<Gen>) = self.gens.iter().partition(|g| g.remaining == 0);
        self.gens = running;
        self.batch_cost = None;
        for g in done {
            let _ = self.on_finish(g);
        }
    }

    // ---- consumer --------------------------------------------------------

    fn on_finish(&mut self, g: Gen) -> Result<(), ExecError> {
        let q = g.q;
        let len = g.total as u64;
        self.metrics.generated_tokens += len;
        let status = self.queries[q].tree.node(g.node).status;
        if status == NodeStatus::Pruned {
            self.metrics.wasted_tokens += len;
            self.log_node(EventKind::Stale, q, g.node, |e| e.tokens = Some(len));
            return Err(ExecError::StaleEvent {
                query: self.queries[q].spec.index,
                node: g.node,
            });
        }
        let c = self.queries[q].contents[&g.node].clone();
        {
            let node = self.queries[q].tree.get_mut(g.node).expect("known node");
            node.generated = true;
            node.terminal = c.terminal;
            node.answer_label = c.answer.clone();
        }
        self.log_node(EventKind::Finish, q, g.node, |e| e.tokens = Some(len));
        if status == NodeStatus::Expanding {
            self.set_status(q, g.node, NodeStatus::AwaitingReward);
        }
        let ready = self.now() + self.hw.reward_latency;
        self.clock.schedule(ready, Ev::Reward { q, node: g.node });
        if status == NodeStatus::Speculative && self.policy.family == Family::RstarDfs {
            self.continue_chain(q, g.node);
        }
        Ok(())
    }

    /// Handles a reward that became available: the consumer step proper.
    /// Returns the requests issued in response.
    pub fn consumer_step(&mut self, ev: CompletionEvent) -> Result<Vec<ExpansionRequest>, ExecError> {
        let q = self
            .queries
            .iter()
            .position(|r| r.spec.index == ev.query_id)
            .ok_or_else(|| ExecError::ConfigInvalid(format!("unknown query {}", ev.query_id)))?;
        self.on_reward(q, ev.child)
    }

    fn on_reward(&mut self, q: usize, node: NodeId) -> Result<Vec<ExpansionRequest>, ExecError> {
        let mark = self.requests.len();
        let run = &self.queries[q];
        let status = run.tree.node(node).status;
        if run.phase != Phase::Active || status == NodeStatus::Pruned {
            return Err(ExecError::StaleEvent {
                query: run.spec.index,
                node,
            });
        }
        let reward = run.contents[&node].reward;
        self.queries[q].tree.get_mut(node).expect("known").reward = Some(reward);
        match status {
            NodeStatus::AwaitingReward => {
                self.set_status(q, node, NodeStatus::Committed);
                self.primary_settled(q, node)?;
            }
            NodeStatus::Speculative => {
                self.set_status(q, node, NodeStatus::SpeculativeDone);
                self.speculative_settled(q, node);
            }
            _ => {}
        }
        self.schedule_round();
        Ok(self.requests[mark..].to_vec())
    }

    fn primary_settled(&mut self, q: usize, _node: NodeId) -> Result<(), ExecError> {
        if self.queries[q].phase != Phase::Active {
            return Ok(());
        }
        let all_in = self.queries[q]
            .step
            .iter()
            .all(|&n| self.queries[q].tree.node(n).status == NodeStatus::Committed);
        if !all_in {
            return Ok(());
        }
        if family_is_dfs(self.policy) {
            self.dfs_step_done(q)
        } else {
            self.bfs_level_done(q)
        }
    }

    fn best_of(&self, q: usize, nodes: &[NodeId]) -> NodeId {
        let tree = &self.queries[q].tree;
        nodes
            .iter()
            .copied()
            .fold(None::<NodeId>, |best, n| match best {
                Some(b) if tree.node(b).reward.unwrap_or(0.0) >= tree.node(n).reward.unwrap_or(0.0) => Some(b),
                _ => Some(n),
            })
            .expect("nonempty step")
    }

    fn tally_answer(&mut self, q: usize, node: NodeId) {
        let run = &mut self.queries[q];
        if !run.tallied.insert(node) {
            return;
        }
        let n = run.tree.node(node);
        let (Some(label), Some(w)) = (n.answer_label.clone(), n.reward) else {
            return;
        };
        run.tally.record_answer(&label, w).expect("reward is non-negative");
        self.log_node(EventKind::Answer, q, node, |e| e.label = Some(label));
    }

    fn maybe_terminate(&mut self, q: usize) -> bool {
        if !self.spex.flags.t3 || self.queries[q].phase != Phase::Active {
            return false;
        }
        if should_terminate(&self.queries[q].tally, self.term_t, self.spex.term_alpha) {
            self.finish_query(q, true);
            return true;
        }
        false
    }

    // ---- DFS families ----------------------------------------------------

    fn dfs_step_done(&mut self, q: usize) -> Result<(), ExecError> {
        loop {
            let step = core::mem::take(&mut self.queries[q].step);
            if step.is_empty() {
                return self.new_rollout(q);
            }
            let best = self.best_of(q, &step);
            let (terminal, depth) = {
                let n = self.queries[q].tree.node(best);
                (n.terminal, n.depth)
            };
            if terminal {
                self.set_status(q, best, NodeStatus::TerminalAnswer);
                let reward = self.queries[q].tree.node(best).reward.unwrap_or(0.0);
                backpropagate(&mut self.queries[q].tree, best, reward)?;
                self.queries[q].primary_answers += 1;
                self.tally_answer(q, best);
                if self.maybe_terminate(q) {
                    return Ok(());
                }
                return self.new_rollout(q);
            }
            if depth >= self.policy.max_depth {
                let reward = self.queries[q].tree.node(best).reward.unwrap_or(0.0);
                backpropagate(&mut self.queries[q].tree, best, reward)?;
                return self.new_rollout(q);
            }
            let width = step_width(self.policy, free_slots(&self.queries[q].tree, self.policy, best)).max(1);
            let mut next = Vec::with_capacity(width as usize);
            for s in 0..width {
                next.push(self.issue_primary(q, best, s));
            }
            let settled = next.iter().all(|&n| {
                matches!(
                    self.queries[q].tree.node(n).status,
                    NodeStatus::SpeculativeDone | NodeStatus::Committed
                )
            });
            self.queries[q].step = next;
            if !settled {
                return Ok(());
            }
        }
    }

    fn new_rollout(&mut self, q: usize) -> Result<(), ExecError> {
        if self.queries[q].phase != Phase::Active {
            return Ok(());
        }
        if self.queries[q].primary_answers >= self.policy.target_answers {
            self.finish_query(q, false);
            return Ok(());
        }
        let slots = match policy::policy_step(&self.queries[q].tree, self.policy) {
            Ok(s) => s,
            Err(PolicyError::SearchComplete) => {
                self.finish_query(q, false);
                return Ok(());
            }
            Err(e) => return Err(e.into()),
        };
        let target = slots[0];
        if let Some(&d) = self.queries[q].ledger.planned.get(&target) {
            self.record_outcome(q, target, true, d);
        }
        let nodes: Vec<NodeId> = slots
            .iter()
            .map(|s| self.issue_primary(q, s.parent, s.slot))
            .collect();
        let settled = nodes.iter().all(|&n| self.queries[q].tree.node(n).status == NodeStatus::Committed);
        self.queries[q].step = nodes;
        if settled {
            return self.dfs_step_done(q);
        }
        Ok(())
    }

    fn record_outcome(&mut self, q: usize, slot: ExpansionSlot, hit: bool, d: u32) {
        let run = &mut self.queries[q];
        if run.ledger.record_outcome(slot, hit, d).is_ok() {
            budget::update_hit_rate(&mut run.budget, hit, self.spex.ema_alpha);
        }
    }

    fn speculative_settled(&mut self, q: usize, node: NodeId) {
        let slot = {
            let n = self.queries[q].tree.node(node);
            ExpansionSlot::new(n.parent.expect("non-root"), n.slot)
        };
        let reward = self.queries[q].contents[&node].reward;
        if self.queries[q].ledger.planned.contains_key(&slot) {
            self.queries[q].ledger.complete(slot, reward);
        }
        if self.policy.family == Family::RestHybrid {
            self.rest_group_settled(q, node);
        } else if self.spex.count_speculative_answers
            && family_is_dfs(self.policy)
            && self.queries[q].tree.node(node).terminal
        {
            self.tally_answer(q, node);
            self.maybe_terminate(q);
        }
    }

    /// A REST speculative step whose rewards are all in continues at its best
    /// child unless that child is terminal.
    fn rest_group_settled(&mut self, q: usize, node: NodeId) {
        let Some(&(parent, first, width)) = self.queries[q].group.get(&node) else {
            return;
        };
        let tree = &self.queries[q].tree;
        let members: Vec<NodeId> = (first..first + width)
            .filter_map(|s| tree.child_at(parent, s))
            .collect();
        if members.len() as u32 != width
            || !members
                .iter()
                .all(|&m| tree.node(m).status == NodeStatus::SpeculativeDone)
        {
            return;
        }
        let best = self.best_of(q, &members);
        if !self.queries[q].tree.node(best).terminal {
            self.extend_chain(q, best);
        } else if self.spex.count_speculative_answers {
            self.tally_answer(q, best);
            self.maybe_terminate(q);
        }
    }

    fn continue_chain(&mut self, q: usize, node: NodeId) {
        if self.queries[q].tree.node(node).terminal {
            return;
        }
        self.extend_chain(q, node);
    }

    /// Speculates the continuation of a speculative node, bounded by the
    /// query's speculative allowance.
    fn extend_chain(&mut self, q: usize, node: NodeId) {
        let run = &self.queries[q];
        if run.phase != Phase::Active {
            return;
        }
        let depth = run.tree.node(node).depth;
        let pos = run.chain.get(&node).copied().unwrap_or(1);
        if depth >= self.policy.max_depth || pos >= self.spex.spec_k {
            return;
        }
        if self.spec_in_flight(q) >= run.k_alloc.min(self.spex.spec_k) {
            return;
        }
        if (self.gens.len() + self.queue.len()) as u32 >= self.producers {
            return;
        }
        let width = step_width(self.policy, free_slots(&run.tree, self.policy, node)).max(1);
        if run.tree.next_free_slot(node) != 0 {
            return;
        }
        for s in 0..width {
            let child = self.issue(q, node, s, true);
            let run = &mut self.queries[q];
            run.chain.insert(child, pos + 1);
            run.group.insert(child, (node, 0, width));
        }
    }

    // ---- BFS family --------------------------------------------------------

    fn bfs_expand(&mut self, q: usize) {
        loop {
            if self.queries[q].phase != Phase::Active {
                return;
            }
            let actual = match policy::policy_step(&self.queries[q].tree, self.policy) {
                Ok(s) => s,
                Err(_) => {
                    self.finish_query(q, false);
                    return;
                }
            };
            self.verify_level(q, &actual);
            let nodes: Vec<NodeId> = actual
                .iter()
                .map(|s| self.issue_primary(q, s.parent, s.slot))
                .collect();
            let done = nodes
                .iter()
                .all(|&n| self.queries[q].tree.node(n).status == NodeStatus::Committed);
            self.queries[q].step = nodes;
            if !done {
                return;
            }
            if !self.resolve_level(q) {
                return;
            }
        }
    }

    /// Cross-checks outstanding speculative children against the real
    /// expansion; confirmed ones are kept for promotion, the rest pruned.
    fn verify_level(&mut self, q: usize, actual: &[ExpansionSlot]) {
        let predicted: Vec<ExpansionSlot> = self.queries[q]
            .tree
            .nodes()
            .filter(|n| n.status.is_speculative())
            .map(|n| ExpansionSlot::new(n.parent.expect("non-root"), n.slot))
            .collect();
        let (hits, misses) = speculation::verify_bfs_speculation(&predicted, actual);
        for s in hits {
            self.record_outcome(q, s, true, 1);
        }
        for s in misses {
            self.record_outcome(q, s, false, 1);
            if let Some(n) = self.queries[q].tree.child_at(s.parent, s.slot) {
                self.prune(q, n);
            }
        }
    }

    fn bfs_level_done(&mut self, q: usize) -> Result<(), ExecError> {
        if self.resolve_level(q) {
            self.bfs_expand(q);
        }
        Ok(())
    }

    /// Turns a fully rewarded level into answers and the next frontier.
    /// Returns false if the query ended.
    fn resolve_level(&mut self, q: usize) -> bool {
        let mut level = core::mem::take(&mut self.queries[q].step);
        level.sort_by_cached_key(|&n| self.queries[q].tree.slot_path(n));
        let mut frontier = Vec::new();
        for n in level {
            if self.queries[q].tree.node(n).terminal {
                self.set_status(q, n, NodeStatus::TerminalAnswer);
                self.queries[q].primary_answers += 1;
                self.tally_answer(q, n);
            } else {
                frontier.push(n);
            }
        }
        self.queries[q].tree.frontier = frontier;
        !self.maybe_terminate(q)
    }

    // ---- speculation rounds ---------------------------------------------

    fn idle_producers(&self) -> u32 {
        self.producers
            .saturating_sub((self.gens.len() + self.queue.len()) as u32)
    }

    fn spec_in_flight(&self, q: usize) -> u32 {
        self.gens
            .iter()
            .filter(|g| g.q == q && self.queries[q].tree.node(g.node).status == NodeStatus::Speculative)
            .count() as u32
    }

    /// One scheduling round: size each query's speculative allowance and
    /// fill idle producers with speculative work.
    fn schedule_round(&mut self) {
        if !self.speculating() {
            return;
        }
        let active: Vec<usize> = (0..self.queries.len())
            .filter(|&q| self.queries[q].phase == Phase::Active)
            .collect();
        if active.is_empty() || self.idle_producers() == 0 {
            return;
        }
        let now = self.now();
        let mut candidates: Vec<(usize, u32, Vec<PlanTarget>)> = Vec::new();
        for &q in &active {
            let inflight = self.spec_in_flight(q);
            let plan = if inflight < self.spex.spec_k {
                self.candidates(q, now)
            } else {
                Vec::new()
            };
            candidates.push((q, inflight, plan));
        }
        // speculative allowance per query
        if self.spex.flags.t2 {
            let kv_per_token = self.hw.kv_bytes_per_token;
            let states: Vec<QueryState> = candidates
                .iter()
                .map(|(q, inflight, plan)| {
                    let run = &self.queries[*q];
                    let prefix = if plan.is_empty() {
                        0.0
                    } else {
                        plan.iter()
                            .map(|t| run.tree.prefix_tokens(t.target.parent).unwrap_or(0) as f64)
                            .sum::<f64>()
                            / plan.len() as f64
                    };
                    QueryState {
                        query_id: run.spec.index,
                        capacity: (inflight + plan.len() as u32).min(self.spex.spec_k),
                        hit_rate_est: run.budget.hit_rate_est,
                        reusable_kv_bytes: prefix * kv_per_token,
                        active_primary: run.step.len() as u32,
                    }
                })
                .collect();
            let active_primary = self
                .gens
                .iter()
                .filter(|g| self.queries[g.q].tree.node(g.node).status != NodeStatus::Speculative)
                .count() as u32;
            let avg_kv = if self.gens.is_empty() {
                0.0
            } else {
                let (_, kv) = self.batch_cost();
                kv as f64 * kv_per_token / self.gens.len() as f64
            };
            let k_total = roofline_k_total(self.hw, active_primary, avg_kv, self.spex.max_producers);
            let alloc = allocate_budgets(&states, k_total, self.spex.tau, self.hw);
            for (q, _, _) in &candidates {
                let id = self.queries[*q].spec.index;
                self.queries[*q].k_alloc = alloc.get(&id).copied().unwrap_or(0);
            }
        } else {
            for (q, _, _) in &candidates {
                self.queries[*q].k_alloc = self.spex.spec_k;
            }
        }
        for (q, inflight, plan) in candidates {
            let allowance = self.queries[q].k_alloc.min(self.spex.spec_k);
            let mut room = allowance.saturating_sub(inflight);
            for t in plan {
                if room == 0 || self.idle_producers() == 0 {
                    break;
                }
                let issued = self.issue_target(q, t);
                room = room.saturating_sub(issued);
            }
        }
    }

    /// Speculative targets a query could use now.
    fn candidates(&mut self, q: usize, now: f64) -> Vec<PlanTarget> {
        let run = &self.queries[q];
        if family_is_dfs(self.policy) {
            let mut sim = SimulatedStats::new(&run.tree);
            // count the rollout still in flight as one more visit on its path
            if let Some(&n) = run.step.first() {
                if let Some(p) = run.tree.node(n).parent {
                    sim.increment_visits(p);
                }
            }
            plan_dfs(sim, &run.ledger, self.spex.spec_k, self.policy, now).targets
        } else {
            let statuses: Vec<speculation::FrontierStatus> = run
                .step
                .iter()
                .map(|&n| {
                    let node = run.tree.node(n);
                    let finished = node.status == NodeStatus::Committed
                        && !node.terminal
                        && node.depth < self.policy.max_depth;
                    (n, node.reward.unwrap_or(0.0), finished)
                })
                .collect();
            speculation::bfs_speculative_allocate(&statuses, self.policy)
                .into_iter()
                .flat_map(|(n, w)| (0..w).map(move |s| (n, s)))
                .filter(|&(n, s)| run.tree.child_at(n, s).is_none())
                .map(|(n, s)| PlanTarget {
                    target: ExpansionSlot::new(n, s),
                    width: 1,
                    predicted_distance: 1,
                })
                .collect()
        }
    }

    /// Issues one plan target; returns how many generations it started.
    fn issue_target(&mut self, q: usize, t: PlanTarget) -> u32 {
        let width = t.width.max(1);
        let parent = t.target.parent;
        let free = (t.target.slot..t.target.slot + width)
            .all(|s| self.queries[q].tree.child_at(parent, s).is_none());
        if !free {
            return 0;
        }
        for s in t.target.slot..t.target.slot + width {
            let child = self.issue(q, parent, s, true);
            let run = &mut self.queries[q];
            run.chain.insert(child, 1);
            run.group.insert(child, (parent, t.target.slot, width));
        }
        self.queries[q].ledger.track(t.target, t.predicted_distance);
        width
    }

    // ---- completion --------------------------------------------------------

    fn finish_query(&mut self, q: usize, early: bool) {
        if self.queries[q].phase != Phase::Active {
            return;
        }
        let now = self.now();
        let pruned = if early {
            let run = &mut self.queries[q];
            let out = on_terminate(&mut run.tree, &run.tally).expect("termination needs answers");
            run.answer = Some(out.answer.clone());
            run.early = true;
            self.log_node(EventKind::Terminate, q, NodeId::ROOT, |e| e.label = Some(out.answer.clone()));
            out.pruned
        } else {
            let run = &mut self.queries[q];
            run.answer = run.tally.leader().map(String::from);
            quiesce(&mut run.tree)
        };
        self.log_pruned(q, &pruned);
        self.cancel(q, &pruned);

        let run = &mut self.queries[q];
        run.phase = Phase::Done;
        run.finished_at = now;
        run.step.clear();
        let leftovers: Vec<(ExpansionSlot, u32)> = run.ledger.planned.iter().map(|(s, d)| (*s, *d)).collect();
        for (s, d) in leftovers {
            self.record_outcome(q, s, false, d);
        }
        let run = &self.queries[q];
        for (&d, &c) in &run.ledger.hits_by_distance {
            self.metrics.record_distance(d, true, c);
        }
        for (&d, &c) in &run.ledger.misses_by_distance {
            self.metrics.record_distance(d, false, c);
        }
        for (&n, &tokens) in &run.promoted {
            if matches!(
                run.tree.node(n).status,
                NodeStatus::Committed | NodeStatus::TerminalAnswer
            ) {
                self.metrics.critical_path_tokens_saved += tokens;
            }
        }
        for n in run.tree.nodes().skip(1).filter(|n| n.generated) {
            let len = n.token_len as u64;
            match n.status {
                NodeStatus::Committed | NodeStatus::TerminalAnswer if n.speculative_origin => {
                    self.metrics.reused_tokens += len
                }
                NodeStatus::Committed | NodeStatus::TerminalAnswer => self.metrics.committed_tokens += len,
                _ => self.metrics.wasted_tokens += len,
            }
        }
        let label = run.answer.clone();
        self.log_node(EventKind::QueryDone, q, NodeId::ROOT, |e| e.label = label);
        self.start_queries();
    }

    fn finish(mut self) -> RunOutput {
        let mut m = core::mem::take(&mut self.metrics);
        m.queries = self.queries.len() as u32;
        for run in &self.queries {
            let correct = run.answer.as_deref() == Some(run.spec.golden_label.as_str());
            m.correct += correct as u32;
            m.early_terminations += run.early as u32;
            m.makespan = m.makespan.max(run.finished_at);
            m.outcomes.push(QueryOutcome {
                index: run.spec.index,
                answer: run.answer.clone(),
                correct,
                early_terminated: run.early,
                started_at: run.started_at,
                finished_at: run.finished_at,
                primary_answers: run.primary_answers,
            });
        }
        m.finalize();
        let mut end = TraceEvent::new(self.now(), EventKind::RunEnd);
        end.tokens = Some(m.generated_tokens);
        end.totals = Some([m.committed_tokens, m.reused_tokens, m.wasted_tokens]);
        self.log(end);
        RunOutput {
            metrics: m,
            trace: self.trace,
            trees: self.queries.into_iter().map(|r| r.tree).collect(),
            requests: self.requests,
        }
    }
}

/// Runs `queries` on the simulated server under `spex` (use
/// [`SpexConfig::baseline`] for the plain search).
pub fn run_search(
    queries: &[QuerySpec],
    wl: &WorkloadSpec,
    policy: &PolicyConfig,
    hw: &HardwareProfile,
    spex: &SpexConfig,
    batch_size: u32,
) -> Result<RunOutput, ExecError> {
    Executor::new(queries, wl, policy, hw, spex, batch_size)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::cost::memory_time;
    use crate::sim::workload::generate_workload;

    #[test]
    fn flag_labels() {
        assert_eq!(Flags::NONE.label(), "none");
        assert_eq!(Flags::ALL.label(), "t1,t2,t3");
        let f = Flags {
            t1: true,
            t2: false,
            t3: true,
        };
        assert_eq!(f.label(), "t1,t3");
        assert!(f.any());
        assert!(!Flags::NONE.any());
    }

    #[test]
    fn config_validation() {
        assert!(SpexConfig::default().validate().is_ok());
        for bad in [
            SpexConfig { tau: -1.0, ..SpexConfig::default() },
            SpexConfig { ema_alpha: 0.0, ..SpexConfig::default() },
            SpexConfig { ema_alpha: 1.5, ..SpexConfig::default() },
            SpexConfig { term_alpha: 0.0, ..SpexConfig::default() },
            SpexConfig { term_t: Some(0), ..SpexConfig::default() },
            SpexConfig { max_producers: 0, ..SpexConfig::default() },
        ] {
            assert!(matches!(bad.validate(), Err(ExecError::ConfigInvalid(_))));
        }
    }

    #[test]
    fn single_rollout_makespan_is_the_chain_sum() {
        let wl = WorkloadSpec::default();
        let hw = HardwareProfile::memory_bound_7b();
        let policy = PolicyConfig::rstar(1, 2);
        for seed in 0..5 {
            let qs = generate_workload(1, &wl, seed).unwrap();
            let out = run_search(&qs, &wl, &policy, &hw, &SpexConfig::baseline(), 1).unwrap();
            let tree = &out.trees[0];
            let leaf = tree
                .nodes()
                .find(|n| n.status == NodeStatus::TerminalAnswer)
                .expect("one answer")
                .id;
            let mut expect = 0.0;
            for id in tree.path(leaf).into_iter().skip(1) {
                let n = tree.node(id);
                let prefix = tree.prefix_tokens(n.parent.unwrap()).unwrap();
                expect += n.token_len as f64 * memory_time(prefix, &hw);
                expect += hw.reward_latency;
            }
            let got = out.metrics.makespan;
            assert!((got - expect).abs() <= 1e-9 * expect, "{got} vs {expect}");
            assert_eq!(tree.len() as u32, tree.node(leaf).depth + 1);
        }
    }

    #[test]
    fn queued_primaries_wait_for_a_producer() {
        let wl = WorkloadSpec::default();
        let hw = HardwareProfile::memory_bound_7b();
        let spex = SpexConfig {
            max_producers: 2,
            ..SpexConfig::baseline()
        };
        let qs = generate_workload(1, &wl, 4).unwrap();
        let wide = run_search(&qs, &wl, &PolicyConfig::rebase(6), &hw, &SpexConfig::baseline(), 1).unwrap();
        let narrow = run_search(&qs, &wl, &PolicyConfig::rebase(6), &hw, &spex, 1).unwrap();
        assert!(narrow.metrics.makespan > wide.metrics.makespan);
        // queueing changes timing only
        assert_eq!(narrow.trees[0].committed_view(), wide.trees[0].committed_view());
    }
}
