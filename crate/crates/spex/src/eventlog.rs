//! JSON-lines event logs: writing, reading, replay checks and critical-path
//! savings.
//!
//! The first line is a [`LogHeader`]; every following line is one
//! [`TraceEvent`].

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use spex_core::executor::{EventKind, Flags, TraceEvent};
use spex_core::tree::NodeStatus;

use crate::config::ExperimentConfig;
use crate::experiment::{run_variant, RunError};

pub const LOG_FORMAT: &str = "spex-events";
pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogHeader {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    /// Flags of the run that produced the log; all off for the baseline.
    pub flags: Flags,
    pub config: ExperimentConfig,
}

impl LogHeader {
    pub fn new(config: &ExperimentConfig, seed: u64, flags: Flags) -> Self {
        Self {
            format: LOG_FORMAT.into(),
            version: LOG_VERSION,
            seed,
            flags,
            config: config.clone(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("incomplete log: {0}")]
    IncompleteLog(String),
    #[error("event {index} ({kind:?}): {message}")]
    Illegal {
        index: usize,
        kind: EventKind,
        message: String,
    },
    #[error("token conservation broken: {0}")]
    Conservation(String),
    #[error("re-execution diverged at event {0}")]
    Diverged(usize),
    #[error(transparent)]
    Run(#[from] RunError),
}

pub fn write_log<W: Write>(mut out: W, header: &LogHeader, events: &[TraceEvent]) -> Result<(), LogError> {
    serde_json::to_writer(&mut out, header).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    for ev in events {
        serde_json::to_writer(&mut out, ev).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_log<R: BufRead>(input: R) -> Result<(LogHeader, Vec<TraceEvent>), LogError> {
    let mut lines = input.lines().enumerate().filter(|(_, l)| match l {
        Ok(l) => !l.trim().is_empty(),
        Err(_) => true,
    });
    let (_, first) = lines
        .next()
        .ok_or_else(|| LogError::IncompleteLog("empty log".into()))?;
    let header: LogHeader = serde_json::from_str(&first?).map_err(|e| LogError::Malformed {
        line: 1,
        message: e.to_string(),
    })?;
    if header.format != LOG_FORMAT || header.version != LOG_VERSION {
        return Err(LogError::Malformed {
            line: 1,
            message: format!("unsupported log format {} v{}", header.format, header.version),
        });
    }
    let mut events = Vec::new();
    for (i, line) in lines {
        let ev = serde_json::from_str(&line?).map_err(|e| LogError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        events.push(ev);
    }
    Ok((header, events))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplaySummary {
    pub events: usize,
    pub queries: usize,
    pub nodes: usize,
    pub generated_tokens: u64,
    pub committed_tokens: u64,
    pub reused_tokens: u64,
    pub wasted_tokens: u64,
    pub critical_path_tokens_saved: u64,
    /// Whether the log was re-executed from its header and matched.
    pub reexecuted: bool,
}

#[derive(Debug, Clone, Copy)]
struct NodeTrack {
    status: NodeStatus,
    speculative_origin: bool,
    finished: Option<u64>,
    stale: bool,
    promoted: Option<u64>,
}

fn is_settled(s: NodeStatus) -> bool {
    matches!(s, NodeStatus::Committed | NodeStatus::TerminalAnswer | NodeStatus::Pruned)
}

/// Checks status-machine legality, quiescence and token conservation of a
/// complete run log.
pub fn check_log(events: &[TraceEvent]) -> Result<ReplaySummary, LogError> {
    let mut nodes: BTreeMap<(u32, u32), NodeTrack> = BTreeMap::new();
    let mut started = BTreeSet::new();
    let mut done = BTreeSet::new();
    let mut totals = None;
    let mut last_time = f64::NEG_INFINITY;
    for (index, ev) in events.iter().enumerate() {
        let bad = |message: String| LogError::Illegal {
            index,
            kind: ev.kind,
            message,
        };
        if totals.is_some() {
            return Err(bad("event after RunEnd".into()));
        }
        if !(ev.time >= last_time) {
            return Err(bad(format!("time went backwards to {}", ev.time)));
        }
        last_time = ev.time;
        if ev.kind == EventKind::RunEnd {
            let t = ev.totals.ok_or_else(|| bad("missing totals".into()))?;
            totals = Some((ev.tokens.unwrap_or(0), t));
            continue;
        }
        let q = ev.query.ok_or_else(|| bad("missing query".into()))?;
        let key = |ev: &TraceEvent| -> Result<(u32, u32), LogError> {
            Ok((q, ev.node.ok_or_else(|| bad("missing node".into()))?))
        };
        match ev.kind {
            EventKind::QueryStart => {
                if !started.insert(q) {
                    return Err(bad(format!("query {q} started twice")));
                }
            }
            EventKind::Issue => {
                if !started.contains(&q) || done.contains(&q) {
                    return Err(bad(format!("issue for inactive query {q}")));
                }
                let k = key(ev)?;
                let status = ev.status.ok_or_else(|| bad("missing status".into()))?;
                let speculative = ev.speculative.unwrap_or(false);
                let ok = match status {
                    NodeStatus::Speculative => speculative,
                    NodeStatus::Expanding | NodeStatus::PendingExpansion => !speculative,
                    _ => false,
                };
                if !ok {
                    return Err(bad(format!("node created as {status:?}")));
                }
                let parent = ev.parent.ok_or_else(|| bad("missing parent".into()))?;
                if parent != 0 && !nodes.contains_key(&(q, parent)) {
                    return Err(bad(format!("unknown parent {parent}")));
                }
                let track = NodeTrack {
                    status,
                    speculative_origin: speculative,
                    finished: None,
                    stale: false,
                    promoted: None,
                };
                if nodes.insert(k, track).is_some() {
                    return Err(bad(format!("node {} issued twice", k.1)));
                }
            }
            EventKind::Admit => {
                let n = nodes.get(&key(ev)?).ok_or_else(|| bad("unknown node".into()))?;
                if !matches!(n.status, NodeStatus::Expanding | NodeStatus::Speculative) {
                    return Err(bad(format!("admitted while {:?}", n.status)));
                }
            }
            EventKind::Status => {
                let next = ev.status.ok_or_else(|| bad("missing status".into()))?;
                let n = nodes.get_mut(&key(ev)?).ok_or_else(|| bad("unknown node".into()))?;
                if !n.status.can_transition_to(next) {
                    return Err(bad(format!("illegal transition {:?} -> {next:?}", n.status)));
                }
                n.status = next;
            }
            EventKind::Finish | EventKind::Stale => {
                let tokens = ev.tokens.ok_or_else(|| bad("missing tokens".into()))?;
                let n = nodes.get_mut(&key(ev)?).ok_or_else(|| bad("unknown node".into()))?;
                if n.finished.is_some() {
                    return Err(bad("generation finished twice".into()));
                }
                let ok = if ev.kind == EventKind::Stale {
                    n.status == NodeStatus::Pruned
                } else {
                    matches!(n.status, NodeStatus::Expanding | NodeStatus::Speculative)
                };
                if !ok {
                    return Err(bad(format!("finish while {:?}", n.status)));
                }
                n.finished = Some(tokens);
                n.stale = ev.kind == EventKind::Stale;
            }
            EventKind::Promote => {
                let n = nodes.get_mut(&key(ev)?).ok_or_else(|| bad("unknown node".into()))?;
                if !n.status.is_speculative() {
                    return Err(bad(format!("promoted while {:?}", n.status)));
                }
                n.promoted = Some(ev.tokens.unwrap_or(0));
            }
            EventKind::Answer => {
                let n = nodes.get(&key(ev)?).ok_or_else(|| bad("unknown node".into()))?;
                if !matches!(n.status, NodeStatus::TerminalAnswer | NodeStatus::SpeculativeDone) {
                    return Err(bad(format!("answer from node in {:?}", n.status)));
                }
            }
            EventKind::Terminate => {
                if !started.contains(&q) || done.contains(&q) {
                    return Err(bad(format!("terminate for inactive query {q}")));
                }
            }
            EventKind::QueryDone => {
                if !started.contains(&q) || !done.insert(q) {
                    return Err(bad(format!("query {q} finished twice or never started")));
                }
                if let Some((k, n)) = nodes.range((q, 0)..=(q, u32::MAX)).find(|(_, n)| !is_settled(n.status)) {
                    return Err(bad(format!("node {} left in {:?}", k.1, n.status)));
                }
            }
            EventKind::RunEnd => unreachable!(),
        }
    }
    let (generated_claim, [c_claim, r_claim, w_claim]) =
        totals.ok_or_else(|| LogError::IncompleteLog("no RunEnd event".into()))?;
    if started != done {
        return Err(LogError::IncompleteLog("some queries never finished".into()));
    }
    let mut s = ReplaySummary {
        events: events.len(),
        queries: started.len(),
        nodes: nodes.len(),
        ..ReplaySummary::default()
    };
    for n in nodes.values() {
        let Some(tokens) = n.finished else {
            continue;
        };
        s.generated_tokens += tokens;
        let kept = matches!(n.status, NodeStatus::Committed | NodeStatus::TerminalAnswer);
        match (kept && !n.stale, n.speculative_origin) {
            (true, true) => s.reused_tokens += tokens,
            (true, false) => s.committed_tokens += tokens,
            (false, _) => s.wasted_tokens += tokens,
        }
        if kept {
            s.critical_path_tokens_saved += n.promoted.unwrap_or(0);
        }
    }
    let ours = (s.generated_tokens, s.committed_tokens, s.reused_tokens, s.wasted_tokens);
    if ours != (generated_claim, c_claim, r_claim, w_claim) {
        return Err(LogError::Conservation(format!(
            "log implies generated/committed/reused/wasted = {ours:?}, run reported {:?}",
            (generated_claim, c_claim, r_claim, w_claim)
        )));
    }
    if s.generated_tokens != s.committed_tokens + s.reused_tokens + s.wasted_tokens {
        return Err(LogError::Conservation("generated != committed + reused + wasted".into()));
    }
    Ok(s)
}

/// Tokens of speculative work that the primary search took over and kept:
/// the part of each promoted node generated before its promotion, counted
/// only if the node ends committed.
pub fn compute_critical_path_savings(events: &[TraceEvent]) -> Result<u64, LogError> {
    if events.is_empty() {
        return Err(LogError::IncompleteLog("empty log".into()));
    }
    let mut issued = BTreeSet::new();
    let mut status: BTreeMap<(u32, u32), NodeStatus> = BTreeMap::new();
    let mut promoted: BTreeMap<(u32, u32), u64> = BTreeMap::new();
    for (i, ev) in events.iter().enumerate() {
        let (Some(q), Some(n)) = (ev.query, ev.node) else {
            continue;
        };
        let k = (q, n);
        match ev.kind {
            EventKind::Issue => {
                issued.insert(k);
                if let Some(s) = ev.status {
                    status.insert(k, s);
                }
            }
            EventKind::Promote | EventKind::Status | EventKind::Finish | EventKind::Stale
                if !issued.contains(&k) =>
            {
                return Err(LogError::IncompleteLog(format!(
                    "event {i} refers to node {n} of query {q}, which was never issued"
                )));
            }
            EventKind::Promote => {
                let tokens = ev
                    .tokens
                    .ok_or_else(|| LogError::IncompleteLog(format!("promotion at event {i} lacks tokens")))?;
                promoted.insert(k, tokens);
            }
            EventKind::Status => {
                if let Some(s) = ev.status {
                    status.insert(k, s);
                }
            }
            _ => {}
        }
    }
    Ok(promoted
        .iter()
        .filter(|(k, _)| matches!(status.get(k), Some(NodeStatus::Committed | NodeStatus::TerminalAnswer)))
        .map(|(_, t)| t)
        .sum())
}

/// Checks a log and, when its header describes a run, re-executes that run
/// and requires the identical event sequence.
pub fn replay<R: BufRead>(input: R) -> Result<ReplaySummary, LogError> {
    let (header, events) = read_log(input)?;
    let mut summary = check_log(&events)?;
    let mut cfg = header.config.clone();
    cfg.spex.trace = true;
    let rerun = run_variant(&cfg, header.seed, header.flags)?.trace;
    if let Some(i) = (0..events.len().max(rerun.len())).find(|&i| events.get(i) != rerun.get(i)) {
        return Err(LogError::Diverged(i));
    }
    summary.reexecuted = true;
    Ok(summary)
}
