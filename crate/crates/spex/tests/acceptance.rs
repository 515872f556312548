//! End-to-end acceptance checks. Run with
//! `cargo test -p spex --test acceptance -- --nocapture` to see one
//! PASS/FAIL line per criterion.

use std::sync::Mutex;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use spex::config::ExperimentConfig;
use spex::eventlog::{check_log, replay, write_log, LogHeader};
use spex::experiment::run_pair;
use spex_core::budget::query_score;
use spex_core::executor::{Flags, RunOutput};
use spex_core::policy::{backpropagate, free_slots, rebase_widths, select_target, step_width, ucb_score, Rounding};
use spex_core::sim::workload::WorkloadSpec;
use spex_core::speculation::{dfs_speculative_select, PlanTarget, SpeculationLedger};
use spex_core::termination::{should_terminate, AnswerTally};
use spex_core::{
    allocate_budgets, ExpansionSlot, HardwareProfile, NodeId, NodeStatus, PolicyConfig, QueryState, SearchTree,
};

const TOL: f64 = 1e-9;

struct Outcome {
    id: u32,
    pass: bool,
    detail: String,
}

fn report(id: u32, pass: bool, detail: String) -> Outcome {
    println!("{} criterion {id}: {detail}", if pass { "PASS" } else { "FAIL" });
    Outcome { id, pass, detail }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL * a.abs().max(b.abs()).max(1.0)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// ---------------------------------------------------------------- criterion 1

fn oracle_ucb(q: f64, n: u64, np: u64, c: f64) -> f64 {
    q + c * ((np as f64).ln() / n as f64).sqrt()
}

/// Plain softmax over `r / t`, then half-away-from-zero or Hamilton rounding.
fn oracle_widths(rewards: &[f64], budget: u32, t: f64, rounding: Rounding) -> Vec<u32> {
    let e: Vec<f64> = rewards.iter().map(|r| (r / t).exp()).collect();
    let z: f64 = e.iter().sum();
    let quotas: Vec<f64> = e.iter().map(|x| budget as f64 * x / z).collect();
    match rounding {
        Rounding::Nearest => quotas.iter().map(|q| q.round() as u32).collect(),
        Rounding::SumPreserving => {
            let mut w: Vec<u32> = quotas.iter().map(|q| q.floor() as u32).collect();
            let mut left = budget - w.iter().sum::<u32>();
            let mut idx: Vec<usize> = (0..quotas.len()).collect();
            idx.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
            for i in idx.into_iter().cycle() {
                if left == 0 {
                    break;
                }
                w[i] += 1;
                left -= 1;
            }
            w
        }
    }
}

fn oracle_score(q: &QueryState, hw: &HardwareProfile) -> f64 {
    let c = q.capacity as f64;
    c * q.hit_rate_est * hw.weight_bytes + c * q.hit_rate_est * q.reusable_kv_bytes
}

/// Highest averages by enumeration: the `k_total` largest quotients
/// `share_i / j` win a unit each, then every query is capped at its capacity.
fn oracle_allocation(qs: &[QueryState], k_total: u32, tau: f64, hw: &HardwareProfile) -> Vec<(u32, u32)> {
    let scores: Vec<f64> = qs.iter().map(|q| oracle_score(q, hw)).collect();
    let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let norm: Vec<f64> = scores
        .iter()
        .map(|s| if hi > lo { (s - lo) / (hi - lo) } else { 0.0 })
        .collect();
    let e: Vec<f64> = norm.iter().map(|n| (tau * n).exp()).collect();
    let z: f64 = e.iter().sum();
    let mut quotients = Vec::new();
    for (i, x) in e.iter().enumerate() {
        for j in 1..=k_total {
            quotients.push((x / z / j as f64, scores[i], qs[i].query_id, i));
        }
    }
    quotients.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));
    let mut seats = vec![0u32; qs.len()];
    for q in quotients.iter().take(k_total as usize) {
        seats[q.3] += 1;
    }
    let mut out: Vec<(u32, u32)> = qs.iter().zip(seats).map(|(q, s)| (q.query_id, s.min(q.capacity))).collect();
    out.sort();
    out
}

fn oracle_terminate(answers: &[(String, f64)], t: u32, alpha: f64) -> bool {
    if (answers.len() as u32) < t {
        return false;
    }
    let mut groups: Vec<(String, u32, f64)> = Vec::new();
    for (label, w) in answers {
        match groups.iter_mut().find(|g| &g.0 == label) {
            Some(g) => {
                g.1 += 1;
                g.2 += w;
            }
            None => groups.push((label.clone(), 1, *w)),
        }
    }
    groups.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
    if groups.len() == 1 {
        return true;
    }
    let second = &groups[1];
    groups[0].2 - second.2 > alpha * (second.2 / second.1 as f64)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let hw = HardwareProfile::memory_bound_7b();
    let trials = 2000;
    let mut failures = Vec::new();

    for i in 0..trials {
        let q: f64 = rng.random_range(-1.0..2.0);
        let n: u64 = rng.random_range(1..500);
        let np: u64 = rng.random_range(n..2000);
        let c: f64 = rng.random_range(0.0..3.0);
        let got = ucb_score(q, n, np, c).unwrap();
        if !close(got, oracle_ucb(q, n, np, c)) {
            failures.push(format!("ucb_score #{i}"));
        }
    }
    if ucb_score(0.5, 0, 3, 1.0).is_ok() || ucb_score(0.5, 1, 0, 1.0).is_ok() {
        failures.push("ucb_score accepted zero visits".into());
    }

    for i in 0..trials {
        let len = rng.random_range(1..12);
        let rewards: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..1.0)).collect();
        let budget = rng.random_range(0..40);
        let t = rng.random_range(0.05..2.0);
        for rounding in [Rounding::Nearest, Rounding::SumPreserving] {
            let got = rebase_widths(&rewards, budget, t, rounding).unwrap();
            if got != oracle_widths(&rewards, budget, t, rounding) {
                failures.push(format!("rebase_widths {rounding:?} #{i}"));
            }
            if rounding == Rounding::SumPreserving && got.iter().sum::<u32>() != budget {
                failures.push(format!("rebase_widths sum #{i}"));
            }
        }
    }

    let random_state = |rng: &mut ChaCha8Rng, id: u32| QueryState {
        query_id: id,
        capacity: rng.random_range(0..10),
        // a few discrete values so equal scores and ties come up
        hit_rate_est: [0.0, 0.25, 0.5, 0.9, rng.random_range(0.0..1.0)][rng.random_range(0..5)],
        reusable_kv_bytes: [0.0, 1e9, rng.random_range(0.0..5e9)][rng.random_range(0..3)],
        active_primary: rng.random_range(0..4),
    };
    for i in 0..trials {
        let s = random_state(&mut rng, i);
        if !close(query_score(&s, &hw), oracle_score(&s, &hw)) {
            failures.push(format!("query_score #{i}"));
        }
    }

    for i in 0..trials {
        let n = rng.random_range(1..7);
        let mut ids: Vec<u32> = (0..20).collect();
        let qs: Vec<QueryState> = (0..n)
            .map(|_| {
                let id = ids.remove(rng.random_range(0..ids.len()));
                random_state(&mut rng, id)
            })
            .collect();
        let k_total = rng.random_range(0..30);
        let tau = rng.random_range(0.1..5.0);
        let got: Vec<(u32, u32)> = allocate_budgets(&qs, k_total, tau, &hw).into_iter().collect();
        if got != oracle_allocation(&qs, k_total, tau, &hw) {
            failures.push(format!("allocate_budgets #{i}: {got:?} vs {:?}", oracle_allocation(&qs, k_total, tau, &hw)));
        }
        if got.iter().map(|g| g.1).sum::<u32>() > k_total {
            failures.push(format!("allocate_budgets over budget #{i}"));
        }
    }

    for i in 0..trials {
        let count = rng.random_range(0..15);
        let unit = rng.random_bool(0.5);
        let answers: Vec<(String, f64)> = (0..count)
            .map(|_| {
                let label = ["a", "b", "c", "d"][rng.random_range(0..4)].to_string();
                let w = if unit { 1.0 } else { rng.random_range(0.0..1.0) };
                (label, w)
            })
            .collect();
        let mut tally = AnswerTally::new();
        for (l, w) in &answers {
            tally.record_answer(l, *w).unwrap();
        }
        let t = rng.random_range(1..12);
        let alpha = rng.random_range(0.0..2.0);
        if should_terminate(&tally, t, alpha) != oracle_terminate(&answers, t, alpha) {
            failures.push(format!("should_terminate #{i}"));
        }
    }

    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs < 10.0;
    report(
        1,
        pass,
        format!(
            "5 functions x {trials} random inputs, {} mismatches, {secs:.2}s{}",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------- criterion 2

fn commit_child(tree: &mut SearchTree, parent: NodeId, reward: f64, terminal: bool) -> NodeId {
    let id = tree.add_node(parent, 10, false).unwrap();
    tree.transition(id, NodeStatus::AwaitingReward).unwrap();
    tree.transition(id, NodeStatus::Committed).unwrap();
    let n = tree.get_mut(id).unwrap();
    n.generated = true;
    n.reward = Some(reward);
    if terminal {
        n.terminal = true;
        tree.transition(id, NodeStatus::TerminalAnswer).unwrap();
    }
    id
}

fn random_tree(rng: &mut ChaCha8Rng, cfg: &PolicyConfig) -> SearchTree {
    let mut tree = SearchTree::new(64);
    let size = rng.random_range(1..=200);
    while tree.len() < size {
        let candidates: Vec<NodeId> = tree
            .nodes()
            .filter(|n| {
                n.status == NodeStatus::Committed
                    && n.depth < cfg.max_depth
                    && tree.primary_child_count(n.id) < cfg.depth_budget.at(n.depth)
            })
            .map(|n| n.id)
            .collect();
        if candidates.is_empty() {
            break;
        }
        let parent = candidates[rng.random_range(0..candidates.len())];
        if rng.random_bool(0.05) {
            // a primary step still in flight
            tree.add_node(parent, 10, false).unwrap();
            continue;
        }
        let reward = rng.random_range(0.0..1.0);
        let child = commit_child(&mut tree, parent, reward, rng.random_bool(0.1));
        backpropagate(&mut tree, child, reward).unwrap();
    }
    tree
}

fn random_policy(rng: &mut ChaCha8Rng) -> PolicyConfig {
    let branching = rng.random_range(1..=4);
    let mut cfg = if rng.random_bool(0.5) {
        PolicyConfig::rstar(10, branching)
    } else {
        PolicyConfig::rest(10, branching)
    };
    cfg.exploration_c = rng.random_range(0.0..2.0);
    cfg.max_depth = rng.random_range(2..12);
    cfg
}

/// Adds the step's children as real in-flight nodes at the picked slots.
fn occupy(tree: &mut SearchTree, pick: ExpansionSlot, width: u32) {
    for i in 0..width {
        tree.add_node_at(pick.parent, pick.slot + i, 1, false).unwrap();
    }
}

/// Runs `k` real selection iterations on a copy of the tree. Each selected
/// step becomes real in-flight children, and the visit counts along its path
/// are bumped as the primary search would on issue.
fn oracle_plan(tree: &SearchTree, ledger: &SpeculationLedger, k: u32, cfg: &PolicyConfig) -> Vec<PlanTarget> {
    let mut t = tree.clone();
    let mut out = Vec::new();
    let mut position = 0;
    'outer: for _ in 0..k {
        let Some(mut pick) = select_target(&t, cfg) else { break };
        position += 1;
        while ledger.active_expansions.contains(&pick) || ledger.completed_speculations.contains_key(&pick) {
            if let Some(&r) = ledger.completed_speculations.get(&pick) {
                backpropagate(&mut t, pick.parent, r).unwrap();
            }
            let w = step_width(cfg, free_slots(&t, cfg, pick.parent)).max(1);
            occupy(&mut t, pick, w);
            match select_target(&t, cfg) {
                Some(p) => pick = p,
                None => break 'outer,
            }
            position += 1;
        }
        let width = step_width(cfg, free_slots(&t, cfg, pick.parent));
        out.push(PlanTarget {
            target: pick,
            width,
            predicted_distance: position,
        });
        for n in t.path(pick.parent) {
            t.get_mut(n).unwrap().visits += 1;
        }
        occupy(&mut t, pick, width);
    }
    out
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = Vec::new();
    let mut with_ledger = 0;
    let trees = 500;
    for i in 0..trees {
        let cfg = random_policy(&mut rng);
        let tree = random_tree(&mut rng, &cfg);
        let k = rng.random_range(1..=5);
        let mut ledger = SpeculationLedger::default();
        if rng.random_bool(0.5) {
            // outstanding speculation sits on slots the policy is about to pick
            let mut probe = tree.clone();
            for _ in 0..rng.random_range(1..4) {
                let Some(pick) = select_target(&probe, &cfg) else { break };
                if rng.random_bool(0.5) {
                    ledger.active_expansions.insert(pick);
                } else {
                    ledger.completed_speculations.insert(pick, rng.random_range(0.0..1.0));
                }
                occupy(&mut probe, pick, 1);
            }
            with_ledger += 1;
        }
        let plan = dfs_speculative_select(&tree, &ledger, k, &cfg, 0.0);
        let expect = oracle_plan(&tree, &ledger, k, &cfg);
        if plan.targets != expect {
            mismatches.push(i);
        }
    }
    report(
        2,
        mismatches.is_empty(),
        format!(
            "{trees} random trees ({with_ledger} with outstanding speculation), {} plans differ from real selection{}",
            mismatches.len(),
            mismatches.first().map(|m| format!(" (first: tree {m})")).unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------- runs and logs

/// Event-log checks gathered from every run of criteria 3 to 7.
#[derive(Default)]
struct LogAudit {
    logs: usize,
    events: usize,
    failures: Vec<String>,
}

static AUDIT: Mutex<LogAudit> = Mutex::new(LogAudit {
    logs: 0,
    events: 0,
    failures: Vec::new(),
});

fn audit(cfg: &ExperimentConfig, seed: u64, flags: Flags, run: &mut RunOutput) {
    let events = std::mem::take(&mut run.trace);
    let mut failure = check_log(&events).err().map(|e| format!("check: {e}"));
    if failure.is_none() {
        let mut buf = Vec::new();
        write_log(&mut buf, &LogHeader::new(cfg, seed, flags), &events).unwrap();
        match replay(&buf[..]) {
            Ok(s) if s.reexecuted => {}
            Ok(_) => failure = Some("replay did not re-execute".into()),
            Err(e) => failure = Some(format!("replay: {e}")),
        }
    }
    let mut a = AUDIT.lock().unwrap();
    a.logs += 1;
    a.events += events.len();
    if let Some(f) = failure {
        a.failures.push(format!("{} seed {seed} [{}]: {f}", cfg.name, flags.label()));
    }
}

/// Baseline and speculative run of one seed, both logs audited.
fn pair(cfg: &ExperimentConfig, seed: u64) -> (RunOutput, RunOutput) {
    let mut cfg = cfg.clone();
    cfg.spex.trace = true;
    let (mut base, mut spec) = run_pair(&cfg, seed).unwrap();
    audit(&cfg, seed, Flags::NONE, &mut base);
    audit(&cfg, seed, cfg.spex.flags, &mut spec);
    (base, spec)
}

fn experiment(name: &str, policy: PolicyConfig, workload: WorkloadSpec, flags: Flags, batch: u32, queries: u32) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(policy);
    cfg.name = name.into();
    cfg.workload = workload;
    cfg.hardware = HardwareProfile::memory_bound_7b();
    cfg.spex.flags = flags;
    cfg.batch_size = batch;
    cfg.num_queries = queries;
    cfg
}

fn noisy(sigma: f64, base: WorkloadSpec) -> WorkloadSpec {
    WorkloadSpec {
        reward_noise_sigma: sigma,
        ..base
    }
}

fn mean_speedup(cfg: &ExperimentConfig, seeds: u64) -> f64 {
    let s: Vec<f64> = (0..seeds)
        .into_par_iter()
        .map(|seed| pair(cfg, seed).1.metrics.speedup)
        .collect();
    mean(&s)
}

const T1_ONLY: Flags = Flags {
    t1: true,
    t2: false,
    t3: false,
};

// ---------------------------------------------------------------- criterion 3

fn criterion_3() -> Outcome {
    let zero = noisy(0.0, WorkloadSpec::default());
    let setups = [
        experiment("rstar-10", PolicyConfig::rstar(10, 2), zero.clone(), T1_ONLY, 2, 2),
        experiment("rest-10", PolicyConfig::rest(10, 3), zero.clone(), T1_ONLY, 2, 2),
        experiment("rebase-16", PolicyConfig::rebase(16), zero, T1_ONLY, 2, 2),
    ];
    let seeds = 100u64;
    let mut lines = Vec::new();
    let mut pass = true;
    for cfg in &setups {
        let differing: Vec<u64> = (0..seeds)
            .into_par_iter()
            .filter(|&seed| {
                let (b, s) = pair(cfg, seed);
                b.trees.len() != s.trees.len()
                    || b.trees.iter().zip(&s.trees).any(|(x, y)| x.committed_view() != y.committed_view())
            })
            .collect();
        pass &= differing.is_empty();
        lines.push(format!("{} {}/{seeds} identical", cfg.name, seeds as usize - differing.len()));
    }
    report(3, pass, format!("zero noise, committed trees with and without speculation: {}", lines.join(", ")))
}

// ---------------------------------------------------------------- criterion 4

fn criterion_4() -> Outcome {
    let cfg = experiment(
        "rstar-10",
        PolicyConfig::rstar(10, 2),
        noisy(0.05, WorkloadSpec::default()),
        Flags::ALL,
        1,
        4,
    );
    assert_eq!(cfg.spex.spec_k, 8);
    assert_eq!(cfg.hardware.reward_latency, 0.1);
    let s = mean_speedup(&cfg, 50);
    report(4, (1.5..=4.0).contains(&s), format!("DFS batch 1, all flags, 50 seeds: mean speedup {s:.3} (band 1.5..4.0)"))
}

// ---------------------------------------------------------------- criterion 5

fn criterion_5() -> Outcome {
    let batches = [1u32, 2, 4, 8];
    let speedups: Vec<f64> = batches
        .iter()
        .map(|&b| {
            let cfg = experiment(
                "rebase-16",
                PolicyConfig::rebase(16),
                noisy(0.05, WorkloadSpec::long_tail()),
                Flags::ALL,
                b,
                16,
            );
            mean_speedup(&cfg, 20)
        })
        .collect();
    let in_band = speedups.iter().all(|s| (1.1..=2.2).contains(s));
    let decreasing = speedups.windows(2).all(|w| w[1] < w[0]);
    let shown: Vec<String> = batches.iter().zip(&speedups).map(|(b, s)| format!("b{b} {s:.3}")).collect();
    report(
        5,
        in_band && decreasing,
        format!("BFS long-tail, all flags, 20 seeds: {} (band 1.1..2.2, strictly decreasing)", shown.join(", ")),
    )
}

// ---------------------------------------------------------------- criterion 6

fn criterion_6() -> Outcome {
    let cfg = experiment(
        "rstar-10",
        PolicyConfig::rstar(10, 2),
        noisy(0.1, WorkloadSpec::default()),
        T1_ONLY,
        1,
        2,
    );
    let seeds = 100u64;
    let per_seed: Vec<Vec<Option<f64>>> = (0..seeds)
        .into_par_iter()
        .map(|seed| {
            let m = pair(&cfg, seed).1.metrics;
            (1..=5).map(|d| m.hit_rate(d)).collect()
        })
        .collect();
    let rates: Vec<f64> = (0..5)
        .map(|d| {
            let v: Vec<f64> = per_seed.iter().filter_map(|r| r[d]).collect();
            mean(&v)
        })
        .collect();
    let ok = rates.iter().all(|r| r.is_finite()) && rates.windows(2).all(|w| w[1] <= w[0]);
    let shown: Vec<String> = rates.iter().enumerate().map(|(d, r)| format!("d{} {r:.3}", d + 1)).collect();
    report(6, ok, format!("DFS sigma 0.1, {seeds} seeds, mean hit rate {} (non-increasing)", shown.join(", ")))
}

// ---------------------------------------------------------------- criterion 7

fn criterion_7() -> Outcome {
    let wl = WorkloadSpec {
        skew: 0.1,
        ..WorkloadSpec::default()
    };
    let run = |flags: Flags| {
        let cfg = experiment("rebase-16-skew", PolicyConfig::rebase(16), wl.clone(), flags, 8, 500);
        pair(&cfg, 0).1.metrics
    };
    let t12 = Flags { t3: false, ..Flags::ALL };
    let t3 = Flags {
        t1: false,
        t2: false,
        t3: true,
    };
    let comparisons = [(Flags::NONE, t3), (t12, Flags::ALL)];
    let results: Vec<_> = comparisons.par_iter().map(|&(off, on)| (run(off), run(on))).collect();
    let mut pass = true;
    let mut lines = Vec::new();
    for ((off, on), (m_off, m_on)) in comparisons.iter().zip(&results) {
        let drop = 1.0 - m_on.makespan / m_off.makespan;
        let gap = (m_on.vote_accuracy - m_off.vote_accuracy).abs();
        pass &= gap <= 0.02 && drop >= 0.10;
        lines.push(format!(
            "[{}] vs [{}]: accuracy {:.3} vs {:.3}, makespan -{:.1}%",
            on.label(),
            off.label(),
            m_on.vote_accuracy,
            m_off.vote_accuracy,
            drop * 100.0
        ));
    }
    report(7, pass, format!("BFS skew 0.1, 500 queries, batch 8: {}", lines.join("; ")))
}

// ---------------------------------------------------------------- criterion 8

fn criterion_8() -> Outcome {
    let a = AUDIT.lock().unwrap();
    report(
        8,
        a.failures.is_empty() && a.logs > 0,
        format!(
            "{} event logs ({} events) from criteria 3-7 checked and replayed, {} rejected{}",
            a.logs,
            a.events,
            a.failures.len(),
            a.failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------- criterion 9

fn criterion_9() -> Outcome {
    let singles = [
        Flags { t1: true, t2: false, t3: false },
        Flags { t1: false, t2: true, t3: false },
        Flags { t1: false, t2: false, t3: true },
    ];
    let setups = [
        experiment("rstar-10", PolicyConfig::rstar(10, 2), noisy(0.05, WorkloadSpec::default()), Flags::ALL, 4, 8),
        experiment("rebase-16", PolicyConfig::rebase(16), noisy(0.05, WorkloadSpec::default()), Flags::ALL, 4, 8),
    ];
    let seeds = 20u64;
    let mut pass = true;
    let mut lines = Vec::new();
    for cfg in &setups {
        let violations: Vec<u64> = (0..seeds)
            .into_par_iter()
            .filter(|&seed| {
                let speedup = |flags: Flags| {
                    let mut c = cfg.clone();
                    c.spex.flags = flags;
                    run_pair(&c, seed).unwrap().1.metrics.speedup
                };
                let all = speedup(Flags::ALL);
                singles.iter().any(|&f| all < speedup(f) * 0.98)
            })
            .collect();
        pass &= violations.is_empty();
        lines.push(format!("{} {}/{seeds} seeds ok", cfg.name, seeds as usize - violations.len()));
    }
    report(9, pass, format!("batch 4, all flags >= each single flag - 2%: {}", lines.join(", ")))
}

#[test]
fn acceptance() {
    let outcomes = vec![
        criterion_1(),
        criterion_2(),
        criterion_3(),
        criterion_4(),
        criterion_5(),
        criterion_6(),
        criterion_7(),
        criterion_8(),
        criterion_9(),
    ];
    let failed: Vec<String> = outcomes
        .iter()
        .filter(|o| !o.pass)
        .map(|o| format!("criterion {}: {}", o.id, o.detail))
        .collect();
    assert!(failed.is_empty(), "failed:\n{}", failed.join("\n"));
}
