//! Inter-query speculative budget: a roofline-derived global concurrency and
//! a softmax split over per-query utility scores.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareProfile {
    /// Model parameter bytes streamed once per decode step.
    pub weight_bytes: f64,
    /// Bytes per second.
    pub mem_bandwidth: f64,
    /// FLOP per second.
    pub peak_compute: f64,
    pub flops_per_token: f64,
    pub kv_bytes_per_token: f64,
    /// Reward model delay after a step finishes, in seconds.
    pub reward_latency: f64,
}

impl HardwareProfile {
    /// 7B-class model in fp16 on a single accelerator: 14 GB of weights,
    /// 700 GB/s, 100 TFLOP/s, 0.5 MiB of KV per token.
    pub fn memory_bound_7b() -> Self {
        Self {
            weight_bytes: 14e9,
            mem_bandwidth: 7e11,
            peak_compute: 1e14,
            flops_per_token: 14e9,
            kv_bytes_per_token: 524_288.0,
            reward_latency: 0.1,
        }
    }

    pub fn validate(&self) -> Result<(), BudgetError> {
        let fields = [
            ("weight_bytes", self.weight_bytes),
            ("mem_bandwidth", self.mem_bandwidth),
            ("peak_compute", self.peak_compute),
            ("flops_per_token", self.flops_per_token),
            ("kv_bytes_per_token", self.kv_bytes_per_token),
            ("reward_latency", self.reward_latency),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || v.is_nan() {
                return Err(BudgetError::NonPositive(name));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BudgetError {
    #[error("compute slope never overtakes memory slope")]
    Unsatisfiable,
    #[error("hardware field `{0}` must be positive")]
    NonPositive(&'static str),
}

/// Smallest batch at which one decode step is compute-bound:
/// `B * F / P >= (W + B * kv) / BW`.
pub fn roofline_batch(hw: &HardwareProfile, avg_kv_bytes: f64) -> Result<u32, BudgetError> {
    let compute_slope = hw.flops_per_token / hw.peak_compute;
    let memory_slope = avg_kv_bytes / hw.mem_bandwidth;
    let net = compute_slope - memory_slope;
    if !(net > 0.0) || !net.is_finite() {
        return Err(BudgetError::Unsatisfiable);
    }
    let b = libm::ceil((hw.weight_bytes / hw.mem_bandwidth) / net);
    Ok(if b >= u32::MAX as f64 { u32::MAX } else { b.max(1.0) as u32 })
}

/// Global speculative budget: roofline batch minus the batch already active,
/// with `cap` standing in when the compute ceiling never binds.
pub fn roofline_k_total(hw: &HardwareProfile, active_batch: u32, avg_kv_bytes: f64, cap: u32) -> u32 {
    let b = roofline_batch(hw, avg_kv_bytes).map_or(cap, |b| b.min(cap));
    b.saturating_sub(active_batch)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryState {
    pub query_id: u32,
    /// Exploitable parallel capacity inside the query.
    pub capacity: u32,
    /// Estimated probability that a speculative branch gets used.
    pub hit_rate_est: f64,
    /// KV bytes the speculative branches can share with the primary path.
    pub reusable_kv_bytes: f64,
    pub active_primary: u32,
}

impl QueryState {
    pub fn new(query_id: u32) -> Self {
        Self {
            query_id,
            capacity: 0,
            hit_rate_est: 0.5,
            reusable_kv_bytes: 0.0,
            active_primary: 0,
        }
    }
}

/// `C_q * P_q * (S_w + S_KV(q))`.
pub fn query_score(q: &QueryState, hw: &HardwareProfile) -> f64 {
    q.capacity as f64 * q.hit_rate_est * (hw.weight_bytes + q.reusable_kv_bytes)
}

/// Splits `k_total` across queries:
/// `k_q = min(C_q, floor(k_total * softmax(tau * s)_q))` on min-max
/// normalised scores. Units lost to flooring are apportioned by the
/// divisor rule before the capacity cap; excess above a cap stays unused.
pub fn allocate_budgets(
    queries: &[QueryState],
    k_total: u32,
    tau: f64,
    hw: &HardwareProfile,
) -> BTreeMap<u32, u32> {
    if queries.is_empty() {
        return BTreeMap::new();
    }
    let scores: Vec<f64> = queries.iter().map(|q| query_score(q, hw)).collect();
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let norm: Vec<f64> = scores
        .iter()
        .map(|&s| if hi > lo { (s - lo) / (hi - lo) } else { 0.0 })
        .collect();
    let exps: Vec<f64> = norm.iter().map(|&n| libm::exp(tau * (n - 1.0))).collect();
    let sum: f64 = exps.iter().sum();

    // Divisor apportionment: each unit goes to the query with the largest
    // share per already-held unit. Every query ends at or above
    // floor(k_total * share), and raising one share never costs that query
    // a unit, which a plain floor-then-leftover pass cannot promise.
    let shares: Vec<f64> = exps.iter().map(|&e| e / sum).collect();
    let mut seats = alloc::vec![0u32; queries.len()];
    for _ in 0..k_total {
        let mut best = 0;
        for i in 1..queries.len() {
            let a = shares[i] / (seats[i] + 1) as f64;
            let b = shares[best] / (seats[best] + 1) as f64;
            let ord = a
                .total_cmp(&b)
                .then(scores[i].total_cmp(&scores[best]))
                .then(queries[best].query_id.cmp(&queries[i].query_id));
            if ord.is_gt() {
                best = i;
            }
        }
        seats[best] += 1;
    }
    let k: Vec<u32> = seats
        .iter()
        .zip(queries)
        .map(|(&s, q)| s.min(q.capacity))
        .collect();
    queries.iter().map(|q| q.query_id).zip(k).collect()
}

/// Exponential moving average of speculation outcomes.
pub fn update_hit_rate(q: &mut QueryState, hit: bool, ema_alpha: f64) {
    let x = if hit { 1.0 } else { 0.0 };
    q.hit_rate_est = ema_alpha * x + (1.0 - ema_alpha) * q.hit_rate_est;
}
