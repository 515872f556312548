//! Per-run measurements.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Distances reported as separate columns.
pub const REPORTED_DISTANCES: u32 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub index: u32,
    pub answer: Option<String>,
    pub correct: bool,
    pub early_terminated: bool,
    pub started_at: f64,
    pub finished_at: f64,
    pub primary_answers: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub queries: u32,
    /// Virtual seconds from the first request to the last query completion.
    pub makespan: f64,
    pub baseline_makespan: f64,
    pub speedup: f64,
    /// Finished queries per virtual minute.
    pub throughput: f64,
    /// Index `d - 1` holds outcomes of predictions made `d` selections ahead.
    pub hits_by_distance: Vec<u64>,
    pub misses_by_distance: Vec<u64>,
    pub generated_tokens: u64,
    pub committed_tokens: u64,
    pub reused_tokens: u64,
    pub wasted_tokens: u64,
    pub critical_path_tokens_saved: u64,
    pub early_terminations: u32,
    pub early_termination_rate: f64,
    pub correct: u32,
    pub vote_accuracy: f64,
    pub outcomes: Vec<QueryOutcome>,
}

impl RunMetrics {
    pub fn hit_rate(&self, distance: u32) -> Option<f64> {
        let i = distance.checked_sub(1)? as usize;
        let h = self.hits_by_distance.get(i).copied().unwrap_or(0);
        let m = self.misses_by_distance.get(i).copied().unwrap_or(0);
        (h + m > 0).then(|| h as f64 / (h + m) as f64)
    }

    pub fn record_distance(&mut self, distance: u32, hit: bool, count: u64) {
        let i = distance.max(1) as usize - 1;
        for v in [&mut self.hits_by_distance, &mut self.misses_by_distance] {
            if v.len() <= i {
                v.resize(i + 1, 0);
            }
        }
        if hit {
            self.hits_by_distance[i] += count;
        } else {
            self.misses_by_distance[i] += count;
        }
    }

    pub fn tokens_conserved(&self) -> bool {
        self.generated_tokens == self.committed_tokens + self.reused_tokens + self.wasted_tokens
    }

    /// Fills the rates derived from counts and the makespan.
    pub fn finalize(&mut self) {
        let n = self.queries.max(1) as f64;
        self.vote_accuracy = if self.queries == 0 { 0.0 } else { self.correct as f64 / n };
        self.early_termination_rate = if self.queries == 0 {
            0.0
        } else {
            self.early_terminations as f64 / n
        };
        self.throughput = if self.makespan > 0.0 {
            self.queries as f64 * 60.0 / self.makespan
        } else {
            0.0
        };
        if self.baseline_makespan == 0.0 {
            self.baseline_makespan = self.makespan;
        }
        self.speedup = if self.makespan > 0.0 {
            self.baseline_makespan / self.makespan
        } else {
            1.0
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hit_rates() {
        let mut m = RunMetrics::default();
        assert_eq!(m.hit_rate(1), None);
        m.record_distance(1, true, 3);
        m.record_distance(1, false, 1);
        m.record_distance(3, false, 2);
        assert_eq!(m.hit_rate(1), Some(0.75));
        assert_eq!(m.hit_rate(2), None);
        assert_eq!(m.hit_rate(3), Some(0.0));
        assert_eq!(m.hit_rate(0), None);
    }

    #[test]
    fn empty_run_finalizes_to_zero() {
        let mut m = RunMetrics::default();
        m.finalize();
        assert_eq!(m.throughput, 0.0);
        assert_eq!(m.speedup, 1.0);
        assert!(m.tokens_conserved());
    }
}
