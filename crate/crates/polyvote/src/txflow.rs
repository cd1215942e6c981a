//! Transaction generation, q-queue scheduling, and throughput/latency
//! accounting. Arriving transactions are split uniformly across `q` FIFO
//! queues; each transaction-carrying block drains the head of one uniformly
//! chosen queue. Same-queue blocks mined in the same round are counted as
//! redundant — the worst-case duplication model the throughput formula
//! assumes — even though the queues themselves hand out disjoint content.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::model::{SimConfig, Transaction, TxId};

/// The `q` FIFO transaction queues plus the arrival schedule.
#[derive(Debug, Clone)]
pub struct TxQueues {
    queues: Vec<VecDeque<TxId>>,
    lambda_in: f64,
    poisson_arrivals: bool,
    conflict_fraction: f64,
    capacity_per_block: usize,
    arrival_rounds: u64,
    arrived: u64,
    drawn: u64,
}

impl TxQueues {
    pub fn new(config: &SimConfig) -> TxQueues {
        // Transactions are unit-size, so the transaction-block byte size
        // doubles as a per-block transaction capacity.
        let capacity = config.b_t.unwrap_or(1.0).floor().max(1.0) as usize;
        TxQueues {
            queues: vec![VecDeque::new(); config.q],
            lambda_in: config.lambda_in(),
            poisson_arrivals: config.poisson_arrivals,
            conflict_fraction: config.conflict_fraction,
            capacity_per_block: capacity,
            arrival_rounds: 0,
            arrived: 0,
            drawn: 0,
        }
    }

    pub fn q(&self) -> usize {
        self.queues.len()
    }

    pub fn capacity_per_block(&self) -> usize {
        self.capacity_per_block
    }

    /// Admits this round's new transactions: appends their lifecycle records
    /// to `txs` and queues their ids. The default schedule is deterministic
    /// (a fractional accumulator, so `floor(lambda * t)` arrivals after `t`
    /// rounds); the Poisson mode draws the count instead. A new transaction
    /// becomes a double-spend partner of its immediate predecessor with
    /// probability `conflict_fraction` when that predecessor is still
    /// unpaired.
    pub fn arrive(&mut self, round: u32, txs: &mut Vec<Transaction>, rng: &mut impl Rng) {
        let count = if self.poisson_arrivals {
            if self.lambda_in > 0.0 {
                Poisson::new(self.lambda_in)
                    .expect("lambda_in is positive")
                    .sample(rng) as u64
            } else {
                0
            }
        } else {
            // Cumulative-target form: exactly floor(lambda * t) arrivals
            // after t rounds, immune to repeated-addition drift.
            self.arrival_rounds += 1;
            let target = (self.lambda_in * self.arrival_rounds as f64).floor() as u64;
            target.saturating_sub(self.arrived)
        };
        for _ in 0..count {
            let id = TxId(txs.len() as u64);
            let mut conflicts_with = None;
            if let Some(prev) = txs.last_mut() {
                if prev.conflicts_with.is_none()
                    && self.conflict_fraction > 0.0
                    && rng.random_range(0.0..1.0) < self.conflict_fraction
                {
                    prev.conflicts_with = Some(id);
                    conflicts_with = Some(prev.id);
                }
            }
            txs.push(Transaction {
                id,
                arrival_round: round,
                conflicts_with,
                first_mined_round: None,
                confirmed_round: None,
                slow_confirmed_round: None,
            });
            let queue = rng.random_range(0..self.queues.len());
            self.queues[queue].push_back(id);
            self.arrived += 1;
        }
    }

    /// Content for one transaction block: a uniformly chosen queue index and
    /// up to `capacity_per_block` transactions dequeued FIFO from it.
    pub fn draw_block_content(&mut self, rng: &mut impl Rng) -> (usize, Vec<TxId>) {
        let queue = rng.random_range(0..self.queues.len());
        let take = self.capacity_per_block.min(self.queues[queue].len());
        let content: Vec<TxId> = self.queues[queue].drain(..take).collect();
        self.drawn += content.len() as u64;
        (queue, content)
    }

    pub fn queued(&self) -> usize {
        self.queues.iter().map(VecDeque::len).sum()
    }

    pub fn max_queue_len(&self) -> usize {
        self.queues.iter().map(VecDeque::len).max().unwrap_or(0)
    }

    /// Conservation counters: (total arrived, total handed to blocks,
    /// currently queued). The first always equals the sum of the other two.
    pub fn conservation(&self) -> (u64, u64, u64) {
        (self.arrived, self.drawn, self.queued() as u64)
    }
}

/// Block-level throughput counters over a run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ThroughputStats {
    pub honest_tx_blocks: u64,
    /// Honest transaction blocks after collapsing same-queue same-round
    /// duplicates to one.
    pub non_redundant: u64,
    pub rounds: u32,
    pub confirmed_txs: u64,
}

impl ThroughputStats {
    /// Accounts one round's honest transaction blocks by the queues they
    /// drew from: every block counts toward the total, one block per
    /// distinct queue counts as non-redundant.
    pub fn account_round(&mut self, queues_hit: &[usize]) {
        self.rounds += 1;
        self.honest_tx_blocks += queues_hit.len() as u64;
        let mut distinct: Vec<usize> = queues_hit.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        self.non_redundant += distinct.len() as u64;
    }

    pub fn non_redundant_per_round(&self) -> f64 {
        if self.rounds == 0 {
            return 0.0;
        }
        self.non_redundant as f64 / self.rounds as f64
    }

    pub fn non_redundant_fraction(&self) -> f64 {
        if self.honest_tx_blocks == 0 {
            return 1.0;
        }
        self.non_redundant as f64 / self.honest_tx_blocks as f64
    }
}

/// Latency aggregates over a run's transactions, in rounds and (via the
/// round length) seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencySummary {
    /// Non-conflicting transactions confirmed by the list rule.
    pub confirmed_count: u64,
    /// Mean rounds from arrival to first inclusion in a transaction block.
    pub mean_processing_rounds: f64,
    /// Mean rounds from first inclusion to list confirmation.
    pub mean_confirm_rounds: f64,
    pub p95_confirm_rounds: f64,
    pub mean_confirm_seconds: f64,
    /// Double-spend transactions are reported separately, and their
    /// confirmation time uses the depth rule alone.
    pub conflicting_count: u64,
    pub conflicting_confirmed_count: u64,
    pub mean_conflicting_confirm_rounds: Option<f64>,
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Summarizes per-transaction latencies. Processing latency counts every
/// transaction that reached a block; confirmation latency counts confirmed
/// ones, with double-spend pairs split out under the depth rule.
pub fn latency_report(txs: &[Transaction], config: &SimConfig) -> LatencySummary {
    let delta = config.delta();
    let mut processing = Vec::new();
    let mut confirm = Vec::new();
    let mut conflicting_confirm = Vec::new();
    let mut conflicting_count = 0u64;
    for tx in txs {
        let Some(mined) = tx.first_mined_round else {
            continue;
        };
        processing.push((mined - tx.arrival_round) as f64);
        if tx.conflicts_with.is_some() {
            conflicting_count += 1;
            if let Some(done) = tx.slow_confirmed_round {
                conflicting_confirm.push((done - mined) as f64);
            }
        } else if let Some(done) = tx.confirmed_round {
            confirm.push((done - mined) as f64);
        }
    }
    confirm.sort_by(|a, b| a.total_cmp(b));
    LatencySummary {
        confirmed_count: confirm.len() as u64,
        mean_processing_rounds: mean(&processing),
        mean_confirm_rounds: mean(&confirm),
        p95_confirm_rounds: percentile(&confirm, 0.95),
        mean_confirm_seconds: mean(&confirm) * delta,
        conflicting_count,
        conflicting_confirmed_count: conflicting_confirm.len() as u64,
        mean_conflicting_confirm_rounds: if conflicting_confirm.is_empty() {
            None
        } else {
            Some(mean(&conflicting_confirm))
        },
    }
}
