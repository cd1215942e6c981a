//! Confirmation: vote tallies over the voter trees, the depth-based slow
//! leader rule, the confidence-bound fast list rule, ledger construction
//! from a leader sequence, and per-transaction confirmation.
//!
//! The fast rule never trusts a raw vote count. Each proposer gets a lower
//! confidence bound (votes that have sunk deep enough to be hard to reverse)
//! and an upper bound (everything not pinned down for the others); a level
//! confirms when some proposer's lower bound beats even a fully private
//! rival, and the confirmed list keeps every proposer whose upper bound
//! could still win.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use crate::engine::WorldState;
use crate::model::{BlockId, SimConfig, TxId};

/// Main-chain votes for one proposer level: per-proposer vote depths and the
/// count of trees that have not voted the level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteTally {
    pub level: u32,
    /// Depth of each main-chain vote, per proposer, sorted descending.
    /// Every public proposer at the level is present, possibly with no
    /// votes.
    pub votes: HashMap<BlockId, Vec<u32>>,
    /// Trees with no main-chain vote at this level.
    pub unvoted: u32,
    pub trees: u32,
}

impl VoteTally {
    /// Current vote count for a proposer (`V^0`).
    pub fn count(&self, proposer: BlockId) -> u32 {
        self.votes.get(&proposer).map_or(0, |d| d.len() as u32)
    }

    /// Votes at depth `d` or greater.
    pub fn count_at_depth(&self, proposer: BlockId, d: u32) -> u32 {
        self.votes
            .get(&proposer)
            .map_or(0, |depths| depths.iter().filter(|x| **x >= d).count() as u32)
    }
}

/// Tallies the main-chain votes of every tree at one proposer level. A vote
/// counts only from the tree's current main chain; its depth is the number
/// of main-chain blocks below the voting block.
pub fn tally(world: &WorldState, level: u32) -> VoteTally {
    let m = world.config.m;
    let mut votes: HashMap<BlockId, Vec<u32>> = world
        .level_blocks(level)
        .iter()
        .map(|id| (*id, Vec::new()))
        .collect();
    let mut unvoted = 0u32;
    for tree in 0..m {
        match world.main_chain_vote(tree, level) {
            Some((proposer, depth)) => votes.entry(proposer).or_default().push(depth),
            None => unvoted += 1,
        }
    }
    for depths in votes.values_mut() {
        depths.sort_unstable_by(|a, b| b.cmp(a));
    }
    VoteTally {
        level,
        votes,
        unvoted,
        trees: m as u32,
    }
}

/// Confidence slack at vote depth `d`: `max(1/(4·fv·d), (1−2β)/(8·ln m))`,
/// the fraction of `m` by which a depth-`d` vote count may still move.
/// Depth 0 gives no confidence (`δ_0 = 1`). With a single tree the
/// concentration argument is vacuous, so the slack is infinite and the fast
/// rule never fires.
pub fn delta_d(d: u32, fv_round: f64, beta: f64, m: usize) -> f64 {
    if d == 0 {
        return 1.0;
    }
    let walk = 1.0 / (4.0 * fv_round * d as f64);
    let ln_m = (m as f64).ln();
    let floor = if ln_m > 0.0 {
        (1.0 - 2.0 * beta) / (8.0 * ln_m)
    } else {
        f64::INFINITY
    };
    walk.max(floor)
}

/// Per-proposer confidence interval on final vote counts, plus the bound on
/// a proposer the adversary may still be withholding.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceBounds {
    pub lower: HashMap<BlockId, f64>,
    pub upper: HashMap<BlockId, f64>,
    pub private_upper: f64,
}

/// Computes vote-count confidence bounds from a tally:
/// `V̲_n = max_{d≥1} (V_n^d − cp·δ_d·m)₊`, `V̄_n = m − Σ_{n'≠n} V̲_{n'}`,
/// and `V̄_private = m − Σ_n V̲_n`.
pub fn bounds(tally: &VoteTally, config: &SimConfig) -> ConfidenceBounds {
    let m = config.m as f64;
    let mut lower: HashMap<BlockId, f64> = HashMap::with_capacity(tally.votes.len());
    for (proposer, depths) in &tally.votes {
        // The bound over d is a step function that only moves at realized
        // depths, so the max is attained at one of them.
        let mut best = 0.0f64;
        for (i, d) in depths.iter().enumerate() {
            if *d == 0 {
                continue;
            }
            let at_least = (i + 1) as f64;
            let slack = config.cp_multiplier * delta_d(*d, config.fv_round, config.beta, config.m) * m;
            best = best.max((at_least - slack).max(0.0));
        }
        lower.insert(*proposer, best);
    }
    let total_lower: f64 = lower.values().sum();
    let upper: HashMap<BlockId, f64> = lower
        .iter()
        .map(|(p, lo)| (*p, m - (total_lower - lo)))
        .collect();
    ConfidenceBounds {
        lower,
        upper,
        private_upper: m - total_lower,
    }
}

/// The fast rule: confirms when the best lower bound beats the private upper
/// bound, returning the list of proposers whose upper bound still exceeds
/// the best lower bound, sorted by id.
pub fn try_list_confirm(bounds: &ConfidenceBounds) -> Option<Vec<BlockId>> {
    let best = bounds.lower.values().fold(0.0f64, |a, b| a.max(*b));
    if !(best > bounds.private_upper) {
        return None;
    }
    let mut pi: Vec<BlockId> = bounds
        .upper
        .iter()
        .filter(|(_, up)| **up > best)
        .map(|(p, _)| *p)
        .collect();
    pi.sort_unstable();
    Some(pi)
}

/// Current plurality leader at a level: most main-chain votes, ties to the
/// smaller display hash. `None` only for an unoccupied level.
pub fn leader(tally: &VoteTally, seed: u64) -> Option<BlockId> {
    tally
        .votes
        .keys()
        .min_by_key(|p| {
            (
                std::cmp::Reverse(tally.count(**p)),
                p.pseudo_hash(seed),
                p.0,
            )
        })
        .copied()
}

/// The slow rule's depth threshold `k(ε) = ceil((2/γ)·ln(8·m·r_max/ε))` with
/// `γ = (1−2β)²/36`, or the configured override. Saturates at `u32::MAX`
/// (the rule simply never fires) for security margins too thin to confirm.
pub fn slow_k(config: &SimConfig) -> u32 {
    if let Some(k) = config.k_override {
        return k;
    }
    let gamma = (1.0 - 2.0 * config.beta).powi(2) / 36.0;
    let inner = 8.0 * config.m as f64 * config.r_max as f64 / config.epsilon;
    let k = ((2.0 / gamma) * inner.ln()).ceil();
    if k >= u32::MAX as f64 {
        u32::MAX
    } else {
        k as u32
    }
}

/// The slow rule: confirms the current leader once every tree's main chain
/// votes this level at depth ≥ `k(ε)`.
pub fn slow_confirm(world: &WorldState, level: u32, config: &SimConfig) -> Option<BlockId> {
    let k = slow_k(config);
    for tree in 0..world.config.m {
        match world.main_chain_vote(tree, level) {
            Some((_, depth)) if depth >= k => {}
            _ => return None,
        }
    }
    leader(&tally(world, level), world.config.seed)
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("reference to unknown block {0:?}")]
    DanglingReference(BlockId),
}

/// Reference-order ledger expansion with sanitization folded in, reusable
/// incrementally: feeding leaders one by one produces exactly the ledger of
/// the whole sequence, so earlier output is always a prefix.
#[derive(Debug, Clone, Default)]
struct LedgerBuilder {
    visited: HashSet<BlockId>,
    seen: HashSet<TxId>,
    losers: HashSet<TxId>,
    out: Vec<TxId>,
}

impl LedgerBuilder {
    /// Expands one proposer block: its transaction references first, then its
    /// proposer references depth-first in stated order, each block once.
    fn extend(&mut self, world: &WorldState, root: BlockId) -> Result<(), LedgerError> {
        let mut stack = vec![root];
        while let Some(id) = stack.pop() {
            if !self.visited.insert(id) {
                continue;
            }
            let block = world
                .proposer(id)
                .ok_or(LedgerError::DanglingReference(id))?;
            for t in &block.tx_refs {
                if self.visited.insert(*t) {
                    let tx_block = world
                        .tx_block(*t)
                        .ok_or(LedgerError::DanglingReference(*t))?;
                    for tx in &tx_block.txs {
                        self.push_tx(world, *tx);
                    }
                }
            }
            for q in block.prop_refs.iter().rev() {
                if !self.visited.contains(q) {
                    stack.push(*q);
                }
            }
        }
        Ok(())
    }

    fn push_tx(&mut self, world: &WorldState, tx: TxId) {
        if self.losers.contains(&tx) || !self.seen.insert(tx) {
            return;
        }
        self.out.push(tx);
        if let Some(partner) = world.txs[tx.0 as usize].conflicts_with {
            if !self.seen.contains(&partner) {
                self.losers.insert(partner);
            }
        }
    }
}

/// Builds the sanitized ledger of a leader sequence: each leader's reference
/// closure expanded depth-first in reference order, duplicates dropped, and
/// only the first spend of any conflicting pair kept.
pub fn build_ledger(world: &WorldState, sequence: &[BlockId]) -> Result<Vec<TxId>, LedgerError> {
    let mut builder = LedgerBuilder::default();
    for leader in sequence {
        builder.extend(world, *leader)?;
    }
    Ok(builder.out)
}

/// Drops duplicates and conflicting-pair losers from a raw transaction list,
/// keeping first occurrences. Idempotent.
pub fn sanitize_ledger(world: &WorldState, raw: &[TxId]) -> Vec<TxId> {
    let mut builder = LedgerBuilder::default();
    for tx in raw {
        builder.push_tx(world, *tx);
    }
    builder.out
}

/// The slow-rule ledger: leaders of every consecutively slow-confirmed level
/// from level 1, expanded through [`build_ledger`].
pub fn ordered_confirmed_txs(world: &WorldState, config: &SimConfig) -> Vec<TxId> {
    let mut leaders = Vec::new();
    let mut level = 1;
    while level <= world.max_level() {
        match slow_confirm(world, level, config) {
            Some(l) => leaders.push(l),
            None => break,
        }
        level += 1;
    }
    build_ledger(world, &leaders).expect("engine references resolve")
}

/// Cap on how many leader-sequence selections the exact product rule will
/// enumerate; beyond it [`is_tx_confirmed`] conservatively answers `false`.
pub const SELECTION_CAP: usize = 4096;

/// Exact list-decoding confirmation: `true` iff the transaction appears in
/// the sanitized ledger of every selection through the confirmed lists
/// `Π₁ × … × Π_ℓ`. An empty prefix confirms nothing; products larger than
/// [`SELECTION_CAP`] conservatively answer `false`.
pub fn is_tx_confirmed(world: &WorldState, fast: &[FastLevel], tx: TxId) -> bool {
    if fast.is_empty() {
        return false;
    }
    let mut size = 1usize;
    for f in fast {
        size = size.saturating_mul(f.pi.len().max(1));
        if size > SELECTION_CAP {
            return false;
        }
    }
    let mut idx = vec![0usize; fast.len()];
    loop {
        let seq: Vec<BlockId> = fast.iter().zip(&idx).map(|(f, i)| f.pi[*i]).collect();
        let ledger = build_ledger(world, &seq).expect("engine references resolve");
        if !ledger.contains(&tx) {
            return false;
        }
        let mut pos = 0;
        loop {
            if pos == idx.len() {
                return true;
            }
            idx[pos] += 1;
            if idx[pos] < fast[pos].pi.len() {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

/// Transaction blocks reachable from one proposer block through references.
fn tx_block_closure(world: &WorldState, root: BlockId) -> HashSet<BlockId> {
    let mut visited = HashSet::new();
    let mut found = HashSet::new();
    let mut stack = vec![root];
    while let Some(id) = stack.pop() {
        if !visited.insert(id) {
            continue;
        }
        let block = world.proposer(id).expect("closure over proposer blocks");
        for t in &block.tx_refs {
            found.insert(*t);
        }
        for q in &block.prop_refs {
            if !visited.contains(q) {
                stack.push(*q);
            }
        }
    }
    found
}

/// One fast-confirmed level: its list, the confirmation round, and the round
/// the level was born (for latency accounting).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FastLevel {
    pub level: u32,
    pub pi: Vec<BlockId>,
    pub round: u32,
    pub born_round: u32,
}

/// One slow-confirmed level and its leader at confirmation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlowLevel {
    pub level: u32,
    pub leader: BlockId,
    pub round: u32,
}

/// End-of-run audit: how often each confirmation-time claim was contradicted
/// by the final state. Instances count the claims checked.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SafetyReport {
    /// Fast-confirmed levels whose final leader must be in the list.
    pub list_instances: u64,
    pub list_violations: u64,
    /// Slow-confirmed levels whose leader must never change.
    pub slow_instances: u64,
    pub slow_violations: u64,
    /// (level, proposer) lower bounds checked against final vote counts.
    pub bound_instances: u64,
    pub bound_violations: u64,
    /// Levels confirmed by both rules: the slow leader must be in the list.
    pub consistency_instances: u64,
    pub consistency_violations: u64,
}

impl SafetyReport {
    pub fn total_violations(&self) -> u64 {
        self.list_violations + self.slow_violations + self.bound_violations
            + self.consistency_violations
    }
}

/// Round-by-round confirmation driver: advances both rules' frontiers,
/// stamps transaction confirmation rounds, and accumulates the audit trail.
#[derive(Debug, Clone)]
pub struct ConfirmState {
    fast: Vec<FastLevel>,
    slow: Vec<SlowLevel>,
    /// Transaction blocks already known to be in every selection's ledger.
    covered: HashSet<BlockId>,
    /// Max lower bound ever claimed per (level, proposer).
    audit_lower: HashMap<(u32, BlockId), f64>,
    slow_builder: LedgerBuilder,
}

impl ConfirmState {
    pub fn new(_config: &SimConfig) -> ConfirmState {
        ConfirmState {
            fast: Vec::new(),
            slow: Vec::new(),
            covered: HashSet::new(),
            audit_lower: HashMap::new(),
            slow_builder: LedgerBuilder::default(),
        }
    }

    /// Lowest level not yet fast-confirmed.
    pub fn fast_frontier(&self) -> u32 {
        self.fast.len() as u32 + 1
    }

    /// Lowest level not yet slow-confirmed.
    pub fn slow_frontier(&self) -> u32 {
        self.slow.len() as u32 + 1
    }

    pub fn fast_levels(&self) -> &[FastLevel] {
        &self.fast
    }

    pub fn slow_levels(&self) -> &[SlowLevel] {
        &self.slow
    }

    /// The slow-rule ledger so far (grows by appending only).
    pub fn slow_ledger(&self) -> &[TxId] {
        &self.slow_builder.out
    }

    /// Advances both confirmation frontiers after a round. Confirmation is
    /// consecutive: each rule stops at its first unconfirmable level.
    pub fn update(&mut self, world: &mut WorldState) {
        let round = world.round;
        let mut fast_grew = false;
        loop {
            let level = self.fast.len() as u32 + 1;
            if level > world.max_level() {
                break;
            }
            let t = tally(world, level);
            let b = bounds(&t, &world.config);
            for (p, lo) in &b.lower {
                let e = self.audit_lower.entry((level, *p)).or_insert(0.0);
                if *lo > *e {
                    *e = *lo;
                }
            }
            let Some(pi) = try_list_confirm(&b) else {
                break;
            };
            // A non-conflicting transaction is confirmed once some level's
            // whole list refers to its block: then every selection's ledger
            // contains it. Conflicting ones go through the exact product
            // rule below.
            let mut hit: Option<HashSet<BlockId>> = None;
            for p in &pi {
                let closure = tx_block_closure(world, *p);
                hit = Some(match hit {
                    None => closure,
                    Some(mut h) => {
                        h.retain(|x| closure.contains(x));
                        h
                    }
                });
            }
            let mut new_blocks: Vec<BlockId> = hit
                .unwrap_or_default()
                .into_iter()
                .filter(|b| !self.covered.contains(b))
                .collect();
            new_blocks.sort_unstable();
            for blk in new_blocks {
                self.covered.insert(blk);
                let txs = world.tx_block(blk).expect("closure holds tx blocks").txs.clone();
                for tx in txs {
                    let rec = &mut world.txs[tx.0 as usize];
                    if rec.conflicts_with.is_none() && rec.confirmed_round.is_none() {
                        rec.confirmed_round = Some(round);
                    }
                }
            }
            self.fast.push(FastLevel {
                level,
                pi,
                round,
                born_round: world.born_round(level),
            });
            fast_grew = true;
        }
        if fast_grew {
            self.reevaluate_conflicting(world, round);
        }
        loop {
            let level = self.slow.len() as u32 + 1;
            if level > world.max_level() {
                break;
            }
            let Some(lead) = slow_confirm(world, level, &world.config) else {
                break;
            };
            let before = self.slow_builder.out.len();
            self.slow_builder
                .extend(world, lead)
                .expect("engine references resolve");
            for i in before..self.slow_builder.out.len() {
                let tx = self.slow_builder.out[i];
                let rec = &mut world.txs[tx.0 as usize];
                if rec.slow_confirmed_round.is_none() {
                    rec.slow_confirmed_round = Some(round);
                }
            }
            self.slow.push(SlowLevel {
                level,
                leader: lead,
                round,
            });
        }
    }

    /// Exact product-rule pass for mined, unconfirmed double-spend
    /// transactions; runs only when the fast frontier advanced.
    fn reevaluate_conflicting(&self, world: &mut WorldState, round: u32) {
        let candidates: Vec<usize> = world
            .txs
            .iter()
            .enumerate()
            .filter(|(_, t)| {
                t.conflicts_with.is_some()
                    && t.first_mined_round.is_some()
                    && t.confirmed_round.is_none()
            })
            .map(|(i, _)| i)
            .collect();
        if candidates.is_empty() {
            return;
        }
        let mut size = 1usize;
        for f in &self.fast {
            size = size.saturating_mul(f.pi.len());
            if size > SELECTION_CAP {
                return;
            }
        }
        let mut ledgers: Vec<HashSet<TxId>> = Vec::with_capacity(size);
        let mut idx = vec![0usize; self.fast.len()];
        'outer: loop {
            let seq: Vec<BlockId> = self.fast.iter().zip(&idx).map(|(f, i)| f.pi[*i]).collect();
            let ledger = build_ledger(world, &seq).expect("engine references resolve");
            ledgers.push(ledger.into_iter().collect());
            let mut pos = 0;
            loop {
                if pos == idx.len() {
                    break 'outer;
                }
                idx[pos] += 1;
                if idx[pos] < self.fast[pos].pi.len() {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
            }
        }
        for i in candidates {
            let id = TxId(i as u64);
            if ledgers.iter().all(|s| s.contains(&id)) {
                world.txs[i].confirmed_round = Some(round);
            }
        }
    }

    /// End-of-run audit against the final state.
    pub fn finalize(&self, world: &WorldState) -> SafetyReport {
        let mut rep = SafetyReport::default();
        let seed = world.config.seed;
        let mut final_tallies: HashMap<u32, VoteTally> = HashMap::new();
        let mut tally_at = |level: u32, world: &WorldState| -> VoteTally {
            final_tallies
                .entry(level)
                .or_insert_with(|| tally(world, level))
                .clone()
        };
        for f in &self.fast {
            rep.list_instances += 1;
            let lead = leader(&tally_at(f.level, world), seed).expect("confirmed level is occupied");
            if !f.pi.contains(&lead) {
                rep.list_violations += 1;
            }
        }
        for s in &self.slow {
            rep.slow_instances += 1;
            let lead = leader(&tally_at(s.level, world), seed);
            if lead != Some(s.leader) {
                rep.slow_violations += 1;
            }
            if let Some(f) = self.fast.get(s.level as usize - 1) {
                debug_assert_eq!(f.level, s.level);
                rep.consistency_instances += 1;
                if !f.pi.contains(&s.leader) {
                    rep.consistency_violations += 1;
                }
            }
        }
        for ((level, p), lo) in &self.audit_lower {
            rep.bound_instances += 1;
            let final_votes = tally_at(*level, world).count(*p) as f64;
            if *lo > final_votes + 1e-9 {
                rep.bound_violations += 1;
            }
        }
        rep
    }
}
