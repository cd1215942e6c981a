//! The round loop: sample mining, let the rushing adversary act, apply the
//! honest protocol rules, and maintain the public and private views.
//!
//! One `WorldState` models the aggregate honest view — the synchronous model
//! gives every honest node the same public state at round boundaries, and
//! whatever freedom honest nodes individually have (which tied chain to mine
//! on, which equally-early proposer block to vote for) is exactly the
//! influence [`HonestDirectives`] grants the adversary.
//!
//! A round executes in a fixed order: (1) mining counts are sampled; (2) the
//! strategy observes the sample and the public state and answers with
//! releases, drafts for its own blocks, and directives; (3) its releases
//! merge into the public view; (4) honest blocks are constructed under the
//! protocol rules; (5) its drafts materialize, entering the private set or
//! publishing immediately; (6) the round counter advances.

use std::collections::{BTreeSet, HashMap, HashSet};

use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::adversary::{
    AdversaryAction, AdversaryStrategy, BlockDraft, DraftContent, ParentRef, RefPolicy, TargetRef,
    VoteTargets,
};
use crate::confirm::{self, ConfirmState, SafetyReport};
use crate::model::{
    round_rng, sample_round, BlockId, Miner, ProposerBlock, RngStream, RoundSample, SimConfig,
    Transaction, TransactionBlock, TxId, VoterBlock,
};
use crate::txflow::{LatencySummary, ThroughputStats, TxQueues};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] crate::model::ConfigError),
    #[error("strategy fault at round {round}: {reason}")]
    StrategyFault { round: u32, reason: String },
}

fn fault(round: u32, reason: impl Into<String>) -> EngineError {
    EngineError::StrategyFault {
        round,
        reason: reason.into(),
    }
}

/// Adversary-chosen resolutions of the honest protocol's free choices. Every
/// entry must be protocol-legal: a genuinely deepest tip, a proposer block
/// among those that arrived earliest at their level, a parent at the deepest
/// proposer level. Absent entries fall back to the deterministic defaults:
/// smallest display hash for tied tips and parents, each voter block's own
/// first-seen draw for votes within a cohort.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HonestDirectives {
    /// Per tree: which tied longest-chain tip honest voter blocks extend.
    pub voter_tips: HashMap<usize, BlockId>,
    /// Per (tree, level): which earliest-arrival proposer block the tree's
    /// new vote targets.
    pub votes: HashMap<(usize, u32), BlockId>,
    /// Parents for this round's honest proposer blocks, cycled in order.
    pub proposer_parents: Vec<BlockId>,
}

/// What one round did: every id the public view gained, and what the
/// adversary mined.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoundLog {
    pub round: u32,
    pub released: Vec<BlockId>,
    pub honest_voters: Vec<BlockId>,
    pub honest_proposers: Vec<BlockId>,
    pub honest_txs: Vec<BlockId>,
    pub adversary_mined: Vec<BlockId>,
    pub adversary_published: Vec<BlockId>,
}

/// Confirmation frontiers the strategy may consult (lowest level not yet
/// confirmed by each rule).
#[derive(Debug, Clone, Copy, Default)]
pub struct ConfirmView {
    pub fast_frontier: u32,
    pub slow_frontier: u32,
}

/// Everything a strategy sees when acting: the public world, its own private
/// blocks (readable through the world's accessors), this round's sample, and
/// the confirmation frontiers.
pub struct Observation<'a> {
    pub world: &'a WorldState,
    pub sample: &'a RoundSample,
    pub round: u32,
    pub confirm: ConfirmView,
}

#[derive(Debug, Clone, Default)]
struct Pool {
    order: Vec<BlockId>,
    members: HashSet<BlockId>,
}

impl Pool {
    fn insert(&mut self, id: BlockId) {
        if self.members.insert(id) {
            self.order.push(id);
        }
    }

    fn remove(&mut self, id: BlockId) {
        self.members.remove(&id);
    }

    fn snapshot(&mut self) -> Vec<BlockId> {
        self.order.retain(|id| self.members.contains(id));
        self.order.clone()
    }
}

#[derive(Debug, Clone)]
struct LevelState {
    /// Public blocks at this level in publication order.
    blocks: Vec<BlockId>,
    born_round: u32,
    /// Blocks published in the level's birth round — the only legal vote
    /// recipients. Later arrivals never join.
    cohort: Vec<BlockId>,
}

#[derive(Debug, Clone)]
struct TreeState {
    /// Depth of every known block on this tree, private included.
    depth: HashMap<BlockId, u32>,
    /// Depth of the deepest public block.
    tip_depth: u32,
    /// All public blocks at `tip_depth`.
    deepest: Vec<BlockId>,
    /// The tally main chain: genesis to the chosen tip.
    spine: Vec<BlockId>,
    spine_index: HashMap<BlockId, u32>,
    /// level -> (proposer voted, spine position of the voting block).
    spine_votes: HashMap<u32, (BlockId, u32)>,
    /// Occupied proposer levels the spine has not voted.
    unvoted: BTreeSet<u32>,
}

/// The complete simulated system at a round boundary.
#[derive(Debug, Clone)]
pub struct WorldState {
    pub config: SimConfig,
    pub round: u32,
    proposers: HashMap<BlockId, ProposerBlock>,
    voters: HashMap<BlockId, VoterBlock>,
    tx_blocks: HashMap<BlockId, TransactionBlock>,
    pub txs: Vec<Transaction>,
    queues: TxQueues,
    levels: Vec<LevelState>,
    trees: Vec<TreeState>,
    first_public: HashMap<BlockId, u32>,
    private: BTreeSet<BlockId>,
    referred: HashSet<BlockId>,
    unreferred_tx: Pool,
    unreferred_prop: Pool,
    pub throughput: ThroughputStats,
    next_id: u64,
    prop_genesis: BlockId,
    voter_genesis: Vec<BlockId>,
}

impl WorldState {
    pub fn new(config: SimConfig) -> WorldState {
        let m = config.m;
        let queues = TxQueues::new(&config);
        let mut world = WorldState {
            config,
            round: 0,
            proposers: HashMap::new(),
            voters: HashMap::new(),
            tx_blocks: HashMap::new(),
            txs: Vec::new(),
            queues,
            levels: Vec::new(),
            trees: Vec::new(),
            first_public: HashMap::new(),
            private: BTreeSet::new(),
            referred: HashSet::new(),
            unreferred_tx: Pool::default(),
            unreferred_prop: Pool::default(),
            throughput: ThroughputStats::default(),
            next_id: 0,
            prop_genesis: BlockId(0),
            voter_genesis: Vec::new(),
        };
        let genesis = world.alloc_id();
        world.prop_genesis = genesis;
        world.proposers.insert(
            genesis,
            ProposerBlock {
                id: genesis,
                parent: genesis,
                level: 0,
                tx_refs: Vec::new(),
                prop_refs: Vec::new(),
                miner: Miner::Honest,
                mined_round: 0,
                content_empty: false,
            },
        );
        world.first_public.insert(genesis, 0);
        world.levels.push(LevelState {
            blocks: vec![genesis],
            born_round: 0,
            cohort: vec![genesis],
        });
        for tree in 0..m {
            let id = world.alloc_id();
            world.voter_genesis.push(id);
            world.voters.insert(
                id,
                VoterBlock {
                    id,
                    tree_index: tree,
                    parent: id,
                    votes: Vec::new(),
                    miner: Miner::Honest,
                    mined_round: 0,
                    content_empty: false,
                },
            );
            world.first_public.insert(id, 0);
            let mut depth = HashMap::new();
            depth.insert(id, 0);
            let mut spine_index = HashMap::new();
            spine_index.insert(id, 0);
            world.trees.push(TreeState {
                depth,
                tip_depth: 0,
                deepest: vec![id],
                spine: vec![id],
                spine_index,
                spine_votes: HashMap::new(),
                unvoted: BTreeSet::new(),
            });
        }
        world
    }

    fn alloc_id(&mut self) -> BlockId {
        let id = BlockId(self.next_id);
        self.next_id += 1;
        id
    }

    /// Display hash used by every tie-break this run.
    pub fn hash(&self, id: BlockId) -> u64 {
        id.pseudo_hash(self.config.seed)
    }

    fn min_hash(&self, ids: &[BlockId]) -> BlockId {
        *ids.iter()
            .min_by_key(|id| (self.hash(**id), id.0))
            .expect("nonempty candidate set")
    }

    // ----- public queries ---------------------------------------------

    pub fn max_level(&self) -> u32 {
        (self.levels.len() - 1) as u32
    }

    pub fn level_blocks(&self, level: u32) -> &[BlockId] {
        &self.levels[level as usize].blocks
    }

    /// The vote-eligible proposer blocks at a level: exactly those published
    /// in the level's birth round.
    pub fn cohort(&self, level: u32) -> &[BlockId] {
        &self.levels[level as usize].cohort
    }

    pub fn born_round(&self, level: u32) -> u32 {
        self.levels[level as usize].born_round
    }

    pub fn proposer(&self, id: BlockId) -> Option<&ProposerBlock> {
        self.proposers.get(&id)
    }

    pub fn voter(&self, id: BlockId) -> Option<&VoterBlock> {
        self.voters.get(&id)
    }

    pub fn tx_block(&self, id: BlockId) -> Option<&TransactionBlock> {
        self.tx_blocks.get(&id)
    }

    pub fn is_public(&self, id: BlockId) -> bool {
        self.first_public.contains_key(&id)
    }

    pub fn first_public_round(&self, id: BlockId) -> Option<u32> {
        self.first_public.get(&id).copied()
    }

    pub fn private_ids(&self) -> impl Iterator<Item = BlockId> + '_ {
        self.private.iter().copied()
    }

    pub fn tree_tip_depth(&self, tree: usize) -> u32 {
        self.trees[tree].tip_depth
    }

    /// Depth of a voter block, private blocks included.
    pub fn voter_depth(&self, id: BlockId) -> Option<u32> {
        let block = self.voters.get(&id)?;
        self.trees[block.tree_index].depth.get(&id).copied()
    }

    /// The tally main chain of a tree, genesis first.
    pub fn main_chain(&self, tree: usize) -> &[BlockId] {
        &self.trees[tree].spine
    }

    /// The proposer this tree's main chain votes at `level`, with the vote's
    /// depth (number of main-chain descendants of the voting block).
    pub fn main_chain_vote(&self, tree: usize, level: u32) -> Option<(BlockId, u32)> {
        let t = &self.trees[tree];
        let (prop, pos) = t.spine_votes.get(&level)?;
        Some((*prop, (t.spine.len() as u32 - 1).saturating_sub(*pos)))
    }

    pub fn default_voter_tip(&self, tree: usize) -> BlockId {
        self.min_hash(&self.trees[tree].deepest)
    }

    pub fn default_proposer_parent(&self) -> BlockId {
        self.min_hash(&self.levels[self.levels.len() - 1].blocks)
    }

    /// The proposer a fresh miner votes for at `level`. Cohort members were
    /// all first published in the same round, so which one a given miner saw
    /// first is a property of the miner, not of the level: each observer
    /// block draws its own deterministic choice, splitting votes roughly
    /// evenly across a multi-block cohort while replays agree on every draw.
    pub fn first_seen_vote_target(&self, level: u32, observer: BlockId) -> BlockId {
        let view = observer.pseudo_hash(self.config.seed);
        *self.levels[level as usize]
            .cohort
            .iter()
            .min_by_key(|id| (id.pseudo_hash(view), id.0))
            .expect("occupied level has a nonempty cohort")
    }

    pub fn unreferred_tx_blocks(&self) -> Vec<BlockId> {
        let pool = &self.unreferred_tx;
        pool.order
            .iter()
            .copied()
            .filter(|id| pool.members.contains(id))
            .collect()
    }

    pub fn unreferred_proposers(&self) -> Vec<BlockId> {
        let pool = &self.unreferred_prop;
        pool.order
            .iter()
            .copied()
            .filter(|id| pool.members.contains(id))
            .collect()
    }

    pub fn block_counts(&self) -> BlockCounts {
        BlockCounts {
            proposer: self.proposers.len() as u64,
            voter: self.voters.len() as u64,
            transaction: self.tx_blocks.len() as u64,
            withheld: self.private.len() as u64,
        }
    }

    // ----- publication machinery ----------------------------------------

    fn publish(&mut self, id: BlockId, round: u32) {
        debug_assert!(!self.is_public(id));
        self.first_public.insert(id, round);
        self.private.remove(&id);
        if let Some(block) = self.proposers.get(&id).cloned() {
            let level = block.level as usize;
            debug_assert!(level <= self.levels.len());
            if level == self.levels.len() {
                self.levels.push(LevelState {
                    blocks: Vec::new(),
                    born_round: round,
                    cohort: Vec::new(),
                });
                for tree in self.trees.iter_mut() {
                    tree.unvoted.insert(level as u32);
                }
            }
            self.levels[level].blocks.push(id);
            if self.levels[level].born_round == round {
                self.levels[level].cohort.push(id);
            }
            for r in block.tx_refs.iter().chain(block.prop_refs.iter()) {
                self.referred.insert(*r);
                self.unreferred_tx.remove(*r);
                self.unreferred_prop.remove(*r);
            }
            if !self.referred.contains(&id) {
                self.unreferred_prop.insert(id);
            }
        } else if let Some(block) = self.voters.get(&id) {
            let tree = &mut self.trees[block.tree_index];
            let depth = tree.depth[&id];
            if depth > tree.tip_depth {
                tree.tip_depth = depth;
                tree.deepest = vec![id];
            } else if depth == tree.tip_depth {
                tree.deepest.push(id);
            }
        } else if self.tx_blocks.contains_key(&id) {
            if !self.referred.contains(&id) {
                self.unreferred_tx.insert(id);
            }
        } else {
            unreachable!("published id must be a known block");
        }
    }

    fn insert_voter(&mut self, block: VoterBlock) {
        let tree = block.tree_index;
        let parent_depth = if block.parent == self.voter_genesis[tree] {
            0
        } else {
            self.trees[tree].depth[&block.parent]
        };
        self.trees[tree].depth.insert(block.id, parent_depth + 1);
        self.voters.insert(block.id, block);
    }

    /// Rebuilds a tree's main chain toward the current tie-broken deepest
    /// public tip; cheap when the chain merely extended.
    fn refresh_spine(&mut self, tree: usize) {
        let chosen = self.default_voter_tip(tree);
        let t = &self.trees[tree];
        if *t.spine.last().expect("spine holds genesis") == chosen {
            return;
        }
        // Climb from the new tip to the first block still on the spine.
        let mut path = Vec::new();
        let mut cur = chosen;
        while !self.trees[tree].spine_index.contains_key(&cur) {
            path.push(cur);
            cur = self.voters[&cur].parent;
        }
        let keep = self.trees[tree].spine_index[&cur] as usize;
        let t = &mut self.trees[tree];
        for dropped in t.spine.drain(keep + 1..).collect::<Vec<_>>() {
            t.spine_index.remove(&dropped);
        }
        let drop_from = (keep + 1) as u32;
        let stale: Vec<u32> = t
            .spine_votes
            .iter()
            .filter(|(_, (_, pos))| *pos >= drop_from)
            .map(|(level, _)| *level)
            .collect();
        for level in stale {
            t.spine_votes.remove(&level);
            t.unvoted.insert(level);
        }
        for id in path.into_iter().rev() {
            self.push_spine_block(tree, id);
        }
    }

    fn push_spine_block(&mut self, tree: usize, id: BlockId) {
        let votes = self.voters[&id].votes.clone();
        let t = &mut self.trees[tree];
        let pos = t.spine.len() as u32;
        t.spine.push(id);
        t.spine_index.insert(id, pos);
        for (level, prop) in votes {
            let prior = t.spine_votes.insert(level, (prop, pos));
            debug_assert!(prior.is_none(), "one vote per level per chain");
            t.unvoted.remove(&level);
        }
    }

    fn refresh_all_spines(&mut self) {
        for tree in 0..self.trees.len() {
            self.refresh_spine(tree);
        }
    }

    /// Publishes a batch of withheld blocks after checking it is
    /// ancestor-closed: every parent, vote target, and reference of a
    /// released block must already be public or inside the same batch.
    fn release_batch(&mut self, ids: &[BlockId], round: u32) -> Result<(), EngineError> {
        let batch: HashSet<BlockId> = ids.iter().copied().collect();
        if batch.len() != ids.len() {
            return Err(fault(round, "duplicate id in release set"));
        }
        for &id in ids {
            if !self.private.contains(&id) {
                return Err(fault(round, format!("release of non-private block {id:?}")));
            }
            let mut deps: Vec<BlockId> = Vec::new();
            if let Some(b) = self.proposers.get(&id) {
                deps.push(b.parent);
                deps.extend(b.tx_refs.iter().copied());
                deps.extend(b.prop_refs.iter().copied());
            } else if let Some(b) = self.voters.get(&id) {
                deps.push(b.parent);
                deps.extend(b.votes.iter().map(|(_, p)| *p));
            } else if let Some(b) = self.tx_blocks.get(&id) {
                deps.push(b.parent);
            }
            for dep in deps {
                if !self.is_public(dep) && !batch.contains(&dep) {
                    return Err(fault(
                        round,
                        format!("release of {id:?} before its dependency {dep:?}"),
                    ));
                }
            }
        }
        // Creation order is a topological order: parents, targets, and
        // references always carry smaller ids.
        let mut ordered = ids.to_vec();
        ordered.sort_unstable();
        for id in ordered {
            self.publish(id, round);
        }
        Ok(())
    }

    // ----- honest construction ------------------------------------------

    /// Builds one tree's honest voter blocks for this round: `count` blocks
    /// chained in display-hash order on the chosen tip, the first carrying
    /// votes for every unvoted occupied level (one per level).
    fn build_honest_voters(
        &mut self,
        tree: usize,
        count: u32,
        snapshot_max: u32,
        directives: &HonestDirectives,
        round: u32,
        log: &mut RoundLog,
    ) -> Result<(), EngineError> {
        let tip = match directives.voter_tips.get(&tree) {
            Some(&choice) => {
                let ok = self.voters.get(&choice).is_some_and(|b| {
                    b.tree_index == tree
                        && self.is_public(choice)
                        && self.trees[tree].depth[&choice] == self.trees[tree].tip_depth
                });
                if !ok {
                    return Err(fault(
                        round,
                        format!("voter tip directive {choice:?} is not a deepest public block of tree {tree}"),
                    ));
                }
                choice
            }
            None => self.default_voter_tip(tree),
        };
        // Unvoted levels of the chosen chain, capped at the levels that were
        // public before this round's honest blocks.
        let mut unvoted: Vec<u32> = if Some(&tip) == self.trees[tree].spine.last() {
            self.trees[tree]
                .unvoted
                .iter()
                .copied()
                .filter(|l| *l <= snapshot_max)
                .collect()
        } else {
            let mut voted = HashSet::new();
            let mut cur = tip;
            while cur != self.voter_genesis[tree] {
                let b = &self.voters[&cur];
                voted.extend(b.votes.iter().map(|(l, _)| *l));
                cur = b.parent;
            }
            (1..=snapshot_max).filter(|l| !voted.contains(l)).collect()
        };
        let mut ids: Vec<BlockId> = (0..count).map(|_| self.alloc_id()).collect();
        ids.sort_by_key(|id| (self.hash(*id), id.0));
        let mut parent = tip;
        for id in ids {
            let votes: Vec<(u32, BlockId)> = unvoted
                .iter()
                .map(|&level| {
                    let target = match directives.votes.get(&(tree, level)) {
                        Some(&choice) => {
                            if !self.cohort(level).contains(&choice) {
                                return Err(fault(
                                    round,
                                    format!(
                                        "vote directive {choice:?} is outside the earliest-arrival cohort of level {level}"
                                    ),
                                ));
                            }
                            choice
                        }
                        None => self.first_seen_vote_target(level, id),
                    };
                    Ok((level, target))
                })
                .collect::<Result<_, _>>()?;
            unvoted.clear();
            self.insert_voter(VoterBlock {
                id,
                tree_index: tree,
                parent,
                votes,
                miner: Miner::Honest,
                mined_round: round,
                content_empty: false,
            });
            self.publish(id, round);
            log.honest_voters.push(id);
            parent = id;
        }
        Ok(())
    }

    /// Applies the honest protocol for one round's sample. Exposed for
    /// scenario scripting; [`step_round`] drives it in normal runs.
    /// `snapshot_max` is the deepest proposer level as of round start: honest
    /// miners have not yet seen anything published this round, so blocks they
    /// mine now land relative to that view and anything released this round
    /// counts as a simultaneous arrival, not an ancestor.
    pub fn honest_extend(
        &mut self,
        sample: &RoundSample,
        directives: &HonestDirectives,
        snapshot_max: u32,
        round: u32,
        rng: &mut ChaCha12Rng,
        log: &mut RoundLog,
    ) -> Result<(), EngineError> {
        let tx_pool = self.unreferred_tx.snapshot();
        let prop_pool = self.unreferred_prop.snapshot();
        for tree in 0..self.config.m {
            let count = sample.h_voter[tree];
            if count > 0 {
                self.build_honest_voters(tree, count, snapshot_max, directives, round, log)?;
            }
        }
        let mut queue_hits = Vec::new();
        let tx_parent = self.min_hash(self.level_blocks(snapshot_max));
        for _ in 0..sample.h_tx {
            let id = self.alloc_id();
            let (queue, content) = self.queues.draw_block_content(rng);
            queue_hits.push(queue);
            for tx in &content {
                let rec = &mut self.txs[tx.0 as usize];
                if rec.first_mined_round.is_none() {
                    rec.first_mined_round = Some(round);
                }
            }
            self.tx_blocks.insert(
                id,
                TransactionBlock {
                    id,
                    parent: tx_parent,
                    txs: content,
                    queue_index: queue,
                    miner: Miner::Honest,
                    mined_round: round,
                },
            );
            self.publish(id, round);
            log.honest_txs.push(id);
        }
        self.throughput.account_round(&queue_hits);
        if sample.h_prop > 0 {
            let level = snapshot_max + 1;
            let parent_level = self.level_blocks(snapshot_max).to_vec();
            for j in 0..sample.h_prop {
                let parent = if directives.proposer_parents.is_empty() {
                    self.min_hash(&parent_level)
                } else {
                    let choice = directives.proposer_parents
                        [j as usize % directives.proposer_parents.len()];
                    if !parent_level.contains(&choice) {
                        return Err(fault(
                            round,
                            format!(
                                "proposer parent directive {choice:?} is not at the deepest level {snapshot_max}"
                            ),
                        ));
                    }
                    choice
                };
                let id = self.alloc_id();
                self.proposers.insert(
                    id,
                    ProposerBlock {
                        id,
                        parent,
                        level,
                        tx_refs: tx_pool.clone(),
                        prop_refs: prop_pool.clone(),
                        miner: Miner::Honest,
                        mined_round: round,
                        content_empty: false,
                    },
                );
                self.publish(id, round);
                log.honest_proposers.push(id);
            }
        }
        Ok(())
    }

    // ----- adversary materialization --------------------------------------

    fn resolve_parent(
        &self,
        parent: &ParentRef,
        materialized: &[BlockId],
        round: u32,
    ) -> Result<BlockId, EngineError> {
        match parent {
            ParentRef::Existing(id) => Ok(*id),
            ParentRef::Draft(j) => materialized
                .get(*j)
                .copied()
                .ok_or_else(|| fault(round, format!("draft parent #{j} not materialized yet"))),
        }
    }

    fn materialize_drafts(
        &mut self,
        drafts: &[BlockDraft],
        sample: &RoundSample,
        snapshot_max: u32,
        round: u32,
        rng: &mut ChaCha12Rng,
        log: &mut RoundLog,
    ) -> Result<Vec<BlockId>, EngineError> {
        // The drafts must spend exactly this round's adversary mining counts.
        let mut need_voter = sample.z_voter.clone();
        let mut need_prop = sample.z_prop;
        let mut need_tx = sample.z_tx;
        for d in drafts {
            match &d.content {
                DraftContent::Voter { tree, .. } => {
                    let n = need_voter.get_mut(*tree).ok_or_else(|| {
                        fault(round, format!("voter draft on nonexistent tree {tree}"))
                    })?;
                    *n = n.checked_sub(1).ok_or_else(|| {
                        fault(round, format!("more voter drafts than mined on tree {tree}"))
                    })?;
                }
                DraftContent::Proposer { .. } => {
                    need_prop = need_prop
                        .checked_sub(1)
                        .ok_or_else(|| fault(round, "more proposer drafts than mined"))?;
                }
                DraftContent::Transaction { .. } => {
                    need_tx = need_tx
                        .checked_sub(1)
                        .ok_or_else(|| fault(round, "more transaction drafts than mined"))?;
                }
            }
        }
        if need_prop != 0 || need_tx != 0 || need_voter.iter().any(|&n| n != 0) {
            return Err(fault(round, "drafts do not spend the full mining sample"));
        }

        let mut materialized = Vec::with_capacity(drafts.len());
        let mut release_now = Vec::new();
        for draft in drafts.iter() {
            let parent = self.resolve_parent(&draft.parent, &materialized, round)?;
            let id = match &draft.content {
                DraftContent::Proposer {
                    refs,
                    content_empty,
                } => {
                    let parent_block = self
                        .proposers
                        .get(&parent)
                        .ok_or_else(|| fault(round, format!("{parent:?} is not a proposer block")))?;
                    let level = parent_block.level + 1;
                    let (tx_refs, prop_refs) = if *content_empty {
                        (Vec::new(), Vec::new())
                    } else {
                        match refs {
                            RefPolicy::PoolSnapshot => {
                                (self.unreferred_tx.snapshot(), self.unreferred_prop.snapshot())
                            }
                            RefPolicy::Explicit { tx_refs, prop_refs } => {
                                for r in tx_refs {
                                    if !self.tx_blocks.contains_key(r) {
                                        return Err(fault(
                                            round,
                                            format!("tx ref {r:?} is not a transaction block"),
                                        ));
                                    }
                                }
                                for r in prop_refs {
                                    if !self.proposers.contains_key(r) {
                                        return Err(fault(
                                            round,
                                            format!("proposer ref {r:?} is not a proposer block"),
                                        ));
                                    }
                                }
                                (tx_refs.clone(), prop_refs.clone())
                            }
                        }
                    };
                    let id = self.alloc_id();
                    self.proposers.insert(
                        id,
                        ProposerBlock {
                            id,
                            parent,
                            level,
                            tx_refs,
                            prop_refs,
                            miner: Miner::Adversary,
                            mined_round: round,
                            content_empty: *content_empty,
                        },
                    );
                    id
                }
                DraftContent::Voter {
                    tree,
                    targets,
                    content_empty,
                } => {
                    let tree = *tree;
                    let parent_ok = self
                        .voters
                        .get(&parent)
                        .is_some_and(|b| b.tree_index == tree);
                    if !parent_ok {
                        return Err(fault(
                            round,
                            format!("{parent:?} is not a voter block of tree {tree}"),
                        ));
                    }
                    let id = self.alloc_id();
                    let votes = if *content_empty {
                        Vec::new()
                    } else {
                        // Structural rule: vote every publicly occupied level
                        // this block's ancestor chain leaves unvoted. Levels
                        // beyond the public snapshot may be voted voluntarily
                        // through an explicit target (the miner privately
                        // knows a proposer block there).
                        let mut voted = HashSet::new();
                        let mut cur = parent;
                        while cur != self.voter_genesis[tree] {
                            let b = &self.voters[&cur];
                            voted.extend(b.votes.iter().map(|(l, _)| *l));
                            cur = b.parent;
                        }
                        let resolve = |tref: Option<&TargetRef>,
                                       level: u32,
                                       materialized: &[BlockId]|
                         -> Result<BlockId, EngineError> {
                            let target = match tref {
                                None => self.first_seen_vote_target(level, id),
                                Some(TargetRef::Existing(t)) => *t,
                                Some(TargetRef::Draft(j)) => {
                                    materialized.get(*j).copied().ok_or_else(|| {
                                        fault(
                                            round,
                                            format!("vote target draft #{j} not materialized"),
                                        )
                                    })?
                                }
                            };
                            let legal = self
                                .proposers
                                .get(&target)
                                .is_some_and(|p| p.level == level);
                            if !legal {
                                return Err(fault(
                                    round,
                                    format!(
                                        "vote target {target:?} is not a proposer block at level {level}"
                                    ),
                                ));
                            }
                            Ok(target)
                        };
                        let mut votes: Vec<(u32, BlockId)> = (1..=snapshot_max)
                            .filter(|l| !voted.contains(l))
                            .map(|level| {
                                let tref = match targets {
                                    VoteTargets::Default => None,
                                    VoteTargets::Explicit(map) => map.get(&level),
                                };
                                Ok((level, resolve(tref, level, &materialized)?))
                            })
                            .collect::<Result<Vec<_>, EngineError>>()?;
                        if let VoteTargets::Explicit(map) = targets {
                            let mut extra: Vec<u32> = map
                                .keys()
                                .copied()
                                .filter(|l| *l > snapshot_max && !voted.contains(l))
                                .collect();
                            extra.sort_unstable();
                            for level in extra {
                                let target =
                                    resolve(map.get(&level), level, &materialized)?;
                                votes.push((level, target));
                            }
                        }
                        votes
                    };
                    self.insert_voter(VoterBlock {
                        id,
                        tree_index: tree,
                        parent,
                        votes,
                        miner: Miner::Adversary,
                        mined_round: round,
                        content_empty: *content_empty,
                    });
                    id
                }
                DraftContent::Transaction { draw } => {
                    if !self.proposers.contains_key(&parent) {
                        return Err(fault(
                            round,
                            format!("{parent:?} is not a proposer block (transaction parent)"),
                        ));
                    }
                    let (queue, content) = if *draw {
                        self.queues.draw_block_content(rng)
                    } else {
                        (0, Vec::new())
                    };
                    for tx in &content {
                        let rec = &mut self.txs[tx.0 as usize];
                        if rec.first_mined_round.is_none() {
                            rec.first_mined_round = Some(round);
                        }
                    }
                    let id = self.alloc_id();
                    self.tx_blocks.insert(
                        id,
                        TransactionBlock {
                            id,
                            parent,
                            txs: content,
                            queue_index: queue,
                            miner: Miner::Adversary,
                            mined_round: round,
                        },
                    );
                    id
                }
            };
            self.private.insert(id);
            materialized.push(id);
            log.adversary_mined.push(id);
            if draft.release_now {
                release_now.push(id);
            }
        }
        if !release_now.is_empty() {
            self.release_batch(&release_now, round)?;
            log.adversary_published.extend(release_now);
        }
        Ok(materialized)
    }

    /// Structural audit of the world's invariants; `Err` carries the first
    /// violation found. Runs over every tree and level, so call it from
    /// tests, not inner loops.
    pub fn check_invariants(&self) -> Result<(), String> {
        for (id, round) in &self.first_public {
            let parent = if let Some(b) = self.proposers.get(id) {
                b.parent
            } else if let Some(b) = self.voters.get(id) {
                b.parent
            } else {
                self.tx_blocks[id].parent
            };
            if parent != *id && !self.is_public(parent) {
                return Err(format!("public block {id:?} has private parent {parent:?}"));
            }
            if let Some(parent_round) = self.first_public.get(&parent) {
                if parent_round > round {
                    return Err(format!("{id:?} became public before its parent"));
                }
            }
        }
        for (level, state) in self.levels.iter().enumerate() {
            if state.blocks.is_empty() {
                return Err(format!("occupied level {level} has no public block"));
            }
            for id in &state.blocks {
                if self.proposers[id].level as usize != level {
                    return Err(format!("{id:?} indexed at wrong level {level}"));
                }
            }
        }
        for (tree, t) in self.trees.iter().enumerate() {
            let max_public = t
                .depth
                .iter()
                .filter(|(id, _)| self.is_public(**id))
                .map(|(_, d)| *d)
                .max()
                .unwrap_or(0);
            if max_public != t.tip_depth {
                return Err(format!(
                    "tree {tree}: recorded tip depth {} vs actual {max_public}",
                    t.tip_depth
                ));
            }
            if t.spine.len() as u32 != t.tip_depth + 1 {
                return Err(format!("tree {tree}: spine length mismatch"));
            }
            let mut seen_levels = HashSet::new();
            for id in &t.spine {
                for (level, _) in &self.voters[id].votes {
                    if !seen_levels.insert(*level) {
                        return Err(format!("tree {tree}: two main-chain votes at level {level}"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Counts of blocks in existence at the end of a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BlockCounts {
    pub proposer: u64,
    pub voter: u64,
    pub transaction: u64,
    /// Blocks the adversary mined and never published.
    pub withheld: u64,
}

/// Returns a deepest root-to-leaf path of one voter tree; among tied tips the
/// directive's choice wins, else the smallest display hash.
pub fn longest_chain(
    world: &WorldState,
    tree: usize,
    directive: Option<BlockId>,
) -> Result<Vec<BlockId>, EngineError> {
    let tip = match directive {
        Some(choice) => {
            let ok = world.voter(choice).is_some_and(|b| {
                b.tree_index == tree
                    && world.is_public(choice)
                    && world.voter_depth(choice) == Some(world.tree_tip_depth(tree))
            });
            if !ok {
                return Err(fault(
                    world.round,
                    format!("tie-break choice {choice:?} is not a deepest public block"),
                ));
            }
            choice
        }
        None => world.default_voter_tip(tree),
    };
    let mut chain = vec![tip];
    let mut cur = tip;
    let genesis = world.voter_genesis[tree];
    while cur != genesis {
        cur = world.voter(cur).expect("chain of known blocks").parent;
        chain.push(cur);
    }
    chain.reverse();
    Ok(chain)
}

/// Advances one round with a caller-supplied sample instead of a drawn one —
/// the mechanism behind reproducible scenario construction. Normal runs use
/// [`step_round`].
pub fn step_round_with_sample(
    world: &mut WorldState,
    strategy: &mut dyn AdversaryStrategy,
    sample: RoundSample,
    view: ConfirmView,
) -> Result<RoundLog, EngineError> {
    let round = world.round + 1;
    let mut log = RoundLog {
        round,
        ..RoundLog::default()
    };

    let mut arrivals_rng = round_rng(world.config.seed, round, RngStream::Arrivals);
    {
        let WorldState { queues, txs, .. } = world;
        queues.arrive(round, txs, &mut arrivals_rng);
    }

    let mut strategy_rng = round_rng(world.config.seed, round, RngStream::Strategy);
    let action: AdversaryAction = {
        let obs = Observation {
            world,
            sample: &sample,
            round,
            confirm: view,
        };
        strategy.act(&obs, &mut strategy_rng)
    };
    let AdversaryAction {
        drafts,
        releases,
        directives,
    } = action;

    // Captured before releases land: honest construction this round works
    // from the view the network had at round start, so a proposer released
    // this round is a simultaneous arrival to it, never an ancestor.
    let snapshot_max = world.max_level();

    if !releases.is_empty() {
        world.release_batch(&releases, round)?;
        log.released = releases;
        world.refresh_all_spines();
    }

    let mut honest_rng = round_rng(world.config.seed, round, RngStream::Honest);
    world.honest_extend(&sample, &directives, snapshot_max, round, &mut honest_rng, &mut log)?;

    let materialized = world.materialize_drafts(
        &drafts,
        &sample,
        snapshot_max,
        round,
        &mut strategy_rng,
        &mut log,
    )?;
    strategy.observe_materialized(round, &materialized);

    world.refresh_all_spines();
    world.round = round;
    Ok(log)
}

/// Executes one full round: sample, adversary action, releases, honest
/// construction, adversary materialization.
pub fn step_round(
    world: &mut WorldState,
    strategy: &mut dyn AdversaryStrategy,
    view: ConfirmView,
) -> Result<RoundLog, EngineError> {
    let round = world.round + 1;
    let mut sample_rng = round_rng(world.config.seed, round, RngStream::Sample);
    let sample = sample_round(&world.config, &mut sample_rng);
    step_round_with_sample(world, strategy, sample, view)
}

/// Outcome of a full run: transaction lifecycles, throughput counters,
/// per-level confirmation records, and the end-of-run safety audit.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub config: SimConfig,
    pub rounds: u32,
    pub txs: Vec<Transaction>,
    pub throughput: ThroughputStats,
    pub fast_levels: Vec<confirm::FastLevel>,
    pub slow_levels: Vec<confirm::SlowLevel>,
    pub safety: SafetyReport,
    /// The depth-rule ledger at the end of the run.
    pub slow_ledger: Vec<TxId>,
    pub blocks: BlockCounts,
    pub max_level: u32,
}

impl SimResult {
    pub fn latency(&self) -> LatencySummary {
        crate::txflow::latency_report(&self.txs, &self.config)
    }

    /// Mean rounds from a level's birth to its list confirmation.
    pub fn list_confirm_mean_rounds(&self) -> f64 {
        if self.fast_levels.is_empty() {
            return 0.0;
        }
        let total: f64 = self
            .fast_levels
            .iter()
            .map(|l| (l.round - l.born_round) as f64)
            .sum();
        total / self.fast_levels.len() as f64
    }

    pub fn confirmed_tx_count(&self) -> u64 {
        self.txs
            .iter()
            .filter(|t| t.confirmed_round.is_some() || t.slow_confirmed_round.is_some())
            .count() as u64
    }
}

/// Runs a configuration to its horizon under one strategy, updating the
/// confirmation state after every round.
pub fn run(config: &SimConfig, strategy: &mut dyn AdversaryStrategy) -> Result<SimResult, EngineError> {
    config.validate()?;
    let mut world = WorldState::new(config.clone());
    let mut confirm_state = ConfirmState::new(config);
    for _ in 0..config.r_max {
        let view = ConfirmView {
            fast_frontier: confirm_state.fast_frontier(),
            slow_frontier: confirm_state.slow_frontier(),
        };
        step_round(&mut world, strategy, view)?;
        confirm_state.update(&mut world);
    }
    let safety = confirm_state.finalize(&world);
    world.throughput.confirmed_txs = world
        .txs
        .iter()
        .filter(|t| t.confirmed_round.is_some() || t.slow_confirmed_round.is_some())
        .count() as u64;
    Ok(SimResult {
        config: config.clone(),
        rounds: world.round,
        blocks: world.block_counts(),
        max_level: world.max_level(),
        throughput: world.throughput.clone(),
        fast_levels: confirm_state.fast_levels().to_vec(),
        slow_levels: confirm_state.slow_levels().to_vec(),
        slow_ledger: confirm_state.slow_ledger().to_vec(),
        safety,
        txs: world.txs,
    })
}

/// Accessors used by the confirmation module and strategies; grouped here to
/// keep the borrow surface explicit.
impl WorldState {
    pub fn tree_count(&self) -> usize {
        self.trees.len()
    }

    pub fn spine_len(&self, tree: usize) -> u32 {
        self.trees[tree].spine.len() as u32
    }
}
