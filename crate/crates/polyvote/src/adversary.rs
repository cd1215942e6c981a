//! Adversary strategies: how the withholding miner spends its share of each
//! round's blocks, what it releases when, and how it resolves the honest
//! protocol's free choices through directives.
//!
//! A strategy is called once per round, before honest construction, with the
//! full mining sample and the public state in view (a rushing adversary). It
//! answers with [`AdversaryAction`]: drafts that spend its mining counts
//! exactly, an optional release of previously withheld blocks, and
//! [`HonestDirectives`] steering protocol-legal tie-breaks.

use std::collections::{HashMap, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::confirm;
use crate::engine::{HonestDirectives, Observation};
use crate::model::BlockId;

/// Parent of a drafted block: an existing block, or an earlier draft in the
/// same action (by index) whose id is not known yet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParentRef {
    Existing(BlockId),
    Draft(usize),
}

/// A vote target, with the same two addressing modes as [`ParentRef`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetRef {
    Existing(BlockId),
    Draft(usize),
}

/// How a drafted proposer block fills its reference lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RefPolicy {
    /// Reference every currently unreferred transaction and proposer block,
    /// as an honest miner would.
    PoolSnapshot,
    Explicit {
        tx_refs: Vec<BlockId>,
        prop_refs: Vec<BlockId>,
    },
}

/// Vote targets for a drafted voter block. The levels voted are structural
/// (every publicly occupied level its chain leaves unvoted); the map only
/// chooses recipients, plus voluntary votes for deeper levels the adversary
/// privately knows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VoteTargets {
    Default,
    Explicit(HashMap<u32, TargetRef>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DraftContent {
    Proposer {
        refs: RefPolicy,
        content_empty: bool,
    },
    Voter {
        tree: usize,
        targets: VoteTargets,
        content_empty: bool,
    },
    Transaction {
        /// Whether the block drains a transaction queue or stays empty.
        draw: bool,
    },
}

/// One block the adversary mints this round.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDraft {
    pub parent: ParentRef,
    pub content: DraftContent,
    /// Publish in the same round instead of entering the private set.
    pub release_now: bool,
}

/// Everything a strategy does in one round.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdversaryAction {
    /// Must spend this round's adversary mining counts exactly, process by
    /// process and tree by tree.
    pub drafts: Vec<BlockDraft>,
    /// Previously withheld blocks to publish now; must be ancestor-closed.
    pub releases: Vec<BlockId>,
    pub directives: HonestDirectives,
}

/// A withholding adversary. `act` runs once per round before honest
/// construction; `observe_materialized` hands back the ids the drafts
/// received, in draft order.
pub trait AdversaryStrategy {
    fn name(&self) -> &'static str;
    fn act(&mut self, obs: &Observation<'_>, rng: &mut ChaCha12Rng) -> AdversaryAction;
    fn observe_materialized(&mut self, round: u32, ids: &[BlockId]) {
        let _ = (round, ids);
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("unknown strategy '{0}': expected passive | private_nakamoto | balancing | censorship")]
pub struct UnknownStrategy(pub String);

/// Instantiates a strategy by its wire name.
pub fn make_strategy(name: &str) -> Result<Box<dyn AdversaryStrategy + Send>, UnknownStrategy> {
    match name {
        "passive" => Ok(Box::new(Passive)),
        "censorship" => Ok(Box::new(Censorship)),
        "private_nakamoto" => Ok(Box::new(PrivateNakamoto::new())),
        "balancing" => Ok(Box::new(Balancing::new())),
        other => Err(UnknownStrategy(other.to_string())),
    }
}

/// Draws one sample of the adversary's maximum withheld lead: the running
/// maximum of a random walk that steps up with odds `2·beta_active` to 1.
/// The lead `W` satisfies `P(W >= k) = (2·beta_active)^k` — the chance the
/// withholding miner ever gets `k` blocks ahead of the half of honest mining
/// racing it. Requires `beta_active < 0.5`; the walk is stopped once it
/// falls 256 behind its maximum, which biases the law by less than
/// `(2·beta_active)^256` (below 1e-11 for any `beta_active ≤ 0.45`).
pub fn withheld_lead_sample(beta_active: f64, rng: &mut impl Rng) -> u32 {
    assert!(
        (0.0..0.5).contains(&beta_active),
        "withheld_lead_sample requires beta_active in [0, 0.5)"
    );
    let odds = 2.0 * beta_active;
    if odds == 0.0 {
        return 0;
    }
    let up = odds / (1.0 + odds);
    let mut pos: i64 = 0;
    let mut max: i64 = 0;
    while max - pos < 256 {
        if rng.random_range(0.0..1.0) < up {
            pos += 1;
            max = max.max(pos);
        } else {
            pos -= 1;
        }
    }
    max as u32
}

/// Drafts that spend the round's full adversary sample the way honest miners
/// would: voter blocks chained on each tree's current public tip, proposer
/// blocks on the deepest level, transaction blocks under the same parent —
/// all published immediately. `content_empty` empties votes and references;
/// `draw` controls whether transaction blocks take queue content.
pub fn compliant_drafts(obs: &Observation<'_>, content_empty: bool, draw: bool) -> Vec<BlockDraft> {
    let world = obs.world;
    let mut drafts = Vec::new();
    for tree in 0..world.config.m {
        let count = obs.sample.z_voter[tree];
        if count == 0 {
            continue;
        }
        let mut parent = ParentRef::Existing(world.default_voter_tip(tree));
        for _ in 0..count {
            let idx = drafts.len();
            drafts.push(BlockDraft {
                parent,
                content: DraftContent::Voter {
                    tree,
                    targets: VoteTargets::Default,
                    content_empty,
                },
                release_now: true,
            });
            parent = ParentRef::Draft(idx);
        }
    }
    let prop_parent = ParentRef::Existing(world.default_proposer_parent());
    for _ in 0..obs.sample.z_prop {
        drafts.push(BlockDraft {
            parent: prop_parent,
            content: DraftContent::Proposer {
                refs: RefPolicy::PoolSnapshot,
                content_empty,
            },
            release_now: true,
        });
    }
    for _ in 0..obs.sample.z_tx {
        drafts.push(BlockDraft {
            parent: prop_parent,
            content: DraftContent::Transaction { draw },
            release_now: true,
        });
    }
    drafts
}

/// Mines by the honest rules and publishes everything at once.
pub struct Passive;

impl AdversaryStrategy for Passive {
    fn name(&self) -> &'static str {
        "passive"
    }

    fn act(&mut self, obs: &Observation<'_>, _rng: &mut ChaCha12Rng) -> AdversaryAction {
        AdversaryAction {
            drafts: compliant_drafts(obs, false, true),
            ..AdversaryAction::default()
        }
    }
}

/// Publishes immediately but keeps every block empty: voter blocks carry no
/// votes, proposer blocks no references, transaction blocks no content. The
/// adversary's mining share contributes structure but starves the ledger.
pub struct Censorship;

impl AdversaryStrategy for Censorship {
    fn name(&self) -> &'static str {
        "censorship"
    }

    fn act(&mut self, obs: &Observation<'_>, _rng: &mut ChaCha12Rng) -> AdversaryAction {
        AdversaryAction {
            drafts: compliant_drafts(obs, true, false),
            ..AdversaryAction::default()
        }
    }
}

/// Replays a fixed list of actions, one per round, then behaves passively.
/// The backbone of reproducible scenario tests.
pub struct Scripted {
    script: VecDeque<AdversaryAction>,
}

impl Scripted {
    pub fn new(script: Vec<AdversaryAction>) -> Scripted {
        Scripted {
            script: script.into(),
        }
    }
}

impl AdversaryStrategy for Scripted {
    fn name(&self) -> &'static str {
        "scripted"
    }

    fn act(&mut self, obs: &Observation<'_>, _rng: &mut ChaCha12Rng) -> AdversaryAction {
        self.script.pop_front().unwrap_or_else(|| AdversaryAction {
            drafts: compliant_drafts(obs, false, true),
            ..AdversaryAction::default()
        })
    }
}

// ---------------------------------------------------------------------------
// Private-chain double-spend attack
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct NkFork {
    base_tip: BlockId,
    base_depth: u32,
    blocks: Vec<BlockId>,
}

#[derive(Debug, Clone)]
struct NkAttack {
    /// The contested proposer level.
    level: u32,
    /// The private proposer block at `level`, once materialized.
    target: Option<BlockId>,
    forks: Vec<NkFork>,
    /// Roles of this round's drafts, consumed by `observe_materialized`.
    pending: Vec<NkRole>,
}

#[derive(Debug, Clone, Copy)]
enum NkRole {
    Target,
    Fork(usize),
    Ignore,
}

enum NkState {
    Waiting,
    Attacking(NkAttack),
    Done,
}

/// Withholds a proposer block at one level and races private voter forks on
/// every tree that vote it; once the level is confirmed for the public
/// proposer and a majority of trees can be flipped, everything is released
/// at once to overturn the confirmed leader.
pub struct PrivateNakamoto {
    state: NkState,
}

impl PrivateNakamoto {
    pub fn new() -> PrivateNakamoto {
        PrivateNakamoto {
            state: NkState::Waiting,
        }
    }
}

impl Default for PrivateNakamoto {
    fn default() -> Self {
        Self::new()
    }
}

impl AdversaryStrategy for PrivateNakamoto {
    fn name(&self) -> &'static str {
        "private_nakamoto"
    }

    fn act(&mut self, obs: &Observation<'_>, _rng: &mut ChaCha12Rng) -> AdversaryAction {
        let world = obs.world;
        let m = world.config.m;
        match &mut self.state {
            NkState::Waiting => {
                if obs.sample.z_prop == 0 {
                    return AdversaryAction {
                        drafts: compliant_drafts(obs, false, true),
                        ..AdversaryAction::default()
                    };
                }
                // First private proposer draw arms the attack one level past
                // the public frontier.
                let level = world.max_level() + 1;
                let mut attack = NkAttack {
                    level,
                    target: None,
                    forks: (0..m)
                        .map(|tree| NkFork {
                            base_tip: world.default_voter_tip(tree),
                            base_depth: world.tree_tip_depth(tree),
                            blocks: Vec::new(),
                        })
                        .collect(),
                    pending: Vec::new(),
                };
                let mut drafts = Vec::new();
                drafts.push(BlockDraft {
                    parent: ParentRef::Existing(world.default_proposer_parent()),
                    content: DraftContent::Proposer {
                        refs: RefPolicy::Explicit {
                            tx_refs: Vec::new(),
                            prop_refs: Vec::new(),
                        },
                        content_empty: false,
                    },
                    release_now: false,
                });
                attack.pending.push(NkRole::Target);
                let target_ref = TargetRef::Draft(0);
                for tree in 0..m {
                    let count = obs.sample.z_voter[tree];
                    let mut parent = ParentRef::Existing(attack.forks[tree].base_tip);
                    for _ in 0..count {
                        let idx = drafts.len();
                        drafts.push(BlockDraft {
                            parent,
                            content: DraftContent::Voter {
                                tree,
                                targets: VoteTargets::Explicit(
                                    [(level, target_ref)].into_iter().collect(),
                                ),
                                content_empty: false,
                            },
                            release_now: false,
                        });
                        attack.pending.push(NkRole::Fork(tree));
                        parent = ParentRef::Draft(idx);
                    }
                }
                let prop_parent = ParentRef::Existing(world.default_proposer_parent());
                for _ in 1..obs.sample.z_prop {
                    drafts.push(BlockDraft {
                        parent: prop_parent,
                        content: DraftContent::Proposer {
                            refs: RefPolicy::PoolSnapshot,
                            content_empty: false,
                        },
                        release_now: true,
                    });
                    attack.pending.push(NkRole::Ignore);
                }
                for _ in 0..obs.sample.z_tx {
                    drafts.push(BlockDraft {
                        parent: prop_parent,
                        content: DraftContent::Transaction { draw: false },
                        release_now: false,
                    });
                    attack.pending.push(NkRole::Ignore);
                }
                self.state = NkState::Attacking(attack);
                AdversaryAction {
                    drafts,
                    ..AdversaryAction::default()
                }
            }
            NkState::Attacking(attack) => {
                let level = attack.level;
                let confirmed =
                    obs.confirm.fast_frontier > level || obs.confirm.slow_frontier > level;
                if confirmed && attack.target.is_some() {
                    let overtaking: Vec<usize> = (0..m)
                        .filter(|&tree| {
                            let fork = &attack.forks[tree];
                            !fork.blocks.is_empty()
                                && fork.base_depth + fork.blocks.len() as u32
                                    > world.tree_tip_depth(tree)
                        })
                        .collect();
                    if overtaking.len() * 2 > m {
                        let mut releases = vec![attack.target.unwrap()];
                        for &tree in &overtaking {
                            releases.extend(attack.forks[tree].blocks.iter().copied());
                        }
                        self.state = NkState::Done;
                        return AdversaryAction {
                            drafts: compliant_drafts(obs, false, true),
                            releases,
                            ..AdversaryAction::default()
                        };
                    }
                }
                // Keep racing: every voter draw extends its tree's fork.
                let target_ref = match attack.target {
                    Some(id) => TargetRef::Existing(id),
                    // The target materializes in the arming round, before any
                    // later act; reaching this arm means the arming round
                    // itself, where the draft index addresses it.
                    None => TargetRef::Draft(0),
                };
                attack.pending.clear();
                let mut drafts = Vec::new();
                for tree in 0..m {
                    let count = obs.sample.z_voter[tree];
                    if count == 0 {
                        continue;
                    }
                    let fork = &attack.forks[tree];
                    let mut parent = match fork.blocks.last() {
                        Some(tip) => ParentRef::Existing(*tip),
                        None => ParentRef::Existing(fork.base_tip),
                    };
                    for _ in 0..count {
                        let idx = drafts.len();
                        drafts.push(BlockDraft {
                            parent,
                            content: DraftContent::Voter {
                                tree,
                                targets: VoteTargets::Explicit(
                                    [(level, target_ref)].into_iter().collect(),
                                ),
                                content_empty: false,
                            },
                            release_now: false,
                        });
                        attack.pending.push(NkRole::Fork(tree));
                        parent = ParentRef::Draft(idx);
                    }
                }
                let prop_parent = ParentRef::Existing(world.default_proposer_parent());
                for _ in 0..obs.sample.z_prop {
                    drafts.push(BlockDraft {
                        parent: prop_parent,
                        content: DraftContent::Proposer {
                            refs: RefPolicy::PoolSnapshot,
                            content_empty: false,
                        },
                        release_now: true,
                    });
                    attack.pending.push(NkRole::Ignore);
                }
                for _ in 0..obs.sample.z_tx {
                    drafts.push(BlockDraft {
                        parent: prop_parent,
                        content: DraftContent::Transaction { draw: false },
                        release_now: false,
                    });
                    attack.pending.push(NkRole::Ignore);
                }
                AdversaryAction {
                    drafts,
                    ..AdversaryAction::default()
                }
            }
            NkState::Done => AdversaryAction {
                drafts: compliant_drafts(obs, false, true),
                ..AdversaryAction::default()
            },
        }
    }

    fn observe_materialized(&mut self, _round: u32, ids: &[BlockId]) {
        if let NkState::Attacking(attack) = &mut self.state {
            for (role, id) in attack.pending.iter().zip(ids) {
                match role {
                    NkRole::Target => attack.target = Some(*id),
                    NkRole::Fork(tree) => attack.forks[*tree].blocks.push(*id),
                    NkRole::Ignore => {}
                }
            }
            attack.pending.clear();
        }
    }
}

// ---------------------------------------------------------------------------
// Vote-balancing attack
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct BankedProposer {
    id: Option<BlockId>,
    level: u32,
}

#[derive(Debug, Clone)]
struct BalFork {
    base_tip: BlockId,
    base_depth: u32,
    /// The cohort member this fork's vote backs; stale forks are abandoned
    /// when the minority flips away from it.
    target: BlockId,
    blocks: Vec<BlockId>,
}

#[derive(Debug, Clone)]
struct Contest {
    level: u32,
    forks: HashMap<usize, BalFork>,
}

#[derive(Debug, Clone, Copy)]
enum BalRole {
    Bank,
    Fork(usize),
    Ignore,
}

/// Keeps one private proposer block banked; when honest mining is about to
/// occupy that level, releases it into the same arrival cohort and then
/// works to keep the two cohort members' vote counts level: honest votes are
/// steered to the running minority, fresh adversary votes pile onto it, and
/// trees already committed to the majority are attacked with private voter
/// forks that flip their vote once long enough.
pub struct Balancing {
    banked: Option<BankedProposer>,
    contest: Option<Contest>,
    pending: Vec<BalRole>,
}

impl Balancing {
    pub fn new() -> Balancing {
        Balancing {
            banked: None,
            contest: None,
            pending: Vec::new(),
        }
    }

    /// The cohort member currently holding the fewest main-chain votes.
    fn minority_of(world: &crate::engine::WorldState, level: u32) -> BlockId {
        let tally = confirm::tally(world, level);
        *world
            .cohort(level)
            .iter()
            .min_by_key(|id| (tally.count(**id), world.hash(**id), id.0))
            .expect("occupied level has a cohort")
    }
}

impl Default for Balancing {
    fn default() -> Self {
        Self::new()
    }
}

impl AdversaryStrategy for Balancing {
    fn name(&self) -> &'static str {
        "balancing"
    }

    fn act(&mut self, obs: &Observation<'_>, _rng: &mut ChaCha12Rng) -> AdversaryAction {
        let world = obs.world;
        let m = world.config.m;
        let max_level = world.max_level();
        let mut action = AdversaryAction::default();
        self.pending.clear();

        // A contest ends once either rule confirms its level.
        if let Some(c) = &self.contest {
            if obs.confirm.fast_frontier > c.level || obs.confirm.slow_frontier > c.level {
                self.contest = None;
            }
        }
        // A banked proposer whose level got occupied without us is dead
        // weight: it can never join that level's cohort.
        if let Some(b) = &self.banked {
            if b.level <= max_level {
                self.banked = None;
            }
        }
        // Release the banked block into the cohort the honest mining of this
        // round is about to create.
        if self.contest.is_none() && obs.sample.h_prop >= 1 {
            if let Some(b) = &self.banked {
                if let Some(id) = b.id {
                    debug_assert_eq!(b.level, max_level + 1);
                    action.releases.push(id);
                    self.contest = Some(Contest {
                        level: b.level,
                        forks: HashMap::new(),
                    });
                    self.banked = None;
                }
            }
        }

        // Voter mining. During a live contest each tree is handled by its
        // relation to the contested level; otherwise mine compliantly.
        let live_level = self.contest.as_ref().map(|c| c.level).filter(|l| *l <= max_level);
        if let (Some(level), Some(contest)) = (live_level, self.contest.as_mut()) {
            let minority = Self::minority_of(world, level);
            for tree in 0..m {
                action.directives.votes.insert((tree, level), minority);
            }
            // Flip any fork that has overtaken its tree while still backing
            // the right side; drop forks backing what is now the majority.
            let mut flipped: HashMap<usize, BlockId> = HashMap::new();
            contest.forks.retain(|tree, fork| {
                if fork.target != minority {
                    return false;
                }
                let ahead = fork.base_depth + fork.blocks.len() as u32
                    > world.tree_tip_depth(*tree);
                if ahead && !fork.blocks.is_empty() {
                    action.releases.extend(fork.blocks.iter().copied());
                    flipped.insert(*tree, *fork.blocks.last().expect("nonempty fork"));
                    return false;
                }
                true
            });
            for tree in 0..m {
                let count = obs.sample.z_voter[tree];
                if count == 0 {
                    continue;
                }
                let vote = world.main_chain_vote(tree, level).map(|(p, _)| p);
                let (mut parent, private, targets) = if let Some(tip) = flipped.get(&tree) {
                    // Just released a winning fork: deepen it in public.
                    (ParentRef::Existing(*tip), false, VoteTargets::Default)
                } else if vote.is_none() {
                    // Tree has not voted the level: public blocks voting the
                    // minority directly.
                    (
                        ParentRef::Existing(world.default_voter_tip(tree)),
                        false,
                        VoteTargets::Explicit(
                            [(level, TargetRef::Existing(minority))].into_iter().collect(),
                        ),
                    )
                } else if vote == Some(minority) {
                    // Tree already backs the minority: deepen that vote.
                    (
                        ParentRef::Existing(world.default_voter_tip(tree)),
                        false,
                        VoteTargets::Default,
                    )
                } else {
                    // Tree backs the majority: race it privately from below
                    // its voting block, voting the minority instead.
                    let fork = contest.forks.entry(tree).or_insert_with(|| {
                        let spine = world.main_chain(tree);
                        let (_, depth) = world
                            .main_chain_vote(tree, level)
                            .expect("tree votes the level");
                        let pos = spine.len() - 1 - depth as usize;
                        BalFork {
                            base_tip: spine[pos - 1],
                            base_depth: (pos - 1) as u32,
                            target: minority,
                            blocks: Vec::new(),
                        }
                    });
                    let parent = match fork.blocks.last() {
                        Some(tip) => ParentRef::Existing(*tip),
                        None => ParentRef::Existing(fork.base_tip),
                    };
                    (
                        parent,
                        true,
                        VoteTargets::Explicit(
                            [(level, TargetRef::Existing(minority))].into_iter().collect(),
                        ),
                    )
                };
                for _ in 0..count {
                    let idx = action.drafts.len();
                    action.drafts.push(BlockDraft {
                        parent,
                        content: DraftContent::Voter {
                            tree,
                            targets: targets.clone(),
                            content_empty: false,
                        },
                        release_now: !private,
                    });
                    self.pending.push(if private {
                        BalRole::Fork(tree)
                    } else {
                        BalRole::Ignore
                    });
                    parent = ParentRef::Draft(idx);
                }
            }
        } else {
            for tree in 0..m {
                let count = obs.sample.z_voter[tree];
                if count == 0 {
                    continue;
                }
                let mut parent = ParentRef::Existing(world.default_voter_tip(tree));
                for _ in 0..count {
                    let idx = action.drafts.len();
                    action.drafts.push(BlockDraft {
                        parent,
                        content: DraftContent::Voter {
                            tree,
                            targets: VoteTargets::Default,
                            content_empty: false,
                        },
                        release_now: true,
                    });
                    self.pending.push(BalRole::Ignore);
                    parent = ParentRef::Draft(idx);
                }
            }
        }

        // Proposer mining: bank one block for the next contest, publish the
        // rest compliantly.
        let mut z_prop = obs.sample.z_prop;
        let prop_parent = ParentRef::Existing(world.default_proposer_parent());
        if z_prop >= 1 && self.banked.is_none() {
            action.drafts.push(BlockDraft {
                parent: prop_parent,
                content: DraftContent::Proposer {
                    refs: RefPolicy::PoolSnapshot,
                    content_empty: false,
                },
                release_now: false,
            });
            self.pending.push(BalRole::Bank);
            self.banked = Some(BankedProposer {
                id: None,
                level: max_level + 1,
            });
            z_prop -= 1;
        }
        for _ in 0..z_prop {
            action.drafts.push(BlockDraft {
                parent: prop_parent,
                content: DraftContent::Proposer {
                    refs: RefPolicy::PoolSnapshot,
                    content_empty: false,
                },
                release_now: true,
            });
            self.pending.push(BalRole::Ignore);
        }
        for _ in 0..obs.sample.z_tx {
            action.drafts.push(BlockDraft {
                parent: prop_parent,
                content: DraftContent::Transaction { draw: false },
                release_now: false,
            });
            self.pending.push(BalRole::Ignore);
        }
        action
    }

    fn observe_materialized(&mut self, _round: u32, ids: &[BlockId]) {
        for (role, id) in self.pending.iter().zip(ids) {
            match role {
                BalRole::Bank => {
                    if let Some(b) = &mut self.banked {
                        b.id = Some(*id);
                    }
                }
                BalRole::Fork(tree) => {
                    if let Some(c) = &mut self.contest {
                        if let Some(fork) = c.forks.get_mut(tree) {
                            fork.blocks.push(*id);
                        }
                    }
                }
                BalRole::Ignore => {}
            }
        }
        self.pending.clear();
    }
}
