//! Mining process model: simulation configuration, block identities and
//! payloads, per-round mining counts, sortition, and parameter derivation.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by configuration validation, parameter derivation, and the
/// sortition contract.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ConfigError {
    #[error("{field} must satisfy {requirement} (got {value})")]
    Invalid {
        field: &'static str,
        requirement: &'static str,
        value: f64,
    },
    #[error("physical fields b_v, b_p, b_t, capacity, prop_delay must be given together")]
    PartialPhysicals,
    #[error(
        "stability violated: fp_round*b_p + m*fv_round*b_v + ft_round*b_t = {lhs} \
         exceeds capacity*delta = {rhs}"
    )]
    Stability { lhs: f64, rhs: f64 },
    #[error(
        "no feasible voter-tree count: vote bandwidth budget {budget} cannot fit a \
         single voter chain (one chain needs {needed})"
    )]
    InfeasibleCapacity { budget: f64, needed: f64 },
    #[error("sortition hash point {hash_point} outside the mining domain [0, {domain}]")]
    SortitionOutOfRange { hash_point: f64, domain: f64 },
}

fn default_epsilon() -> f64 {
    (-10.0f64).exp()
}

fn default_q() -> usize {
    1
}

fn default_cp_multiplier() -> f64 {
    2.0
}

/// Full description of one simulated system.
///
/// Rates are per-round (`fv_round` is the rate of a *single* voter tree; the
/// combined voter rate is `m * fv_round`). `beta` is the adversary share the
/// confirmation rules defend against; `beta_active` is the share the adversary
/// actually spends this run (defaults to `beta`). The five physical fields —
/// block sizes `b_v`/`b_p`/`b_t` in bytes, network `capacity` in bytes/s and
/// propagation delay `prop_delay` in seconds — are optional as a group; when
/// present they fix the round length `delta()` in seconds and make the
/// stability constraint checkable, otherwise a round is one abstract second.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub m: usize,
    pub beta: f64,
    #[serde(default)]
    pub beta_active: Option<f64>,
    pub fv_round: f64,
    pub fp_round: f64,
    pub ft_round: f64,
    #[serde(default)]
    pub b_v: Option<f64>,
    #[serde(default)]
    pub b_p: Option<f64>,
    #[serde(default)]
    pub b_t: Option<f64>,
    #[serde(default)]
    pub capacity: Option<f64>,
    #[serde(default)]
    pub prop_delay: Option<f64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub r_max: u32,
    #[serde(default = "default_q")]
    pub q: usize,
    #[serde(default = "default_cp_multiplier")]
    pub cp_multiplier: f64,
    /// Mean transaction arrivals per round. Defaults to the stable-load
    /// boundary `0.9 * (1 - beta) * ft_round * b_t` (one byte, one tx).
    #[serde(default)]
    pub lambda_in: Option<f64>,
    /// Overrides the depth `k(epsilon)` used by the depth confirmation rule.
    /// The derived depth is impractically large at desk scale; this knob
    /// exists for experiments and has no analytical standing.
    #[serde(default)]
    pub k_override: Option<u32>,
    /// Fraction of arriving transactions that form a double-spend pair with
    /// the transaction arriving immediately before them. Zero by default;
    /// positive values exist to exercise conflict handling.
    #[serde(default)]
    pub conflict_fraction: f64,
    /// Draw per-round arrival counts from a Poisson law instead of the
    /// default deterministic schedule. Robustness runs only.
    #[serde(default)]
    pub poisson_arrivals: bool,
    pub seed: u64,
}

impl SimConfig {
    /// A config with every optional field at its default; call sites
    /// override what they need.
    pub fn minimal(
        m: usize,
        beta: f64,
        fv_round: f64,
        fp_round: f64,
        ft_round: f64,
        r_max: u32,
        seed: u64,
    ) -> SimConfig {
        SimConfig {
            m,
            beta,
            beta_active: None,
            fv_round,
            fp_round,
            ft_round,
            b_v: None,
            b_p: None,
            b_t: None,
            capacity: None,
            prop_delay: None,
            epsilon: default_epsilon(),
            r_max,
            q: default_q(),
            cp_multiplier: default_cp_multiplier(),
            lambda_in: None,
            k_override: None,
            conflict_fraction: 0.0,
            poisson_arrivals: false,
            seed,
        }
    }

    /// Adversary share actually mined this run.
    pub fn beta_active(&self) -> f64 {
        self.beta_active.unwrap_or(self.beta)
    }

    /// Round length in seconds: `max(b_p, b_v) / capacity + prop_delay` when
    /// the physical fields are present, otherwise 1.
    pub fn delta(&self) -> f64 {
        match (self.b_p, self.b_v, self.capacity, self.prop_delay) {
            (Some(bp), Some(bv), Some(c), Some(d)) => bp.max(bv) / c + d,
            _ => 1.0,
        }
    }

    /// Whether `delta()` is backed by physical inputs rather than the
    /// 1-second fallback.
    pub fn has_physicals(&self) -> bool {
        self.b_v.is_some()
            && self.b_p.is_some()
            && self.b_t.is_some()
            && self.capacity.is_some()
            && self.prop_delay.is_some()
    }

    /// Effective transaction arrival rate per round.
    pub fn lambda_in(&self) -> f64 {
        self.lambda_in.unwrap_or_else(|| {
            let bt = self.b_t.unwrap_or(1.0);
            0.9 * (1.0 - self.beta) * self.ft_round * bt
        })
    }

    /// Checks every structural invariant; call once before running.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |field, requirement, value| ConfigError::Invalid {
            field,
            requirement,
            value,
        };
        if !(self.beta >= 0.0 && self.beta < 0.5) {
            return Err(inv("beta", "0 <= beta < 0.5", self.beta));
        }
        let ba = self.beta_active();
        if !(0.0..=self.beta).contains(&ba) {
            return Err(inv("beta_active", "0 <= beta_active <= beta", ba));
        }
        if self.m < 1 {
            return Err(inv("m", "m >= 1", self.m as f64));
        }
        if self.r_max < 1 {
            return Err(inv("r_max", "r_max >= 1", self.r_max as f64));
        }
        if self.q < 1 {
            return Err(inv("q", "q >= 1", self.q as f64));
        }
        for (name, rate) in [
            ("fv_round", self.fv_round),
            ("fp_round", self.fp_round),
            ("ft_round", self.ft_round),
        ] {
            if !(rate >= 0.0) || !rate.is_finite() {
                return Err(inv(name, "rate >= 0 and finite", rate));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(inv("epsilon", "0 < epsilon < 1", self.epsilon));
        }
        if !(self.cp_multiplier >= 0.0) {
            return Err(inv("cp_multiplier", "cp_multiplier >= 0", self.cp_multiplier));
        }
        if let Some(l) = self.lambda_in {
            if !(l >= 0.0) {
                return Err(inv("lambda_in", "lambda_in >= 0", l));
            }
        }
        if !(0.0..=1.0).contains(&self.conflict_fraction) {
            return Err(inv(
                "conflict_fraction",
                "0 <= conflict_fraction <= 1",
                self.conflict_fraction,
            ));
        }
        let physicals = [self.b_v, self.b_p, self.b_t, self.capacity, self.prop_delay];
        let given = physicals.iter().filter(|p| p.is_some()).count();
        if given > 0 && given < physicals.len() {
            return Err(ConfigError::PartialPhysicals);
        }
        if given == physicals.len() {
            for (name, v) in [
                ("b_v", self.b_v),
                ("b_p", self.b_p),
                ("b_t", self.b_t),
                ("capacity", self.capacity),
                ("prop_delay", self.prop_delay),
            ] {
                let v = v.unwrap();
                if !(v > 0.0) || !v.is_finite() {
                    return Err(inv(name, "positive and finite", v));
                }
            }
            let lhs = self.fp_round * self.b_p.unwrap()
                + self.m as f64 * self.fv_round * self.b_v.unwrap()
                + self.ft_round * self.b_t.unwrap();
            let rhs = self.capacity.unwrap() * self.delta();
            if lhs > rhs * (1.0 + 1e-12) {
                return Err(ConfigError::Stability { lhs, rhs });
            }
        }
        Ok(())
    }
}

/// Identity of a block: a `u64` assigned in creation order. The display hash
/// used for tie-breaking is a pure function of `(value, seed)`, so replays
/// agree on every comparison while different seeds break ties differently.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockId(pub u64);

impl BlockId {
    pub fn pseudo_hash(self, seed: u64) -> u64 {
        splitmix64(seed ^ self.0.wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Identity of a transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TxId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Miner {
    Honest,
    Adversary,
}

/// A block in the proposer tree. `level = parent level + 1`; references are
/// to transaction blocks and other proposer blocks that had no referrer when
/// this block was mined. `content_empty` marks deliberately empty blocks
/// (the censorship strategy); such blocks carry no references.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposerBlock {
    pub id: BlockId,
    pub parent: BlockId,
    pub level: u32,
    pub tx_refs: Vec<BlockId>,
    pub prop_refs: Vec<BlockId>,
    pub miner: Miner,
    pub mined_round: u32,
    pub content_empty: bool,
}

/// A block in one of the `m` voter trees. Votes are `(level, proposer id)`
/// pairs covering exactly the proposer levels left unvoted by this block's
/// ancestor chain at mining time; an empty list when `content_empty`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoterBlock {
    pub id: BlockId,
    pub tree_index: usize,
    pub parent: BlockId,
    pub votes: Vec<(u32, BlockId)>,
    pub miner: Miner,
    pub mined_round: u32,
    pub content_empty: bool,
}

/// A transaction-carrying block. Its parent is a proposer block (structural
/// only; carriage and confirmation never consult it).
#[derive(Debug, Clone, PartialEq)]
pub struct TransactionBlock {
    pub id: BlockId,
    pub parent: BlockId,
    pub txs: Vec<TxId>,
    pub queue_index: usize,
    pub miner: Miner,
    pub mined_round: u32,
}

/// A transaction's lifecycle record. `conflicts_with` links double-spend
/// pairs symmetrically; at most one of a pair can ever confirm.
/// `confirmed_round` is set by the list rule (the product rule for conflicting
/// transactions); `slow_confirmed_round` by first appearance in the
/// depth-rule ledger.
#[derive(Debug, Clone, PartialEq)]
pub struct Transaction {
    pub id: TxId,
    pub arrival_round: u32,
    pub conflicts_with: Option<TxId>,
    pub first_mined_round: Option<u32>,
    pub confirmed_round: Option<u32>,
    pub slow_confirmed_round: Option<u32>,
}

/// Block counts mined in one round, per process and per side. `h_*` are
/// honest counts with mean `(1 - beta_active) * rate`; `z_*` adversary counts
/// with mean `beta_active * rate`. All draws are independent Poissons.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundSample {
    pub h_voter: Vec<u32>,
    pub z_voter: Vec<u32>,
    pub h_prop: u32,
    pub z_prop: u32,
    pub h_tx: u32,
    pub z_tx: u32,
}

impl RoundSample {
    /// Tree `i` mined at least one honest block this round.
    pub fn successful(&self, i: usize) -> bool {
        self.h_voter[i] >= 1
    }

    /// Tree `i` mined exactly one honest block this round.
    pub fn uniquely_successful(&self, i: usize) -> bool {
        self.h_voter[i] == 1
    }
}

/// The independent random-number streams consumed within one round.
#[derive(Debug, Clone, Copy)]
pub enum RngStream {
    Sample = 0,
    Honest = 1,
    Strategy = 2,
    Arrivals = 3,
}

/// Generator for one `(seed, round, stream)` cell. Each round uses fresh
/// streams, so a round's draws never depend on how much randomness earlier
/// rounds consumed.
pub fn round_rng(seed: u64, round: u32, stream: RngStream) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(round as u64 * 4 + stream as u64);
    rng
}

pub(crate) fn poisson_u32(mean: f64, rng: &mut impl Rng) -> u32 {
    if mean <= 0.0 {
        return 0;
    }
    let draw = Poisson::new(mean).expect("mean is positive").sample(rng);
    draw as u32
}

/// Draws the round's mining counts. Deterministic given `(config.seed, round)`
/// when `rng` comes from [`round_rng`] for that round.
pub fn sample_round(config: &SimConfig, rng: &mut impl Rng) -> RoundSample {
    let ba = config.beta_active();
    let honest = 1.0 - ba;
    let mut h_voter = Vec::with_capacity(config.m);
    let mut z_voter = Vec::with_capacity(config.m);
    for _ in 0..config.m {
        h_voter.push(poisson_u32(honest * config.fv_round, rng));
    }
    for _ in 0..config.m {
        z_voter.push(poisson_u32(ba * config.fv_round, rng));
    }
    RoundSample {
        h_voter,
        z_voter,
        h_prop: poisson_u32(honest * config.fp_round, rng),
        z_prop: poisson_u32(ba * config.fp_round, rng),
        h_tx: poisson_u32(honest * config.ft_round, rng),
        z_tx: poisson_u32(ba * config.ft_round, rng),
    }
}

/// The block type a mining success is assigned to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockType {
    Voter { tree: usize },
    Transaction,
    Proposer,
}

/// Maps a hash point to a block type. The domain splits into `m` voter
/// intervals of width `fv_round`, then a transaction interval of width
/// `ft_round`, then a proposer interval of width `fp_round`; a point outside
/// `[0, m*fv + ft + fp]` violates the mining contract and is an error.
pub fn sortition(hash_point: f64, config: &SimConfig) -> Result<BlockType, ConfigError> {
    let voter_top = config.m as f64 * config.fv_round;
    let tx_top = voter_top + config.ft_round;
    let domain = tx_top + config.fp_round;
    if !(0.0..=domain).contains(&hash_point) || !hash_point.is_finite() {
        return Err(ConfigError::SortitionOutOfRange { hash_point, domain });
    }
    if config.fv_round > 0.0 && hash_point <= voter_top {
        let tree = ((hash_point / config.fv_round) as usize).min(config.m - 1);
        return Ok(BlockType::Voter { tree });
    }
    if config.ft_round > 0.0 && hash_point <= tx_top {
        return Ok(BlockType::Transaction);
    }
    if config.fp_round > 0.0 && hash_point <= domain {
        return Ok(BlockType::Proposer);
    }
    Err(ConfigError::SortitionOutOfRange { hash_point, domain })
}

/// Output of [`derive_parameters`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedParams {
    /// Round length in seconds.
    pub delta: f64,
    /// Per-tree voter rate per round.
    pub fv_round: f64,
    /// Transaction-block rate per round.
    pub ft_round: f64,
    /// Number of voter trees.
    pub m: usize,
}

/// Sizes a system to a network: given capacity `c` (bytes/s), propagation
/// delay `d` (s), block sizes, the adversary budget and a security target,
/// returns the round length, mining rates, and voter-tree count.
///
/// The voter rate is capped at `ln((1-beta)/beta) / (1-beta)` (above it,
/// per-tree vote depth stops being reliable) and by `fv_cap` when given.
/// Transaction blocks get 90% of capacity; votes fit in a `0.1 * c * d`
/// budget, which fixes `m`. The proposer rate is taken equal to the voter
/// rate, and the combined load is checked against `c * delta` — the
/// derivation refuses to return a parameterization that violates stability.
pub fn derive_parameters(
    capacity: f64,
    prop_delay: f64,
    b_v: f64,
    b_p: f64,
    b_t: f64,
    beta: f64,
    fv_cap: Option<f64>,
) -> Result<DerivedParams, ConfigError> {
    let inv = |field, requirement, value| ConfigError::Invalid {
        field,
        requirement,
        value,
    };
    if !(beta > 0.0 && beta < 0.5) {
        return Err(inv("beta", "0 < beta < 0.5", beta));
    }
    for (name, v) in [
        ("capacity", capacity),
        ("prop_delay", prop_delay),
        ("b_v", b_v),
        ("b_p", b_p),
        ("b_t", b_t),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(inv(name, "positive and finite", v));
        }
    }
    let delta = b_p.max(b_v) / capacity + prop_delay;
    let fv_natural = ((1.0 - beta) / beta).ln() / (1.0 - beta);
    let fv_round = match fv_cap {
        Some(cap) if cap > 0.0 => fv_natural.min(cap),
        Some(cap) => return Err(inv("fv_cap", "fv_cap > 0", cap)),
        None => fv_natural,
    };
    let ft_round = 0.9 * capacity * delta / b_t;
    let budget = 0.1 * capacity * prop_delay;
    let m_real = budget / (fv_round * b_v) - b_p / b_v;
    if m_real < 1.0 {
        return Err(ConfigError::InfeasibleCapacity {
            budget,
            needed: fv_round * b_v + b_p,
        });
    }
    let m = m_real.floor() as usize;
    let lhs = fv_round * b_p + m as f64 * fv_round * b_v + ft_round * b_t;
    let rhs = capacity * delta;
    if lhs > rhs * (1.0 + 1e-12) {
        return Err(ConfigError::Stability { lhs, rhs });
    }
    Ok(DerivedParams {
        delta,
        fv_round,
        ft_round,
        m,
    })
}
