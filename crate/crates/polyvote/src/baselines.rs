//! Single-chain reference simulators: a longest-chain protocol (with an
//! optional private double-spend attack) and a heaviest-subtree protocol
//! under the two-subtree balancing attack. Both share the round-synchronous
//! Poisson mining model of the main simulator, collapsed to one chain.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::model::{poisson_u32, ConfigError};

fn default_epsilon() -> f64 {
    (-10.0f64).exp()
}

fn default_lambda() -> f64 {
    1.0
}

fn default_block_txs() -> f64 {
    100.0
}

fn default_r_max() -> u32 {
    10_000
}

/// Longest-chain simulator parameters. `f_round` is the total mining rate
/// per round; honest miners hold `1 − beta` of it and, in the private-attack
/// mode, the adversary spends `beta_active` (default `beta`) on a hidden
/// fork. Transactions arrive at `lambda_in` per round and each block carries
/// up to `b_t` of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainConfig {
    pub f_round: f64,
    pub beta: f64,
    pub beta_active: Option<f64>,
    pub epsilon: f64,
    /// Confirmation depth; defaults to the `k(ε)` scaling with a single
    /// chain standing in for every tree.
    pub k_override: Option<u32>,
    pub r_max: u32,
    pub lambda_in: f64,
    pub b_t: f64,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> ChainConfig {
        ChainConfig {
            f_round: 0.1,
            beta: 0.25,
            beta_active: None,
            epsilon: default_epsilon(),
            k_override: None,
            r_max: default_r_max(),
            lambda_in: default_lambda(),
            b_t: default_block_txs(),
            seed: 0,
        }
    }
}

impl ChainConfig {
    pub fn beta_active(&self) -> f64 {
        self.beta_active.unwrap_or(self.beta)
    }

    /// Blocks that must sit on top of a block before its transactions
    /// confirm: `ceil((2/γ)·ln(8·r_max/ε))` with `γ = (1−2β)²/36`, unless
    /// overridden.
    pub fn k(&self) -> u32 {
        if let Some(k) = self.k_override {
            return k;
        }
        let gamma = (1.0 - 2.0 * self.beta).powi(2) / 36.0;
        let inner = 8.0 * self.r_max as f64 / self.epsilon;
        let k = ((2.0 / gamma) * inner.ln()).ceil();
        if k >= u32::MAX as f64 {
            u32::MAX
        } else {
            k as u32
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.f_round > 0.0 && self.f_round.is_finite()) {
            return Err(ConfigError::Invalid {
                field: "f_round",
                requirement: "> 0",
                value: self.f_round,
            });
        }
        if !(0.0..0.5).contains(&self.beta) {
            return Err(ConfigError::Invalid {
                field: "beta",
                requirement: "in [0, 0.5)",
                value: self.beta,
            });
        }
        if let Some(ba) = self.beta_active {
            if !(0.0..1.0).contains(&ba) {
                return Err(ConfigError::Invalid {
                    field: "beta_active",
                    requirement: "in [0, 1)",
                    value: ba,
                });
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(ConfigError::Invalid {
                field: "epsilon",
                requirement: "in (0, 1)",
                value: self.epsilon,
            });
        }
        if self.r_max < 1 {
            return Err(ConfigError::Invalid {
                field: "r_max",
                requirement: ">= 1",
                value: self.r_max as f64,
            });
        }
        if !(self.lambda_in >= 0.0 && self.lambda_in.is_finite()) {
            return Err(ConfigError::Invalid {
                field: "lambda_in",
                requirement: ">= 0",
                value: self.lambda_in,
            });
        }
        if !(self.b_t >= 1.0) {
            return Err(ConfigError::Invalid {
                field: "b_t",
                requirement: ">= 1",
                value: self.b_t,
            });
        }
        Ok(())
    }
}

/// What the adversary does in the longest-chain run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainMode {
    /// Adversary mines nothing; pure honest growth.
    Passive,
    /// Classic double-spend race: a hidden fork from the parent of the first
    /// transaction's block, released only if it overtakes after the victim
    /// confirms at depth `k`.
    Private,
}

/// Latency of confirmed transactions in a longest-chain run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChainLatency {
    pub confirmed: u64,
    /// Mean rounds from arrival to confirmation.
    pub mean_rounds: f64,
    pub p95_rounds: f64,
    /// Mean rounds from block inclusion to confirmation.
    pub mean_from_inclusion: f64,
}

/// Outcome of the private double-spend race.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AttackOutcome {
    /// Round the target transaction entered the public chain.
    pub included_round: u32,
    /// Round its block reached depth `k` (the victim acts here).
    pub merchant_round: Option<u32>,
    /// Whether the hidden fork ever overtook the public chain afterwards.
    pub succeeded: bool,
    pub success_round: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainResult {
    pub rounds: u32,
    pub chain_len: u64,
    pub growth_per_round: f64,
    pub k: u32,
    pub txs_arrived: u64,
    pub txs_included: u64,
    pub latency: Option<ChainLatency>,
    pub attack: Option<AttackOutcome>,
}

struct BtcTx {
    arrival: u32,
    included: Option<u32>,
    confirmed: Option<u32>,
}

/// Runs the longest-chain protocol for `r_max` rounds. The chain grows by
/// one block in any round with at least one honest mining success (all
/// honest miners share the tip inside a round); a block's transactions
/// confirm once `k` blocks sit on top of it.
pub fn run_bitcoin(config: &ChainConfig, mode: ChainMode) -> Result<ChainResult, ConfigError> {
    config.validate()?;
    let k = config.k();
    let honest_mean = (1.0 - config.beta) * config.f_round;
    let adv_mean = match mode {
        ChainMode::Passive => 0.0,
        ChainMode::Private => config.beta_active() * config.f_round,
    };
    let capacity = config.b_t.floor().max(1.0) as usize;
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);

    let mut txs: Vec<BtcTx> = Vec::new();
    let mut queue: VecDeque<usize> = VecDeque::new();
    let mut carry = 0.0f64;
    // Per public block: (inclusion round, transactions).
    let mut blocks: Vec<(u32, Vec<usize>)> = Vec::new();

    // Double-spend race state.
    let mut race: Option<(usize, u64)> = None; // (target tx, fork point = target block position − 1)
    let mut private_len = 0u64;
    let mut attack = None::<AttackOutcome>;
    const GIVE_UP_DEFICIT: u64 = 64;

    for round in 1..=config.r_max {
        carry += config.lambda_in;
        let incoming = carry.floor() as u64;
        carry -= incoming as f64;
        for _ in 0..incoming {
            queue.push_back(txs.len());
            txs.push(BtcTx {
                arrival: round,
                included: None,
                confirmed: None,
            });
        }

        let h = poisson_u32(honest_mean, &mut rng);
        if h >= 1 {
            let mut content = Vec::with_capacity(capacity.min(queue.len()));
            while content.len() < capacity {
                match queue.pop_front() {
                    Some(i) => {
                        txs[i].included = Some(round);
                        content.push(i);
                    }
                    None => break,
                }
            }
            blocks.push((round, content));
            let len = blocks.len() as u64;
            // The block now exactly k deep confirms.
            if len > k as u64 {
                let idx = (len - 1 - k as u64) as usize;
                for &i in &blocks[idx].1 {
                    txs[i].confirmed = Some(round);
                }
            }
            // The race targets the first transaction to enter the chain.
            if mode == ChainMode::Private && race.is_none() && attack.is_none() {
                if let Some(&i) = blocks[len as usize - 1].1.first() {
                    race = Some((i, len - 1));
                    attack = Some(AttackOutcome {
                        included_round: round,
                        merchant_round: None,
                        succeeded: false,
                        success_round: None,
                    });
                }
            }
        }

        if let (Some((target, fork_base)), Some(out)) = (race, attack.as_mut()) {
            // The fork starts the round after the target lands.
            if round > out.included_round {
                private_len += poisson_u32(adv_mean, &mut rng) as u64;
            }
            let public_since = blocks.len() as u64 - fork_base;
            if out.merchant_round.is_none() {
                if let Some(r) = txs[target].confirmed {
                    out.merchant_round = Some(r);
                }
            }
            if out.merchant_round.is_some() && private_len > public_since {
                out.succeeded = true;
                out.success_round = Some(round);
                race = None;
            } else if public_since > private_len + GIVE_UP_DEFICIT {
                race = None;
            }
        }
    }

    let confirmed: Vec<&BtcTx> = txs.iter().filter(|t| t.confirmed.is_some()).collect();
    let latency = if confirmed.is_empty() {
        None
    } else {
        let n = confirmed.len() as f64;
        let mut waits: Vec<f64> = confirmed
            .iter()
            .map(|t| (t.confirmed.unwrap() - t.arrival) as f64)
            .collect();
        waits.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        let rank = ((0.95 * n).ceil() as usize).clamp(1, waits.len());
        Some(ChainLatency {
            confirmed: confirmed.len() as u64,
            mean_rounds: waits.iter().sum::<f64>() / n,
            p95_rounds: waits[rank - 1],
            mean_from_inclusion: confirmed
                .iter()
                .map(|t| (t.confirmed.unwrap() - t.included.unwrap()) as f64)
                .sum::<f64>()
                / n,
        })
    };

    Ok(ChainResult {
        rounds: config.r_max,
        chain_len: blocks.len() as u64,
        growth_per_round: blocks.len() as f64 / config.r_max as f64,
        k,
        txs_arrived: txs.len() as u64,
        txs_included: txs.iter().filter(|t| t.included.is_some()).count() as u64,
        latency,
        attack,
    })
}

/// Heaviest-subtree balancing-attack parameters. Honest power splits evenly
/// across the two contested subtrees (`H₁, H₂` independent Poisson of half
/// the honest rate); the adversary banks its own blocks and spends
/// `|H₁ − H₂|` per round to keep the subtree weights equal. The contest
/// opens after `warmup` rounds of pure banking and collapses when the bank
/// cannot cover a round's imbalance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GhostConfig {
    pub f_round: f64,
    pub beta: f64,
    pub r_max: u32,
    pub warmup: u32,
    pub seed: u64,
}

impl Default for GhostConfig {
    fn default() -> GhostConfig {
        GhostConfig {
            f_round: 10.0,
            beta: 0.3,
            r_max: default_r_max(),
            warmup: 0,
            seed: 0,
        }
    }
}

impl GhostConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.f_round > 0.0 && self.f_round.is_finite()) {
            return Err(ConfigError::Invalid {
                field: "f_round",
                requirement: "> 0",
                value: self.f_round,
            });
        }
        if !(0.0..0.5).contains(&self.beta) {
            return Err(ConfigError::Invalid {
                field: "beta",
                requirement: "in [0, 0.5)",
                value: self.beta,
            });
        }
        if self.r_max < 1 {
            return Err(ConfigError::Invalid {
                field: "r_max",
                requirement: ">= 1",
                value: self.r_max as f64,
            });
        }
        if self.warmup >= self.r_max {
            return Err(ConfigError::Invalid {
                field: "warmup",
                requirement: "< r_max",
                value: self.warmup as f64,
            });
        }
        Ok(())
    }
}

/// Outcome of one balancing-attack run. `ghost_len` counts honest main-chain
/// growth under the heaviest-subtree rule (during the contest, only the
/// currently heavier subtree's honest chain counts — the adversary's filler
/// blocks carry weight but no payload); `longest_len` is the coupled
/// longest-chain growth on identical samples, so `ghost_len ≤ longest_len`
/// always holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GhostOutcome {
    pub collapsed: bool,
    pub collapse_round: Option<u32>,
    /// First contested round.
    pub contest_start: u32,
    /// Rounds the fork survived from the contest start.
    pub sustained_rounds: u32,
    pub ghost_len: u64,
    pub longest_len: u64,
    pub ghost_growth: f64,
    pub longest_growth: f64,
    pub final_bank: u64,
}

/// Runs the two-subtree balancing attack for `r_max` rounds.
pub fn run_ghost_balancing(config: &GhostConfig) -> Result<GhostOutcome, ConfigError> {
    config.validate()?;
    let half_honest = (1.0 - config.beta) * config.f_round / 2.0;
    let adv_mean = config.beta * config.f_round;
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);

    let mut bank = 0u64;
    let mut longest_len = 0u64;
    let mut ghost_len = 0u64;
    // Contest state: subtree weights and honest chain lengths.
    let (mut w1, mut w2, mut l1, mut l2) = (0u64, 0u64, 0u64, 0u64);
    let mut live = false;
    let mut collapse_round = None::<u32>;
    let contest_start = config.warmup + 1;

    for round in 1..=config.r_max {
        let h1 = poisson_u32(half_honest, &mut rng) as u64;
        let h2 = poisson_u32(half_honest, &mut rng) as u64;
        let z = poisson_u32(adv_mean, &mut rng) as u64;
        bank += z;
        if h1 + h2 >= 1 {
            longest_len += 1;
        }
        if round == contest_start && collapse_round.is_none() {
            live = true;
        }
        if live {
            w1 += h1;
            w2 += h2;
            if h1 >= 1 {
                l1 += 1;
            }
            if h2 >= 1 {
                l2 += 1;
            }
            let need = w1.abs_diff(w2);
            if need > 0 {
                if bank >= need {
                    bank -= need;
                    let even = w1.max(w2);
                    w1 = even;
                    w2 = even;
                } else {
                    live = false;
                    collapse_round = Some(round);
                }
            }
        } else if h1 + h2 >= 1 {
            // Single uncontested chain before the contest and after collapse.
            ghost_len += 1;
        }
    }
    ghost_len += l1.max(l2);

    let sustained_rounds = match collapse_round {
        Some(r) => r - contest_start,
        None => config.r_max + 1 - contest_start,
    };
    Ok(GhostOutcome {
        collapsed: collapse_round.is_some(),
        collapse_round,
        contest_start,
        sustained_rounds,
        ghost_len,
        longest_len,
        ghost_growth: ghost_len as f64 / config.r_max as f64,
        longest_growth: longest_len as f64 / config.r_max as f64,
        final_bank: bank,
    })
}
