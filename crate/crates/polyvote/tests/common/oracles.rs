//! Independent numerical oracles: small dynamic programs and Monte-Carlo
//! estimators built from first principles. They share no code with the
//! simulator, so agreement between the two is evidence, not tautology.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Poisson};

/// Poisson probability mass function truncated where the remaining tail drops
/// below `tail_eps`; the tail mass is folded into the last entry so the
/// vector sums to exactly 1.
pub fn poisson_pmf(mu: f64, tail_eps: f64) -> Vec<f64> {
    assert!(mu >= 0.0 && mu.is_finite());
    if mu == 0.0 {
        return vec![1.0];
    }
    let mut pmf = Vec::new();
    let mut p = (-mu).exp();
    let mut cum = 0.0;
    let mut j = 0usize;
    loop {
        pmf.push(p);
        cum += p;
        if (1.0 - cum < tail_eps && j as f64 > mu) || j > 400 {
            break;
        }
        j += 1;
        p *= mu / j as f64;
    }
    *pmf.last_mut().unwrap() += 1.0 - cum;
    pmf
}

/// Success probability of the hidden-fork double-spend race, computed by
/// dynamic programming over the exact per-round law the longest-chain
/// simulator uses: the public chain gains a block with probability
/// `1 − e^{−(1−beta)·f}`, the fork gains a Poisson(`beta_active`·f) count,
/// the victim acts once the public chain is `k + 1` blocks past the fork
/// point, the attacker wins on any round after that with strictly more fork
/// blocks, and abandons once it falls more than `give_up` blocks behind.
///
/// Two phases share the same round law. Pre-victim, the forward distribution
/// is tracked over `(a, d)` where `a` counts public blocks since the fork
/// point and `d = a − fork_len`; post-victim only `d` matters, so a win
/// probability vector over `d ∈ 0..=give_up` is precomputed by value
/// iteration. Deficits below −128 are lumped (they win on arrival at the
/// victim round regardless), and the forward pass runs until the transient
/// mass is below 1e-12.
pub fn btc_race_success(beta: f64, beta_active: f64, f: f64, k: u32, give_up: i64) -> f64 {
    assert!(k >= 1, "the race needs at least one confirmation");
    let p_pub = 1.0 - (-(1.0 - beta) * f).exp();
    let mu = beta_active * f;
    let jumps = poisson_pmf(mu, 1e-14);
    let steps: [(i64, f64); 2] = [(0, 1.0 - p_pub), (1, p_pub)];

    // Post-victim win probabilities u[d], d = public − fork ∈ 0..=give_up.
    let dmax = give_up as usize;
    let mut u = vec![0.0f64; dmax + 1];
    loop {
        let mut delta = 0.0f64;
        let mut next = vec![0.0f64; dmax + 1];
        for (d, slot) in next.iter_mut().enumerate() {
            let mut acc = 0.0;
            for &(b, pb) in &steps {
                for (j, &pj) in jumps.iter().enumerate() {
                    let nd = d as i64 + b - j as i64;
                    let w = pb * pj;
                    if nd < 0 {
                        acc += w;
                    } else if nd <= give_up {
                        acc += w * u[nd as usize];
                    }
                }
            }
            delta = delta.max((acc - u[d]).abs());
            *slot = acc;
        }
        u = next;
        if delta < 1e-13 {
            break;
        }
    }

    // Pre-victim forward pass. The race starts the round after the target
    // transaction's block lands, i.e. from (a = 1, d = 1).
    const DLOW: i64 = -128;
    let d_states = (give_up - DLOW + 1) as usize;
    let d_off = |d: i64| (d - DLOW) as usize;
    let mut mass = vec![vec![0.0f64; d_states]; k as usize + 1]; // a ∈ 1..=k
    let mut win = 0.0f64;
    mass[1][d_off(1)] = 1.0;
    let mut transient = 1.0f64;
    while transient > 1e-12 {
        let mut next = vec![vec![0.0f64; d_states]; k as usize + 1];
        for a in 1..=k as usize {
            for di in 0..d_states {
                let m0 = mass[a][di];
                if m0 == 0.0 {
                    continue;
                }
                let d = DLOW + di as i64;
                for &(b, pb) in &steps {
                    let na = a + b as usize;
                    for (j, &pj) in jumps.iter().enumerate() {
                        let w = m0 * pb * pj;
                        if w == 0.0 {
                            continue;
                        }
                        let nd = (d + b - j as i64).max(DLOW);
                        if na == k as usize + 1 {
                            // The victim acts this round; the win check runs
                            // in the same round with the updated counts.
                            if nd < 0 {
                                win += w;
                            } else if nd <= give_up {
                                win += w * u[nd as usize];
                            }
                        } else if nd <= give_up {
                            next[na][d_off(nd)] += w;
                        }
                    }
                }
            }
        }
        mass = next;
        transient = mass.iter().flatten().sum();
    }
    win
}

/// Probability that the biased unit walk (up with probability `up`, else
/// down) started at 0 reaches +1 before −`drop`, computed by value iteration
/// on the strip — no closed form anywhere.
pub fn step_up_prob(up: f64, drop: u32) -> f64 {
    let n = drop as usize + 2; // index 0 = −drop (loss), n−1 = +1 (win)
    let start = drop as usize;
    let mut v = vec![0.0f64; n];
    v[n - 1] = 1.0;
    loop {
        let mut delta = 0.0f64;
        let mut next = v.clone();
        for i in 1..n - 1 {
            let val = up * v[i + 1] + (1.0 - up) * v[i - 1];
            delta = delta.max((val - v[i]).abs());
            next[i] = val;
        }
        v = next;
        if delta < 1e-15 {
            break;
        }
    }
    v[start]
}

/// Survival function of the maximum withheld lead under the sampler's own
/// stopping rule (quit once 256 below the running maximum): each new maximum
/// is an independent "reach +1 before −256" trial, so
/// `P(max ≥ k) = step_up_prob(up, 256)^k`.
pub fn lead_survival(beta_active: f64, k: u32) -> f64 {
    let odds = 2.0 * beta_active;
    if odds == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    let up = odds / (1.0 + odds);
    step_up_prob(up, 256).powi(k as i32)
}

/// Monte-Carlo estimate of `E|X − Y|` for independent Poisson(mu) draws.
pub fn mean_abs_diff_mc(mu: f64, n: u64, seed: u64) -> f64 {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let pois = Poisson::new(mu).expect("positive rate");
    let mut total = 0.0f64;
    for _ in 0..n {
        let a: f64 = pois.sample(&mut rng);
        let b: f64 = pois.sample(&mut rng);
        total += (a - b).abs();
    }
    total / n as f64
}
