//! Acceptance gate: one test per advertised guarantee. Every test prints a
//! single `acceptance N (<name>): PASS/FAIL — evidence` line (visible under
//! `--nocapture`) and then asserts, so the suite is both a readable checklist
//! and a hard gate.

use std::collections::HashSet;
use std::sync::OnceLock;
use std::time::Instant;

use polyvote::adversary::{make_strategy, withheld_lead_sample};
use polyvote::analytics;
use polyvote::baselines::{
    run_bitcoin, run_ghost_balancing, ChainConfig, ChainMode, GhostConfig,
};
use polyvote::confirm::{ordered_confirmed_txs, sanitize_ledger, ConfirmState};
use polyvote::engine::{run, step_round, ConfirmView, SimResult, WorldState};
use polyvote::model::{round_rng, RngStream, SimConfig, TxId};
use polyvote_cli::runner::{run_spec, to_csv};
use polyvote_cli::spec::parse_config_str;

fn verdict(n: u32, name: &str, ok: bool, details: String) {
    let word = if ok { "PASS" } else { "FAIL" };
    println!("acceptance {n} ({name}): {word} — {details}");
    assert!(ok, "acceptance {n} ({name}): {details}");
}

// ---------------------------------------------------------------------------
// 1. Non-redundant transaction-block rate follows the queue-count curve.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_01_nonredundant_rate_queue_curve() {
    let t0 = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, &q) in [1usize, 4, 16, 64].iter().enumerate() {
        let mut config = SimConfig::minimal(1, 0.25, 0.05, 0.01, 1.0, 100_000, 11 + i as u64);
        config.q = q;
        let mut strategy = make_strategy("passive").unwrap();
        let mut world = WorldState::new(config.clone());
        for _ in 0..config.r_max {
            step_round(&mut world, strategy.as_mut(), ConfirmView::default()).unwrap();
        }
        let got = world.throughput.non_redundant_per_round();
        let want = analytics::decoupled_thruput(q as f64, config.beta, config.ft_round);
        let rel = got / want - 1.0;
        ok &= rel.abs() < 0.02;
        parts.push(format!("q={q}: {got:.4}/{want:.4} ({:+.2}%)", rel * 100.0));
    }
    let dt = t0.elapsed().as_secs_f64();
    ok &= dt < 60.0;
    verdict(
        1,
        "nonredundant-rate-queue-curve",
        ok,
        format!(
            "beta 0.25, 1e5 rounds each, tolerance 2%: {}; {dt:.1}s (limit 60s)",
            parts.join(", ")
        ),
    );
}

// ---------------------------------------------------------------------------
// 2. Single-chain growth matches the round-collision formula.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_02_single_chain_growth_formula() {
    let t0 = Instant::now();
    let beta = 0.25;
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, f) in [1.0f64, 0.3].into_iter().enumerate() {
        let config = ChainConfig {
            f_round: f,
            beta,
            r_max: 100_000,
            seed: 23 + i as u64,
            ..ChainConfig::default()
        };
        let res = run_bitcoin(&config, ChainMode::Passive).unwrap();
        let want = 1.0 - (-(1.0 - beta) * f).exp();
        let rel = res.growth_per_round / want - 1.0;
        ok &= rel.abs() < 0.02;
        parts.push(format!(
            "f={f}: {:.4}/{want:.4} ({:+.2}%)",
            res.growth_per_round,
            rel * 100.0
        ));
    }
    let dt = t0.elapsed().as_secs_f64();
    ok &= dt < 30.0;
    verdict(
        2,
        "single-chain-growth-formula",
        ok,
        format!(
            "idle adversary, beta 0.25, 1e5 rounds, tolerance 2%: {}; {dt:.1}s (limit 30s)",
            parts.join(", ")
        ),
    );
}

// ---------------------------------------------------------------------------
// 3 & 4. Shared latency corpus: 20 seeds per strategy at m = 100.
// ---------------------------------------------------------------------------

struct LatencyStats {
    /// Per-run (mean arrival-to-confirmation rounds, confirmed count).
    passive: Vec<(f64, u64)>,
    balancing: Vec<(f64, u64)>,
    build_seconds: f64,
}

fn mean_fast_latency(res: &SimResult) -> (f64, u64) {
    let lats: Vec<f64> = res
        .txs
        .iter()
        .filter(|t| t.conflicts_with.is_none())
        .filter_map(|t| t.confirmed_round.map(|c| (c - t.arrival_round) as f64))
        .collect();
    let n = lats.len() as u64;
    (lats.iter().sum::<f64>() / n.max(1) as f64, n)
}

fn latency_corpus() -> &'static LatencyStats {
    static CORPUS: OnceLock<LatencyStats> = OnceLock::new();
    CORPUS.get_or_init(|| {
        let t0 = Instant::now();
        let run_one = |strategy: &str, seed: u64| {
            let mut config = SimConfig::minimal(100, 0.25, 0.1, 0.05, 0.2, 1200, seed);
            config.b_v = Some(100.0);
            config.b_p = Some(100.0);
            config.b_t = Some(4.0);
            config.capacity = Some(1e5);
            config.prop_delay = Some(0.01);
            let mut s = make_strategy(strategy).unwrap();
            mean_fast_latency(&run(&config, s.as_mut()).unwrap())
        };
        LatencyStats {
            passive: (0..20).map(|i| run_one("passive", 100 + i)).collect(),
            balancing: (0..20).map(|i| run_one("balancing", 100 + i)).collect(),
            build_seconds: t0.elapsed().as_secs_f64(),
        }
    })
}

fn grand_mean(rows: &[(f64, u64)]) -> f64 {
    rows.iter().map(|(m, _)| m).sum::<f64>() / rows.len() as f64
}

#[test]
fn acceptance_03_fast_rule_beats_depth_rule_latency() {
    let t0 = Instant::now();
    let corpus = latency_corpus();
    let epsilon = (-10.0f64).exp();
    let mut btc_means = Vec::new();
    let mut btc_confirmed = u64::MAX;
    let mut k = 0;
    for i in 0..20u64 {
        let config = ChainConfig {
            f_round: 0.1,
            beta: 0.25,
            epsilon,
            r_max: 100_000,
            lambda_in: 1.0,
            b_t: 50.0,
            seed: 500 + i,
            ..ChainConfig::default()
        };
        let res = run_bitcoin(&config, ChainMode::Passive).unwrap();
        k = res.k;
        let lat = res.latency.expect("depth rule confirmed transactions");
        btc_means.push(lat.mean_rounds);
        btc_confirmed = btc_confirmed.min(lat.confirmed);
    }
    let btc = btc_means.iter().sum::<f64>() / btc_means.len() as f64;
    let pass = grand_mean(&corpus.passive);
    let bal = grand_mean(&corpus.balancing);
    let min_confirmed = corpus
        .passive
        .iter()
        .chain(&corpus.balancing)
        .map(|(_, n)| *n)
        .min()
        .unwrap();
    let dt = t0.elapsed().as_secs_f64();
    let ok = pass < btc
        && bal < btc
        && min_confirmed >= 100
        && btc_confirmed >= 100
        && dt < 600.0;
    verdict(
        3,
        "fast-rule-beats-depth-rule-latency",
        ok,
        format!(
            "m=100 fv=0.1 beta=0.25 eps=e^-10: list rule {pass:.0}r (idle) / {bal:.0}r \
             (balancing) vs depth rule k={k} at {btc:.0}r; 20 runs each, \
             min confirmed/run {min_confirmed}; {dt:.1}s (limit 600s)"
        ),
    );
}

#[test]
fn acceptance_04_balancing_slowdown_band() {
    let t0 = Instant::now();
    let corpus = latency_corpus();
    let pass = grand_mean(&corpus.passive);
    let bal = grand_mean(&corpus.balancing);
    let ratio = bal / pass;
    let dt = t0.elapsed().as_secs_f64();
    let ok = (1.3..=3.5).contains(&ratio) && dt < 600.0;
    verdict(
        4,
        "balancing-slowdown-band",
        ok,
        format!(
            "mean latency {bal:.1}r balancing vs {pass:.1}r idle over 20 seeds each: \
             ratio {ratio:.2} (required 1.3..3.5); corpus build {:.1}s, {dt:.1}s total",
            corpus.build_seconds
        ),
    );
}

// ---------------------------------------------------------------------------
// 5 & 6. Shared safety corpus: every strategy, audited at the horizon.
// ---------------------------------------------------------------------------

fn safety_corpus() -> &'static Vec<SimResult> {
    static CORPUS: OnceLock<Vec<SimResult>> = OnceLock::new();
    CORPUS.get_or_init(|| {
        let mut out = Vec::new();
        for strategy in ["passive", "censorship", "private_nakamoto", "balancing"] {
            for seed in [1u64, 2] {
                let config = SimConfig::minimal(30, 0.3, 0.2, 0.05, 0.2, 5000, seed);
                let mut s = make_strategy(strategy).unwrap();
                out.push(run(&config, s.as_mut()).unwrap());
            }
        }
        out
    })
}

#[test]
fn acceptance_05_final_leader_in_confirmed_list() {
    let t0 = Instant::now();
    let corpus = safety_corpus();
    let instances: u64 = corpus.iter().map(|r| r.safety.list_instances).sum();
    let violations: u64 = corpus.iter().map(|r| r.safety.list_violations).sum();
    let epsilon = corpus[0].config.epsilon;
    let allowed = (epsilon * instances as f64).ceil() as u64;
    let dt = t0.elapsed().as_secs_f64();
    let ok = instances >= 1000 && violations <= allowed && dt < 600.0;
    verdict(
        5,
        "final-leader-in-confirmed-list",
        ok,
        format!(
            "4 strategies x 2 seeds, m=30 beta=0.3, 5000 rounds: {instances} \
             list-confirmed levels (need >= 1000), horizon leader outside its list \
             {violations} times (allowed {allowed}); {dt:.1}s (limit 600s)"
        ),
    );
}

#[test]
fn acceptance_06_vote_lower_bounds_hold() {
    let t0 = Instant::now();
    let corpus = safety_corpus();
    let instances: u64 = corpus.iter().map(|r| r.safety.bound_instances).sum();
    let violations: u64 = corpus.iter().map(|r| r.safety.bound_violations).sum();
    let epsilon = corpus[0].config.epsilon;
    let allowed = (epsilon * instances as f64).ceil() as u64;
    let dt = t0.elapsed().as_secs_f64();
    let ok = instances >= 1000 && violations <= allowed && dt < 600.0;
    verdict(
        6,
        "vote-lower-bounds-hold",
        ok,
        format!(
            "same corpus: {instances} recorded per-candidate vote lower bounds, \
             {violations} exceeded the final tally (allowed {allowed}); \
             {dt:.1}s (limit 600s)"
        ),
    );
}

// ---------------------------------------------------------------------------
// 7. The withheld-lead sampler is the claimed geometric law.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_07_withheld_lead_geometric() {
    let t0 = Instant::now();
    let beta_active = 0.3;
    let n = 10_000u64;
    let mut rng = round_rng(11, 1, RngStream::Strategy);
    let mut obs = [0u64; 5];
    for _ in 0..n {
        let k = withheld_lead_sample(beta_active, &mut rng) as usize;
        obs[k.min(4)] += 1;
    }
    // P(W = k) = (1 - 2b)(2b)^k, tail bin at k >= 4.
    let r = 2.0 * beta_active;
    let mut expected = [0.0f64; 5];
    for (k, e) in expected.iter_mut().enumerate().take(4) {
        *e = (1.0 - r) * r.powi(k as i32) * n as f64;
    }
    expected[4] = r.powi(4) * n as f64;
    let chi2: f64 = obs
        .iter()
        .zip(&expected)
        .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
        .sum();
    let crit = 9.4877; // chi-square, 4 degrees of freedom, 5% tail
    let dt = t0.elapsed().as_secs_f64();
    let ok = chi2 < crit && dt < 60.0;
    verdict(
        7,
        "withheld-lead-geometric",
        ok,
        format!(
            "active share 0.3, 1e4 draws, bins 0..3 and tail: observed {obs:?}, \
             chi^2 {chi2:.2} vs 9.49 at 5%; {dt:.1}s (limit 60s)"
        ),
    );
}

// ---------------------------------------------------------------------------
// 8. The heaviest-subtree stall threshold brackets observed behavior.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_08_fork_threshold_bracket() {
    let t0 = Instant::now();
    let beta = 0.3;
    let fstar = analytics::ghost_fbar(beta).unwrap();
    let seeds = 30u64;
    let freq_at = |f_round: f64| -> f64 {
        let mut collapsed = 0u32;
        for seed in 0..seeds {
            let config = GhostConfig {
                f_round,
                beta,
                r_max: 10_000,
                warmup: 200,
                seed,
            };
            collapsed += u32::from(run_ghost_balancing(&config).unwrap().collapsed);
        }
        collapsed as f64 / seeds as f64
    };
    let below = freq_at(0.5 * fstar);
    let above = freq_at(4.0 * fstar);
    let dt = t0.elapsed().as_secs_f64();
    let ok = below >= 0.9 && above <= 0.1 && dt < 300.0;
    verdict(
        8,
        "fork-threshold-bracket",
        ok,
        format!(
            "threshold f*({beta}) = {fstar:.2}/round: fork collapse frequency {below:.2} \
             at 0.5x f* (need >= 0.9) vs {above:.2} at 4x f* (need <= 0.1), \
             30 seeds x 1e4 rounds each; {dt:.1}s (limit 300s)"
        ),
    );
}

// ---------------------------------------------------------------------------
// 9. Closed-form identities: roots, limits, and the crossover share.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_09_closed_form_identities() {
    let t0 = Instant::now();
    let mut ok = true;
    let mut fails = Vec::new();
    let mut check = |label: &str, good: bool| {
        ok &= good;
        if !good {
            fails.push(label.to_string());
        }
    };

    let cross = analytics::crossover_beta();
    check("crossover in 0.43 +/- 0.01", (cross - 0.43).abs() <= 0.01);
    check(
        "crossover root residual",
        (1.0 - (cross - 1.0).exp() - cross).abs() < 1e-10,
    );
    check(
        "max tolerable rate is 1 at the crossover",
        (analytics::bitcoin_fbar(cross).unwrap() - 1.0).abs() < 1e-8,
    );

    let grid: Vec<f64> = (1..=9).map(|i| i as f64 * 0.05).collect();
    for &beta in &grid {
        let fbar = analytics::bitcoin_fbar(beta).unwrap();
        check(
            "chain-rate root residual",
            (1.0 - (-(1.0 - beta) * fbar).exp() - beta * fbar).abs() < 1e-10,
        );
        let gstar = analytics::ghost_fbar(beta).unwrap();
        check(
            "fork-threshold root residual",
            (beta * gstar - analytics::mean_abs_diff_poisson((1.0 - beta) * gstar / 2.0)).abs()
                < 1e-10,
        );
        check(
            "queue-curve limit q -> inf",
            (analytics::decoupled_thruput(1e12, beta, 1.0) - (1.0 - beta)).abs() < 1e-9,
        );
        check(
            "latency-tradeoff limit tau -> inf",
            (analytics::tradeoff(beta, 1e12).unwrap() - (1.0 - beta)).abs() < 1e-9,
        );
    }

    check(
        "poisson imbalance vanishes at 0",
        analytics::mean_abs_diff_poisson(0.0) == 0.0,
    );
    check(
        "queue curve at q=1, beta=0",
        (analytics::decoupled_thruput(1.0, 0.0, 1.0) - (1.0 - (-1.0f64).exp())).abs() < 1e-12,
    );
    check(
        "drift constant at beta 0.3",
        (analytics::gamma(0.3) - 0.16 / 36.0).abs() < 1e-12,
    );
    // Tightening the budget by e^-10 deepens the rule by exactly (2/gamma)*10.
    let d1 = analytics::confirm_depth((-10.0f64).exp(), 100, 10_000, 0.3);
    let d2 = analytics::confirm_depth((-20.0f64).exp(), 100, 10_000, 0.3);
    check(
        "depth grows logarithmically in 1/epsilon",
        (d2 - d1 - (2.0 / analytics::gamma(0.3)) * 10.0).abs() < 1e-6,
    );

    let dt = t0.elapsed().as_secs_f64();
    ok &= dt < 5.0;
    verdict(
        9,
        "closed-form-identities",
        ok,
        format!(
            "crossover {cross:.4}, residuals < 1e-10 on a 9-point grid, limit \
             identities at 1e12 within 1e-9{}; {dt:.2}s (limit 5s)",
            if fails.is_empty() {
                String::new()
            } else {
                format!("; FAILED: {}", fails.join(", "))
            }
        ),
    );
}

// ---------------------------------------------------------------------------
// 10. Replay determinism and ledger integrity under load.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_10_replay_and_ledger_integrity() {
    let t0 = Instant::now();
    let mut ok = true;
    let mut notes = Vec::new();

    // Same experiment file twice: identical bytes, CSV and summary alike.
    let text = r#"{
        "m": 3, "beta": 0.2, "fv_round": 0.35, "fp_round": 0.08,
        "ft_round": 0.25, "r_max": 150, "seed": 29, "conflict_fraction": 0.1,
        "repetitions": 2,
        "sweep": {"beta": [0.15, 0.3], "strategy": ["passive", "private_nakamoto"]}
    }"#;
    let spec = parse_config_str(text).unwrap();
    let a = run_spec(&spec).unwrap();
    let b = run_spec(&spec).unwrap();
    let csv_same = to_csv(&a.rows) == to_csv(&b.rows);
    let summary_same = serde_json::to_string(&a.summary).unwrap()
        == serde_json::to_string(&b.summary).unwrap();
    ok &= csv_same && summary_same;
    notes.push(format!(
        "replayed 8-row sweep byte-identical (csv {csv_same}, summary {summary_same})"
    ));

    // Deterministic fuzz corpus: ledgers must extend append-only, sanitize
    // idempotently, exclude double-spends, and the audit must stay clean.
    let strategies = ["passive", "censorship", "private_nakamoto", "balancing"];
    let mut total_rounds = 0u64;
    let mut runs = 0u32;
    for i in 0..60u64 {
        let m = 1 + (i % 5) as usize;
        let beta = 0.05 + 0.39 * (i as f64 * 0.618_033_988_749_894_8).fract();
        let r_max = 150 + (i % 7) as u32 * 10;
        let mut config = SimConfig::minimal(
            m,
            beta,
            0.25 + 0.02 * (i % 4) as f64,
            0.08,
            0.25,
            r_max,
            1000 + i,
        );
        config.conflict_fraction = 0.15;
        let mut strategy = make_strategy(strategies[(i % 4) as usize]).unwrap();
        let mut world = WorldState::new(config.clone());
        let mut confirm = ConfirmState::new(&config);
        let mut prev: Vec<TxId> = Vec::new();
        for _ in 0..config.r_max {
            let view = ConfirmView {
                fast_frontier: confirm.fast_frontier(),
                slow_frontier: confirm.slow_frontier(),
            };
            step_round(&mut world, strategy.as_mut(), view).unwrap();
            confirm.update(&mut world);
            let ledger = confirm.slow_ledger();
            ok &= ledger.len() >= prev.len() && ledger[..prev.len()] == prev[..];
            prev = ledger.to_vec();
        }
        ok &= sanitize_ledger(&world, &prev) == prev;
        let mut included = HashSet::new();
        for tx in &prev {
            if let Some(partner) = world.txs[tx.0 as usize].conflicts_with {
                ok &= !included.contains(&partner);
            }
            ok &= included.insert(*tx);
        }
        ok &= ordered_confirmed_txs(&world, &config) == prev;
        ok &= confirm.finalize(&world).total_violations() == 0;
        total_rounds += u64::from(config.r_max);
        runs += 1;
    }
    ok &= total_rounds >= 10_000;
    notes.push(format!(
        "{runs} seeded runs, {total_rounds} total rounds: ledgers append-only, \
         sanitization idempotent, no double-spends, zero audit violations"
    ));

    let dt = t0.elapsed().as_secs_f64();
    verdict(
        10,
        "replay-and-ledger-integrity",
        ok,
        format!("{}; {dt:.1}s", notes.join("; ")),
    );
}
