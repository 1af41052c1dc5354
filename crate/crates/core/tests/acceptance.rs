//! Acceptance checks, one line per criterion:
//!
//! ```text
//! [PASS] 1 capability matches enumeration ...
//! ```
//!
//! Runs without the libtest harness so the lines always print. Exits
//! nonzero if any criterion fails unexpectedly.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use reliance_aid::ada::{self, Aggregate, AidMode, GameBank};
use reliance_aid::capability::{capability, capability_oracle};
use reliance_aid::cli;
use reliance_aid::config::{GridSpec, SessionConfig};
use reliance_aid::game::{generate_game_bank, BankSpec, Gamble, Game};
use reliance_aid::indicator::{self, AbcConfig, IndicatorInit, LoggedTrial, ObservationLog};
use reliance_aid::reliance::{self, OperatorParams, PriorSpec, RelianceState};
use reliance_aid::rng;
use reliance_aid::{Agreement, Choice};

/// Criteria whose literal targets contradict other requirements. They are
/// still evaluated and reported as FAIL, with the reason.
const KNOWN_UNATTAINABLE: &[(u32, &str)] = &[(
    2,
    "the stated (0.20, 0.25, 0.55) is not what enumerating the four joint outcomes gives; \
     the enumeration oracle of criterion 1 yields (0.20, 0.20, 0.60)",
)];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn random_games(count: usize, seed: u64) -> Vec<Game> {
    // Half on an integer grid, which produces exact reward ties, half
    // continuous.
    let grid = BankSpec { max_ev_gap: None, ..BankSpec::default() };
    let continuous = BankSpec { payoff_step: None, probability_step: None, max_ev_gap: None, ..BankSpec::default() };
    let mut games = generate_game_bank(count / 2, &grid, &mut rng::seeded(seed)).unwrap();
    games.extend(generate_game_bank(count - count / 2, &continuous, &mut rng::seeded(seed + 1)).unwrap());
    games
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let games = random_games(50, 101);
    let mut worst = 0.0f64;
    let mut mismatched_choice = 0;
    for g in &games {
        for n in 1..=8 {
            let fast = capability(g, n).unwrap();
            let slow = capability_oracle(g, n).unwrap();
            for (a, b) in [
                (fast.capability, slow.capability),
                (fast.win_prob_a, slow.win_prob_a),
                (fast.win_prob_b, slow.win_prob_b),
                (fast.tie_prob, slow.tie_prob),
            ] {
                worst = worst.max((a - b).abs());
            }
            mismatched_choice += (fast.optimal != slow.optimal) as u32;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-9 && mismatched_choice == 0 && elapsed < Duration::from_secs(5),
        format!(
            "capability matches enumeration on 50 games x n_c 1..8: max |diff| {worst:.2e}, \
             {mismatched_choice} optimal mismatches, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2() -> Outcome {
    let g = Game::new(0, Gamble::new(3.0, 0.0, 0.25).unwrap(), Gamble::new(4.0, 0.0, 0.20).unwrap(), 25).unwrap();
    let r = capability(&g, 1).unwrap();
    let exact = |x: f64, y: f64| (x - y).abs() < 1e-12;
    let pass = exact(r.win_prob_a, 0.20)
        && exact(r.win_prob_b, 0.25)
        && exact(r.tie_prob, 0.55)
        && r.optimal == Choice::B
        && exact(r.capability, 0.25);
    outcome(
        pass,
        format!(
            "worked cell A=(3,0,0.25) B=(4,0,0.20) n_c=1: expected (0.20, 0.25, 0.55) a_opt=B, \
             got ({}, {}, {}) a_opt={} C={}",
            r.win_prob_a, r.win_prob_b, r.tie_prob, r.optimal, r.capability
        ),
    )
}

fn criterion_3() -> Outcome {
    let base = OperatorParams { noise_sigma: 0.0, b1: 0.03, b2: 0.04, ..OperatorParams::default() };
    let mut rng = rng::seeded(3);
    let mut failures = Vec::new();
    let states = [0.0, 0.2, 0.5, 0.77, 1.0];
    for &p in &states {
        for &b in &states {
            for c in [0.0, 0.4, 1.0] {
                for a in [Agreement::Agree, Agreement::Disagree] {
                    let state = RelianceState { preference: p, belief: b, reliance: false, step_index: 0 };
                    let nb = reliance::step_belief(&state, &base, c, a);
                    let hold = reliance::step_preference(&state, &OperatorParams { s: 0.0, ..base }, nb, &mut rng);
                    if hold.preference != p {
                        failures.push(format!("s=0 moved P {p} -> {}", hold.preference));
                    }
                    let jump = reliance::step_preference(&state, &OperatorParams { s: 1.0, ..base }, nb, &mut rng);
                    if jump.preference != nb {
                        failures.push(format!("s=1 gave P {} for B {nb}", jump.preference));
                    }
                }
            }
        }
    }
    let fixed = RelianceState { preference: 0.9, belief: 1.0, reliance: true, step_index: 0 };
    let nb = reliance::step_belief(&fixed, &base, 1.0, Agreement::Agree);
    if nb != 1.0 {
        failures.push(format!("B=C=1 with agreement stepped to {nb}"));
    }
    for theta in [0.0, 0.3, 0.6, 1.0] {
        if !reliance::reliance_decision(theta, theta) {
            failures.push(format!("P = theta = {theta} gave d = 0"));
        }
    }
    let detail = if failures.is_empty() {
        "s=0 holds P, s=1 sets P=B', B=C=1 with agreement is fixed, P=theta relies (all exact, sigma=0)".to_string()
    } else {
        failures.join("; ")
    };
    outcome(failures.is_empty(), detail)
}

fn synthetic_log(seed: u64, truth: &OperatorParams) -> ObservationLog {
    // Ten 25-trial games with the aid running and no refits.
    let config = SessionConfig {
        games_per_operator: 10,
        abc_update_interval_games: 11,
        seed,
        indicator_init: IndicatorInit::Perturb { sigma: 0.05 },
        ..SessionConfig::default()
    };
    let bank = GameBank::generate(&config).unwrap();
    let games = ada::draw_operator_games(&bank.games, 10, &mut rng::stream(seed, 0, rng::Purpose::Games));
    let trace = ada::run_operator_session(&config, 0, *truth, &games, &bank.bounds).unwrap();
    trace
        .records
        .iter()
        .map(|r| LoggedTrial { reliance: r.reliance, agreement: r.agreement, capability: r.capability, observed: true })
        .collect()
}

fn criterion_4() -> Outcome {
    let priors = PriorSpec::default();
    let truth = OperatorParams { noise_sigma: 0.02, ..priors.means() };
    let prior_std = priors.theta.std_dev();
    let mut good = 0;
    let mut slowest = Duration::ZERO;
    let mut notes = Vec::new();
    for rep in 0..20u64 {
        let start = Instant::now();
        let log = synthetic_log(1000 + rep, &truth);
        assert_eq!(log.len(), 250);
        let template = priors.means();
        let out = indicator::abc_rejection(
            &log,
            &priors,
            &template,
            &AbcConfig::default(),
            &mut rng::stream(1000 + rep, 0, rng::Purpose::Abc),
        )
        .unwrap();
        slowest = slowest.max(start.elapsed());
        let n = out.samples.len() as f64;
        let mean = out.samples.iter().map(|s| s.theta).sum::<f64>() / n;
        let std = (out.samples.iter().map(|s| (s.theta - mean).powi(2)).sum::<f64>() / n).sqrt();
        let ok = std < prior_std && (mean - truth.theta).abs() <= 0.10 && !out.fallback;
        good += ok as u32;
        if rep < 3 {
            notes.push(format!("rep {rep}: mean {mean:.3} std {std:.4}"));
        }
    }
    outcome(
        good >= 14 && slowest < Duration::from_secs(120),
        format!(
            "ABC theta posterior narrower than prior ({prior_std:.4}) and within 0.10 of truth in {good}/20 reps, \
             slowest rep {:.1}s ({})",
            slowest.as_secs_f64(),
            notes.join(", ")
        ),
    )
}

fn comparison_config(seed: u64, theta: Vec<f64>) -> SessionConfig {
    SessionConfig {
        operators: 200,
        games_per_operator: 30,
        trials_per_game: 25,
        seed,
        grid: Some(GridSpec {
            theta,
            s: vec![0.5],
            b2: vec![0.03],
            width: 0.005,
            treatment: AidMode::Predictive,
            baseline: AidMode::Myopic,
        }),
        ..SessionConfig::default()
    }
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let table = ada::compare_methods(&comparison_config(0, vec![0.6, 0.7])).unwrap();
    let elapsed = start.elapsed();
    let pct = |i: usize| table.cells[i].percent_difference.unwrap_or(f64::NAN);
    let (p6, p7) = (pct(0), pct(1));
    outcome(
        p6 >= 2.0 && p7 >= 5.0 && elapsed < Duration::from_secs(600),
        format!(
            "predictive vs myopic mean reliance: theta 0.6 {p6:+.2}% (need >= +2), theta 0.7 {p7:+.2}% (need >= +5), \
             {:.0}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_6() -> Outcome {
    let mut jumps = 0;
    let mut diffs = Vec::new();
    for seed in 0..10u64 {
        let base = comparison_config(seed, vec![0.6]);
        let config = SessionConfig {
            aid_mode: AidMode::Predictive,
            operator_priors: PriorSpec::centered(0.6, 0.5, 0.03, 0.005),
            grid: None,
            ..base
        };
        let pop = ada::run_monte_carlo(&config).unwrap();
        let before = pop.aggregate.mean_rho_over(0..10);
        let after = pop.aggregate.mean_rho_over(10..20);
        jumps += (after > before) as u32;
        diffs.push(format!("{:+.3}", after - before));
    }
    outcome(
        jumps >= 7,
        format!("mean rho games 11-20 above games 1-10 in {jumps}/10 seeds (diffs {})", diffs.join(" ")),
    )
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = repo_root().join("configs/tiny.toml");
    let a = cli::cmd_simulate(&config, Some(42), &dir.path().join("a")).unwrap();
    let b = cli::cmd_simulate(&config, Some(42), &dir.path().join("b")).unwrap();
    let ta = std::fs::read(&a.trace).unwrap();
    let tb = std::fs::read(&b.trace).unwrap();
    outcome(
        ta == tb && !ta.is_empty(),
        format!(
            "two simulate runs with seed 42 wrote {} and {} byte traces, identical: {}",
            ta.len(),
            tb.len(),
            ta == tb
        ),
    )
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config_path = repo_root().join("configs/tiny.toml");
    let out = cli::cmd_simulate(&config_path, Some(9), dir.path()).unwrap();
    let records = ada::read_trace_csv(std::fs::File::open(&out.trace).unwrap()).unwrap();
    let (config, _) = cli::load_config(&config_path, Some(9)).unwrap();
    let recomputed = Aggregate::of_records(&config, &records);
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&out.aggregate).unwrap()).unwrap();
    let series =
        |key: &str| -> Vec<f64> { json[key].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect() };
    let d = series("mean_reliance_per_game");
    let rho = series("mean_rho_per_game");
    let mut worst = 0.0f64;
    let games_match = d.len() == recomputed.per_game.len() && rho.len() == recomputed.per_game.len();
    for (i, g) in recomputed.per_game.iter().enumerate().take(d.len().min(rho.len())) {
        worst = worst.max((g.mean_reliance - d[i]).abs()).max((g.mean_rho - rho[i]).abs());
    }
    outcome(
        games_match && worst <= 1e-12,
        format!(
            "per-game mean d and rho recomputed from trace.csv vs aggregate.json: {} games, max |diff| {worst:.1e}",
            d.len()
        ),
    )
}

fn main() {
    // `cargo test` passes libtest flags; a filter argument selects criteria
    // by number.
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(u32, fn() -> Outcome); 8] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
    ];
    let mut unexpected = 0;
    for (n, run) in criteria {
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {n} {} ({:.1}s)", o.detail, start.elapsed().as_secs_f64());
        if !o.pass {
            match KNOWN_UNATTAINABLE.iter().find(|(k, _)| *k == n) {
                Some((_, why)) => println!("       known unattainable: {why}"),
                None => unexpected += 1,
            }
        }
    }
    if unexpected > 0 {
        eprintln!("{unexpected} acceptance criteria failed");
        std::process::exit(1);
    }
}
