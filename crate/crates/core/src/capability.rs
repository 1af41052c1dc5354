//! Exact capability of the aid on a two-gamble game.
//!
//! Over the `n_c` trials left in a game, option X pays
//! `r_X = g_X (H_X - L_X) + n_c L_X` where `g_X ~ Binomial(n_c, p_X)` counts
//! high outcomes. The capability is the probability that the better option
//! strictly out-earns the other; ties count as not exceeding.
//!
//! [`capability`] works in count space: for each value `j` of the other
//! option's count it maps the reward comparison onto a threshold on this
//! option's count and sums a binomial tail. [`capability_oracle`] enumerates
//! every joint high/low sequence instead and shares no code with it.

use serde::{Deserialize, Serialize};

use crate::game::{Gamble, Game};
use crate::Choice;

/// Largest `n_c` the enumeration oracle accepts (`4^12` sequences).
pub const ORACLE_MAX_TRIALS: u32 = 12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CapabilityError {
    #[error("binomial pmf: k = {k} outside [0, {n}]")]
    KOutOfRange { n: u32, k: i64 },
    #[error("binomial pmf: probability {0} outside [0, 1]")]
    BadProbability(f64),
    #[error("capability oracle limited to n_c <= {ORACLE_MAX_TRIALS}, got {0}")]
    TooManyTrials(u32),
    #[error("remaining trials must be at least 1")]
    NoTrials,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapabilityResult {
    pub capability: f64,
    pub optimal: Choice,
    pub win_prob_a: f64,
    pub win_prob_b: f64,
    pub tie_prob: f64,
}

/// Exact `C(n, k) p^k (1 - p)^(n - k)`.
pub fn binomial_pmf(n: u32, p: f64, k: i64) -> Result<f64, CapabilityError> {
    if k < 0 || k > n as i64 {
        return Err(CapabilityError::KOutOfRange { n, k });
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(CapabilityError::BadProbability(p));
    }
    Ok(pmf(n, p, k as u32))
}

fn pmf(n: u32, p: f64, k: u32) -> f64 {
    if p == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p == 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    // Multiplicative recurrence for the coefficient; exact in f64 while it
    // stays below 2^53.
    let k_small = k.min(n - k);
    let mut coeff = 1.0f64;
    for i in 0..k_small {
        coeff = coeff * (n - i) as f64 / (i + 1) as f64;
    }
    coeff * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
}

fn pmf_table(n: u32, p: f64) -> Vec<f64> {
    (0..=n).map(|k| pmf(n, p, k)).collect()
}

fn is_tie(x: f64, y: f64) -> bool {
    (x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0)
}

/// `(Pr(r_x > r_y), Pr(r_x = r_y))` over `n` trials.
fn win_and_tie(x: &Gamble, y: &Gamble, n: u32) -> (f64, f64) {
    let px = pmf_table(n, x.p_high());
    let py = pmf_table(n, y.p_high());
    let nf = n as f64;

    if x.spread() == 0.0 {
        // r_x is deterministic; the count threshold would divide by zero.
        let rx = nf * x.low();
        let (mut win, mut tie) = (0.0, 0.0);
        for (j, &pj) in py.iter().enumerate() {
            let ry = j as f64 * y.spread() + nf * y.low();
            if is_tie(rx, ry) {
                tie += pj;
            } else if rx > ry {
                win += pj;
            }
        }
        return (win, tie);
    }

    // tail[k] = Pr(g_x >= k), tail[n + 1] = 0.
    let mut tail = vec![0.0; n as usize + 2];
    for k in (0..=n as usize).rev() {
        tail[k] = tail[k + 1] + px[k];
    }

    let (mut win, mut tie) = (0.0, 0.0);
    for (j, &pj) in py.iter().enumerate() {
        if pj == 0.0 {
            continue;
        }
        // r_x > r_y  <=>  g_x > t
        let t = (nf * (y.low() - x.low()) + j as f64 * y.spread()) / x.spread();
        let nearest = t.round();
        let first_win = if is_tie(t, nearest) {
            if (0.0..=nf).contains(&nearest) {
                tie += pj * px[nearest as usize];
            }
            nearest + 1.0
        } else {
            t.floor() + 1.0
        };
        let first_win = first_win.max(0.0);
        if first_win <= nf {
            win += pj * tail[first_win as usize];
        }
    }
    (win, tie)
}

#[allow(clippy::if_same_then_else)]
fn pick_optimal(game: &Game, win_a: f64, win_b: f64) -> Choice {
    if win_a > win_b {
        Choice::A
    } else if win_b > win_a {
        Choice::B
    } else if game.option_b.expected_value() > game.option_a.expected_value() {
        Choice::B
    } else {
        Choice::A
    }
}

fn result(game: &Game, win_a: f64, win_b: f64, tie: f64) -> CapabilityResult {
    let optimal = pick_optimal(game, win_a, win_b);
    let capability = match optimal {
        Choice::A => win_a,
        Choice::B => win_b,
    };
    CapabilityResult { capability, optimal, win_prob_a: win_a, win_prob_b: win_b, tie_prob: tie }
}

/// Capability and optimal option with `remaining` trials left.
///
/// Equal win probabilities are broken by expected value, then in favor of A.
pub fn capability(game: &Game, remaining: u32) -> Result<CapabilityResult, CapabilityError> {
    if remaining == 0 {
        return Err(CapabilityError::NoTrials);
    }
    let (win_a, tie) = win_and_tie(&game.option_a, &game.option_b, remaining);
    let (win_b, _) = win_and_tie(&game.option_b, &game.option_a, remaining);
    Ok(result(game, win_a, win_b, tie))
}

/// Enumerates all `4^n_c` joint outcome sequences.
pub fn capability_oracle(game: &Game, remaining: u32) -> Result<CapabilityResult, CapabilityError> {
    if remaining == 0 {
        return Err(CapabilityError::NoTrials);
    }
    if remaining > ORACLE_MAX_TRIALS {
        return Err(CapabilityError::TooManyTrials(remaining));
    }
    let n = remaining as usize;
    let (a, b) = (&game.option_a, &game.option_b);
    let (mut win_a, mut win_b, mut tie) = (0.0, 0.0, 0.0);
    for mask in 0u64..(1u64 << (2 * n)) {
        let mut prob = 1.0;
        let (mut ra, mut rb) = (0.0, 0.0);
        for t in 0..n {
            if mask >> t & 1 == 1 {
                prob *= a.p_high();
                ra += a.high();
            } else {
                prob *= 1.0 - a.p_high();
                ra += a.low();
            }
            if mask >> (n + t) & 1 == 1 {
                prob *= b.p_high();
                rb += b.high();
            } else {
                prob *= 1.0 - b.p_high();
                rb += b.low();
            }
        }
        if is_tie(ra, rb) {
            tie += prob;
        } else if ra > rb {
            win_a += prob;
        } else {
            win_b += prob;
        }
    }
    Ok(result(game, win_a, win_b, tie))
}

/// Capability at every trial of a game: entry `n` uses `trials - n`
/// remaining trials.
#[derive(Debug, Clone, PartialEq)]
pub struct CapabilityTable(Vec<CapabilityResult>);

impl CapabilityTable {
    pub fn for_game(game: &Game) -> CapabilityTable {
        CapabilityTable((0..game.trials).map(|n| capability(game, game.trials - n).expect("remaining >= 1")).collect())
    }

    pub fn at(&self, trial: u32) -> &CapabilityResult {
        &self.0[trial as usize]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}
