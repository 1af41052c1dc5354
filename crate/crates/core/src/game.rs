//! Two-outcome gambles, paired games and trial records.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::Choice;

/// Trials per game in the default protocol.
pub const DEFAULT_TRIALS: u32 = 25;

/// Header of the trial-record CSV.
pub const TRIAL_CSV_HEADER: [&str; 12] = [
    "participant_id",
    "game_id",
    "trial_index",
    "ha",
    "la",
    "pha",
    "hb",
    "lb",
    "phb",
    "selection",
    "payoff",
    "foregone",
];

#[derive(Debug, thiserror::Error)]
pub enum GameError {
    #[error("invalid gamble: {0}")]
    InvalidGamble(String),
    #[error("game must have at least one trial")]
    NoTrials,
    #[error("degenerate payoff bounds [{min}, {max}]: the game bank has no payoff spread")]
    DegenerateBounds { min: f64, max: f64 },
    #[error("payoff {value} lies outside the normalization bounds [{min}, {max}]")]
    OutOfBounds { value: f64, min: f64, max: f64 },
    #[error("empty {what} range [{lo}, {hi}]")]
    EmptyRange { what: &'static str, lo: f64, hi: f64 },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("csv header mismatch: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A lottery paying `high` with probability `p_high` and `low` otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gamble {
    high: f64,
    low: f64,
    p_high: f64,
}

impl Gamble {
    /// Builds a gamble paying `first` with probability `p_first`, else `second`.
    /// The outcomes are reordered so that `high >= low`.
    pub fn new(first: f64, second: f64, p_first: f64) -> Result<Gamble, GameError> {
        if !first.is_finite() || !second.is_finite() {
            return Err(GameError::InvalidGamble(format!("payoffs must be finite, got ({first}, {second})")));
        }
        if !(0.0..=1.0).contains(&p_first) {
            return Err(GameError::InvalidGamble(format!("probability {p_first} outside [0, 1]")));
        }
        Ok(if first >= second {
            Gamble { high: first, low: second, p_high: p_first }
        } else {
            Gamble { high: second, low: first, p_high: 1.0 - p_first }
        })
    }

    /// A gamble that always pays `value`.
    pub fn certain(value: f64) -> Result<Gamble, GameError> {
        Gamble::new(value, value, 1.0)
    }

    pub fn high(&self) -> f64 {
        self.high
    }

    pub fn low(&self) -> f64 {
        self.low
    }

    pub fn p_high(&self) -> f64 {
        self.p_high
    }

    pub fn spread(&self) -> f64 {
        self.high - self.low
    }

    pub fn expected_value(&self) -> f64 {
        self.p_high * self.high + (1.0 - self.p_high) * self.low
    }

    /// One realization. Always consumes exactly one uniform draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        if u < self.p_high {
            self.high
        } else {
            self.low
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Game {
    pub id: u32,
    pub option_a: Gamble,
    pub option_b: Gamble,
    pub trials: u32,
}

impl Game {
    pub fn new(id: u32, option_a: Gamble, option_b: Gamble, trials: u32) -> Result<Game, GameError> {
        if trials == 0 {
            return Err(GameError::NoTrials);
        }
        Ok(Game { id, option_a, option_b, trials })
    }

    pub fn option(&self, choice: Choice) -> &Gamble {
        match choice {
            Choice::A => &self.option_a,
            Choice::B => &self.option_b,
        }
    }

    fn payoffs(&self) -> [f64; 4] {
        [self.option_a.high, self.option_a.low, self.option_b.high, self.option_b.low]
    }
}

/// Realized payoffs of both options for one trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub payoff_a: f64,
    pub payoff_b: f64,
}

impl TrialOutcome {
    pub fn payoff(&self, choice: Choice) -> f64 {
        match choice {
            Choice::A => self.payoff_a,
            Choice::B => self.payoff_b,
        }
    }
}

/// Realizes both options independently, A first.
pub fn sample_trial_outcome<R: Rng + ?Sized>(game: &Game, rng: &mut R) -> TrialOutcome {
    let payoff_a = game.option_a.sample(rng);
    let payoff_b = game.option_b.sample(rng);
    TrialOutcome { payoff_a, payoff_b }
}

/// Affine payoff normalization shared by a whole game bank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PayoffBounds {
    pub min: f64,
    pub max: f64,
}

impl PayoffBounds {
    pub fn new(min: f64, max: f64) -> Result<PayoffBounds, GameError> {
        if !(max > min) || !min.is_finite() || !max.is_finite() {
            return Err(GameError::DegenerateBounds { min, max });
        }
        Ok(PayoffBounds { min, max })
    }

    /// Smallest bounds covering every payoff of `games`.
    pub fn of_games<'a, I>(games: I) -> Result<PayoffBounds, GameError>
    where
        I: IntoIterator<Item = &'a Game>,
    {
        let (min, max) = games
            .into_iter()
            .flat_map(|g| g.payoffs())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
        PayoffBounds::new(min, max)
    }

    pub fn normalize(&self, payoff: f64) -> f64 {
        (payoff - self.min) / (self.max - self.min)
    }

    pub fn denormalize(&self, value: f64) -> f64 {
        self.min + value * (self.max - self.min)
    }

    fn check(&self, payoff: f64) -> Result<(), GameError> {
        let tol = 1e-12 * (self.max - self.min);
        if payoff < self.min - tol || payoff > self.max + tol {
            return Err(GameError::OutOfBounds { value: payoff, min: self.min, max: self.max });
        }
        Ok(())
    }
}

/// `(H_A, L_A, p_A, H_B, L_B, p_B)` with payoffs mapped into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextVector(pub [f64; 6]);

impl ContextVector {
    pub const LEN: usize = 6;

    pub fn values(&self) -> &[f64; 6] {
        &self.0
    }

    /// Normalized expected value of `choice`.
    pub fn expected_value(&self, choice: Choice) -> f64 {
        let v = &self.0;
        let (h, l, p) = match choice {
            Choice::A => (v[0], v[1], v[2]),
            Choice::B => (v[3], v[4], v[5]),
        };
        p * h + (1.0 - p) * l
    }

    /// Original payoffs `(H_A, L_A, H_B, L_B)` under `bounds`.
    pub fn denormalized_payoffs(&self, bounds: &PayoffBounds) -> [f64; 4] {
        let v = &self.0;
        [bounds.denormalize(v[0]), bounds.denormalize(v[1]), bounds.denormalize(v[3]), bounds.denormalize(v[4])]
    }
}

pub fn make_context_vector(game: &Game, bounds: &PayoffBounds) -> Result<ContextVector, GameError> {
    PayoffBounds::new(bounds.min, bounds.max)?;
    for p in game.payoffs() {
        bounds.check(p)?;
    }
    let clamp = |x: f64| bounds.normalize(x).clamp(0.0, 1.0);
    let (a, b) = (&game.option_a, &game.option_b);
    Ok(ContextVector([clamp(a.high), clamp(a.low), a.p_high, clamp(b.high), clamp(b.low), b.p_high]))
}

/// Parameter ranges of a synthetic game bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BankSpec {
    pub payoff_min: f64,
    pub payoff_max: f64,
    pub probability_min: f64,
    pub probability_max: f64,
    /// Payoffs are rounded to multiples of this step when set.
    pub payoff_step: Option<f64>,
    /// Probabilities are rounded to multiples of this step when set.
    pub probability_step: Option<f64>,
    /// Largest allowed difference between the two options' expected values,
    /// as a fraction of `payoff_max - payoff_min`. Pairs outside it are
    /// redrawn. `None` draws the options independently.
    pub max_ev_gap: Option<f64>,
    pub trials: u32,
}

impl Default for BankSpec {
    fn default() -> Self {
        BankSpec {
            payoff_min: 0.0,
            payoff_max: 10.0,
            probability_min: 0.05,
            probability_max: 0.95,
            payoff_step: Some(1.0),
            probability_step: Some(0.05),
            max_ev_gap: Some(0.05),
            trials: DEFAULT_TRIALS,
        }
    }
}

impl BankSpec {
    pub fn validate(&self) -> Result<(), GameError> {
        let ok = |lo: f64, hi: f64| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !ok(self.payoff_min, self.payoff_max) {
            return Err(GameError::EmptyRange { what: "payoff", lo: self.payoff_min, hi: self.payoff_max });
        }
        if !ok(self.probability_min, self.probability_max) || self.probability_min < 0.0 || self.probability_max > 1.0 {
            return Err(GameError::EmptyRange {
                what: "probability",
                lo: self.probability_min,
                hi: self.probability_max,
            });
        }
        if self.trials == 0 {
            return Err(GameError::NoTrials);
        }
        if let Some(gap) = self.max_ev_gap {
            if !(gap >= 0.0) || !gap.is_finite() {
                return Err(GameError::InvalidGamble(format!("max_ev_gap {gap} must be non-negative")));
            }
        }
        for step in [self.payoff_step, self.probability_step].into_iter().flatten() {
            if !(step > 0.0) {
                return Err(GameError::InvalidGamble(format!("rounding step {step} must be positive")));
            }
        }
        Ok(())
    }
}

fn draw_in<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64, step: Option<f64>) -> f64 {
    let u: f64 = rng.random();
    let x = lo + u * (hi - lo);
    match step {
        Some(step) => ((x / step).round() * step).clamp(lo, hi),
        None => x,
    }
}

fn draw_gamble<R: Rng + ?Sized>(rng: &mut R, spec: &BankSpec) -> Result<Gamble, GameError> {
    let x = draw_in(rng, spec.payoff_min, spec.payoff_max, spec.payoff_step);
    let y = draw_in(rng, spec.payoff_min, spec.payoff_max, spec.payoff_step);
    let p = draw_in(rng, spec.probability_min, spec.probability_max, spec.probability_step);
    Gamble::new(x.max(y), x.min(y), p.clamp(0.0, 1.0))
}

const MAX_PAIR_ATTEMPTS: usize = 100_000;

fn draw_pair<R: Rng + ?Sized>(rng: &mut R, spec: &BankSpec) -> Result<(Gamble, Gamble), GameError> {
    let Some(gap) = spec.max_ev_gap else {
        return Ok((draw_gamble(rng, spec)?, draw_gamble(rng, spec)?));
    };
    let limit = gap * (spec.payoff_max - spec.payoff_min);
    for _ in 0..MAX_PAIR_ATTEMPTS {
        let a = draw_gamble(rng, spec)?;
        let b = draw_gamble(rng, spec)?;
        if (a.expected_value() - b.expected_value()).abs() <= limit + 1e-12 {
            return Ok((a, b));
        }
    }
    Err(GameError::InvalidGamble(format!("no gamble pair within max_ev_gap {gap} after {MAX_PAIR_ATTEMPTS} draws")))
}

/// Draws `count` games, ids `0..count`.
pub fn generate_game_bank<R: Rng + ?Sized>(count: usize, spec: &BankSpec, rng: &mut R) -> Result<Vec<Game>, GameError> {
    spec.validate()?;
    (0..count)
        .map(|i| {
            let (a, b) = draw_pair(rng, spec)?;
            Game::new(i as u32, a, b, spec.trials)
        })
        .collect()
}

/// One row of the trial-record CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecordRow {
    pub participant_id: String,
    pub game_id: String,
    pub trial_index: u32,
    pub ha: f64,
    pub la: f64,
    pub pha: f64,
    pub hb: f64,
    pub lb: f64,
    pub phb: f64,
    pub selection: Choice,
    pub payoff: f64,
    pub foregone: f64,
}

impl TrialRecordRow {
    pub fn game(&self, id: u32, trials: u32) -> Result<Game, GameError> {
        Game::new(id, Gamble::new(self.ha, self.la, self.pha)?, Gamble::new(self.hb, self.lb, self.phb)?, trials)
    }
}

/// Reads a trial-record CSV with the default 25-trial protocol.
pub fn load_trials(path: impl AsRef<Path>) -> Result<Vec<TrialRecordRow>, GameError> {
    load_trials_with(path, DEFAULT_TRIALS)
}

/// Reads a trial-record CSV. Rows are validated and regrouped by
/// (participant, game) in order of first appearance, keeping file order
/// within each group.
pub fn load_trials_with(path: impl AsRef<Path>, trials_per_game: u32) -> Result<Vec<TrialRecordRow>, GameError> {
    let file = std::fs::File::open(path.as_ref())?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = reader.headers().map_err(|e| GameError::Parse { line: 1, message: e.to_string() })?.clone();
    let found: Vec<&str> = header.iter().collect();
    if found != TRIAL_CSV_HEADER {
        return Err(GameError::Header { expected: TRIAL_CSV_HEADER.join(","), found: found.join(",") });
    }

    let mut groups: Vec<Vec<TrialRecordRow>> = Vec::new();
    let mut index: HashMap<(String, String), usize> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| GameError::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row = parse_row(&record).map_err(|message| GameError::Parse { line, message })?;
        if row.trial_index >= trials_per_game {
            return Err(GameError::Parse {
                line,
                message: format!("trial_index {} outside [0, {trials_per_game})", row.trial_index),
            });
        }
        let key = (row.participant_id.clone(), row.game_id.clone());
        let slot = *index.entry(key).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[slot].push(row);
    }
    Ok(groups.into_iter().flatten().collect())
}

fn parse_row(record: &csv::StringRecord) -> Result<TrialRecordRow, String> {
    if record.len() != TRIAL_CSV_HEADER.len() {
        return Err(format!("expected {} fields, found {}", TRIAL_CSV_HEADER.len(), record.len()));
    }
    let num = |i: usize| -> Result<f64, String> {
        let v: f64 =
            record[i].trim().parse().map_err(|_| format!("{}: not a number: {:?}", TRIAL_CSV_HEADER[i], &record[i]))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("{}: non-finite value", TRIAL_CSV_HEADER[i]))
        }
    };
    let prob = |i: usize| -> Result<f64, String> {
        let p = num(i)?;
        if (0.0..=1.0).contains(&p) {
            Ok(p)
        } else {
            Err(format!("{}: probability {p} outside [0, 1]", TRIAL_CSV_HEADER[i]))
        }
    };
    Ok(TrialRecordRow {
        participant_id: record[0].trim().to_string(),
        game_id: record[1].trim().to_string(),
        trial_index: record[2]
            .trim()
            .parse()
            .map_err(|_| format!("trial_index: not a non-negative integer: {:?}", &record[2]))?,
        ha: num(3)?,
        la: num(4)?,
        pha: prob(5)?,
        hb: num(6)?,
        lb: num(7)?,
        phb: prob(8)?,
        selection: record[9].parse().map_err(|e: crate::choice::ParseChoiceError| e.to_string())?,
        payoff: num(10)?,
        foregone: num(11)?,
    })
}

/// Writes rows in the trial-record CSV format.
pub fn write_trials<W: std::io::Write>(out: W, rows: &[TrialRecordRow]) -> Result<(), GameError> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    let to_io = |e: csv::Error| GameError::Io(std::io::Error::other(e));
    writer.write_record(TRIAL_CSV_HEADER).map_err(to_io)?;
    for r in rows {
        writer
            .write_record([
                r.participant_id.clone(),
                r.game_id.clone(),
                r.trial_index.to_string(),
                r.ha.to_string(),
                r.la.to_string(),
                r.pha.to_string(),
                r.hb.to_string(),
                r.lb.to_string(),
                r.phb.to_string(),
                r.selection.to_string(),
                r.payoff.to_string(),
                r.foregone.to_string(),
            ])
            .map_err(to_io)?;
    }
    writer.flush()?;
    Ok(())
}
