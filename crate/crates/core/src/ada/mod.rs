//! The aid's interaction loop.
//!
//! Each trial follows the same order: the operator picks `h` unaided, the
//! predictor guesses that pick, the aid suggests `a` (the optimal option when
//! the indicator says the operator relies on it, the predicted pick
//! otherwise, or always the optimal option in myopic mode), the operator keeps
//! `h` or takes `a` according to its reliance state, both options are
//! realized, and both the operator's and the indicator's reliance dynamics
//! step with the trial's capability and agreement.

mod export;
mod population;

pub use export::{read_trace_csv, write_aggregate_json, write_curves_csv, write_trace_csv, TRACE_CSV_HEADER};
pub use population::{
    compare_methods, run_monte_carlo, Aggregate, ComparisonCell, ComparisonTable, GameAggregate, Population,
};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::capability::CapabilityTable;
use crate::config::SessionConfig;
use crate::game::{self, ContextVector, Game, GameError, PayoffBounds, TrialRecordRow};
use crate::indicator::{self, AbcError, IndicatorState, LoggedTrial, ObservationLog};
use crate::predictor::{self, PredictError, PredictionInput, Predictor};
use crate::reliance::{self, ChoicePolicyParams, Observation, OperatorParams, RelianceState};
use crate::rng::{self, Purpose, StreamRng};
use crate::{Agreement, Choice};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AidMode {
    /// Optimal option when reliance is indicated, predicted pick otherwise.
    #[default]
    Predictive,
    /// Always the optimal option.
    Myopic,
}

#[derive(Debug, thiserror::Error)]
pub enum AdaError {
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Abc(#[from] AbcError),
    #[error(transparent)]
    Reliance(#[from] reliance::RelianceError),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `1` when the indicator matched the operator's reliance and, if neither
/// relied, the suggestion matched the operator's pick.
pub fn performance_metric(indicator_reliance: bool, reliance: bool, suggestion: Choice, initial: Choice) -> bool {
    match (indicator_reliance, reliance) {
        (true, true) => true,
        (false, false) => suggestion == initial,
        _ => false,
    }
}

/// Full transcript of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub operator: u32,
    /// Position of the game in the operator's sequence.
    pub game_index: u32,
    pub game_id: u32,
    pub trial: u32,
    pub context: [f64; 6],
    pub initial: Choice,
    pub predicted: Choice,
    pub predicted_prob_a: f64,
    pub suggestion: Choice,
    pub optimal: Choice,
    pub agreement: Agreement,
    pub reliance: bool,
    pub indicator_reliance: bool,
    #[serde(rename = "final")]
    pub final_choice: Choice,
    pub payoff: f64,
    pub foregone: f64,
    pub capability: f64,
    pub rho: bool,
    /// Preference in force when the trial was played.
    pub preference: f64,
    pub indicator_preference: f64,
    /// The reliance value was inferred rather than revealed (live sessions).
    pub ambiguous: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameSummary {
    pub game_index: u32,
    pub mean_reliance: f64,
    pub mean_rho: f64,
    pub reward: f64,
    pub trials: u32,
}

/// Per-game means of `d` and `rho`, in order of first appearance.
pub fn summarize_games(records: &[InteractionRecord]) -> Vec<GameSummary> {
    let mut out: Vec<GameSummary> = Vec::new();
    let mut sums: Vec<(f64, f64)> = Vec::new();
    for r in records {
        if out.last().map(|g| g.game_index) != Some(r.game_index) {
            out.push(GameSummary {
                game_index: r.game_index,
                mean_reliance: 0.0,
                mean_rho: 0.0,
                reward: 0.0,
                trials: 0,
            });
            sums.push((0.0, 0.0));
        }
        let g = out.last_mut().expect("pushed");
        let s = sums.last_mut().expect("pushed");
        s.0 += r.reliance as u8 as f64;
        s.1 += r.rho as u8 as f64;
        g.reward += r.payoff;
        g.trials += 1;
    }
    for (g, (d, rho)) in out.iter_mut().zip(sums) {
        g.mean_reliance = d / g.trials as f64;
        g.mean_rho = rho / g.trials as f64;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbcUpdate {
    /// Number of games completed when the refit ran.
    pub after_game: u32,
    pub accepted: u64,
    pub evaluated: u64,
    pub fallback: bool,
    pub params: OperatorParams,
}

/// One operator's complete run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub operator: u32,
    pub seed: u64,
    pub params: OperatorParams,
    pub indicator_initial: OperatorParams,
    pub records: Vec<InteractionRecord>,
    pub games: Vec<GameSummary>,
    pub abc_updates: Vec<AbcUpdate>,
    pub cumulative_reward: f64,
}

impl Trace {
    pub fn mean_reliance(&self) -> f64 {
        mean(self.records.iter().map(|r| r.reliance as u8 as f64))
    }

    pub fn mean_rho(&self) -> f64 {
        mean(self.records.iter().map(|r| r.rho as u8 as f64))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Where the operator's unaided pick comes from.
#[derive(Debug, Clone, Copy)]
pub enum InitialSource<'a> {
    Policy(&'a ChoicePolicyParams),
    /// Recorded selections of the current game, indexed by trial.
    Replay(&'a [Choice]),
}

/// The simulated operator.
#[derive(Debug, Clone)]
pub struct OperatorSide {
    pub params: OperatorParams,
    pub state: RelianceState,
}

impl OperatorSide {
    pub fn new(params: OperatorParams) -> OperatorSide {
        OperatorSide { params, state: RelianceState::initial(&params) }
    }
}

/// Fixed inputs of one trial.
pub struct TrialEnv<'a> {
    pub operator: u32,
    pub game_index: u32,
    pub game: &'a Game,
    pub context: &'a ContextVector,
    pub bounds: &'a PayoffBounds,
    pub capabilities: &'a CapabilityTable,
    pub trial: u32,
    pub history_len: usize,
    pub initial: InitialSource<'a>,
}

/// Random streams consumed by a trial.
pub struct TrialRngs {
    pub payoffs: StreamRng,
    pub choices: StreamRng,
    pub noise: StreamRng,
}

impl TrialRngs {
    pub fn for_operator(seed: u64, operator: u64) -> TrialRngs {
        TrialRngs {
            payoffs: rng::stream(seed, operator, Purpose::Payoffs),
            choices: rng::stream(seed, operator, Purpose::Choices),
            noise: rng::stream(seed, operator, Purpose::OperatorNoise),
        }
    }
}

/// Builds the predictor's view of the last `history_len` observations.
pub fn prediction_input(history: &[Observation], history_len: usize, context: ContextVector) -> PredictionInput {
    let start = history.len().saturating_sub(history_len);
    PredictionInput { history: history[start..].to_vec(), context }
}

/// The suggestion rule.
pub fn choose_suggestion(mode: AidMode, indicator_reliance: bool, optimal: Choice, predicted: Choice) -> Choice {
    match mode {
        AidMode::Myopic => optimal,
        AidMode::Predictive if indicator_reliance => optimal,
        AidMode::Predictive => predicted,
    }
}

/// Plays one trial. `history` holds the current game's observations with
/// normalized payoffs and is extended; the trial is appended to `log`.
#[allow(clippy::too_many_arguments)]
pub fn run_trial(
    op: &mut OperatorSide,
    indicator: &mut IndicatorState,
    env: &TrialEnv<'_>,
    history: &mut Vec<Observation>,
    predictor: &mut dyn Predictor,
    mode: AidMode,
    rngs: &mut TrialRngs,
    log: &mut ObservationLog,
) -> Result<InteractionRecord, AdaError> {
    let cap = env.capabilities.at(env.trial);
    let reliance = op.state.reliance;
    let indicator_reliance = indicator.reliance();

    // The choice stream is consumed every trial even when replaying, so
    // that streams stay aligned across configurations.
    let raw_history: Vec<Observation> = history
        .iter()
        .map(|o| Observation {
            selection: o.selection,
            payoff: env.bounds.denormalize(o.payoff),
            foregone: env.bounds.denormalize(o.foregone),
        })
        .collect();
    let initial = match env.initial {
        InitialSource::Policy(policy) => reliance::initial_selection(&raw_history, env.game, policy, &mut rngs.choices),
        InitialSource::Replay(choices) => {
            let _: f64 = rngs.choices.random();
            *choices
                .get(env.trial as usize)
                .ok_or_else(|| AdaError::Invalid(format!("no recorded selection for trial {}", env.trial)))?
        }
    };

    let prediction = predictor::predict(&prediction_input(history, env.history_len, *env.context), predictor)?;
    let suggestion = choose_suggestion(mode, indicator_reliance, cap.optimal, prediction.point);
    let agreement = Agreement::between(initial, suggestion);
    let final_choice = if reliance { suggestion } else { initial };

    let outcome = game::sample_trial_outcome(env.game, &mut rngs.payoffs);
    let payoff = outcome.payoff(final_choice);
    let foregone = outcome.payoff(final_choice.other());
    let rho = performance_metric(indicator_reliance, reliance, suggestion, initial);

    log.push(LoggedTrial { reliance, agreement, capability: cap.capability, observed: true });

    let record = InteractionRecord {
        operator: env.operator,
        game_index: env.game_index,
        game_id: env.game.id,
        trial: env.trial,
        context: env.context.0,
        initial,
        predicted: prediction.point,
        predicted_prob_a: prediction.prob_a,
        suggestion,
        optimal: cap.optimal,
        agreement,
        reliance,
        indicator_reliance,
        final_choice,
        payoff,
        foregone,
        capability: cap.capability,
        rho,
        preference: op.state.preference,
        indicator_preference: indicator.state.preference,
        ambiguous: false,
    };

    let belief = reliance::step_belief(&op.state, &op.params, cap.capability, agreement);
    op.state = reliance::step_preference(&op.state, &op.params, belief, &mut rngs.noise);
    indicator.step(cap.capability, agreement);

    history.push(Observation {
        selection: initial,
        payoff: env.bounds.normalize(outcome.payoff(initial)),
        foregone: env.bounds.normalize(outcome.payoff(initial.other())),
    });
    Ok(record)
}

/// Games after which the indicator is refit: every `interval` games, except
/// at the end of the operator's run.
pub fn abc_update_due(games_completed: u32, interval: u32, games_per_operator: u32) -> bool {
    interval > 0 && games_completed.is_multiple_of(interval) && games_completed < games_per_operator
}

/// Refits the indicator from `log` and installs the posterior mean.
pub fn refit_indicator(
    indicator: &mut IndicatorState,
    log: &ObservationLog,
    config: &SessionConfig,
    rng: &mut StreamRng,
    after_game: u32,
) -> Result<AbcUpdate, AdaError> {
    let outcome = indicator::abc_rejection(log, &config.abc_priors, &indicator.params, &config.abc, rng)?;
    let params = indicator::point_estimate(&outcome.samples, &indicator.params)?;
    indicator.install(params);
    Ok(AbcUpdate {
        after_game,
        accepted: outcome.accepted,
        evaluated: outcome.evaluated,
        fallback: outcome.fallback,
        params,
    })
}

/// Picks the operator's games from the bank: without replacement when the
/// bank is large enough.
pub fn draw_operator_games(bank: &[Game], count: u32, rng: &mut StreamRng) -> Vec<Game> {
    let count = count as usize;
    if bank.len() >= count {
        index::sample(rng, bank.len(), count).into_iter().map(|i| bank[i].clone()).collect()
    } else {
        (0..count).map(|_| bank[rng.random_range(0..bank.len())].clone()).collect()
    }
}

/// Game bank and normalization shared by every operator of a run.
#[derive(Debug, Clone)]
pub struct GameBank {
    pub games: Vec<Game>,
    pub bounds: PayoffBounds,
}

impl GameBank {
    pub fn generate(config: &SessionConfig) -> Result<GameBank, AdaError> {
        let spec = game::BankSpec { trials: config.trials_per_game, ..config.bank.clone() };
        let games = game::generate_game_bank(config.bank_size, &spec, &mut rng::bank_stream(config.seed))?;
        let bounds = PayoffBounds::of_games(&games)?;
        Ok(GameBank { games, bounds })
    }
}

/// Runs one operator through its games with the given sources of initial
/// selections (`replay[g]` replaces the choice policy for game `g`).
#[allow(clippy::too_many_arguments)]
fn run_games(
    config: &SessionConfig,
    operator: u32,
    params: OperatorParams,
    mut indicator: IndicatorState,
    games: &[Game],
    bounds: &PayoffBounds,
    replay: Option<&[Vec<Choice>]>,
) -> Result<Trace, AdaError> {
    let seed = config.seed;
    let mut rngs = TrialRngs::for_operator(seed, operator as u64);
    let mut abc_rng = rng::stream(seed, operator as u64, Purpose::Abc);
    let mut predictor = config.predictor.build()?;
    let mut op = OperatorSide::new(params);
    let indicator_initial = indicator.params;
    let mut log = ObservationLog::new();
    let mut records = Vec::with_capacity(games.len() * config.trials_per_game as usize);
    let mut abc_updates = Vec::new();
    let games_total = games.len() as u32;

    for (g, game) in games.iter().enumerate() {
        let context = game::make_context_vector(game, bounds)?;
        let capabilities = CapabilityTable::for_game(game);
        let mut history = Vec::with_capacity(game.trials as usize);
        let initial = match replay {
            Some(r) => InitialSource::Replay(&r[g]),
            None => InitialSource::Policy(&config.choice_policy),
        };
        for trial in 0..game.trials {
            let env = TrialEnv {
                operator,
                game_index: g as u32,
                game,
                context: &context,
                bounds,
                capabilities: &capabilities,
                trial,
                history_len: config.history_len,
                initial,
            };
            records.push(run_trial(
                &mut op,
                &mut indicator,
                &env,
                &mut history,
                predictor.as_mut(),
                config.aid_mode,
                &mut rngs,
                &mut log,
            )?);
        }
        let completed = g as u32 + 1;
        if abc_update_due(completed, config.abc_update_interval_games, games_total) {
            abc_updates.push(refit_indicator(&mut indicator, &log, config, &mut abc_rng, completed)?);
        }
    }

    let games_summary = summarize_games(&records);
    let cumulative_reward = records.iter().map(|r| r.payoff).sum();
    Ok(Trace {
        operator,
        seed,
        params,
        indicator_initial,
        records,
        games: games_summary,
        abc_updates,
        cumulative_reward,
    })
}

/// Runs one synthetic operator with the given parameters through `games`.
pub fn run_operator_session(
    config: &SessionConfig,
    operator: u32,
    params: OperatorParams,
    games: &[Game],
    bounds: &PayoffBounds,
) -> Result<Trace, AdaError> {
    config.validate()?;
    if games.len() != config.games_per_operator as usize {
        return Err(AdaError::Invalid(format!("expected {} games, got {}", config.games_per_operator, games.len())));
    }
    let mut init_rng = rng::stream(config.seed, operator as u64, Purpose::IndicatorInit);
    let indicator = indicator::init_indicator(Some(&params), config.indicator_init, &config.abc_priors, &mut init_rng)?;
    run_games(config, operator, params, indicator, games, bounds, None)
}

/// Replays one participant's recorded selections as the unaided picks.
/// The reliance model still decides whether the operator switches to the
/// suggestion; payoffs are re-sampled. Rows must be grouped by game with
/// trials `0..trials_per_game` in order.
pub fn replay_participant(
    config: &SessionConfig,
    operator: u32,
    params: OperatorParams,
    rows: &[TrialRecordRow],
) -> Result<Trace, AdaError> {
    config.validate()?;
    let per_game = config.trials_per_game as usize;
    if rows.is_empty() || !rows.len().is_multiple_of(per_game) {
        return Err(AdaError::Invalid(format!("{} rows is not a whole number of {per_game}-trial games", rows.len())));
    }
    let mut games = Vec::new();
    let mut selections = Vec::new();
    for (g, chunk) in rows.chunks(per_game).enumerate() {
        for (t, row) in chunk.iter().enumerate() {
            if row.trial_index as usize != t || row.game_id != chunk[0].game_id {
                return Err(AdaError::Invalid(format!(
                    "game {} row {t}: expected trial {t} of game {}",
                    g, chunk[0].game_id
                )));
            }
        }
        games.push(chunk[0].game(g as u32, config.trials_per_game)?);
        selections.push(chunk.iter().map(|r| r.selection).collect::<Vec<_>>());
    }
    let bounds = PayoffBounds::of_games(&games)?;
    let mut init_rng = rng::stream(config.seed, operator as u64, Purpose::IndicatorInit);
    let indicator = indicator::init_indicator(Some(&params), config.indicator_init, &config.abc_priors, &mut init_rng)?;
    let replay_config = SessionConfig { games_per_operator: games.len() as u32, ..config.clone() };
    run_games(&replay_config, operator, params, indicator, &games, &bounds, Some(&selections))
}
