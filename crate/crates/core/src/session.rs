//! Live sessions where a person plays the operator.
//!
//! The person's picks replace the simulated choice policy and reliance
//! model: they reveal reliance by switching to a disagreeing suggestion
//! (`d = 1`) or keeping their pick (`d = 0`). When the suggestion agrees with
//! their pick nothing is revealed, so the indicator's own value is recorded,
//! flagged ambiguous, and kept out of the refit statistics.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ada::{self, AbcUpdate, AidMode, GameBank, InteractionRecord};
use crate::capability::CapabilityTable;
use crate::config::SessionConfig;
use crate::game::{self, ContextVector, Game, PayoffBounds};
use crate::indicator::{self, IndicatorInit, IndicatorState, LoggedTrial, ObservationLog};
use crate::predictor::{self, Prediction, Predictor};
use crate::reliance::Observation;
use crate::rng::{self, Purpose, StreamRng};
use crate::{Agreement, Choice};

pub const TRANSCRIPT_SCHEMA: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("{0}")]
    Config(#[from] crate::config::ConfigError),
    #[error("session is {actual}, expected {expected}")]
    WrongState { expected: Phase, actual: Phase },
    #[error("transcript: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Ada(#[from] ada::AdaError),
    #[error(transparent)]
    Predict(#[from] predictor::PredictError),
    #[error(transparent)]
    Abc(#[from] indicator::AbcError),
    #[error(transparent)]
    Game(#[from] game::GameError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    AwaitingInitial,
    AwaitingFinal,
    Finished,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::AwaitingInitial => "awaiting-initial",
            Phase::AwaitingFinal => "awaiting-final",
            Phase::Finished => "finished",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionView {
    pub label: Choice,
    pub high: f64,
    pub low: f64,
    pub p_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameView {
    pub game_index: u32,
    pub game_id: u32,
    pub trial: u32,
    pub trials: u32,
    pub options: [OptionView; 2],
}

impl GameView {
    fn new(game_index: u32, trial: u32, game: &Game) -> GameView {
        let view = |label: Choice| {
            let g = game.option(label);
            OptionView { label, high: g.high(), low: g.low(), p_high: g.p_high() }
        };
        GameView {
            game_index,
            game_id: game.id,
            trial,
            trials: game.trials,
            options: [view(Choice::A), view(Choice::B)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub trials: usize,
    pub cumulative_reward: f64,
    pub mean_rho: f64,
    pub mean_reliance: f64,
    pub abc_updates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub state: Phase,
    pub aid_mode: AidMode,
    pub games_per_operator: u32,
    pub trials_per_game: u32,
    /// Absent once finished.
    pub game: Option<GameView>,
    /// The pending selection and suggestion while awaiting the final decision.
    pub initial: Option<Choice>,
    pub suggestion: Option<Choice>,
    pub summary: SessionSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuggestionResponse {
    pub suggestion: Choice,
    pub agreement: Agreement,
    pub agrees: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalResponse {
    pub payoff: f64,
    pub foregone: f64,
    pub record: InteractionRecord,
    pub abc_update: Option<AbcUpdate>,
    pub state: Phase,
    pub game_finished: bool,
    /// The next prompt, absent when the session finished.
    pub next: Option<GameView>,
    pub summary: SessionSummary,
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    initial: Choice,
    prediction: Prediction,
    suggestion: Choice,
    indicator_reliance: bool,
    indicator_preference: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum TranscriptLine {
    Session { schema: u32, id: String, config: Box<SessionConfig> },
    Trial { schema: u32, record: Box<InteractionRecord> },
    AbcUpdate { schema: u32, update: AbcUpdate },
    AbcSkipped { schema: u32, after_game: u32, reason: String },
}

pub struct LiveSession {
    id: String,
    config: SessionConfig,
    games: Vec<Game>,
    bounds: PayoffBounds,
    game_index: u32,
    trial: u32,
    context: ContextVector,
    capabilities: CapabilityTable,
    history: Vec<Observation>,
    predictor: Box<dyn Predictor>,
    indicator: IndicatorState,
    log: ObservationLog,
    records: Vec<InteractionRecord>,
    abc_updates: Vec<AbcUpdate>,
    phase: Phase,
    pending: Option<Pending>,
    payoff_rng: StreamRng,
    abc_rng: StreamRng,
    transcript: Option<File>,
}

impl std::fmt::Debug for LiveSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LiveSession")
            .field("id", &self.id)
            .field("phase", &self.phase)
            .field("game_index", &self.game_index)
            .field("trial", &self.trial)
            .finish_non_exhaustive()
    }
}

impl LiveSession {
    /// Starts a session. A person has no known parameters, so the indicator
    /// always starts from a prior draw whatever `indicator_init` says. With
    /// `transcript_dir` set, a `<id>.jsonl` transcript is written there.
    pub fn create(
        config: SessionConfig,
        id: String,
        transcript_dir: Option<&Path>,
    ) -> Result<LiveSession, SessionError> {
        config.validate()?;
        let bank = GameBank::generate(&config)?;
        let games = ada::draw_operator_games(
            &bank.games,
            config.games_per_operator,
            &mut rng::stream(config.seed, 0, Purpose::Games),
        );
        let mut init_rng = rng::stream(config.seed, 0, Purpose::IndicatorInit);
        let indicator = indicator::init_indicator(None, IndicatorInit::PriorDraw, &config.abc_priors, &mut init_rng)?;
        let predictor = config.predictor.build()?;
        let transcript = match transcript_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                Some(OpenOptions::new().create_new(true).append(true).open(transcript_path(dir, &id))?)
            }
            None => None,
        };
        let context = game::make_context_vector(&games[0], &bank.bounds)?;
        let capabilities = CapabilityTable::for_game(&games[0]);
        let mut session = LiveSession {
            id: id.clone(),
            payoff_rng: rng::stream(config.seed, 0, Purpose::Payoffs),
            abc_rng: rng::stream(config.seed, 0, Purpose::Abc),
            config,
            games,
            bounds: bank.bounds,
            game_index: 0,
            trial: 0,
            context,
            capabilities,
            history: Vec::new(),
            predictor,
            indicator,
            log: ObservationLog::new(),
            records: Vec::new(),
            abc_updates: Vec::new(),
            phase: Phase::AwaitingInitial,
            pending: None,
            transcript,
        };
        session.persist(&TranscriptLine::Session {
            schema: TRANSCRIPT_SCHEMA,
            id,
            config: Box::new(session.config.clone()),
        })?;
        Ok(session)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    fn current_game(&self) -> &Game {
        &self.games[self.game_index as usize]
    }

    fn expect(&self, expected: Phase) -> Result<(), SessionError> {
        if self.phase == expected {
            Ok(())
        } else {
            Err(SessionError::WrongState { expected, actual: self.phase })
        }
    }

    fn persist(&mut self, line: &TranscriptLine) -> Result<(), SessionError> {
        if let Some(file) = self.transcript.as_mut() {
            let mut text = serde_json::to_string(line).expect("transcript line serializes");
            text.push('\n');
            file.write_all(text.as_bytes())?;
            file.flush()?;
            file.sync_data()?;
        }
        Ok(())
    }

    pub fn summary(&self) -> SessionSummary {
        let n = self.records.len();
        let mean = |f: fn(&InteractionRecord) -> bool| {
            if n == 0 {
                0.0
            } else {
                self.records.iter().filter(|r| f(r)).count() as f64 / n as f64
            }
        };
        SessionSummary {
            trials: n,
            cumulative_reward: self.records.iter().map(|r| r.payoff).sum(),
            mean_rho: mean(|r| r.rho),
            mean_reliance: mean(|r| r.reliance),
            abc_updates: self.abc_updates.len(),
        }
    }

    fn prompt(&self) -> Option<GameView> {
        (self.phase != Phase::Finished).then(|| GameView::new(self.game_index, self.trial, self.current_game()))
    }

    pub fn view(&self) -> SessionView {
        SessionView {
            id: self.id.clone(),
            state: self.phase,
            aid_mode: self.config.aid_mode,
            games_per_operator: self.config.games_per_operator,
            trials_per_game: self.config.trials_per_game,
            game: self.prompt(),
            initial: self.pending.map(|p| p.initial),
            suggestion: self.pending.map(|p| p.suggestion),
            summary: self.summary(),
        }
    }

    /// Takes the person's unaided pick and returns the aid's suggestion.
    pub fn initial(&mut self, selection: Choice) -> Result<SuggestionResponse, SessionError> {
        self.expect(Phase::AwaitingInitial)?;
        let cap = *self.capabilities.at(self.trial);
        let input = ada::prediction_input(&self.history, self.config.history_len, self.context);
        let prediction = predictor::predict(&input, self.predictor.as_mut())?;
        let indicator_reliance = self.indicator.reliance();
        let suggestion =
            ada::choose_suggestion(self.config.aid_mode, indicator_reliance, cap.optimal, prediction.point);
        let agreement = Agreement::between(selection, suggestion);
        self.pending = Some(Pending {
            initial: selection,
            prediction,
            suggestion,
            indicator_reliance,
            indicator_preference: self.indicator.state.preference,
        });
        self.phase = Phase::AwaitingFinal;
        Ok(SuggestionResponse { suggestion, agreement, agrees: agreement == Agreement::Agree })
    }

    /// Takes the final decision, realizes the payoffs, steps the indicator
    /// and refits it on schedule. The transcript line is on disk before this
    /// returns.
    pub fn final_decision(&mut self, final_choice: Choice) -> Result<FinalResponse, SessionError> {
        self.expect(Phase::AwaitingFinal)?;
        let p = self.pending.expect("pending while awaiting final");
        let cap = *self.capabilities.at(self.trial);
        let agreement = Agreement::between(p.initial, p.suggestion);

        let (reliance, ambiguous) = if p.initial == p.suggestion {
            if final_choice == p.initial {
                (p.indicator_reliance, true)
            } else {
                // Turned away from a pick the aid endorsed.
                (false, false)
            }
        } else {
            (final_choice == p.suggestion, false)
        };

        let game = self.games[self.game_index as usize].clone();
        let outcome = game::sample_trial_outcome(&game, &mut self.payoff_rng);
        let payoff = outcome.payoff(final_choice);
        let foregone = outcome.payoff(final_choice.other());
        let record = InteractionRecord {
            operator: 0,
            game_index: self.game_index,
            game_id: game.id,
            trial: self.trial,
            context: self.context.0,
            initial: p.initial,
            predicted: p.prediction.point,
            predicted_prob_a: p.prediction.prob_a,
            suggestion: p.suggestion,
            optimal: cap.optimal,
            agreement,
            reliance,
            indicator_reliance: p.indicator_reliance,
            final_choice,
            payoff,
            foregone,
            capability: cap.capability,
            rho: ada::performance_metric(p.indicator_reliance, reliance, p.suggestion, p.initial),
            // A person has no observable preference; both columns carry the
            // indicator's value.
            preference: p.indicator_preference,
            indicator_preference: p.indicator_preference,
            ambiguous,
        };
        self.persist(&TranscriptLine::Trial { schema: TRANSCRIPT_SCHEMA, record: Box::new(record.clone()) })?;

        self.log.push(LoggedTrial { reliance, agreement, capability: cap.capability, observed: !ambiguous });
        self.indicator.step(cap.capability, agreement);
        self.history.push(Observation {
            selection: p.initial,
            payoff: self.bounds.normalize(outcome.payoff(p.initial)),
            foregone: self.bounds.normalize(outcome.payoff(p.initial.other())),
        });
        self.records.push(record.clone());
        self.pending = None;

        let mut abc_update = None;
        let mut game_finished = false;
        self.trial += 1;
        if self.trial == game.trials {
            game_finished = true;
            let completed = self.game_index + 1;
            if ada::abc_update_due(completed, self.config.abc_update_interval_games, self.config.games_per_operator) {
                abc_update = self.refit(completed)?;
            }
            if completed == self.config.games_per_operator {
                self.phase = Phase::Finished;
            } else {
                self.game_index = completed;
                self.trial = 0;
                self.history.clear();
                let next = &self.games[completed as usize];
                self.context = game::make_context_vector(next, &self.bounds)?;
                self.capabilities = CapabilityTable::for_game(next);
            }
        }
        if self.phase != Phase::Finished {
            self.phase = Phase::AwaitingInitial;
        }
        Ok(FinalResponse {
            payoff,
            foregone,
            record,
            abc_update,
            state: self.phase,
            game_finished,
            next: self.prompt(),
            summary: self.summary(),
        })
    }

    fn refit(&mut self, after_game: u32) -> Result<Option<AbcUpdate>, SessionError> {
        if self.log.observed_count() == 0 {
            self.persist(&TranscriptLine::AbcSkipped {
                schema: TRANSCRIPT_SCHEMA,
                after_game,
                reason: "no trial revealed reliance".into(),
            })?;
            return Ok(None);
        }
        let update = ada::refit_indicator(&mut self.indicator, &self.log, &self.config, &mut self.abc_rng, after_game)?;
        self.persist(&TranscriptLine::AbcUpdate { schema: TRANSCRIPT_SCHEMA, update: update.clone() })?;
        self.abc_updates.push(update.clone());
        Ok(Some(update))
    }

    /// Every completed trial in order.
    pub fn get_trace(&self) -> &[InteractionRecord] {
        &self.records
    }

    pub fn abc_updates(&self) -> &[AbcUpdate] {
        &self.abc_updates
    }
}

pub fn transcript_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.jsonl"))
}

/// Trial records from a transcript file. Rejects lines with an unknown
/// schema version.
pub fn read_transcript(path: impl AsRef<Path>) -> Result<Vec<InteractionRecord>, SessionError> {
    let file = File::open(path)?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TranscriptLine = serde_json::from_str(&line)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", n + 1)))?;
        let schema = match &parsed {
            TranscriptLine::Session { schema, .. }
            | TranscriptLine::Trial { schema, .. }
            | TranscriptLine::AbcUpdate { schema, .. }
            | TranscriptLine::AbcSkipped { schema, .. } => *schema,
        };
        if schema != TRANSCRIPT_SCHEMA {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("line {}: unsupported schema {schema}", n + 1),
            )
            .into());
        }
        if let TranscriptLine::Trial { record, .. } = parsed {
            out.push(*record);
        }
    }
    Ok(out)
}
