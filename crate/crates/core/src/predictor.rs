//! Next-selection predictors.
//!
//! A predictor sees the operator's last `k` initial selections in the current
//! game (with normalized payoff and foregone payoff) plus the game's context
//! vector, and returns a distribution over the two options. The baselines are
//! deterministic; [`ExternalPredictor`] talks to a child process so that an
//! externally trained model can be dropped in.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::game::{ContextVector, PayoffBounds, TrialRecordRow};
use crate::reliance::Observation;
use crate::Choice;

pub const DEFAULT_HISTORY_LEN: usize = 5;
pub const DEFAULT_BRIDGE_TIMEOUT: Duration = Duration::from_secs(1);
pub const BRIDGE_PROTOCOL: &str = "pred-v1";

const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum PredictError {
    #[error("predictor transport failure: {0}")]
    Transport(String),
    #[error("predictor timed out after {0:?}")]
    Timeout(Duration),
    #[error("predictor schema violation: {reason} (raw: {raw:?})")]
    Schema { reason: String, raw: String },
    #[error("invalid prediction: {0}")]
    Invalid(String),
    #[error("trial records out of order at row {row}: {reason}")]
    Unsorted { row: usize, reason: String },
    #[error(transparent)]
    Game(#[from] crate::game::GameError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionInput {
    /// Oldest first, at most `k` entries, payoffs normalized.
    pub history: Vec<Observation>,
    pub context: ContextVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub prob_a: f64,
    pub prob_b: f64,
    pub point: Choice,
}

impl Prediction {
    /// Validates a pair of probabilities; ties go to A.
    pub fn new(prob_a: f64, prob_b: f64) -> Result<Prediction, PredictError> {
        let ok = |p: f64| p.is_finite() && (0.0..=1.0).contains(&p);
        if !ok(prob_a) || !ok(prob_b) {
            return Err(PredictError::Invalid(format!("probabilities ({prob_a}, {prob_b}) outside [0, 1]")));
        }
        if (prob_a + prob_b - 1.0).abs() > NORMALIZATION_TOL {
            return Err(PredictError::Invalid(format!(
                "probabilities ({prob_a}, {prob_b}) sum to {}",
                prob_a + prob_b
            )));
        }
        let point = if prob_a >= prob_b { Choice::A } else { Choice::B };
        Ok(Prediction { prob_a, prob_b, point })
    }

    pub fn from_prob_a(prob_a: f64) -> Prediction {
        let p = prob_a.clamp(0.0, 1.0);
        Prediction::new(p, 1.0 - p).expect("complementary probabilities")
    }

    pub fn uniform() -> Prediction {
        Prediction::from_prob_a(0.5)
    }

    pub fn probability(&self, choice: Choice) -> f64 {
        match choice {
            Choice::A => self.prob_a,
            Choice::B => self.prob_b,
        }
    }
}

pub trait Predictor: Send {
    fn predict(&mut self, input: &PredictionInput) -> Result<Prediction, PredictError>;

    fn name(&self) -> &str;
}

/// Predicts a repeat of the last selection.
#[derive(Debug, Clone, Default)]
pub struct StickyPredictor;

impl Predictor for StickyPredictor {
    fn predict(&mut self, input: &PredictionInput) -> Result<Prediction, PredictError> {
        Ok(match input.history.last() {
            None => Prediction::uniform(),
            Some(obs) => Prediction::from_prob_a(if obs.selection == Choice::A { 1.0 } else { 0.0 }),
        })
    }

    fn name(&self) -> &str {
        "sticky"
    }
}

/// Exponentially weighted selection frequency; `decay = 1` is a plain count.
#[derive(Debug, Clone)]
pub struct FrequencyPredictor {
    pub decay: f64,
}

impl Predictor for FrequencyPredictor {
    fn predict(&mut self, input: &PredictionInput) -> Result<Prediction, PredictError> {
        if input.history.is_empty() {
            return Ok(Prediction::uniform());
        }
        let (mut wa, mut total, mut w) = (0.0, 0.0, 1.0);
        for obs in input.history.iter().rev() {
            if obs.selection == Choice::A {
                wa += w;
            }
            total += w;
            w *= self.decay;
        }
        Ok(Prediction::from_prob_a(if total > 0.0 { wa / total } else { 0.5 }))
    }

    fn name(&self) -> &str {
        "frequency"
    }
}

/// Recency-weighted payoff tracker: starts both options at their described
/// expected values, moves each toward every observed payoff by
/// `recency_weight`, and applies a logistic with `temperature`.
#[derive(Debug, Clone)]
pub struct ValuePredictor {
    pub recency_weight: f64,
    pub temperature: f64,
}

impl Predictor for ValuePredictor {
    fn predict(&mut self, input: &PredictionInput) -> Result<Prediction, PredictError> {
        if input.history.is_empty() {
            return Ok(Prediction::uniform());
        }
        let mut va = input.context.expected_value(Choice::A);
        let mut vb = input.context.expected_value(Choice::B);
        for obs in &input.history {
            va += self.recency_weight * (obs.payoff_of(Choice::A) - va);
            vb += self.recency_weight * (obs.payoff_of(Choice::B) - vb);
        }
        let z = (va - vb) / self.temperature;
        Ok(Prediction::from_prob_a(if z == 0.0 { 0.5 } else { 1.0 / (1.0 + (-z).exp()) }))
    }

    fn name(&self) -> &str {
        "value"
    }
}

/// Backend selection as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PredictorKind {
    Sticky,
    Frequency {
        #[serde(default = "one")]
        decay: f64,
    },
    Value {
        #[serde(default = "half")]
        recency_weight: f64,
        #[serde(default = "tenth")]
        temperature: f64,
    },
    External {
        command: Vec<String>,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn tenth() -> f64 {
    0.1
}
fn default_timeout_ms() -> u64 {
    DEFAULT_BRIDGE_TIMEOUT.as_millis() as u64
}

impl Default for PredictorKind {
    fn default() -> Self {
        PredictorKind::Value { recency_weight: half(), temperature: tenth() }
    }
}

impl PredictorKind {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            PredictorKind::Sticky => Ok(()),
            PredictorKind::Frequency { decay } if !(0.0..=1.0).contains(decay) => {
                Err(format!("frequency decay {decay} outside [0, 1]"))
            }
            PredictorKind::Frequency { .. } => Ok(()),
            PredictorKind::Value { recency_weight, temperature } => {
                if !(0.0..=1.0).contains(recency_weight) {
                    Err(format!("value recency_weight {recency_weight} outside [0, 1]"))
                } else if !(*temperature > 0.0) {
                    Err(format!("value temperature {temperature} must be positive"))
                } else {
                    Ok(())
                }
            }
            PredictorKind::External { command, .. } if command.is_empty() => {
                Err("external predictor command is empty".into())
            }
            PredictorKind::External { .. } => Ok(()),
        }
    }

    pub fn build(&self) -> Result<Box<dyn Predictor>, PredictError> {
        Ok(match self {
            PredictorKind::Sticky => Box::new(StickyPredictor),
            PredictorKind::Frequency { decay } => Box::new(FrequencyPredictor { decay: *decay }),
            PredictorKind::Value { recency_weight, temperature } => {
                Box::new(ValuePredictor { recency_weight: *recency_weight, temperature: *temperature })
            }
            PredictorKind::External { command, timeout_ms } => {
                let (program, args) =
                    command.split_first().ok_or_else(|| PredictError::Transport("empty command".into()))?;
                let mut cmd = Command::new(program);
                cmd.args(args);
                Box::new(ExternalPredictor::spawn(cmd, Duration::from_millis(*timeout_ms))?)
            }
        })
    }
}

pub fn predict(input: &PredictionInput, backend: &mut dyn Predictor) -> Result<Prediction, PredictError> {
    let prediction = backend.predict(input)?;
    // Re-validate whatever the backend produced.
    Prediction::new(prediction.prob_a, prediction.prob_b)
}

/// Accuracy of the point prediction over chronologically ordered records,
/// predicting each trial only from earlier trials of the same
/// participant and game.
pub fn evaluate_predictor(
    backend: &mut dyn Predictor,
    trials: &[TrialRecordRow],
    history_len: usize,
) -> Result<f64, PredictError> {
    if trials.is_empty() {
        return Ok(0.0);
    }
    let bounds = PayoffBounds::new(
        trials.iter().flat_map(|r| [r.la, r.ha, r.lb, r.hb, r.payoff, r.foregone]).fold(f64::INFINITY, f64::min),
        trials.iter().flat_map(|r| [r.la, r.ha, r.lb, r.hb, r.payoff, r.foregone]).fold(f64::NEG_INFINITY, f64::max),
    )?;

    let mut seen_groups = std::collections::HashSet::new();
    let mut current: Option<(&str, &str)> = None;
    let mut last_index = 0u32;
    let mut history: Vec<Observation> = Vec::new();
    let mut hits = 0usize;

    for (row_no, row) in trials.iter().enumerate() {
        let key = (row.participant_id.as_str(), row.game_id.as_str());
        if current != Some(key) {
            if !seen_groups.insert(key) {
                return Err(PredictError::Unsorted {
                    row: row_no,
                    reason: format!("participant {} game {} is not contiguous", key.0, key.1),
                });
            }
            current = Some(key);
            history.clear();
        } else if row.trial_index <= last_index {
            return Err(PredictError::Unsorted {
                row: row_no,
                reason: format!("trial_index {} follows {}", row.trial_index, last_index),
            });
        }
        last_index = row.trial_index;

        let game = row.game(0, u32::MAX)?;
        let context = crate::game::make_context_vector(&game, &bounds)?;
        let start = history.len().saturating_sub(history_len);
        let input = PredictionInput { history: history[start..].to_vec(), context };
        if predict(&input, backend)?.point == row.selection {
            hits += 1;
        }
        history.push(Observation {
            selection: row.selection,
            payoff: bounds.normalize(row.payoff),
            foregone: bounds.normalize(row.foregone),
        });
    }
    Ok(hits as f64 / trials.len() as f64)
}

#[derive(Serialize)]
struct WireObservation {
    sel: Choice,
    payoff: f64,
    foregone: f64,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    history: Vec<WireObservation>,
    context: &'a [f64; 6],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireResponse {
    prob_a: f64,
    prob_b: f64,
}

#[derive(Deserialize)]
struct Handshake {
    proto: String,
}

/// Encodes one bridge request line (without the trailing newline).
pub fn encode_request(input: &PredictionInput) -> String {
    let req = WireRequest {
        history: input
            .history
            .iter()
            .map(|o| WireObservation { sel: o.selection, payoff: o.payoff, foregone: o.foregone })
            .collect(),
        context: input.context.values(),
    };
    serde_json::to_string(&req).expect("request serializes")
}

/// Decodes and validates one bridge response line.
pub fn decode_response(line: &str) -> Result<Prediction, PredictError> {
    let schema = |reason: String| PredictError::Schema { reason, raw: line.to_string() };
    let resp: WireResponse = serde_json::from_str(line.trim()).map_err(|e| schema(e.to_string()))?;
    Prediction::new(resp.prob_a, resp.prob_b).map_err(|e| schema(e.to_string()))
}

/// Line-delimited JSON bridge to a child process.
///
/// The child prints `{"proto":"pred-v1"}` on startup, then answers each
/// request line with one response line.
pub struct ExternalPredictor {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
}

impl ExternalPredictor {
    pub fn spawn(mut command: Command, timeout: Duration) -> Result<ExternalPredictor, PredictError> {
        let mut child = command
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| PredictError::Transport(format!("spawn failed: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, lines) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let failed = line.is_err();
                if tx.send(line).is_err() || failed {
                    break;
                }
            }
        });
        let mut bridge = ExternalPredictor { child, stdin, lines, timeout };
        let hello = bridge.read_line()?;
        let handshake: Handshake = serde_json::from_str(hello.trim())
            .map_err(|e| PredictError::Schema { reason: format!("bad handshake: {e}"), raw: hello.clone() })?;
        if handshake.proto != BRIDGE_PROTOCOL {
            return Err(PredictError::Schema {
                reason: format!("unsupported protocol {:?}", handshake.proto),
                raw: hello,
            });
        }
        Ok(bridge)
    }

    fn read_line(&mut self) -> Result<String, PredictError> {
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(PredictError::Transport(e.to_string())),
            Err(RecvTimeoutError::Timeout) => Err(PredictError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(PredictError::Transport("predictor closed its output".into())),
        }
    }

    /// Sends one request and waits for its response.
    pub fn external_bridge_predict(&mut self, input: &PredictionInput) -> Result<Prediction, PredictError> {
        let mut line = encode_request(input);
        line.push('\n');
        self.stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.flush())
            .map_err(|e| PredictError::Transport(e.to_string()))?;
        let reply = self.read_line()?;
        decode_response(&reply)
    }
}

impl Predictor for ExternalPredictor {
    fn predict(&mut self, input: &PredictionInput) -> Result<Prediction, PredictError> {
        self.external_bridge_predict(input)
    }

    fn name(&self) -> &str {
        "external"
    }
}

impl Drop for ExternalPredictor {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(sel: Choice) -> Observation {
        Observation { selection: sel, payoff: 0.5, foregone: 0.5 }
    }

    fn input(history: Vec<Observation>) -> PredictionInput {
        PredictionInput { history, context: ContextVector([0.75, 0.0, 0.25, 1.0, 0.0, 0.2]) }
    }

    #[test]
    fn sticky_repeats_last() {
        let p = StickyPredictor.predict(&input(vec![obs(Choice::B), obs(Choice::A)])).unwrap();
        assert_eq!((p.point, p.prob_a), (Choice::A, 1.0));
    }

    #[test]
    fn frequency_counts() {
        use Choice::*;
        let h = [A, A, B, A, A].into_iter().map(obs).collect();
        let p = FrequencyPredictor { decay: 1.0 }.predict(&input(h)).unwrap();
        assert!((p.prob_a - 0.8).abs() < 1e-12);
        assert_eq!(p.point, A);
    }

    #[test]
    fn cold_start_is_uniform_for_every_backend() {
        let mut backends: Vec<Box<dyn Predictor>> = vec![
            Box::new(StickyPredictor),
            Box::new(FrequencyPredictor { decay: 0.7 }),
            Box::new(ValuePredictor { recency_weight: 0.5, temperature: 0.1 }),
        ];
        for b in backends.iter_mut() {
            let p = b.predict(&input(vec![])).unwrap();
            assert_eq!((p.prob_a, p.prob_b, p.point), (0.5, 0.5, Choice::A), "{}", b.name());
        }
    }

    #[test]
    fn value_predictor_follows_recent_payoffs() {
        let h = vec![Observation { selection: Choice::A, payoff: 0.0, foregone: 1.0 }];
        let p = ValuePredictor { recency_weight: 1.0, temperature: 0.1 }.predict(&input(h)).unwrap();
        assert_eq!(p.point, Choice::B);
    }

    #[test]
    fn prediction_validation() {
        assert!(Prediction::new(0.5, 0.4).is_err());
        assert!(Prediction::new(1.2, -0.2).is_err());
        assert_eq!(Prediction::new(0.5, 0.5).unwrap().point, Choice::A);
        assert_eq!(Prediction::new(0.3, 0.7).unwrap().point, Choice::B);
    }

    #[test]
    fn wire_format() {
        let i = PredictionInput {
            history: vec![Observation { selection: Choice::B, payoff: 0.25, foregone: 1.0 }],
            context: ContextVector([0.75, 0.0, 0.25, 1.0, 0.0, 0.2]),
        };
        assert_eq!(
            encode_request(&i),
            r#"{"history":[{"sel":"B","payoff":0.25,"foregone":1.0}],"context":[0.75,0.0,0.25,1.0,0.0,0.2]}"#
        );
        assert_eq!(decode_response(r#"{"prob_a":0.5,"prob_b":0.5}"#).unwrap(), Prediction::uniform());
        match decode_response(r#"{"prob_a":0.5,"prob_b":0.4}"#) {
            Err(PredictError::Schema { raw, .. }) => assert!(raw.contains("0.4")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(decode_response("not json"), Err(PredictError::Schema { .. })));
    }

    #[test]
    fn kind_round_trips_through_toml() {
        #[derive(Serialize, Deserialize)]
        struct Wrap {
            predictor: PredictorKind,
        }
        let text = "[predictor]\nkind = \"frequency\"\ndecay = 0.9\n";
        let w: Wrap = toml::from_str(text).unwrap();
        assert_eq!(w.predictor, PredictorKind::Frequency { decay: 0.9 });
        let w: Wrap = toml::from_str("[predictor]\nkind = \"sticky\"\n").unwrap();
        assert_eq!(w.predictor, PredictorKind::Sticky);
    }
}
