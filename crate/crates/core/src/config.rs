//! Run configuration, read from TOML.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ada::AidMode;
use crate::game::BankSpec;
use crate::indicator::{AbcConfig, IndicatorInit};
use crate::predictor::{PredictorKind, DEFAULT_HISTORY_LEN};
use crate::reliance::{ChoicePolicyParams, PriorSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub aid_mode: AidMode,
    pub games_per_operator: u32,
    pub trials_per_game: u32,
    /// Refit the indicator after every this many games. A value larger than
    /// `games_per_operator` disables refits.
    pub abc_update_interval_games: u32,
    /// Operators in a Monte Carlo population.
    pub operators: usize,
    /// Priors the synthetic operators are drawn from.
    pub operator_priors: PriorSpec,
    /// Priors the ABC refit samples candidates from.
    pub abc_priors: PriorSpec,
    pub choice_policy: ChoicePolicyParams,
    pub predictor: PredictorKind,
    /// Selections the predictor sees.
    pub history_len: usize,
    pub indicator_init: IndicatorInit,
    pub abc: AbcConfig,
    pub bank: BankSpec,
    pub bank_size: usize,
    pub seed: u64,
    /// Method-comparison grid; only read by `compare`.
    pub grid: Option<GridSpec>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            aid_mode: AidMode::Predictive,
            games_per_operator: 30,
            trials_per_game: 25,
            abc_update_interval_games: 10,
            operators: 200,
            operator_priors: PriorSpec::default(),
            abc_priors: PriorSpec::default(),
            choice_policy: ChoicePolicyParams::default(),
            predictor: PredictorKind::default(),
            history_len: DEFAULT_HISTORY_LEN,
            indicator_init: IndicatorInit::default(),
            abc: AbcConfig::default(),
            bank: BankSpec::default(),
            bank_size: 270,
            seed: 0,
            grid: None,
        }
    }
}

/// Axes of the method-comparison table. Each cell narrows the operator
/// priors for `theta`, `s` and `b2` to `width` around the cell's centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub theta: Vec<f64>,
    pub s: Vec<f64>,
    pub b2: Vec<f64>,
    pub width: f64,
    pub treatment: AidMode,
    pub baseline: AidMode,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            theta: vec![0.5, 0.6, 0.7],
            s: vec![0.1, 0.5, 0.9],
            b2: vec![0.01, 0.03, 0.05],
            width: 0.005,
            treatment: AidMode::Predictive,
            baseline: AidMode::Myopic,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: String, message: String },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {}", display_fields(.0))]
    Invalid(Vec<FieldError>),
}

fn display_fields(errors: &[FieldError]) -> String {
    errors.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; ")
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl SessionConfig {
    pub fn from_toml_str(text: &str) -> Result<SessionConfig, ConfigError> {
        let config: SessionConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<SessionConfig, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), message: e.to_string() })?;
        SessionConfig::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Collects every field-level problem.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errors = Vec::new();
        let mut push = |field: &str, message: String| errors.push(FieldError { field: field.to_string(), message });
        if self.games_per_operator == 0 {
            push("games_per_operator", "must be at least 1".into());
        }
        if self.trials_per_game == 0 {
            push("trials_per_game", "must be at least 1".into());
        }
        if self.abc_update_interval_games == 0 {
            push("abc_update_interval_games", "must be at least 1".into());
        }
        if self.operators == 0 {
            push("operators", "must be at least 1".into());
        }
        if self.history_len == 0 {
            push("history_len", "must be at least 1".into());
        }
        if self.bank_size == 0 {
            push("bank_size", "must be at least 1".into());
        }
        if let Err(e) = self.operator_priors.validate() {
            push("operator_priors", e.to_string());
        }
        if let Err(e) = self.abc_priors.validate() {
            push("abc_priors", e.to_string());
        }
        if let Err(e) = self.choice_policy.validate() {
            push("choice_policy", e.to_string());
        }
        if let Err(e) = self.predictor.validate() {
            push("predictor", e);
        }
        if let Err(e) = self.abc.validate() {
            push("abc", e.to_string());
        }
        if let Err(e) = self.bank.validate() {
            push("bank", e.to_string());
        }
        if let IndicatorInit::Perturb { sigma } = self.indicator_init {
            if !(sigma >= 0.0) || !sigma.is_finite() {
                push("indicator_init.sigma", format!("{sigma} must be non-negative"));
            }
        }
        if let Some(grid) = &self.grid {
            for (name, axis) in [("grid.theta", &grid.theta), ("grid.s", &grid.s), ("grid.b2", &grid.b2)] {
                if axis.is_empty() {
                    push(name, "must list at least one value".into());
                }
            }
            if !(grid.width >= 0.0) {
                push("grid.width", format!("{} must be non-negative", grid.width));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errors))
        }
    }
}
