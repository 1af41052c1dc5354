//! Operator reliance dynamics.
//!
//! The operator carries a continuous preference `P` for relying on the aid
//! and a belief `B` in the aid's capability. After each trial:
//!
//! ```text
//! B' = B + b1 (C - B) + A b2 (1 - B)      capability visible
//! B' = B + b0 (B_ini - B)                 capability hidden
//! P' = (1 - s) P + s B' + eps,  eps ~ N(0, sigma^2)
//! ```
//!
//! where `C` is the aid's capability on the trial and `A = +1` when the aid's
//! suggestion agreed with the operator's initial pick, `-1` otherwise. The
//! operator relies on the aid (`d = 1`) whenever `P >= theta`.
//!
//! Neither `B` nor `P` is clamped.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::game::Game;
use crate::{Agreement, Choice};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RelianceError {
    #[error("parameter {name} = {value} outside its legal range {range}")]
    OutOfRange { name: &'static str, value: f64, range: &'static str },
    #[error("prior for {name}: support [{lower}, {upper}] escapes legal range {range}")]
    PriorSupport { name: &'static str, lower: f64, upper: f64, range: &'static str },
    #[error("choice policy: {0}")]
    Policy(String),
}

/// Whether the operator sees the aid's capability each trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InfoMode {
    #[default]
    CapabilityVisible,
    CapabilityHidden,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorParams {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    /// Weight of the new belief in the preference update (inertia is `1 - s`).
    pub s: f64,
    pub theta: f64,
    pub noise_sigma: f64,
    pub belief_initial: f64,
    pub preference_initial: f64,
    pub info_mode: InfoMode,
}

impl Default for OperatorParams {
    /// Centers of the default priors.
    fn default() -> Self {
        OperatorParams {
            b0: 0.03,
            b1: 0.03,
            b2: 0.03,
            s: 0.5,
            theta: 0.6,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            belief_initial: DEFAULT_BELIEF_INITIAL,
            preference_initial: DEFAULT_PREFERENCE_INITIAL,
            info_mode: InfoMode::CapabilityVisible,
        }
    }
}

pub const DEFAULT_NOISE_SIGMA: f64 = 0.02;
pub const DEFAULT_BELIEF_INITIAL: f64 = 0.5;
pub const DEFAULT_PREFERENCE_INITIAL: f64 = 0.5;

const UNIT: &str = "[0, 1]";
const NON_NEGATIVE: &str = "[0, inf)";

fn check(name: &'static str, value: f64, unit: bool) -> Result<(), RelianceError> {
    let ok = if unit { (0.0..=1.0).contains(&value) } else { value >= 0.0 && value.is_finite() };
    if ok {
        Ok(())
    } else {
        Err(RelianceError::OutOfRange { name, value, range: if unit { UNIT } else { NON_NEGATIVE } })
    }
}

impl OperatorParams {
    pub fn validate(&self) -> Result<(), RelianceError> {
        check("b0", self.b0, true)?;
        check("b1", self.b1, true)?;
        check("b2", self.b2, true)?;
        check("s", self.s, true)?;
        check("theta", self.theta, false)?;
        check("noise_sigma", self.noise_sigma, false)?;
        for (name, v) in [("belief_initial", self.belief_initial), ("preference_initial", self.preference_initial)] {
            if !v.is_finite() {
                return Err(RelianceError::OutOfRange { name, value: v, range: "finite" });
            }
        }
        Ok(())
    }

    /// Forces every parameter into its legal range.
    pub fn clamped(mut self) -> OperatorParams {
        self.b0 = self.b0.clamp(0.0, 1.0);
        self.b1 = self.b1.clamp(0.0, 1.0);
        self.b2 = self.b2.clamp(0.0, 1.0);
        self.s = self.s.clamp(0.0, 1.0);
        self.theta = self.theta.max(0.0);
        self.noise_sigma = self.noise_sigma.max(0.0);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelianceState {
    pub preference: f64,
    pub belief: f64,
    pub reliance: bool,
    pub step_index: u64,
}

impl RelianceState {
    pub fn initial(params: &OperatorParams) -> RelianceState {
        RelianceState {
            preference: params.preference_initial,
            belief: params.belief_initial,
            reliance: reliance_decision(params.preference_initial, params.theta),
            step_index: 0,
        }
    }
}

// The update kernels below are shared with the ABC batch simulator; any
// change here changes both paths.

#[inline(always)]
pub(crate) fn belief_visible(belief: f64, b1: f64, b2: f64, capability: f64, agreement: f64) -> f64 {
    belief + b1 * (capability - belief) + agreement * b2 * (1.0 - belief)
}

#[inline(always)]
pub(crate) fn belief_hidden(belief: f64, b0: f64, belief_initial: f64) -> f64 {
    belief + b0 * (belief_initial - belief)
}

#[inline(always)]
pub(crate) fn preference_mix(preference: f64, s: f64, belief: f64) -> f64 {
    (1.0 - s) * preference + s * belief
}

/// Next capability belief given the trial's capability and agreement.
pub fn step_belief(state: &RelianceState, params: &OperatorParams, capability: f64, agreement: Agreement) -> f64 {
    match params.info_mode {
        InfoMode::CapabilityVisible => belief_visible(state.belief, params.b1, params.b2, capability, agreement.sign()),
        InfoMode::CapabilityHidden => belief_hidden(state.belief, params.b0, params.belief_initial),
    }
}

/// Advances the preference with `new_belief` and applies the threshold rule.
/// Draws one normal variate from `rng` only when `noise_sigma > 0`.
pub fn step_preference<R: Rng + ?Sized>(
    state: &RelianceState,
    params: &OperatorParams,
    new_belief: f64,
    rng: &mut R,
) -> RelianceState {
    let mut preference = preference_mix(state.preference, params.s, new_belief);
    if params.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, params.noise_sigma).expect("sigma validated non-negative");
        preference += noise.sample(rng);
    }
    RelianceState {
        preference,
        belief: new_belief,
        reliance: reliance_decision(preference, params.theta),
        step_index: state.step_index + 1,
    }
}

/// [`step_preference`] with the noise term fixed at zero.
pub fn step_preference_noiseless(state: &RelianceState, params: &OperatorParams, new_belief: f64) -> RelianceState {
    let preference = preference_mix(state.preference, params.s, new_belief);
    RelianceState {
        preference,
        belief: new_belief,
        reliance: reliance_decision(preference, params.theta),
        step_index: state.step_index + 1,
    }
}

/// `true` iff `preference >= theta`.
#[inline]
pub fn reliance_decision(preference: f64, theta: f64) -> bool {
    preference >= theta
}

/// Uniform prior on `[lower, lower + width]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformPrior {
    pub lower: f64,
    pub width: f64,
}

impl UniformPrior {
    pub const fn new(lower: f64, width: f64) -> UniformPrior {
        UniformPrior { lower, width }
    }

    pub fn centered(center: f64, width: f64) -> UniformPrior {
        UniformPrior { lower: center - width / 2.0, width }
    }

    pub fn upper(&self) -> f64 {
        self.lower + self.width
    }

    pub fn mean(&self) -> f64 {
        self.lower + self.width / 2.0
    }

    pub fn std_dev(&self) -> f64 {
        self.width / 12f64.sqrt()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.lower + u * self.width
    }

    fn validate(&self, name: &'static str, unit: bool) -> Result<(), RelianceError> {
        let (lo, hi) = (self.lower, self.upper());
        let ok = self.width >= 0.0 && lo.is_finite() && hi.is_finite() && lo >= 0.0 && (!unit || hi <= 1.0);
        if ok {
            Ok(())
        } else {
            Err(RelianceError::PriorSupport {
                name,
                lower: lo,
                upper: hi,
                range: if unit { UNIT } else { NON_NEGATIVE },
            })
        }
    }
}

/// Priors for the operator parameters plus the fixed non-random ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSpec {
    pub b0: UniformPrior,
    pub b1: UniformPrior,
    pub b2: UniformPrior,
    pub s: UniformPrior,
    pub theta: UniformPrior,
    pub noise_sigma: f64,
    pub belief_initial: f64,
    pub preference_initial: f64,
    pub info_mode: InfoMode,
}

impl Default for PriorSpec {
    /// Uniform priors given as (lower bound, width):
    /// b1, b2 ~ U(0.01, +0.04), s ~ U(0.10, +0.80), theta ~ U(0.50, +0.20).
    /// b0 follows b1.
    fn default() -> Self {
        PriorSpec {
            b0: UniformPrior::new(0.01, 0.04),
            b1: UniformPrior::new(0.01, 0.04),
            b2: UniformPrior::new(0.01, 0.04),
            s: UniformPrior::new(0.10, 0.80),
            theta: UniformPrior::new(0.50, 0.20),
            noise_sigma: DEFAULT_NOISE_SIGMA,
            belief_initial: DEFAULT_BELIEF_INITIAL,
            preference_initial: DEFAULT_PREFERENCE_INITIAL,
            info_mode: InfoMode::CapabilityVisible,
        }
    }
}

impl PriorSpec {
    /// Narrow priors of `width` centered on `(theta, s, b2)`; the others keep
    /// their defaults.
    pub fn centered(theta: f64, s: f64, b2: f64, width: f64) -> PriorSpec {
        PriorSpec {
            theta: UniformPrior::centered(theta, width),
            s: UniformPrior::centered(s, width),
            b2: UniformPrior::centered(b2, width),
            ..PriorSpec::default()
        }
    }

    /// Priors collapsed onto fixed values.
    pub fn point(params: &OperatorParams) -> PriorSpec {
        PriorSpec {
            b0: UniformPrior::new(params.b0, 0.0),
            b1: UniformPrior::new(params.b1, 0.0),
            b2: UniformPrior::new(params.b2, 0.0),
            s: UniformPrior::new(params.s, 0.0),
            theta: UniformPrior::new(params.theta, 0.0),
            noise_sigma: params.noise_sigma,
            belief_initial: params.belief_initial,
            preference_initial: params.preference_initial,
            info_mode: params.info_mode,
        }
    }

    pub fn validate(&self) -> Result<(), RelianceError> {
        self.b0.validate("b0", true)?;
        self.b1.validate("b1", true)?;
        self.b2.validate("b2", true)?;
        self.s.validate("s", true)?;
        self.theta.validate("theta", false)?;
        check("noise_sigma", self.noise_sigma, false)?;
        Ok(())
    }

    /// Parameters at the prior means.
    pub fn means(&self) -> OperatorParams {
        OperatorParams {
            b0: self.b0.mean(),
            b1: self.b1.mean(),
            b2: self.b2.mean(),
            s: self.s.mean(),
            theta: self.theta.mean(),
            noise_sigma: self.noise_sigma,
            belief_initial: self.belief_initial,
            preference_initial: self.preference_initial,
            info_mode: self.info_mode,
        }
    }
}

/// Draws one operator. Consumes exactly five uniforms (b0, b1, b2, s, theta).
pub fn sample_operator_params<R: Rng + ?Sized>(
    priors: &PriorSpec,
    rng: &mut R,
) -> Result<OperatorParams, RelianceError> {
    priors.validate()?;
    let params = OperatorParams {
        b0: priors.b0.sample(rng),
        b1: priors.b1.sample(rng),
        b2: priors.b2.sample(rng),
        s: priors.s.sample(rng),
        theta: priors.theta.sample(rng),
        noise_sigma: priors.noise_sigma,
        belief_initial: priors.belief_initial,
        preference_initial: priors.preference_initial,
        info_mode: priors.info_mode,
    };
    params.validate()?;
    Ok(params)
}

/// Synthetic initial-selection policy: softmax over recency-weighted values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChoicePolicyParams {
    /// Softmax temperature on values normalized by the game's payoff span.
    pub temperature: f64,
    /// Weight of each new observation in the value estimates.
    pub recency_weight: f64,
}

impl Default for ChoicePolicyParams {
    fn default() -> Self {
        ChoicePolicyParams { temperature: 0.3, recency_weight: 0.5 }
    }
}

impl ChoicePolicyParams {
    pub fn validate(&self) -> Result<(), RelianceError> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(RelianceError::Policy(format!("temperature {} must be positive", self.temperature)));
        }
        if !(0.0..=1.0).contains(&self.recency_weight) {
            return Err(RelianceError::Policy(format!("recency_weight {} outside [0, 1]", self.recency_weight)));
        }
        Ok(())
    }
}

/// What the operator saw after one trial of the current game: its own
/// initial selection, the payoff that option realized and the payoff of the
/// other option.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub selection: Choice,
    pub payoff: f64,
    pub foregone: f64,
}

impl Observation {
    pub fn payoff_of(&self, choice: Choice) -> f64 {
        if choice == self.selection {
            self.payoff
        } else {
            self.foregone
        }
    }
}

/// Value estimates of (A, B): described expected values, then an
/// exponential recency average over every observed payoff of each option.
pub fn value_estimates(history: &[Observation], game: &Game, recency_weight: f64) -> (f64, f64) {
    let mut va = game.option_a.expected_value();
    let mut vb = game.option_b.expected_value();
    for obs in history {
        va += recency_weight * (obs.payoff_of(Choice::A) - va);
        vb += recency_weight * (obs.payoff_of(Choice::B) - vb);
    }
    (va, vb)
}

/// Probability that the policy picks A.
pub fn selection_probability_a(history: &[Observation], game: &Game, policy: &ChoicePolicyParams) -> f64 {
    let (va, vb) = value_estimates(history, game, policy.recency_weight);
    let hi = game.option_a.high().max(game.option_b.high());
    let lo = game.option_a.low().min(game.option_b.low());
    let span = hi - lo;
    if span <= 0.0 {
        return 0.5;
    }
    let z = (va - vb) / (span * policy.temperature);
    if z == 0.0 {
        0.5
    } else {
        1.0 / (1.0 + (-z).exp())
    }
}

/// Samples the operator's unaided pick. Consumes exactly one uniform.
pub fn initial_selection<R: Rng + ?Sized>(
    history: &[Observation],
    game: &Game,
    policy: &ChoicePolicyParams,
    rng: &mut R,
) -> Choice {
    let p_a = selection_probability_a(history, game, policy);
    let u: f64 = rng.random();
    if u < p_a {
        Choice::A
    } else {
        Choice::B
    }
}
