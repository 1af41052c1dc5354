//! The aid's indicator model and its ABC refit.
//!
//! The indicator is a copy of the operator's reliance dynamics with its own
//! (initially disturbed) parameters. It is stepped with the same capability
//! and agreement inputs as the operator, and periodically refit from the
//! logged `(d, agreement, capability)` triples by rejection sampling:
//! candidates `(b1, b2, s, theta)` are drawn from the priors, replayed through
//! the logged inputs, and accepted when the Euclidean distance between the
//! summary statistics of their simulated `d` sequence and the observed one is
//! below the threshold.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::reliance::{
    self, belief_hidden, belief_visible, preference_mix, reliance_decision, InfoMode, OperatorParams, PriorSpec,
    RelianceError, RelianceState,
};
use crate::rng::{self, Purpose};
use crate::Agreement;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AbcError {
    #[error("observation log is empty")]
    EmptyLog,
    #[error("observation log has no observed reliance values")]
    NothingObserved,
    #[error("summary statistics need a non-empty sequence")]
    EmptySequence,
    #[error("posterior is empty")]
    EmptyPosterior,
    #[error("invalid ABC configuration: {0}")]
    Config(String),
    #[error("perturbation mode needs the true operator parameters")]
    NoTruth,
    #[error(transparent)]
    Params(#[from] RelianceError),
}

/// One logged trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoggedTrial {
    pub reliance: bool,
    pub agreement: Agreement,
    pub capability: f64,
    /// `false` when the reliance value was not revealed by the operator and
    /// must not enter the summary statistics. The trial's inputs still drive
    /// the replayed dynamics.
    pub observed: bool,
}

/// Chronological, append-only record of the inputs and reliance outcomes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservationLog {
    entries: Vec<LoggedTrial>,
}

impl ObservationLog {
    pub fn new() -> ObservationLog {
        ObservationLog::default()
    }

    pub fn push(&mut self, trial: LoggedTrial) {
        self.entries.push(trial);
    }

    pub fn entries(&self) -> &[LoggedTrial] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn observed_count(&self) -> usize {
        self.entries.iter().filter(|e| e.observed).count()
    }
}

impl FromIterator<LoggedTrial> for ObservationLog {
    fn from_iter<I: IntoIterator<Item = LoggedTrial>>(iter: I) -> Self {
        ObservationLog { entries: iter.into_iter().collect() }
    }
}

/// Population moments of a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean: f64,
    pub variance: f64,
    pub skew: f64,
}

impl SummaryStats {
    /// Closed form for a 0/1 sequence with `ones` ones out of `n`.
    pub fn of_binary_count(ones: u32, n: u32) -> SummaryStats {
        let m = ones as f64 / n as f64;
        let variance = m * (1.0 - m);
        let skew = if variance > 0.0 { (1.0 - 2.0 * m) / variance.sqrt() } else { 0.0 };
        SummaryStats { mean: m, variance, skew }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.mean, self.variance, self.skew]
    }
}

/// Mean, population variance and skew `m3 / m2^(3/2)` (0 when `m2 = 0`).
pub fn summary_stats(values: &[f64]) -> Result<SummaryStats, AbcError> {
    if values.is_empty() {
        return Err(AbcError::EmptySequence);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m3 = values.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    let skew = if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 };
    Ok(SummaryStats { mean, variance: m2, skew })
}

/// [`summary_stats`] of a reliance sequence.
pub fn reliance_stats(d: &[bool]) -> Result<SummaryStats, AbcError> {
    if d.is_empty() {
        return Err(AbcError::EmptySequence);
    }
    let ones = d.iter().filter(|x| **x).count() as u32;
    Ok(SummaryStats::of_binary_count(ones, d.len() as u32))
}

/// Sufficient counts of a reliance sequence restricted to observed trials.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Counts {
    n: u32,
    ones: u32,
    n_agree: u32,
    ones_agree: u32,
    ones_disagree: u32,
    pairs: u32,
    switches: u32,
}

impl Counts {
    fn statistics(&self, extended: bool) -> Vec<f64> {
        let mut v = SummaryStats::of_binary_count(self.ones, self.n).as_array().to_vec();
        if extended {
            let ratio = |a: u32, b: u32| if b == 0 { 0.0 } else { a as f64 / b as f64 };
            v.push(ratio(self.ones_agree, self.n_agree));
            v.push(ratio(self.ones_disagree, self.n - self.n_agree));
            v.push(ratio(self.switches, self.pairs));
        }
        v
    }

    fn of_sequence(d: &[bool], log: &[LoggedTrial]) -> Counts {
        let mut c = Counts::default();
        let mut prev: Option<bool> = None;
        for (&di, e) in d.iter().zip(log) {
            if !e.observed {
                prev = None;
                continue;
            }
            c.n += 1;
            c.ones += di as u32;
            if e.agreement == Agreement::Agree {
                c.n_agree += 1;
                c.ones_agree += di as u32;
            } else {
                c.ones_disagree += di as u32;
            }
            if let Some(p) = prev {
                c.pairs += 1;
                c.switches += (p != di) as u32;
            }
            prev = Some(di);
        }
        c
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Replays the logged inputs through the reliance dynamics of `candidate`
/// from a fresh state, returning the reliance value in force at each trial.
/// Without `noise` the preference noise is zero.
pub fn simulate_trace<R: Rng + ?Sized>(
    candidate: &OperatorParams,
    log: &ObservationLog,
    noise: Option<&mut R>,
) -> Vec<bool> {
    let mut state = RelianceState::initial(candidate);
    let mut out = Vec::with_capacity(log.len());
    match noise {
        Some(rng) => {
            for e in log.entries() {
                out.push(state.reliance);
                let b = reliance::step_belief(&state, candidate, e.capability, e.agreement);
                state = reliance::step_preference(&state, candidate, b, rng);
            }
        }
        None => {
            for e in log.entries() {
                out.push(state.reliance);
                let b = reliance::step_belief(&state, candidate, e.capability, e.agreement);
                state = reliance::step_preference_noiseless(&state, candidate, b);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AbcConfig {
    pub accepted_target: usize,
    pub batch_size: usize,
    pub threshold: f64,
    pub max_batches: usize,
    /// Adds agreement-conditioned reliance means and the switch rate to the
    /// statistic vector.
    pub extended_stats: bool,
    /// Simulate candidates with the template's preference noise instead of
    /// noise-free dynamics.
    pub candidate_noise: bool,
}

impl Default for AbcConfig {
    fn default() -> Self {
        AbcConfig {
            accepted_target: 10_000,
            batch_size: 100_000,
            threshold: 0.5,
            max_batches: 50,
            extended_stats: false,
            candidate_noise: false,
        }
    }
}

impl AbcConfig {
    pub fn validate(&self) -> Result<(), AbcError> {
        if self.accepted_target == 0 || self.batch_size == 0 || self.max_batches == 0 {
            return Err(AbcError::Config("accepted_target, batch_size and max_batches must be positive".into()));
        }
        if self.threshold.is_nan() {
            return Err(AbcError::Config("threshold is NaN".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSample {
    pub b1: f64,
    pub b2: f64,
    pub s: f64,
    pub theta: f64,
    pub distance: f64,
    pub draw_index: u64,
}

impl PosteriorSample {
    pub fn params(&self, template: &OperatorParams) -> OperatorParams {
        OperatorParams { b1: self.b1, b2: self.b2, s: self.s, theta: self.theta, ..*template }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbcOutcome {
    /// Sorted by distance, then draw index.
    pub samples: Vec<PosteriorSample>,
    pub evaluated: u64,
    pub accepted: u64,
    pub batches: usize,
    /// The target was not reached and `samples` holds the closest candidates
    /// seen rather than accepted ones.
    pub fallback: bool,
}

impl AbcOutcome {
    pub fn acceptance_rate(&self) -> f64 {
        if self.evaluated == 0 {
            0.0
        } else {
            self.accepted as f64 / self.evaluated as f64
        }
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    b1: f64,
    b2: f64,
    s: f64,
    theta: f64,
}

/// Log in struct-of-arrays form for the batch simulator.
struct PreparedLog {
    capability: Vec<f64>,
    sign: Vec<f64>,
    observed: Vec<u32>,
    agree: Vec<u32>,
}

impl PreparedLog {
    fn new(log: &ObservationLog) -> PreparedLog {
        let e = log.entries();
        PreparedLog {
            capability: e.iter().map(|t| t.capability).collect(),
            sign: e.iter().map(|t| t.agreement.sign()).collect(),
            observed: e.iter().map(|t| t.observed as u32).collect(),
            agree: e.iter().map(|t| (t.agreement == Agreement::Agree) as u32).collect(),
        }
    }
}

const LANES: usize = 16;

// Candidates evaluated between checks of the accepted count.
const EVAL_CHUNK: usize = 4096;

/// Noise-free simulation of up to `LANES` candidates side by side.
fn simulate_lanes<const EXTENDED: bool>(
    cands: &[Candidate],
    template: &OperatorParams,
    log: &PreparedLog,
) -> [Counts; LANES] {
    debug_assert!(!cands.is_empty() && cands.len() <= LANES);
    let pad = cands[cands.len() - 1];
    let lane = |i: usize| cands.get(i).copied().unwrap_or(pad);
    let b1: [f64; LANES] = std::array::from_fn(|i| lane(i).b1);
    let b2: [f64; LANES] = std::array::from_fn(|i| lane(i).b2);
    let s: [f64; LANES] = std::array::from_fn(|i| lane(i).s);
    let theta: [f64; LANES] = std::array::from_fn(|i| lane(i).theta);
    let mut belief = [template.belief_initial; LANES];
    let mut pref = [template.preference_initial; LANES];
    let mut ones = [0u32; LANES];
    let mut ones_agree = [0u32; LANES];
    let mut switches = [0u32; LANES];
    let mut prev = [0u32; LANES];
    let mut pairs = 0u32;
    let mut n = 0u32;
    let mut n_agree = 0u32;
    let mut prev_observed = 0u32;
    let visible = template.info_mode == InfoMode::CapabilityVisible;

    for t in 0..log.capability.len() {
        let (c, a, obs, agree) = (log.capability[t], log.sign[t], log.observed[t], log.agree[t]);
        n += obs;
        n_agree += obs & agree;
        let pair = obs & prev_observed;
        pairs += pair;
        for l in 0..LANES {
            let d = reliance_decision(pref[l], theta[l]) as u32;
            ones[l] += d & obs;
            if EXTENDED {
                ones_agree[l] += d & obs & agree;
                switches[l] += pair & (d ^ prev[l]);
                prev[l] = d;
            }
            belief[l] = if visible {
                belief_visible(belief[l], b1[l], b2[l], c, a)
            } else {
                belief_hidden(belief[l], template.b0, template.belief_initial)
            };
            pref[l] = preference_mix(pref[l], s[l], belief[l]);
        }
        prev_observed = obs;
    }

    std::array::from_fn(|l| Counts {
        n,
        ones: ones[l],
        n_agree,
        ones_agree: ones_agree[l],
        ones_disagree: ones[l] - ones_agree[l],
        pairs,
        switches: switches[l],
    })
}

fn simulate_candidates(
    cands: &[Candidate],
    template: &OperatorParams,
    log: &PreparedLog,
    extended: bool,
) -> Vec<Counts> {
    cands
        .par_chunks(LANES * 64)
        .flat_map_iter(|block| {
            block.chunks(LANES).flat_map(|chunk| {
                let counts = if extended {
                    simulate_lanes::<true>(chunk, template, log)
                } else {
                    simulate_lanes::<false>(chunk, template, log)
                };
                counts.into_iter().take(chunk.len())
            })
        })
        .collect()
}

fn simulate_candidates_noisy(
    cands: &[Candidate],
    first_index: u64,
    template: &OperatorParams,
    log: &ObservationLog,
    noise_seed: u64,
) -> Vec<Counts> {
    cands
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let params = OperatorParams { b1: c.b1, b2: c.b2, s: c.s, theta: c.theta, ..*template };
            let mut rng = rng::stream(noise_seed, first_index + i as u64, Purpose::Abc);
            let d = simulate_trace(&params, log, Some(&mut rng));
            Counts::of_sequence(&d, log.entries())
        })
        .collect()
}

/// Rejection sampling of `(b1, b2, s, theta)`; `template` supplies the
/// remaining parameters.
///
/// Candidates are drawn in batches of `batch_size`. The first
/// `accepted_target` candidates (in draw order) with distance below the
/// threshold form the posterior. Evaluation stops early, in steps of a few
/// thousand candidates, once the target is reached. If `max_batches` pass without reaching the
/// target, the `accepted_target` closest candidates seen are returned and the
/// outcome is flagged as a fallback.
pub fn abc_rejection<R: Rng + ?Sized>(
    log: &ObservationLog,
    priors: &PriorSpec,
    template: &OperatorParams,
    config: &AbcConfig,
    rng: &mut R,
) -> Result<AbcOutcome, AbcError> {
    config.validate()?;
    priors.validate()?;
    if log.is_empty() {
        return Err(AbcError::EmptyLog);
    }
    let observed_d: Vec<bool> = log.entries().iter().map(|e| e.reliance).collect();
    let observed_counts = Counts::of_sequence(&observed_d, log.entries());
    if observed_counts.n == 0 {
        return Err(AbcError::NothingObserved);
    }
    let target_stats = observed_counts.statistics(config.extended_stats);
    let prepared = PreparedLog::new(log);
    let noise_seed: u64 = if config.candidate_noise { rng.random() } else { 0 };

    let by_distance = |a: &PosteriorSample, b: &PosteriorSample| {
        a.distance.total_cmp(&b.distance).then(a.draw_index.cmp(&b.draw_index))
    };

    let mut accepted: Vec<PosteriorSample> = Vec::with_capacity(config.accepted_target);
    let mut closest: Vec<PosteriorSample> = Vec::new();
    let mut accepted_total = 0u64;
    let mut evaluated = 0u64;
    let mut batches = 0usize;

    while batches < config.max_batches && accepted.len() < config.accepted_target {
        let cands: Vec<Candidate> = (0..config.batch_size)
            .map(|_| Candidate {
                b1: priors.b1.sample(rng),
                b2: priors.b2.sample(rng),
                s: priors.s.sample(rng),
                theta: priors.theta.sample(rng),
            })
            .collect();
        batches += 1;
        for chunk in cands.chunks(EVAL_CHUNK) {
            let counts = if config.candidate_noise {
                simulate_candidates_noisy(chunk, evaluated, template, log, noise_seed)
            } else {
                simulate_candidates(chunk, template, &prepared, config.extended_stats)
            };
            let first = evaluated;
            let samples = chunk.iter().zip(&counts).enumerate().map(|(i, (c, k))| PosteriorSample {
                b1: c.b1,
                b2: c.b2,
                s: c.s,
                theta: c.theta,
                distance: distance(&k.statistics(config.extended_stats), &target_stats),
                draw_index: first + i as u64,
            });
            for sample in samples {
                if sample.distance < config.threshold {
                    accepted_total += 1;
                    if accepted.len() < config.accepted_target {
                        accepted.push(sample);
                    }
                }
                closest.push(sample);
            }
            if closest.len() > config.accepted_target {
                closest.select_nth_unstable_by(config.accepted_target - 1, by_distance);
                closest.truncate(config.accepted_target);
            }
            evaluated += chunk.len() as u64;
            if accepted.len() >= config.accepted_target {
                break;
            }
        }
    }

    let fallback = accepted.len() < config.accepted_target;
    let mut samples = if fallback { closest } else { accepted };
    samples.sort_by(by_distance);
    Ok(AbcOutcome { samples, evaluated, accepted: accepted_total, batches, fallback })
}

/// Component-wise posterior mean of `(b1, b2, s, theta)`, clamped into the
/// legal ranges; the other parameters come from `template`.
pub fn point_estimate(posterior: &[PosteriorSample], template: &OperatorParams) -> Result<OperatorParams, AbcError> {
    if posterior.is_empty() {
        return Err(AbcError::EmptyPosterior);
    }
    let n = posterior.len() as f64;
    let mean = |f: fn(&PosteriorSample) -> f64| posterior.iter().map(f).sum::<f64>() / n;
    Ok(OperatorParams {
        b1: mean(|p| p.b1),
        b2: mean(|p| p.b2),
        s: mean(|p| p.s),
        theta: mean(|p| p.theta),
        ..*template
    }
    .clamped())
}

/// How the indicator's parameters are first chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum IndicatorInit {
    /// True parameters plus independent `N(0, sigma^2)` on b0, b1, b2, s and
    /// theta, clamped into range.
    Perturb {
        #[serde(default = "default_perturb_sigma")]
        sigma: f64,
    },
    /// A fresh draw from the priors.
    PriorDraw,
}

pub const DEFAULT_PERTURB_SIGMA: f64 = 0.05;

fn default_perturb_sigma() -> f64 {
    DEFAULT_PERTURB_SIGMA
}

impl Default for IndicatorInit {
    fn default() -> Self {
        IndicatorInit::Perturb { sigma: DEFAULT_PERTURB_SIGMA }
    }
}

/// The aid's model of the operator. It is stepped without preference
/// noise; `params.noise_sigma` is only carried for candidate simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndicatorState {
    pub params: OperatorParams,
    pub state: RelianceState,
}

impl IndicatorState {
    pub fn new(params: OperatorParams) -> IndicatorState {
        IndicatorState { params, state: RelianceState::initial(&params) }
    }

    pub fn reliance(&self) -> bool {
        self.state.reliance
    }

    pub fn step(&mut self, capability: f64, agreement: Agreement) {
        let b = reliance::step_belief(&self.state, &self.params, capability, agreement);
        self.state = reliance::step_preference_noiseless(&self.state, &self.params, b);
    }

    /// Installs refit parameters; the running state is kept.
    pub fn install(&mut self, params: OperatorParams) {
        self.params = params;
    }
}

pub fn init_indicator<R: Rng + ?Sized>(
    truth: Option<&OperatorParams>,
    mode: IndicatorInit,
    priors: &PriorSpec,
    rng: &mut R,
) -> Result<IndicatorState, AbcError> {
    let params = match mode {
        IndicatorInit::Perturb { sigma } => {
            let truth = truth.ok_or(AbcError::NoTruth)?;
            if !(sigma >= 0.0) || !sigma.is_finite() {
                return Err(AbcError::Config(format!("perturbation sigma {sigma} must be non-negative")));
            }
            if sigma == 0.0 {
                *truth
            } else {
                let normal = Normal::new(0.0, sigma).expect("sigma checked");
                let mut jitter = |x: f64| x + normal.sample(rng);
                OperatorParams {
                    b0: jitter(truth.b0),
                    b1: jitter(truth.b1),
                    b2: jitter(truth.b2),
                    s: jitter(truth.s),
                    theta: jitter(truth.theta),
                    ..*truth
                }
                .clamped()
            }
        }
        IndicatorInit::PriorDraw => reliance::sample_operator_params(priors, rng)?,
    };
    Ok(IndicatorState::new(params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded, StreamRng};

    fn log_from(inputs: &[(f64, Agreement)], params: &OperatorParams) -> ObservationLog {
        let mut state = RelianceState::initial(params);
        let mut log = ObservationLog::new();
        for &(c, a) in inputs {
            log.push(LoggedTrial { reliance: state.reliance, agreement: a, capability: c, observed: true });
            let b = reliance::step_belief(&state, params, c, a);
            state = reliance::step_preference_noiseless(&state, params, b);
        }
        log
    }

    fn random_inputs(n: usize, seed: u64) -> Vec<(f64, Agreement)> {
        let mut rng = seeded(seed);
        (0..n)
            .map(|_| {
                let c: f64 = rng.random_range(0.4..1.0);
                let a = if rng.random::<f64>() < 0.7 { Agreement::Agree } else { Agreement::Disagree };
                (c, a)
            })
            .collect()
    }

    #[test]
    fn stats_examples() {
        let s = summary_stats(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!((s.mean, s.variance, s.skew), (1.0, 0.0, 0.0));
        let s = summary_stats(&[0.0, 1.0]).unwrap();
        assert_eq!((s.mean, s.variance, s.skew), (0.5, 0.25, 0.0));
        // [1,0,0,0]: m = 1/4, m2 = 3/16, m3 = (27/64 - 3/64) / 4 = 3/32.
        let s = summary_stats(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        let expected_skew = (3.0 / 32.0) / (3.0f64 / 16.0).powf(1.5);
        assert!((s.mean - 0.25).abs() < 1e-15);
        assert!((s.variance - 0.1875).abs() < 1e-15);
        assert!((s.skew - expected_skew).abs() < 1e-12);
        assert!((expected_skew - 1.1547005383792515).abs() < 1e-12);
        assert_eq!(summary_stats(&[]), Err(AbcError::EmptySequence));
    }

    #[test]
    fn binary_closed_form_matches_moments() {
        let mut rng = seeded(5);
        for n in 1..60usize {
            let d: Vec<bool> = (0..n).map(|_| rng.random()).collect();
            let direct = summary_stats(&d.iter().map(|x| *x as u8 as f64).collect::<Vec<_>>()).unwrap();
            let closed = reliance_stats(&d).unwrap();
            assert!((direct.mean - closed.mean).abs() < 1e-12);
            assert!((direct.variance - closed.variance).abs() < 1e-12);
            assert!((direct.skew - closed.skew).abs() < 1e-9);
        }
    }

    #[test]
    fn true_parameters_reproduce_observations() {
        let truth = OperatorParams { noise_sigma: 0.0, ..OperatorParams::default() };
        let log = log_from(&random_inputs(250, 1), &truth);
        let sim = simulate_trace::<StreamRng>(&truth, &log, None);
        let observed: Vec<bool> = log.entries().iter().map(|e| e.reliance).collect();
        assert_eq!(sim, observed);
    }

    #[test]
    fn extreme_thresholds() {
        let truth = OperatorParams::default();
        let log = log_from(&random_inputs(40, 2), &truth);
        let zero = OperatorParams { theta: 0.0, ..truth };
        assert!(simulate_trace::<StreamRng>(&zero, &log, None).iter().all(|d| *d));
        let high = OperatorParams { theta: 10.0, ..truth };
        assert!(simulate_trace::<StreamRng>(&high, &log, None).iter().all(|d| !*d));
    }

    #[test]
    fn batch_kernel_matches_scalar_path() {
        let template = OperatorParams::default();
        let mut log = log_from(&random_inputs(300, 3), &template);
        // Hide a few trials to exercise the mask.
        let entries: Vec<LoggedTrial> =
            log.entries().iter().enumerate().map(|(i, e)| LoggedTrial { observed: i % 7 != 3, ..*e }).collect();
        log = entries.into_iter().collect();
        let prepared = PreparedLog::new(&log);
        let mut rng = seeded(9);
        let priors = PriorSpec::default();
        let cands: Vec<Candidate> = (0..37)
            .map(|_| Candidate {
                b1: priors.b1.sample(&mut rng),
                b2: priors.b2.sample(&mut rng),
                s: priors.s.sample(&mut rng),
                theta: priors.theta.sample(&mut rng),
            })
            .collect();
        for extended in [false, true] {
            let fast = simulate_candidates(&cands, &template, &prepared, extended);
            for (c, k) in cands.iter().zip(&fast) {
                let p = OperatorParams { b1: c.b1, b2: c.b2, s: c.s, theta: c.theta, ..template };
                let d = simulate_trace::<StreamRng>(&p, &log, None);
                let reference = Counts::of_sequence(&d, log.entries());
                assert_eq!(k.n, reference.n);
                assert_eq!(k.ones, reference.ones);
                if extended {
                    assert_eq!(*k, reference);
                }
            }
        }
        let hidden = OperatorParams { info_mode: InfoMode::CapabilityHidden, b0: 0.2, belief_initial: 0.9, ..template };
        let fast = simulate_candidates(&cands, &hidden, &prepared, false);
        for (c, k) in cands.iter().zip(&fast) {
            let p = OperatorParams { b1: c.b1, b2: c.b2, s: c.s, theta: c.theta, ..hidden };
            let d = simulate_trace::<StreamRng>(&p, &log, None);
            assert_eq!(k.ones, Counts::of_sequence(&d, log.entries()).ones);
        }
    }

    fn small_config() -> AbcConfig {
        AbcConfig { accepted_target: 500, batch_size: 5_000, ..AbcConfig::default() }
    }

    #[test]
    fn vacuous_threshold_returns_prior() {
        let truth = OperatorParams::default();
        let log = log_from(&random_inputs(100, 4), &truth);
        let config = AbcConfig { threshold: 1e6, ..small_config() };
        let out = abc_rejection(&log, &PriorSpec::default(), &truth, &config, &mut seeded(1)).unwrap();
        assert_eq!(out.batches, 1);
        // Evaluation stops after the first chunk that reaches the target.
        assert_eq!(out.evaluated, EVAL_CHUNK as u64);
        assert_eq!(out.accepted, out.evaluated);
        assert_eq!(out.acceptance_rate(), 1.0);
        assert!(!out.fallback);
        // First accepted_target draws, i.e. plain prior draws.
        let mut idx: Vec<u64> = out.samples.iter().map(|s| s.draw_index).collect();
        idx.sort();
        assert_eq!(idx, (0..500).collect::<Vec<_>>());
        let est = point_estimate(&out.samples, &truth).unwrap();
        let prior_mean = PriorSpec::default().means();
        // 3.5 standard errors of a 500-draw mean.
        for (got, want, width) in
            [(est.s, prior_mean.s, 0.8), (est.theta, prior_mean.theta, 0.2), (est.b1, prior_mean.b1, 0.04)]
        {
            assert!((got - want).abs() < 3.5 * width / 12f64.sqrt() / 500f64.sqrt(), "{got} vs {want}");
        }
    }

    #[test]
    fn fallback_returns_closest() {
        let truth = OperatorParams::default();
        let log = log_from(&random_inputs(60, 5), &truth);
        let config = AbcConfig {
            threshold: -1.0,
            max_batches: 1,
            accepted_target: 50,
            batch_size: 1000,
            ..AbcConfig::default()
        };
        let out = abc_rejection(&log, &PriorSpec::default(), &truth, &config, &mut seeded(2)).unwrap();
        assert!(out.fallback);
        assert_eq!(out.accepted, 0);
        assert_eq!(out.samples.len(), 50);
        let worst_kept = out.samples.last().unwrap().distance;
        assert!(out.samples.windows(2).all(|w| w[0].distance <= w[1].distance));
        // Rerun with a huge target to see every distance of the batch.
        let all = abc_rejection(
            &log,
            &PriorSpec::default(),
            &truth,
            &AbcConfig { accepted_target: 1000, ..config },
            &mut seeded(2),
        )
        .unwrap();
        let below = all.samples.iter().filter(|s| s.distance < worst_kept).count();
        assert!(below < 50);
    }

    #[test]
    fn reproducible_and_monotone_in_threshold() {
        let truth = OperatorParams::default();
        let log = log_from(&random_inputs(120, 6), &truth);
        let config = AbcConfig { accepted_target: 100_000, batch_size: 4_000, max_batches: 1, ..AbcConfig::default() };
        let a = abc_rejection(&log, &PriorSpec::default(), &truth, &config, &mut seeded(3)).unwrap();
        let b = abc_rejection(&log, &PriorSpec::default(), &truth, &config, &mut seeded(3)).unwrap();
        assert_eq!(a, b);
        let mut prev = 0;
        for threshold in [0.05, 0.2, 0.5, 1.0, 5.0] {
            let out =
                abc_rejection(&log, &PriorSpec::default(), &truth, &AbcConfig { threshold, ..config }, &mut seeded(3))
                    .unwrap();
            assert!(out.accepted >= prev);
            prev = out.accepted;
        }
    }

    #[test]
    fn truth_in_support_is_accepted() {
        let truth = OperatorParams { noise_sigma: 0.0, ..OperatorParams::default() };
        let log = log_from(&random_inputs(250, 7), &truth);
        // A prior collapsed on the truth always reproduces the data exactly.
        let config =
            AbcConfig { threshold: 1e-9, accepted_target: 10, batch_size: 10, max_batches: 1, ..AbcConfig::default() };
        let out = abc_rejection(&log, &PriorSpec::point(&truth), &truth, &config, &mut seeded(4)).unwrap();
        assert!(!out.fallback);
        assert!(out.samples.iter().all(|s| s.distance == 0.0));
    }

    #[test]
    fn noisy_candidates_are_reproducible() {
        let truth = OperatorParams::default();
        let log = log_from(&random_inputs(80, 8), &truth);
        let config = AbcConfig { candidate_noise: true, accepted_target: 50, batch_size: 400, ..AbcConfig::default() };
        let a = abc_rejection(&log, &PriorSpec::default(), &truth, &config, &mut seeded(5)).unwrap();
        let b = abc_rejection(&log, &PriorSpec::default(), &truth, &config, &mut seeded(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn errors() {
        let truth = OperatorParams::default();
        let empty = ObservationLog::new();
        assert_eq!(
            abc_rejection(&empty, &PriorSpec::default(), &truth, &AbcConfig::default(), &mut seeded(1)),
            Err(AbcError::EmptyLog)
        );
        let hidden: ObservationLog =
            [LoggedTrial { reliance: true, agreement: Agreement::Agree, capability: 0.5, observed: false }]
                .into_iter()
                .collect();
        assert_eq!(
            abc_rejection(&hidden, &PriorSpec::default(), &truth, &AbcConfig::default(), &mut seeded(1)),
            Err(AbcError::NothingObserved)
        );
        assert_eq!(point_estimate(&[], &truth), Err(AbcError::EmptyPosterior));
    }

    #[test]
    fn point_estimates() {
        let t = OperatorParams::default();
        let sample = |theta| PosteriorSample { b1: 0.02, b2: 0.03, s: 0.4, theta, distance: 0.0, draw_index: 0 };
        let one = point_estimate(&[sample(0.55)], &t).unwrap();
        assert_eq!((one.b1, one.b2, one.s, one.theta), (0.02, 0.03, 0.4, 0.55));
        let two = point_estimate(&[sample(0.5), sample(0.7)], &t).unwrap();
        assert!((two.theta - 0.6).abs() < 1e-12);
    }

    #[test]
    fn indicator_initialization() {
        let truth = OperatorParams::default();
        let priors = PriorSpec::default();
        let exact =
            init_indicator(Some(&truth), IndicatorInit::Perturb { sigma: 0.0 }, &priors, &mut seeded(1)).unwrap();
        assert_eq!(exact.params, truth);
        let point = PriorSpec::point(&OperatorParams { theta: 0.66, ..truth });
        let drawn = init_indicator(None, IndicatorInit::PriorDraw, &point, &mut seeded(1)).unwrap();
        assert_eq!(drawn.params.theta, 0.66);
        assert_eq!(
            init_indicator(None, IndicatorInit::Perturb { sigma: 0.05 }, &priors, &mut seeded(1)),
            Err(AbcError::NoTruth)
        );
        let edge = OperatorParams { b1: 0.0, s: 1.0, theta: 0.0, ..truth };
        let mut rng = seeded(2);
        for _ in 0..200 {
            let ind = init_indicator(Some(&edge), IndicatorInit::Perturb { sigma: 0.5 }, &priors, &mut rng).unwrap();
            assert!(ind.params.validate().is_ok());
        }
    }
}
