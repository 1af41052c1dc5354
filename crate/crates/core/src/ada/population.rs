use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    draw_operator_games, run_operator_session, summarize_games, AdaError, AidMode, GameBank, GameSummary,
    InteractionRecord, Trace,
};
use crate::config::{ConfigError, FieldError, SessionConfig};
use crate::reliance::{self, PriorSpec};
use crate::rng::{self, Purpose};

/// Mean and population standard deviation across operators for one game.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameAggregate {
    pub game_index: u32,
    pub mean_reliance: f64,
    pub std_reliance: f64,
    pub mean_rho: f64,
    pub std_rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub aid_mode: AidMode,
    pub seed: u64,
    pub operators: usize,
    pub games_per_operator: u32,
    pub trials_per_game: u32,
    pub per_game: Vec<GameAggregate>,
    /// Mean of `d` over every trial of every operator.
    pub mean_reliance: f64,
    pub mean_rho: f64,
    pub mean_cumulative_reward: f64,
}

impl Aggregate {
    /// Aggregates complete traces. Operators are weighted equally.
    pub fn of_traces(config: &SessionConfig, traces: &[Trace]) -> Aggregate {
        let parts: Vec<OperatorPart> = traces
            .iter()
            .map(|t| OperatorPart {
                games: t.games.clone(),
                mean_reliance: t.mean_reliance(),
                mean_rho: t.mean_rho(),
                reward: t.cumulative_reward,
            })
            .collect();
        Aggregate::of_parts(config, &parts)
    }

    /// Recomputes the aggregate from exported records alone.
    pub fn of_records(config: &SessionConfig, records: &[InteractionRecord]) -> Aggregate {
        let mut parts = Vec::new();
        let mut start = 0;
        while start < records.len() {
            let op = records[start].operator;
            let end = start + records[start..].iter().take_while(|r| r.operator == op).count();
            let chunk = &records[start..end];
            let n = chunk.len() as f64;
            parts.push(OperatorPart {
                games: summarize_games(chunk),
                mean_reliance: chunk.iter().map(|r| r.reliance as u8 as f64).sum::<f64>() / n,
                mean_rho: chunk.iter().map(|r| r.rho as u8 as f64).sum::<f64>() / n,
                reward: chunk.iter().map(|r| r.payoff).sum(),
            });
            start = end;
        }
        Aggregate::of_parts(config, &parts)
    }

    fn of_parts(config: &SessionConfig, parts: &[OperatorPart]) -> Aggregate {
        let games = parts.iter().map(|t| t.games.len()).max().unwrap_or(0);
        let n = parts.len() as f64;
        let per_game = (0..games)
            .map(|g| {
                let d: Vec<f64> = parts.iter().map(|t| t.games[g].mean_reliance).collect();
                let rho: Vec<f64> = parts.iter().map(|t| t.games[g].mean_rho).collect();
                let (mean_reliance, std_reliance) = mean_std(&d);
                let (mean_rho, std_rho) = mean_std(&rho);
                GameAggregate { game_index: g as u32, mean_reliance, std_reliance, mean_rho, std_rho }
            })
            .collect();
        Aggregate {
            aid_mode: config.aid_mode,
            seed: config.seed,
            operators: parts.len(),
            games_per_operator: config.games_per_operator,
            trials_per_game: config.trials_per_game,
            per_game,
            mean_reliance: parts.iter().map(|p| p.mean_reliance).sum::<f64>() / n,
            mean_rho: parts.iter().map(|p| p.mean_rho).sum::<f64>() / n,
            mean_cumulative_reward: parts.iter().map(|p| p.reward).sum::<f64>() / n,
        }
    }

    /// Mean of the per-game mean `rho` over the games `range` (0-based).
    pub fn mean_rho_over(&self, range: std::ops::Range<usize>) -> f64 {
        let slice = &self.per_game[range];
        slice.iter().map(|g| g.mean_rho).sum::<f64>() / slice.len() as f64
    }
}

struct OperatorPart {
    games: Vec<GameSummary>,
    mean_reliance: f64,
    mean_rho: f64,
    reward: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// A population run: every trace plus the aggregate.
#[derive(Debug, Clone)]
pub struct Population {
    pub traces: Vec<Trace>,
    pub aggregate: Aggregate,
}

/// Simulates `config.operators` operators, each freshly drawn from the
/// operator priors with its own streams. The game bank and each operator's
/// parameters, games and payoff draws depend only on the seed and operator
/// index, so two configs that differ only in aid mode share them.
pub fn run_monte_carlo(config: &SessionConfig) -> Result<Population, AdaError> {
    config.validate()?;
    let bank = GameBank::generate(config)?;
    let traces = (0..config.operators as u32)
        .into_par_iter()
        .map(|op| {
            let mut params_rng = rng::stream(config.seed, op as u64, Purpose::Params);
            let params = reliance::sample_operator_params(&config.operator_priors, &mut params_rng)?;
            let mut games_rng = rng::stream(config.seed, op as u64, Purpose::Games);
            let games = draw_operator_games(&bank.games, config.games_per_operator, &mut games_rng);
            run_operator_session(config, op, params, &games, &bank.bounds)
        })
        .collect::<Result<Vec<_>, AdaError>>()?;
    let aggregate = Aggregate::of_traces(config, &traces);
    Ok(Population { traces, aggregate })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub theta: f64,
    pub s: f64,
    pub b2: f64,
    pub treatment_mean_reliance: f64,
    pub baseline_mean_reliance: f64,
    pub treatment_mean_rho: f64,
    pub baseline_mean_rho: f64,
    pub treatment_reward: f64,
    pub baseline_reward: f64,
    /// `100 * (treatment - baseline) / baseline`; `None` when the baseline
    /// mean is zero.
    pub percent_difference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub treatment: AidMode,
    pub baseline: AidMode,
    pub seed: u64,
    pub operators: usize,
    pub width: f64,
    /// Cells in `theta`-major, then `s`, then `b2` order of the grid axes.
    pub cells: Vec<ComparisonCell>,
}

pub fn percent_difference(treatment: f64, baseline: f64) -> Option<f64> {
    if baseline == 0.0 {
        None
    } else {
        Some(100.0 * (treatment - baseline) / baseline)
    }
}

/// Runs both aid modes over each cell of `config.grid` on identical
/// operator populations.
pub fn compare_methods(config: &SessionConfig) -> Result<ComparisonTable, AdaError> {
    let grid = config.grid.clone().ok_or_else(|| {
        AdaError::Config(ConfigError::Invalid(vec![FieldError {
            field: "grid".into(),
            message: "compare needs a [grid] section".into(),
        }]))
    })?;
    let mut cells = Vec::new();
    for &theta in &grid.theta {
        for &s in &grid.s {
            for &b2 in &grid.b2 {
                let priors = PriorSpec {
                    noise_sigma: config.operator_priors.noise_sigma,
                    ..PriorSpec::centered(theta, s, b2, grid.width)
                };
                let run = |mode: AidMode| {
                    let cell_config = SessionConfig { aid_mode: mode, operator_priors: priors, ..config.clone() };
                    run_monte_carlo(&cell_config).map(|p| p.aggregate)
                };
                let treatment = run(grid.treatment)?;
                let baseline = run(grid.baseline)?;
                cells.push(ComparisonCell {
                    theta,
                    s,
                    b2,
                    treatment_mean_reliance: treatment.mean_reliance,
                    baseline_mean_reliance: baseline.mean_reliance,
                    treatment_mean_rho: treatment.mean_rho,
                    baseline_mean_rho: baseline.mean_rho,
                    treatment_reward: treatment.mean_cumulative_reward,
                    baseline_reward: baseline.mean_cumulative_reward,
                    percent_difference: percent_difference(treatment.mean_reliance, baseline.mean_reliance),
                });
            }
        }
    }
    Ok(ComparisonTable {
        treatment: grid.treatment,
        baseline: grid.baseline,
        seed: config.seed,
        operators: config.operators,
        width: grid.width,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ada::tests::tiny_config;
    use crate::config::GridSpec;
    use crate::reliance::OperatorParams;

    #[test]
    fn single_operator_aggregate_is_its_trace() {
        let config = SessionConfig { operators: 1, ..tiny_config() };
        let pop = run_monte_carlo(&config).unwrap();
        let trace = &pop.traces[0];
        for (g, agg) in trace.games.iter().zip(&pop.aggregate.per_game) {
            assert_eq!(g.mean_reliance, agg.mean_reliance);
            assert_eq!(g.mean_rho, agg.mean_rho);
            assert_eq!(agg.std_reliance, 0.0);
        }
    }

    #[test]
    fn point_priors_without_noise_agree_across_operators() {
        let params = OperatorParams { noise_sigma: 0.0, theta: 0.55, ..OperatorParams::default() };
        let config = SessionConfig {
            operator_priors: PriorSpec::point(&params),
            abc_update_interval_games: 10,
            games_per_operator: 3,
            bank_size: 1,
            ..tiny_config()
        };
        let pop = run_monte_carlo(&config).unwrap();
        // Choices and payoffs still differ across operators, so only the
        // dynamics' spread is bounded.
        for g in &pop.aggregate.per_game {
            assert!(g.std_reliance < 0.5, "{g:?}");
        }
    }

    #[test]
    fn identical_modes_compare_to_zero() {
        let config = SessionConfig {
            operators: 2,
            grid: Some(GridSpec {
                theta: vec![0.6],
                s: vec![0.5],
                b2: vec![0.03],
                treatment: AidMode::Predictive,
                baseline: AidMode::Predictive,
                ..GridSpec::default()
            }),
            ..tiny_config()
        };
        let table = compare_methods(&config).unwrap();
        assert_eq!(table.cells.len(), 1);
        assert_eq!(table.cells[0].percent_difference, Some(0.0));
    }

    #[test]
    fn zero_baseline_is_undefined() {
        assert_eq!(percent_difference(0.5, 0.0), None);
        assert!((percent_difference(0.55, 0.5).unwrap() - 10.0).abs() < 1e-9);
        assert_eq!(percent_difference(0.5, 0.5), Some(0.0));
    }

    #[test]
    fn modes_share_operators_and_payoffs() {
        let base = SessionConfig { operators: 2, ..tiny_config() };
        let a = run_monte_carlo(&SessionConfig { aid_mode: AidMode::Predictive, ..base.clone() }).unwrap();
        let b = run_monte_carlo(&SessionConfig { aid_mode: AidMode::Myopic, ..base }).unwrap();
        for (ta, tb) in a.traces.iter().zip(&b.traces) {
            assert_eq!(ta.params, tb.params);
            // Up to the first differing suggestion both runs are identical on
            // the operator side.
            for (ra, rb) in ta.records.iter().zip(&tb.records) {
                assert_eq!(ra.game_id, rb.game_id);
                if ra.suggestion != rb.suggestion {
                    break;
                }
                assert_eq!(ra.initial, rb.initial);
                assert_eq!(ra.reliance, rb.reliance);
                assert_eq!(ra.payoff, rb.payoff);
            }
        }
    }
}
