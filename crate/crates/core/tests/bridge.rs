use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Duration;

use reliance_aid::ada::run_monte_carlo;
use reliance_aid::config::SessionConfig;
use reliance_aid::game::ContextVector;
use reliance_aid::predictor::{ExternalPredictor, PredictError, PredictionInput, Predictor, PredictorKind};
use reliance_aid::reliance::Observation;
use reliance_aid::Choice;

// Predicts the share of A in the history, 0.5 when empty.
const FREQUENCY_CHILD: &str = r#"
import json, sys
print(json.dumps({"proto": "pred-v1"}), flush=True)
for line in sys.stdin:
    req = json.loads(line)
    sels = [h["sel"] for h in req["history"]]
    assert len(req["context"]) == 6
    p = 0.5 if not sels else sels.count("A") / len(sels)
    print(json.dumps({"prob_a": p, "prob_b": 1 - p}), flush=True)
"#;

fn script(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn python(path: &Path) -> Command {
    let mut c = Command::new("python3");
    c.arg(path);
    c
}

fn have_python() -> bool {
    Command::new("python3").arg("--version").output().is_ok_and(|o| o.status.success())
}

fn input(sels: &[Choice]) -> PredictionInput {
    PredictionInput {
        history: sels.iter().map(|&selection| Observation { selection, payoff: 0.5, foregone: 0.25 }).collect(),
        context: ContextVector([0.75, 0.0, 0.25, 1.0, 0.0, 0.2]),
    }
}

#[test]
fn child_answers_requests_in_order() {
    if !have_python() {
        eprintln!("python3 missing, skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let child = script(dir.path(), "freq.py", FREQUENCY_CHILD);
    let mut p = ExternalPredictor::spawn(python(&child), Duration::from_secs(10)).unwrap();
    let empty = p.predict(&input(&[])).unwrap();
    assert_eq!(empty.prob_a, 0.5);
    let mostly_b = p.predict(&input(&[Choice::A, Choice::B, Choice::B, Choice::B])).unwrap();
    assert_eq!(mostly_b.prob_a, 0.25);
    assert_eq!(mostly_b.point, Choice::B);
    assert_eq!(p.name(), "external");
}

#[test]
fn wrong_handshake_is_a_schema_error() {
    if !have_python() {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let child = script(dir.path(), "bad.py", "print('{\"proto\": \"pred-v0\"}', flush=True)\n");
    match ExternalPredictor::spawn(python(&child), Duration::from_secs(10)) {
        Err(PredictError::Schema { reason, .. }) => assert!(reason.contains("pred-v0")),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("handshake accepted"),
    }
}

#[test]
fn unnormalized_reply_is_rejected() {
    if !have_python() {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let child = script(
        dir.path(),
        "skew.py",
        "import sys\nprint('{\"proto\": \"pred-v1\"}', flush=True)\nfor _ in sys.stdin:\n    print('{\"prob_a\": 0.7, \"prob_b\": 0.7}', flush=True)\n",
    );
    let mut p = ExternalPredictor::spawn(python(&child), Duration::from_secs(10)).unwrap();
    assert!(matches!(p.predict(&input(&[])), Err(PredictError::Schema { .. })));
}

#[test]
fn silent_child_times_out() {
    if !have_python() {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let child = script(
        dir.path(),
        "mute.py",
        "import sys, time\nprint('{\"proto\": \"pred-v1\"}', flush=True)\nfor _ in sys.stdin:\n    time.sleep(30)\n",
    );
    let mut p = ExternalPredictor::spawn(python(&child), Duration::from_millis(200)).unwrap();
    assert!(matches!(p.predict(&input(&[])), Err(PredictError::Timeout(_))));
}

#[test]
fn dying_child_is_a_transport_error() {
    let err = ExternalPredictor::spawn(Command::new("true"), Duration::from_secs(10)).err().unwrap();
    assert!(matches!(err, PredictError::Transport(_)), "{err}");
}

#[test]
fn simulation_runs_through_external_predictor() {
    if !have_python() {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let child = script(dir.path(), "freq.py", FREQUENCY_CHILD);
    let mut c = SessionConfig {
        operators: 2,
        games_per_operator: 2,
        trials_per_game: 5,
        abc_update_interval_games: 1,
        bank_size: 10,
        ..SessionConfig::default()
    };
    c.abc.accepted_target = 50;
    c.abc.batch_size = 500;
    c.abc.max_batches = 1;
    c.predictor =
        PredictorKind::External { command: vec!["python3".into(), child.to_str().unwrap().into()], timeout_ms: 10_000 };
    let pop = run_monte_carlo(&c).unwrap();
    for trace in &pop.traces {
        for r in &trace.records {
            // The child sees the initial selections of the current game only.
            assert!((0.0..=1.0).contains(&r.predicted_prob_a));
            if r.trial == 0 {
                assert_eq!(r.predicted_prob_a, 0.5);
            }
        }
    }
    assert_eq!(pop.traces.iter().map(|t| t.records.len()).sum::<usize>(), 20);
}
