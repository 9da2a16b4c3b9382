use std::path::Path;
use std::sync::Arc;

use skilltune::config::{RunConfig, RunParts};
use skilltune::simbench::{self, OracleBehavior, SimBenchHarness};
use skilltune::trainer::{load_latest, RunStatus, Trainer};

fn config(dir: &Path, name: &str) -> RunConfig {
    let mut cfg = RunConfig::simbench(dir.join("sim.jsonl"), OracleBehavior::Mixed, dir.join(name));
    // small batches give several steps per epoch
    cfg.batch_size = 6;
    cfg
}

fn exported(run_dir: &Path) -> (Vec<u8>, Vec<u8>) {
    (
        std::fs::read(run_dir.join("exports/best_skill.md")).unwrap(),
        std::fs::read(run_dir.join("exports/run_report.json")).unwrap(),
    )
}

#[test]
fn interrupted_run_resumes_to_the_same_result() {
    let dir = tempfile::tempdir().unwrap();
    simbench::generate(100, 5, 0.3, 42).unwrap().write(&dir.path().join("sim.jsonl")).unwrap();

    let whole = config(dir.path(), "whole");
    Trainer::new(whole.clone(), RunParts::build(&whole).unwrap()).unwrap().run().unwrap();

    let split = config(dir.path(), "split");
    let mut first = Trainer::new(split.clone(), RunParts::build(&split).unwrap()).unwrap();
    assert!(matches!(first.run_until(Some(5)).unwrap(), RunStatus::Paused { t: 5 }));
    assert!(first.steps_per_epoch() < 5, "pause should fall after an epoch boundary");
    drop(first);

    let saved = load_latest(&split.run_dir).unwrap().unwrap();
    assert_eq!(saved.t, 5);
    assert!(saved.is_consistent());

    let harness = Arc::new(SimBenchHarness::new());
    let mut second = Trainer::resume(split.clone(), RunParts::build_with(&split, Some(harness.clone())).unwrap()).unwrap();
    second.run().unwrap();
    // no selection re-evaluation of the restored current skill
    assert!(harness.calls().first().is_some_and(|c| c.phase == skilltune::backend::Phase::Rollout));

    assert_eq!(exported(&whole.run_dir), exported(&split.run_dir));
}
