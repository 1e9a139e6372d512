//! Shared inputs for the benchmarks.

use topoadvisor::case_io::load_case;
use topoadvisor::miner::{mine, MinerConfig, RemedialDB};
use topoadvisor::powerflow::AcSolver;
use topoadvisor::scenario::{build_dataset, event_fixture, plan_events, synth_history, EventKind, HistoryConfig, SamplingConfig};
use topoadvisor::surrogate::{train, SurrogateModel, TrainConfig};
use topoadvisor::Grid;

pub fn case(name: &str) -> Grid {
    load_case(name).expect("bundled case").grid
}

/// A surrogate with the default architecture, trained briefly: enough for
/// timing, not for accuracy.
pub fn quick_model(grid: &Grid) -> SurrogateModel {
    let sampling = SamplingConfig {
        n_s: 20,
        ..SamplingConfig::default()
    };
    let ds = build_dataset(grid, &sampling, &AcSolver::default()).expect("dataset");
    let training = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    train(&ds, &training).expect("training")
}

/// Overloaded case30 grids from the planted history, with the mined
/// database.
pub fn planted_fixtures() -> (Vec<Grid>, RemedialDB) {
    let base = case("case30");
    let config = HistoryConfig::default();
    let solver = AcSolver::default();
    let events = plan_events(&base, &config, &solver).expect("events");
    let history = synth_history(&base, &events, &config, &solver).expect("history");
    let miner = MinerConfig {
        criterion: config.criterion,
        ..MinerConfig::default()
    };
    let db = mine(&history.snapshots, &miner, &solver).db;
    let fixtures = history
        .events
        .iter()
        .filter(|e| e.kind == EventKind::Protective)
        .map(|e| event_fixture(&base, &config, e))
        .collect();
    (fixtures, db)
}
