mod common;
mod fixtures;

use topoadvisor::case_io::{Snapshot, Timestamp};
use topoadvisor::grid::{Change, Grid, LineId, TopologyAction};
use topoadvisor::miner::*;
use topoadvisor::powerflow::{assess, AcSolver, SecurityCriterion};
use topoadvisor::scenario::EventKind;

use common::toy;
use fixtures::planted;

fn corridors(load: f64) -> Grid {
    let mut g = toy(5, &[(1, 2), (1, 3), (2, 4), (3, 4), (4, 5)], &[(4, load)], 200.0);
    g.lines[0].rating = 45.0;
    g
}

fn open(line: u32) -> TopologyAction {
    TopologyAction::single(Change::LineStatus {
        line: LineId(line),
        in_service: false,
    })
}

/// Load rises from 60 to 100 MW while the operator opens the S2 corridor
/// (L2) and, unrelated, the idle line L4.
fn toy_archive() -> Vec<Snapshot> {
    let t0 = Timestamp(1_700_000_000);
    let before = corridors(60.0);
    let after = corridors(100.0)
        .apply(&TopologyAction::new(vec![open(2).changes()[0], open(4).changes()[0]]).unwrap())
        .unwrap();
    vec![
        Snapshot { timestamp: t0, grid: before.clone() },
        Snapshot { timestamp: t0.plus_minutes(5), grid: before },
        Snapshot { timestamp: t0.plus_minutes(10), grid: after },
    ]
}

#[test]
fn finds_the_cure_an_operator_applied() {
    let archive = toy_archive();
    let solver = AcSolver::default();
    let crit = SecurityCriterion::default();
    for s in &archive {
        assert!(assess(&s.grid, &crit, &solver).is_empty());
    }
    let config = MinerConfig {
        windows: WindowSet::new(vec![5, 10]).unwrap(),
        ..MinerConfig::default()
    };
    let result = mine(&archive, &config, &solver);
    // pairs: (t0, 5), (t0, 10), (t5, 5); the last two see the surge
    assert_eq!(result.stats.computed, 3);
    assert_eq!(result.stats.unsafe_grids, 2);
    assert_eq!(result.stats.curable_grids, 2);
    assert_eq!(result.db.len(), 1);
    let rec = &result.db.records[0];
    assert_eq!(rec.action, open(2));
    assert_eq!(rec.issue.line, LineId(0));
    assert_eq!(rec.occurrences, 2);
    assert_eq!(rec.source.t, archive[0].timestamp);
    assert!(rec.post_issues.is_empty());
    assert_eq!(result.stats.merged_duplicates, 1);
    assert_eq!((result.stats.lines_stressed, result.stats.lines_stressed_with_cure), (1, 1));
}

#[test]
fn identity_window_finds_nothing_on_a_secure_archive() {
    let archive = toy_archive();
    let config = MinerConfig {
        windows: WindowSet::identity(),
        ..MinerConfig::default()
    };
    let result = mine(&archive, &config, &AcSolver::default());
    assert_eq!(result.stats.computed, 3);
    assert_eq!(result.stats.unsafe_grids, 0);
    assert!(result.db.is_empty());
}

#[test]
fn missing_snapshots_are_reported_as_gaps() {
    let mut archive = toy_archive();
    archive.remove(1);
    let config = MinerConfig {
        windows: WindowSet::new(vec![5, 10]).unwrap(),
        ..MinerConfig::default()
    };
    let result = mine(&archive, &config, &AcSolver::default());
    assert_eq!(result.stats.gaps, 1);
    assert_eq!(result.gaps, vec![(archive[0].timestamp, 5)]);
    assert_eq!(result.db.len(), 1);
}

#[test]
fn counters_are_consistent() {
    let s = &planted().mined.stats;
    assert!(s.unsafe_grids <= s.computed);
    assert!(s.curable_grids <= s.unsafe_grids);
    assert!(s.lines_stressed_with_cure <= s.lines_stressed);
    assert_eq!(s.distinct_actions, planted().mined.db.len());
    let labels: Vec<&str> = s.table().iter().map(|(l, _)| *l).collect();
    assert_eq!(labels.len(), 6);
}

#[test]
fn recovers_planted_protective_actions_only() {
    let p = planted();
    let db = &p.mined.db;
    let protective: Vec<_> = p.protective().collect();
    let found = protective
        .iter()
        .filter(|e| db.records.iter().any(|r| r.action == e.action && Some(r.issue.line) == e.relieved))
        .count();
    assert!(found * 10 >= protective.len() * 9, "{found}/{}", protective.len());
    for e in p.history.events.iter().filter(|e| e.kind == EventKind::Maintenance) {
        assert!(db.records.iter().all(|r| r.action != e.action), "{}", e.action.fingerprint());
    }
}

#[test]
fn records_cure_their_context() {
    let p = planted();
    let solver = AcSolver::default();
    for r in &p.mined.db.records {
        let g = r.context_grid.as_ref().expect("context kept");
        let before = assess(g, &p.config.criterion, &solver);
        assert!(before.iter().any(|i| i.line() == Some(r.issue.line)));
        let after = assess(&g.apply(&r.action).unwrap(), &p.config.criterion, &solver);
        assert!(after.iter().all(|i| i.line() != Some(r.issue.line)));
    }
}
