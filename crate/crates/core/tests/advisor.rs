mod common;
mod fixtures;

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicBool, Ordering};

use proptest::prelude::*;
use topoadvisor::advisor::*;
use topoadvisor::grid::{Busbar, Change, ElementId, Grid, LineId, LoadId, SubId, TopologyAction};
use topoadvisor::miner::{RemedialDB, RemedialRecord, Source};
use topoadvisor::case_io::Timestamp;
use topoadvisor::powerflow::*;

use common::{case30, toy};
use fixtures::planted;

static SOLVER: std::sync::LazyLock<AcSolver> = std::sync::LazyLock::new(AcSolver::default);

/// Two parallel corridors from S1 to the load at S4, `S1-S2-S4` and
/// `S1-S3-S4`, plus a dangling line to an empty S5.
fn corridors(ratings: [f64; 4]) -> Grid {
    let mut g = toy(5, &[(1, 2), (1, 3), (2, 4), (3, 4), (4, 5)], &[(4, 100.0)], 200.0);
    for (l, r) in g.lines.iter_mut().zip(ratings) {
        l.rating = r;
    }
    g
}

fn off(line: u32) -> TopologyAction {
    TopologyAction::single(Change::LineStatus {
        line: LineId(line),
        in_service: false,
    })
}

fn keys(issues: &[SecurityIssue]) -> BTreeSet<IssueKey> {
    issues.iter().map(IssueKey::of).collect()
}

fn crit() -> SecurityCriterion {
    SecurityCriterion::default()
}

#[test]
fn enumerates_reassignments_then_toggles() {
    let g = corridors([200.0; 4]);
    // S4: three line ends and one load, all on busbar 1
    let actions = enumerate_actions(&g, SubId(4));
    assert_eq!(actions.len(), 7);
    let reassign = actions
        .iter()
        .filter(|a| matches!(a.changes()[0], Change::Reassign { busbar: Busbar::Two, .. }))
        .count();
    assert_eq!(reassign, 4);
    assert_eq!(actions, enumerate_actions(&g, SubId(4)));

    let mut split = g.clone();
    for a in &actions[..4] {
        split = split.apply(a).unwrap();
    }
    let again = enumerate_actions(&split, SubId(4));
    assert_eq!(again.len(), 7);
    assert!(again[..4]
        .iter()
        .all(|a| matches!(a.changes()[0], Change::Reassign { busbar: Busbar::One, .. })));
    assert!(enumerate_actions(&g, SubId(99)).is_empty());
}

#[test]
fn case30_action_count_is_degree_plus_attachments() {
    let g = case30();
    for bus in &g.buses {
        let d = g.lines.iter().filter(|l| l.from_sub == bus.id || l.to_sub == bus.id).count();
        let inj = g.loads.iter().filter(|l| l.sub == bus.id).count()
            + g.generators.iter().filter(|x| x.sub == bus.id).count();
        assert_eq!(enumerate_actions(&g, bus.id).len(), d + (d + inj), "{}", bus.id);
    }
}

fn record(line: u32, sub: u32, fingerprint_line: u32, t: i64) -> RemedialRecord {
    RemedialRecord {
        issue: ThermalIssue {
            line: LineId(line),
            flow: 110.0,
            limit: 100.0,
            ratio: 1.1,
            contingency: None,
        },
        action: off(fingerprint_line),
        substations: vec![SubId(sub)],
        source: Source { t: Timestamp(t), h: 5 },
        post_issues: Vec::new(),
        occurrences: 1,
        context_grid: None,
    }
}

fn thermal(line: u32) -> SecurityIssue {
    SecurityIssue::Thermal(ThermalIssue {
        line: LineId(line),
        flow: 110.0,
        limit: 100.0,
        ratio: 1.1,
        contingency: None,
    })
}

#[test]
fn ranks_substations_by_record_count() {
    let g = case30();
    let mut records: Vec<RemedialRecord> = (0..5).map(|i| record(10, 12, 20 + i, i as i64)).collect();
    records.extend((0..2).map(|i| record(10, 4, 30 + i, 100 + i as i64)));
    records.push(record(11, 2, 1, 0));
    let db = RemedialDB { records, merged: 0 };
    let ranked = rank_substations(&db, &g, &thermal(10), 4);
    assert_eq!(ranked.len(), 4);
    assert_eq!(&ranked[..2], &[SubId(12), SubId(4)]);
    assert!(!ranked[2..].contains(&SubId(12)));
    assert_eq!(rank_substations(&db, &g, &thermal(10), 1), vec![SubId(12)]);
}

#[test]
fn empty_db_ranks_line_ends_first() {
    let g = case30();
    for line in &g.lines {
        let ranked = rank_substations(&RemedialDB::default(), &g, &thermal(line.id.0), 3);
        assert_eq!(ranked.len(), 3);
        let mut ends = vec![line.from_sub, line.to_sub];
        ends.sort();
        assert_eq!(&ranked[..2], &ends[..]);
    }
    let none = SecurityIssue::NonConvergence {
        contingency: None,
        detail: String::new(),
    };
    assert!(rank_substations(&RemedialDB::default(), &g, &none, 3).is_empty());
}

#[test]
fn cost_is_additive_with_multipliers() {
    let g = corridors([200.0; 4]);
    let mut cost = CostModel::default();
    let a = off(0);
    let b = TopologyAction::single(Change::Reassign {
        sub: SubId(4),
        elem: ElementId::Load(LoadId(0)),
        busbar: Busbar::Two,
    });
    let both = TopologyAction::new(vec![a.changes()[0], b.changes()[0]]).unwrap();
    assert_eq!(cost.action_cost(&g, &a), 1.0);
    assert_eq!(cost.action_cost(&g, &b), 2.0);
    assert_eq!(cost.action_cost(&g, &both), 3.0);
    cost.multipliers.push(SubstationMultiplier { sub: SubId(4), factor: 5.0 });
    assert_eq!(cost.action_cost(&g, &both), 11.0);
    assert_eq!(cost.scaled(2.0).action_cost(&g, &both), 22.0);
    assert!(cost.is_valid());
    cost.line_switch = -1.0;
    assert!(!cost.is_valid());
}

#[test]
fn rejects_an_action_that_moves_the_overload() {
    let g = corridors([45.0, 60.0, 200.0, 60.0]);
    let pre = assess(&g, &crit(), &*SOLVER);
    assert_eq!(keys(&pre), BTreeSet::from([IssueKey::Thermal { line: LineId(0), contingency: None }]));
    let v = validate_action(&g, &off(2), &crit(), false, &*SOLVER);
    let Verdict::Rejected { reason: Rejection::NewIssues { issues } } = &v.verdict else {
        panic!("{:?}", v.verdict);
    };
    let lines: BTreeSet<LineId> = issues.iter().filter_map(|i| i.line()).collect();
    assert_eq!(lines, BTreeSet::from([LineId(1), LineId(3)]));
}

#[test]
fn opening_an_idle_line_keeps_the_issue_set() {
    let g = corridors([45.0, 200.0, 200.0, 200.0]);
    let pre = assess(&g, &crit(), &*SOLVER);
    let v = validate_action(&g, &off(4), &crit(), false, &*SOLVER);
    assert!(matches!(v.verdict, Verdict::Rejected { reason: Rejection::NotCured { .. } }));
    assert_eq!(keys(&v.issues), keys(&pre));
    for (a, b) in v.issues.iter().zip(&pre) {
        let (SecurityIssue::Thermal(a), SecurityIssue::Thermal(b)) = (a, b) else {
            panic!()
        };
        assert!((a.ratio - b.ratio).abs() < 1e-9);
    }
}

#[test]
fn validates_a_cure_and_rejects_islanding() {
    let g = corridors([45.0, 200.0, 200.0, 200.0]);
    assert!(validate_action(&g, &off(0), &crit(), false, &*SOLVER).verdict.is_validated());
    assert!(validate_action(&g, &off(0), &crit(), true, &*SOLVER).verdict.is_validated());
    let cut = TopologyAction::single(Change::Reassign {
        sub: SubId(4),
        elem: ElementId::Load(LoadId(0)),
        busbar: Busbar::Two,
    });
    let v = validate_action(&g, &cut, &crit(), false, &*SOLVER);
    assert_eq!(
        v.verdict,
        Verdict::Rejected {
            reason: Rejection::Islanding {
                elements: vec![ElementId::Load(LoadId(0))]
            }
        }
    );
}

#[test]
fn n_minus_1_recheck_catches_new_contingency_issues() {
    // top path S1-S2-S4, bottom path S1=S3-S4 with a doubled first leg
    let mut g = toy(4, &[(1, 2), (2, 4), (1, 3), (3, 4), (1, 3)], &[(4, 100.0)], 120.0);
    for (l, r) in g.lines.iter_mut().zip([40.0, 120.0, 70.0, 120.0, 70.0]) {
        l.rating = r;
    }
    let thermal_only = validate_action(&g, &off(0), &crit(), false, &*SOLVER);
    assert!(thermal_only.verdict.is_validated(), "{:?}", thermal_only.verdict);
    // with the top path open, losing one of the doubled lines overloads the
    // other
    let with_n1 = validate_action(&g, &off(0), &crit(), true, &*SOLVER);
    let Verdict::Rejected { reason: Rejection::NewIssues { issues } } = &with_n1.verdict else {
        panic!("{:?}", with_n1.verdict);
    };
    assert!(issues.iter().any(|i| IssueKey::of(i)
        == IssueKey::Thermal {
            line: LineId(4),
            contingency: Some(LineId(2))
        }));
}

fn advise_plain(g: &Grid, db: &RemedialDB, cost: &CostModel, opts: &AdviseOptions) -> Advice {
    advise(g, &crit(), None, db, cost, opts, &*SOLVER).unwrap()
}

#[test]
fn secure_grid_needs_no_advice() {
    let g = corridors([200.0; 4]);
    let a = advise_plain(&g, &RemedialDB::default(), &CostModel::default(), &AdviseOptions::default());
    assert_eq!(a.status, AdviceStatus::Secure);
    assert!(a.recommendations.is_empty() && a.tested.is_empty());
    assert_eq!(a.solver_calls, 1);
}

#[test]
fn cheaper_cures_rank_first() {
    let g = corridors([45.0, 200.0, 200.0, 200.0]);
    let a = advise_plain(&g, &RemedialDB::default(), &CostModel::default(), &AdviseOptions::default());
    assert_eq!(a.status, AdviceStatus::Found);
    let costs: Vec<f64> = a.recommendations.iter().map(|r| r.cost).collect();
    assert_eq!(costs[0], 1.0);
    assert!(costs.contains(&2.0));
    assert!(costs.windows(2).all(|w| w[0] <= w[1]));
    for (i, r) in a.recommendations.iter().enumerate() {
        assert_eq!(r.rank, i + 1);
    }
    let swapped = CostModel {
        line_switch: 2.0,
        busbar_switch: 1.0,
        multipliers: Vec::new(),
    };
    let b = advise_plain(&g, &RemedialDB::default(), &swapped, &AdviseOptions::default());
    assert!(matches!(b.recommendations[0].action.changes()[0], Change::Reassign { .. }));
}

#[test]
fn budget_caps_solver_calls() {
    let g = corridors([45.0, 200.0, 200.0, 200.0]);
    let opts = AdviseOptions {
        budget: Some(3),
        ..AdviseOptions::default()
    };
    let a = advise_plain(&g, &RemedialDB::default(), &CostModel::default(), &opts);
    assert!(a.budget_exhausted);
    assert!(a.solver_calls <= 3);
    assert_eq!(a.tested.len(), 2);
}

#[test]
fn unavailable_elements_are_not_switched() {
    let g = corridors([45.0, 200.0, 200.0, 200.0]);
    let opts = AdviseOptions {
        unavailable: vec![ElementId::Line(LineId(0))],
        ..AdviseOptions::default()
    };
    let a = advise_plain(&g, &RemedialDB::default(), &CostModel::default(), &opts);
    assert!(a.tested.iter().all(|t| !t.action.changes().iter().any(|c| match *c {
        Change::LineStatus { line, .. } => line == LineId(0),
        Change::Reassign { elem, .. } => elem == ElementId::Line(LineId(0)),
    })));
    assert!(!a.recommendations.is_empty());
}

#[test]
fn cancellation_stops_after_the_current_validation() {
    let g = corridors([45.0, 200.0, 200.0, 200.0]);
    let stop = AtomicBool::new(false);
    let mut seen = 0;
    let mut observer = |e: AdviceEvent<'_>| {
        if let AdviceEvent::Tested(_) = e {
            seen += 1;
            stop.store(true, Ordering::SeqCst);
        }
    };
    let control = Control {
        cancel: Some(&stop),
        observer: Some(&mut observer),
    };
    let a = advise_with(
        &g,
        &crit(),
        None,
        &RemedialDB::default(),
        &CostModel::default(),
        &AdviseOptions::default(),
        &*SOLVER,
        control,
    )
    .unwrap();
    assert!(a.cancelled);
    assert_eq!(a.tested.len(), 1);
    assert_eq!(seen, 1);
}

#[test]
fn rejects_bad_options() {
    let g = corridors([45.0, 200.0, 200.0, 200.0]);
    let db = RemedialDB::default();
    let k0 = AdviseOptions { k: 0, ..AdviseOptions::default() };
    assert!(matches!(
        advise(&g, &crit(), None, &db, &CostModel::default(), &k0, &*SOLVER),
        Err(AdviceError::InvalidOptions(_))
    ));
}

#[test]
fn planted_cures_rank_first() {
    let p = planted();
    let mut hits = 0;
    let fixtures = p.fixtures();
    for (g, e) in &fixtures {
        let a = advise_plain(g, &p.mined.db, &CostModel::default(), &AdviseOptions::default());
        if a.recommendations.first().map(|r| &r.action) == Some(&e.action) {
            hits += 1;
        }
        let pre = keys(&a.issues);
        for r in &a.recommendations {
            let after = g.apply(&r.action).unwrap();
            let post = assess(&after, &crit(), &*SOLVER);
            assert!(post.iter().all(|i| pre.contains(&IssueKey::of(i))));
            assert!(post.iter().all(|i| !matches!(i, SecurityIssue::Thermal(t) if t.contingency.is_none())));
        }
    }
    assert!(hits * 5 >= fixtures.len() * 4, "{hits}/{}", fixtures.len());
}

#[test]
fn top_substation_hosts_the_planted_cure() {
    let p = planted();
    let fixtures = p.fixtures();
    let mut hits = 0;
    for (g, e) in &fixtures {
        let issue = assess(g, &crit(), &*SOLVER)
            .into_iter()
            .find(|i| i.line() == e.relieved)
            .unwrap();
        let top = rank_substations(&p.mined.db, g, &issue, 1)[0];
        if enumerate_actions(g, top).contains(&e.action) {
            hits += 1;
        }
    }
    assert!(hits * 5 >= fixtures.len() * 4, "{hits}/{}", fixtures.len());
}

#[test]
fn advice_is_deterministic() {
    let p = planted();
    let (g, _) = &p.fixtures()[0];
    let a = advise_plain(g, &p.mined.db, &CostModel::default(), &AdviseOptions::default());
    let b = advise_plain(g, &p.mined.db, &CostModel::default(), &AdviseOptions::default());
    assert_eq!(a, b);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

fn order(a: &Advice) -> Vec<String> {
    a.recommendations.iter().map(|r| r.action.fingerprint()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn cost_scaling_keeps_the_order(idx in 0usize..20, exp in -3.0f64..3.0, busbar in 0.5f64..4.0) {
        let p = planted();
        let fixtures = p.fixtures();
        let (g, _) = &fixtures[idx % fixtures.len()];
        let cost = CostModel { line_switch: 1.0, busbar_switch: busbar, multipliers: Vec::new() };
        let opts = AdviseOptions::default();
        let a = advise_plain(g, &p.mined.db, &cost, &opts);
        let b = advise_plain(g, &p.mined.db, &cost.scaled(10f64.powf(exp)), &opts);
        prop_assert_eq!(order(&a), order(&b));
    }

    #[test]
    fn more_substations_only_add_recommendations(idx in 0usize..20, k in 1usize..4) {
        let p = planted();
        let fixtures = p.fixtures();
        let (g, _) = &fixtures[idx % fixtures.len()];
        let at = |k| {
            let opts = AdviseOptions { k, ..AdviseOptions::default() };
            order(&advise_plain(g, &p.mined.db, &CostModel::default(), &opts))
                .into_iter()
                .collect::<BTreeSet<_>>()
        };
        prop_assert!(at(k).is_subset(&at(k + 1)));
    }
}
