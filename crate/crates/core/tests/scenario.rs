mod common;
mod fixtures;

use proptest::prelude::*;
use topoadvisor::grid::{Grid, LineId};
use topoadvisor::powerflow::{assess, AcSolver, SecurityCriterion, Solver};
use topoadvisor::scenario::*;

use common::{case30, toy};
use fixtures::planted;

fn corridors() -> Grid {
    let g = toy(5, &[(1, 2), (1, 3), (2, 4), (3, 4), (4, 5)], &[(4, 80.0), (2, 30.0)], 200.0);
    // a second, capped generator so that dispatch has something to share
    let mut extra = g.generators[0].clone();
    extra.id = topoadvisor::grid::GenId(1);
    extra.sub = topoadvisor::grid::SubId(3);
    extra.slack = false;
    extra.p_max = 50.0;
    extra.p_set = 20.0;
    let mut gens = g.generators.clone();
    gens.push(extra);
    Grid::from_parts(g.base_mva, g.buses.clone(), g.lines.clone(), gens, g.loads.clone()).unwrap()
}

fn small(n_s: usize, seed: u64) -> SamplingConfig {
    SamplingConfig {
        n_s,
        seed,
        ..SamplingConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn samples_respect_the_configuration(seed in any::<u64>(), outage in 0usize..41) {
        let grid = case30();
        let config = SamplingConfig { gen_outage_prob: 0.3, ..SamplingConfig::default() };
        let outage = Some(LineId(outage as u32));
        let g = sample_case(&grid, outage, &config, &mut case_rng(seed, 0)).unwrap();
        prop_assert!(!g.lines[outage.unwrap().index()].in_service);
        prop_assert_eq!(g.lines.iter().filter(|l| !l.in_service).count(), 1);
        for l in &g.loads {
            prop_assert!(l.p >= 0.0);
            if l.p > 0.0 {
                let r = l.q / l.p;
                prop_assert!((config.pq_ratio.min - 1e-12..=config.pq_ratio.max + 1e-12).contains(&r));
            }
        }
        prop_assert!(g.generators.iter().any(|x| x.slack && x.in_service));
        let mut cap = 0.0;
        let mut set = 0.0;
        for x in &g.generators {
            prop_assert!(x.p_set >= 0.0 && x.p_set <= x.p_max.max(0.0) + 1e-9);
            if !x.in_service {
                prop_assert_eq!(x.p_set, 0.0);
            } else {
                cap += x.p_max;
                set += x.p_set;
            }
        }
        let total: f64 = g.loads.iter().map(|l| l.p).sum();
        prop_assert!((set - total.min(cap)).abs() < 1e-6 * total.max(1.0));
    }

    #[test]
    fn same_stream_same_sample(seed in any::<u64>(), index in any::<u64>()) {
        let grid = case30();
        let config = SamplingConfig::default();
        let a = sample_case(&grid, None, &config, &mut case_rng(seed, index)).unwrap();
        let b = sample_case(&grid, None, &config, &mut case_rng(seed, index)).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn rejects_bad_sampling_configs() {
    assert!(SamplingConfig { n_s: 0, ..SamplingConfig::default() }.validate().is_err());
    assert!(SamplingConfig { gen_outage_prob: 1.0, ..SamplingConfig::default() }.validate().is_err());
    assert!(SamplingConfig { noise_rel: -0.1, ..SamplingConfig::default() }.validate().is_err());
    let grid = case30();
    let bad = Some(LineId(999));
    assert!(matches!(
        sample_case(&grid, bad, &SamplingConfig::default(), &mut case_rng(0, 0)),
        Err(ScenarioError::UnknownLine(_))
    ));
}

#[test]
fn dataset_covers_every_configuration_and_splits_in_halves() {
    let grid = corridors();
    let solver = AcSolver::default();
    let ds = build_dataset(&grid, &small(8, 3), &solver).unwrap();
    assert_eq!(outage_configurations(&grid).len(), 6);
    assert_eq!(ds.cases.len() + ds.diverged, 48);
    let n = ds.cases.len();
    assert_eq!(ds.count(Split::Train), n / 2);
    assert_eq!(ds.count(Split::Valid), n / 4);
    assert_eq!(ds.count(Split::Test), n - n / 2 - n / 4);
    for k in [None, Some(LineId(0)), Some(LineId(4))] {
        assert!(ds.cases.iter().any(|c| c.outage == k));
    }
}

#[test]
fn labels_are_the_load_flow_of_the_stored_state() {
    let grid = corridors();
    let solver = AcSolver::default();
    let ds = build_dataset(&grid, &small(4, 9), &solver).unwrap();
    for case in &ds.cases {
        let g = case.grid(&grid);
        let sol = solver.solve(&g).unwrap();
        let again = LabeledCase::from_solution(&g, case.outage, &sol);
        assert_eq!(again.f_mw, case.f_mw);
        assert_eq!(again.c_v, case.c_v);
        assert_eq!(again.p_q, case.p_q);
        assert_eq!(again.f_a, case.f_a);
    }
}

#[test]
fn dataset_is_deterministic_across_thread_counts() {
    let grid = corridors();
    let solver = AcSolver::default();
    let config = small(6, 11);
    let a = build_dataset(&grid, &config, &solver).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = pool.install(|| build_dataset(&grid, &config, &solver).unwrap());
    assert_eq!(a, b);
    let other = build_dataset(&grid, &small(6, 12), &solver).unwrap();
    assert_ne!(a.cases, other.cases);
}

#[test]
fn dataset_file_round_trip() {
    let grid = corridors();
    let ds = build_dataset(&grid, &small(5, 1), &AcSolver::default()).unwrap();
    let mut buf = Vec::new();
    ds.write(&mut buf).unwrap();
    let back = Dataset::read(&buf[..]).unwrap();
    assert_eq!(back, ds);
    assert!(Dataset::read(&buf[..buf.len() / 2]).is_err());
    assert!(Dataset::read(&b"not a dataset"[..]).is_err());
}

#[test]
fn planted_history_is_secure_and_events_cure_their_surge() {
    let p = planted();
    let solver = AcSolver::default();
    let crit = p.config.criterion;
    assert_eq!(p.protective().count(), p.config.protective);
    assert!(p.config.protective >= 20 && p.config.maintenance >= 20);
    let maintenance = p.history.events.iter().filter(|e| e.kind == EventKind::Maintenance).count();
    assert_eq!(maintenance, p.config.maintenance);
    assert_eq!(p.history.snapshots.len(), p.config.n_snapshots());
    for pair in p.history.snapshots.windows(2) {
        assert_eq!(pair[1].timestamp, pair[0].timestamp.plus_minutes(p.config.step_minutes));
    }
    for snap in p.history.snapshots.iter().step_by(7) {
        assert!(assess(&snap.grid, &crit, &solver).is_empty(), "{:?}", snap.timestamp);
    }
    for (g, e) in p.fixtures() {
        let line = e.relieved.unwrap();
        let before = assess(&g, &crit, &solver);
        assert!(before.iter().any(|i| i.line() == Some(line)));
        let after = assess(&g.apply(&e.action).unwrap(), &crit, &solver);
        assert!(after.is_empty(), "{:?}", after);
    }
}

#[test]
fn history_config_is_checked() {
    let grid = case30();
    let solver = AcSolver::default();
    let too_many = HistoryConfig {
        days: 1,
        protective: 500,
        ..HistoryConfig::default()
    };
    assert!(matches!(
        plan_events(&grid, &too_many, &solver),
        Err(ScenarioError::TooManyEvents { .. })
    ));
    let bad = HistoryConfig {
        criterion: SecurityCriterion::thermal(-1.0),
        ..HistoryConfig::default()
    };
    assert!(bad.validate().is_err());
}
