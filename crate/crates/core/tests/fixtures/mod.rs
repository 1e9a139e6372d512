//! Planted-event history and its mined database, built once per test
//! binary.

#![allow(dead_code)]

use std::sync::OnceLock;

use topoadvisor::grid::Grid;
use topoadvisor::miner::{mine, MinerConfig, MiningResult};
use topoadvisor::powerflow::AcSolver;
use topoadvisor::scenario::{event_fixture, plan_events, synth_history, EventKind, HistoryConfig, PlantedEvent, SynthHistory};

pub struct Planted {
    pub base: Grid,
    pub config: HistoryConfig,
    pub history: SynthHistory,
    pub mined: MiningResult,
}

impl Planted {
    pub fn protective(&self) -> impl Iterator<Item = &PlantedEvent> {
        self.history.events.iter().filter(|e| e.kind == EventKind::Protective)
    }

    /// Overloaded grids each protective event was planted to cure, with the
    /// event.
    pub fn fixtures(&self) -> Vec<(Grid, &PlantedEvent)> {
        self.protective()
            .map(|e| (event_fixture(&self.base, &self.config, e), e))
            .collect()
    }
}

pub fn planted() -> &'static Planted {
    static CELL: OnceLock<Planted> = OnceLock::new();
    CELL.get_or_init(|| {
        let base = topoadvisor::case_io::load_builtin("case30").unwrap().grid;
        let config = HistoryConfig::default();
        let solver = AcSolver::default();
        let events = plan_events(&base, &config, &solver).expect("events plant");
        let history = synth_history(&base, &events, &config, &solver).expect("history builds");
        let miner = MinerConfig {
            criterion: config.criterion,
            ..MinerConfig::default()
        };
        let mined = mine(&history.snapshots, &miner, &solver);
        Planted {
            base,
            config,
            history,
            mined,
        }
    })
}
