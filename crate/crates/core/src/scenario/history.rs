//! Synthetic snapshot archives with planted operator actions.
//!
//! The week is cut into three-hour slots holding at most one event each.
//! A protective event opens a line 30 min into its slot, raises one load
//! (optionally tripping a generator) from +45 min to +105 min so that the
//! old topology would overload a line, and closes the line again at +2h.
//! A maintenance event takes a line out from +30 min to +2h30 under normal
//! injections.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{debug, info};

use super::dataset::case_rng;
use super::profile::{Curve, LoadProfile};
use super::ScenarioError;
use crate::case_io::{Snapshot, Timestamp};
use crate::grid::{electrical_nodes, Change, GenId, Grid, LineId, LoadId, TopologyAction};
use crate::powerflow::{assess, SecurityCriterion, SecurityIssue, Solver};

pub const SLOT_MINUTES: u32 = 180;
const ACTION_FROM: u32 = 30;
const SURGE_FROM: u32 = 45;
const SURGE_UNTIL: u32 = 105;
const ACTION_UNTIL: u32 = 120;
const MAINTENANCE_UNTIL: u32 = 150;

/// Monday 2 January 2012, 00:00 UTC.
pub const DEFAULT_START: Timestamp = Timestamp(1_325_462_400);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HistoryConfig {
    pub days: u32,
    pub step_minutes: u32,
    /// First snapshot; assumed to fall on a Monday at midnight.
    pub start: Timestamp,
    /// Load level at the profile peak, relative to the base case.
    pub load_scale: f64,
    pub load_profile: LoadProfile,
    pub protective: usize,
    pub maintenance: usize,
    /// Loading ratio of the worst line under a surge without the
    /// protective action.
    pub stress_target: f64,
    pub criterion: SecurityCriterion,
    pub seed: u64,
}

impl Default for HistoryConfig {
    fn default() -> Self {
        HistoryConfig {
            days: 7,
            step_minutes: 5,
            start: DEFAULT_START,
            load_scale: 0.75,
            load_profile: LoadProfile::default(),
            protective: 20,
            maintenance: 20,
            stress_target: 1.02,
            criterion: SecurityCriterion::default(),
            seed: 0,
        }
    }
}

impl HistoryConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::InvalidConfig(m.into()));
        if self.days == 0 {
            return bad("days must be positive");
        }
        if self.step_minutes == 0 || SLOT_MINUTES % self.step_minutes != 0 || 15 % self.step_minutes != 0 {
            return bad("step_minutes must divide 15");
        }
        if !(self.load_scale > 0.0 && self.load_scale.is_finite()) {
            return bad("load_scale must be positive");
        }
        if !self.load_profile.is_valid() {
            return bad("invalid load profile");
        }
        if !self.criterion.is_valid() {
            return bad("invalid security criterion");
        }
        if self.stress_target <= self.criterion.threshold {
            return bad("stress_target must exceed the criterion threshold");
        }
        Ok(())
    }

    pub fn n_slots(&self) -> usize {
        (self.days * 24 * 60 / SLOT_MINUTES) as usize
    }

    pub fn n_snapshots(&self) -> usize {
        (self.days * 24 * 60 / self.step_minutes) as usize
    }

    fn slot_start(&self, slot: usize) -> Timestamp {
        self.start.plus_minutes(slot as u32 * SLOT_MINUTES)
    }

    /// Relative load level at `t`.
    fn level(&self, curve: &Curve, t: Timestamp) -> f64 {
        self.load_scale * curve.at((t.0 - self.start.0) as f64 / 3600.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Protective,
    Maintenance,
}

/// Extra demand at one load, with an optional generator trip.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stress {
    pub load: LoadId,
    /// MW added to the load; reactive power follows its base q/p ratio.
    pub delta_p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gen_trip: Option<GenId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedEvent {
    pub kind: EventKind,
    /// Start of the event's slot.
    pub slot: Timestamp,
    pub action: TopologyAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stress: Option<Stress>,
    /// Line the protective action keeps below its limit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relieved: Option<LineId>,
}

impl PlantedEvent {
    /// Half-open interval during which the action is in place.
    pub fn action_window(&self) -> (Timestamp, Timestamp) {
        let until = match self.kind {
            EventKind::Protective => ACTION_UNTIL,
            EventKind::Maintenance => MAINTENANCE_UNTIL,
        };
        (self.slot.plus_minutes(ACTION_FROM), self.slot.plus_minutes(until))
    }

    pub fn surge_window(&self) -> Option<(Timestamp, Timestamp)> {
        self.stress
            .map(|_| (self.slot.plus_minutes(SURGE_FROM), self.slot.plus_minutes(SURGE_UNTIL)))
    }

    /// First snapshot of the surge.
    pub fn fixture_time(&self) -> Timestamp {
        self.slot.plus_minutes(SURGE_FROM)
    }
}

fn within(t: Timestamp, (a, b): (Timestamp, Timestamp)) -> bool {
    a <= t && t < b
}

fn scaled(base: &Grid, factor: f64) -> Grid {
    let mut g = base.clone();
    for l in &mut g.loads {
        l.p *= factor;
        l.q *= factor;
    }
    for gen in &mut g.generators {
        gen.p_set *= factor;
    }
    g
}

fn apply_stress(g: &mut Grid, base: &Grid, s: &Stress) {
    let b = &base.loads[s.load.index()];
    let ratio = if b.p > 0.0 { b.q / b.p } else { 0.2 };
    let l = &mut g.loads[s.load.index()];
    l.p += s.delta_p;
    l.q += s.delta_p * ratio;
    if let Some(k) = s.gen_trip {
        g.generators[k.index()].in_service = false;
    }
}

fn open(line: LineId) -> TopologyAction {
    TopologyAction::single(Change::LineStatus {
        line,
        in_service: false,
    })
}

fn opened(g: &Grid, line: LineId) -> Grid {
    let mut g = g.clone();
    g.lines[line.index()].in_service = false;
    g
}

/// Grid state at `t` given the planted events.
pub fn snapshot_at(
    base: &Grid,
    config: &HistoryConfig,
    curve: &Curve,
    events: &[PlantedEvent],
    t: Timestamp,
) -> Grid {
    let mut g = scaled(base, config.level(curve, t));
    for e in events {
        if within(t, e.action_window()) {
            g = g.apply(&e.action).unwrap_or(g);
        }
        if let (Some(s), Some(w)) = (&e.stress, e.surge_window()) {
            if within(t, w) {
                apply_stress(&mut g, base, s);
            }
        }
    }
    g
}

/// The counterfactual an advisor should cure: base topology with the
/// injections of the event's first surge snapshot.
pub fn event_fixture(base: &Grid, config: &HistoryConfig, event: &PlantedEvent) -> Grid {
    let curve = config.load_profile.curve();
    let mut g = scaled(base, config.level(&curve, event.fixture_time()));
    if let Some(s) = &event.stress {
        apply_stress(&mut g, base, s);
    }
    g
}

fn issue_keys(issues: &[SecurityIssue]) -> Option<BTreeSet<(LineId, Option<LineId>)>> {
    issues.iter().map(SecurityIssue::key).collect()
}

fn max_ratio<S: Solver + ?Sized>(g: &Grid, solver: &S) -> Option<(f64, LineId)> {
    let sol = solver.solve(g).ok()?;
    g.lines
        .iter()
        .zip(&sol.lines)
        .filter(|(l, _)| l.in_service && l.rating > 0.0)
        .map(|(l, f)| (f.s_max() / l.rating, l.id))
        .max_by(|a, b| a.0.total_cmp(&b.0))
}

struct Planner<'a, S: ?Sized> {
    base: &'a Grid,
    config: &'a HistoryConfig,
    curve: Curve,
    solver: &'a S,
}

impl<S: Solver + ?Sized> Planner<'_, S> {
    fn secure(&self, g: &Grid) -> bool {
        assess(g, &self.config.criterion, self.solver).is_empty()
    }

    fn surge_times(&self, slot: Timestamp) -> Vec<Timestamp> {
        (SURGE_FROM..SURGE_UNTIL)
            .step_by(self.config.step_minutes as usize)
            .map(|m| slot.plus_minutes(m))
            .collect()
    }

    /// Lines whose opening keeps the grid connected and secure at every
    /// load level of the profile.
    fn safe_openings(&self) -> Result<Vec<LineId>, ScenarioError> {
        let (lo, hi) = self.curve.range();
        let levels: Vec<f64> = (0..=8)
            .map(|i| self.config.load_scale * (lo + (hi - lo) * i as f64 / 8.0))
            .collect();
        let grids: Vec<Grid> = levels.iter().map(|&k| scaled(self.base, k)).collect();
        if !grids.iter().all(|g| self.secure(g)) {
            return Err(ScenarioError::InvalidConfig(format!(
                "base grid is insecure at load_scale {}",
                self.config.load_scale
            )));
        }
        let n_comp = electrical_nodes(self.base).n_components;
        let lines: Vec<LineId> = self.base.lines.iter().filter(|l| l.in_service).map(|l| l.id).collect();
        let ok: Vec<bool> = lines
            .par_iter()
            .map(|&c| {
                electrical_nodes(&opened(self.base, c)).n_components == n_comp
                    && grids.iter().all(|g| self.secure(&opened(g, c)))
            })
            .collect();
        Ok(lines.into_iter().zip(ok).filter(|(_, ok)| *ok).map(|(c, _)| c).collect())
    }

    fn stressed_grids(&self, slot: Timestamp, stress: &Stress) -> Vec<Grid> {
        self.surge_times(slot)
            .into_iter()
            .map(|t| {
                let mut g = scaled(self.base, self.config.level(&self.curve, t));
                apply_stress(&mut g, self.base, stress);
                g
            })
            .collect()
    }

    /// Surge size bringing the worst line of the fixture to the target.
    fn calibrate(&self, slot: Timestamp, load: LoadId, gen_trip: Option<GenId>) -> Option<Stress> {
        let target = self.config.stress_target;
        let fixture = |dp: f64| {
            let s = Stress {
                load,
                delta_p: dp,
                gen_trip,
            };
            let mut g = scaled(self.base, self.config.level(&self.curve, slot.plus_minutes(SURGE_FROM)));
            apply_stress(&mut g, self.base, &s);
            max_ratio(&g, self.solver).map(|r| r.0)
        };
        if fixture(0.0)? >= self.config.criterion.threshold {
            return None;
        }
        let mut hi = self.base.total_load_mw().max(1.0);
        if fixture(hi).is_some_and(|r| r < target) {
            return None;
        }
        let mut lo = 0.0;
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            match fixture(mid) {
                Some(r) if r < target => lo = mid,
                _ => hi = mid,
            }
        }
        (fixture(lo)? >= target - 0.01).then_some(Stress {
            load,
            delta_p: lo,
            gen_trip,
        })
    }

    /// Best single-line opening curing every surge snapshot, if it is not
    /// the overloaded line itself.
    fn best_cure(&self, grids: &[Grid], stressed: LineId, safe: &[LineId]) -> Option<LineId> {
        let scores: Vec<Option<f64>> = safe
            .par_iter()
            .map(|&c| {
                if !grids.iter().all(|g| self.secure(&opened(g, c))) {
                    return None;
                }
                max_ratio(&opened(&grids[0], c), self.solver).map(|r| r.0)
            })
            .collect();
        let (best, _) = safe
            .iter()
            .zip(scores)
            .filter_map(|(&c, s)| s.map(|s| (c, s)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))?;
        (best != stressed).then_some(best)
    }

    fn plan_protective(
        &self,
        index: usize,
        slot: Timestamp,
        safe: &[LineId],
        used: &mut BTreeSet<(LoadId, Option<GenId>)>,
    ) -> Result<PlantedEvent, ScenarioError> {
        let mut candidates: Vec<(LoadId, Option<GenId>)> = Vec::new();
        let trips = std::iter::once(None).chain(
            self.base
                .generators
                .iter()
                .filter(|g| g.in_service && !g.slack)
                .map(|g| Some(g.id)),
        );
        for trip in trips {
            candidates.extend(self.base.loads.iter().map(|l| (l.id, trip)));
        }
        let mut rng = case_rng(self.config.seed, index as u64);
        candidates.shuffle(&mut rng);
        for (load, trip) in candidates {
            if used.contains(&(load, trip)) {
                continue;
            }
            let Some(stress) = self.calibrate(slot, load, trip) else {
                continue;
            };
            let grids = self.stressed_grids(slot, &stress);
            let Some((_, stressed)) = max_ratio(&grids[0], self.solver) else {
                continue;
            };
            let Some(cure) = self.best_cure(&grids, stressed, safe) else {
                continue;
            };
            used.insert((load, trip));
            debug!(slot = slot.0, %load, %stressed, %cure, "protective event planned");
            return Ok(PlantedEvent {
                kind: EventKind::Protective,
                slot,
                action: open(cure),
                stress: Some(stress),
                relieved: Some(stressed),
            });
        }
        Err(ScenarioError::UnplantableEvent {
            index,
            reason: "no load surge admits a single-line protective opening".into(),
        })
    }

    /// Openings that never add an issue to a protective event's surge.
    fn maintenance_lines(&self, safe: &[LineId], protective: &[PlantedEvent]) -> Vec<LineId> {
        let busy: BTreeSet<LineId> = protective
            .iter()
            .flat_map(|e| e.relieved.into_iter().chain(e.action.changes().iter().filter_map(|c| match c {
                Change::LineStatus { line, .. } => Some(*line),
                Change::Reassign { .. } => None,
            })))
            .collect();
        let surges: Vec<(Grid, BTreeSet<(LineId, Option<LineId>)>)> = protective
            .iter()
            .flat_map(|e| self.stressed_grids(e.slot, e.stress.as_ref().expect("protective")))
            .filter_map(|g| {
                let keys = issue_keys(&assess(&g, &self.config.criterion, self.solver))?;
                Some((g, keys))
            })
            .collect();
        let candidates: Vec<LineId> = safe.iter().copied().filter(|l| !busy.contains(l)).collect();
        let ok: Vec<bool> = candidates
            .par_iter()
            .map(|&m| {
                surges.iter().all(|(g, keys)| {
                    issue_keys(&assess(&opened(g, m), &self.config.criterion, self.solver))
                        .is_some_and(|k| k.is_subset(keys))
                })
            })
            .collect();
        candidates.into_iter().zip(ok).filter(|(_, ok)| *ok).map(|(m, _)| m).collect()
    }
}

/// Chooses slots, surges and actions for the configured number of
/// protective and maintenance events.
pub fn plan_events<S: Solver + ?Sized>(
    base: &Grid,
    config: &HistoryConfig,
    solver: &S,
) -> Result<Vec<PlantedEvent>, ScenarioError> {
    config.validate()?;
    let n_slots = config.n_slots();
    if config.protective + config.maintenance > n_slots {
        return Err(ScenarioError::TooManyEvents {
            requested: config.protective + config.maintenance,
            slots: n_slots,
        });
    }
    let planner = Planner {
        base,
        config,
        curve: config.load_profile.curve(),
        solver,
    };
    let safe = planner.safe_openings()?;

    // protective actions go before the highest surges of the week
    let mut by_level: Vec<usize> = (0..n_slots).collect();
    let level = |s: usize| config.level(&planner.curve, config.slot_start(s).plus_minutes(SURGE_FROM));
    by_level.sort_by(|&a, &b| level(b).total_cmp(&level(a)).then(a.cmp(&b)));
    let mut protective_slots: Vec<usize> = by_level[..config.protective].to_vec();
    protective_slots.sort_unstable();
    let mut rest: Vec<usize> = by_level[config.protective..].to_vec();
    rest.sort_unstable();
    rest.shuffle(&mut case_rng(config.seed, u64::MAX - 1));
    let mut maintenance_slots: Vec<usize> = rest[..config.maintenance].to_vec();
    maintenance_slots.sort_unstable();

    let mut used = BTreeSet::new();
    let mut events = Vec::new();
    for (i, &s) in protective_slots.iter().enumerate() {
        events.push(planner.plan_protective(i, config.slot_start(s), &safe, &mut used)?);
    }

    if config.maintenance > 0 {
        let mut lines = planner.maintenance_lines(&safe, &events);
        if lines.is_empty() {
            return Err(ScenarioError::UnplantableEvent {
                index: events.len(),
                reason: "no line can be taken out without adding an issue".into(),
            });
        }
        lines.shuffle(&mut case_rng(config.seed, u64::MAX - 2));
        for (i, &s) in maintenance_slots.iter().enumerate() {
            events.push(PlantedEvent {
                kind: EventKind::Maintenance,
                slot: config.slot_start(s),
                action: open(lines[i % lines.len()]),
                stress: None,
                relieved: None,
            });
        }
    }
    events.sort_by_key(|e| e.slot);
    info!(events = events.len(), safe_openings = safe.len(), "events planned");
    Ok(events)
}

#[derive(Clone, Debug)]
pub struct SynthHistory {
    pub snapshots: Vec<Snapshot>,
    /// Ground truth.
    pub events: Vec<PlantedEvent>,
}

/// Builds the archive and checks that each protective event cures the
/// overload its surge would cause and that every snapshot is secure.
pub fn synth_history<S: Solver + ?Sized>(
    base: &Grid,
    events: &[PlantedEvent],
    config: &HistoryConfig,
    solver: &S,
) -> Result<SynthHistory, ScenarioError> {
    config.validate()?;
    let curve = config.load_profile.curve();
    let end = config.start.plus_minutes(config.days * 24 * 60);
    let mut sorted: Vec<PlantedEvent> = events.to_vec();
    sorted.sort_by_key(|e| e.slot);
    for (i, pair) in sorted.windows(2).enumerate() {
        if pair[1].slot < pair[0].slot.plus_minutes(SLOT_MINUTES) {
            return Err(ScenarioError::UnplantableEvent {
                index: i + 1,
                reason: "event slots overlap".into(),
            });
        }
    }

    for (i, e) in sorted.iter().enumerate() {
        let unplantable = |reason: String| ScenarioError::UnplantableEvent { index: i, reason };
        if e.slot < config.start || e.slot.plus_minutes(SLOT_MINUTES) > end {
            return Err(unplantable("slot outside the archive".into()));
        }
        if e.kind != EventKind::Protective {
            continue;
        }
        if e.stress.is_none() {
            return Err(unplantable("protective event without a surge".into()));
        }
        let fixture = event_fixture(base, config, e);
        let before = assess(&fixture, &config.criterion, solver);
        if before.is_empty() {
            return Err(unplantable("the surge overloads nothing".into()));
        }
        if let Some(line) = e.relieved {
            if !before.iter().any(|s| s.line() == Some(line)) {
                return Err(unplantable(format!("the surge does not overload {line}")));
            }
        }
        let after = fixture
            .apply(&e.action)
            .map_err(|err| unplantable(err.to_string()))?;
        if !assess(&after, &config.criterion, solver).is_empty() {
            return Err(unplantable(format!("{} does not cure the surge", e.action)));
        }
    }

    let times: Vec<Timestamp> = (0..config.n_snapshots())
        .map(|k| config.start.plus_minutes(k as u32 * config.step_minutes))
        .collect();
    let snapshots: Vec<Snapshot> = times
        .par_iter()
        .map(|&t| Snapshot {
            timestamp: t,
            grid: snapshot_at(base, config, &curve, &sorted, t),
        })
        .collect();
    let insecure = snapshots
        .par_iter()
        .position_first(|s| !assess(&s.grid, &config.criterion, solver).is_empty());
    if let Some(k) = insecure {
        return Err(ScenarioError::InsecureSnapshot {
            t: snapshots[k].timestamp,
        });
    }
    Ok(SynthHistory {
        snapshots,
        events: sorted,
    })
}
