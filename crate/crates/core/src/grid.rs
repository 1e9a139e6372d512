//! Network data model with double-busbar substations and the topology-action
//! operator.
//!
//! Every bus of a source case becomes a [`Substation`] with two busbars.
//! Lines, generators and loads are attached to one busbar of their
//! substation; the electrical nodes of the network are the busbars that hold
//! at least one in-service element.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("unknown element: {0}")]
    UnknownElement(String),
    #[error("conflicting changes on {0}")]
    ConflictingChanges(String),
    #[error("a topology action needs at least one change")]
    EmptyAction,
    #[error("grids do not share the same element set: {0}")]
    MismatchedGrids(String),
    #[error("invalid grid: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, GridError>;

macro_rules! id_newtype {
    ($name:ident, $prefix:literal) => {
        #[derive(
            Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl $name {
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_newtype!(SubId, "S");
id_newtype!(LineId, "L");
id_newtype!(GenId, "G");
id_newtype!(LoadId, "D");

/// An element that can be attached to a busbar.
///
/// Serialized as a short tag: `L7` for a line end, `G2` for a generator and
/// `D3` for a load.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ElementId {
    Line(LineId),
    Gen(GenId),
    Load(LoadId),
}

impl fmt::Display for ElementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ElementId::Line(id) => id.fmt(f),
            ElementId::Gen(id) => id.fmt(f),
            ElementId::Load(id) => id.fmt(f),
        }
    }
}

impl FromStr for ElementId {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || GridError::UnknownElement(s.to_string());
        let mut chars = s.chars();
        let tag = chars.next().ok_or_else(bad)?;
        let num: u32 = chars.as_str().parse().map_err(|_| bad())?;
        match tag {
            'L' => Ok(ElementId::Line(LineId(num))),
            'G' => Ok(ElementId::Gen(GenId(num))),
            'D' => Ok(ElementId::Load(LoadId(num))),
            _ => Err(bad()),
        }
    }
}

impl Serialize for ElementId {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ElementId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum Busbar {
    #[default]
    One,
    Two,
}

impl Busbar {
    pub fn other(self) -> Busbar {
        match self {
            Busbar::One => Busbar::Two,
            Busbar::Two => Busbar::One,
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Busbar::One => 1,
            Busbar::Two => 2,
        }
    }
}

impl TryFrom<u8> for Busbar {
    type Error = GridError;

    fn try_from(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Busbar::One),
            2 => Ok(Busbar::Two),
            _ => Err(GridError::Invalid(format!("busbar must be 1 or 2, got {n}"))),
        }
    }
}

impl Serialize for Busbar {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_u8(self.number())
    }
}

impl<'de> Deserialize<'de> for Busbar {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let n = u8::deserialize(deserializer)?;
        Busbar::try_from(n).map_err(serde::de::Error::custom)
    }
}

/// Static electrical data of a bus. Shunts are in MW / MVAr at 1 pu and sit
/// on busbar 1 of the substation (busbar 2 when busbar 1 is empty).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: SubId,
    pub base_kv: f64,
    pub gs: f64,
    pub bs: f64,
    pub v_min: f64,
    pub v_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub id: LineId,
    pub from_sub: SubId,
    pub to_sub: SubId,
    /// Series resistance, pu.
    pub r: f64,
    /// Series reactance, pu.
    pub x: f64,
    /// Total line charging susceptance, pu.
    pub b: f64,
    /// Off-nominal turns ratio at the from end (1.0 for lines).
    pub ratio: f64,
    /// Phase shift, radians.
    pub shift: f64,
    /// Thermal limit, MVA.
    pub rating: f64,
    pub in_service: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub id: GenId,
    pub sub: SubId,
    /// Active set point, MW.
    pub p_set: f64,
    /// Voltage set point, pu.
    pub v_set: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub p_max: f64,
    pub in_service: bool,
    pub slack: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub id: LoadId,
    pub sub: SubId,
    /// MW.
    pub p: f64,
    /// MVAr.
    pub q: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Substation {
    pub id: SubId,
    pub assignment: BTreeMap<ElementId, Busbar>,
}

impl Substation {
    pub fn busbar_of(&self, elem: ElementId) -> Option<Busbar> {
        self.assignment.get(&elem).copied()
    }

    pub fn elements(&self) -> impl Iterator<Item = ElementId> + '_ {
        self.assignment.keys().copied()
    }
}

/// A full network state.
///
/// Element ids equal their position in the element vectors; `buses` and
/// `substations` are sorted by id and aligned index by index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
    pub substations: Vec<Substation>,
}

impl Grid {
    /// Assembles a grid with every element on busbar 1 of its substation.
    pub fn from_parts(
        base_mva: f64,
        buses: Vec<Bus>,
        lines: Vec<Line>,
        generators: Vec<Generator>,
        loads: Vec<Load>,
    ) -> Result<Grid> {
        let mut assign: BTreeMap<SubId, BTreeMap<ElementId, Busbar>> =
            buses.iter().map(|b| (b.id, BTreeMap::new())).collect();
        let mut put = |sub: SubId, elem: ElementId| match assign.get_mut(&sub) {
            Some(a) => {
                a.insert(elem, Busbar::One);
                Ok(())
            }
            None => Err(GridError::Invalid(format!("{elem} references unknown substation {sub}"))),
        };
        for l in &lines {
            put(l.from_sub, ElementId::Line(l.id))?;
            put(l.to_sub, ElementId::Line(l.id))?;
        }
        for g in &generators {
            put(g.sub, ElementId::Gen(g.id))?;
        }
        for d in &loads {
            put(d.sub, ElementId::Load(d.id))?;
        }
        let grid = Grid {
            base_mva,
            buses,
            lines,
            generators,
            loads,
            substations: assign
                .into_iter()
                .map(|(id, assignment)| Substation { id, assignment })
                .collect(),
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Checks the structural invariants of the model.
    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(GridError::Invalid(msg));
        if !(self.base_mva > 0.0) {
            return invalid(format!("base_mva must be positive, got {}", self.base_mva));
        }
        if self.buses.len() != self.substations.len() {
            return invalid("bus and substation counts differ".into());
        }
        for (i, (bus, sub)) in self.buses.iter().zip(&self.substations).enumerate() {
            if bus.id != sub.id {
                return invalid(format!("bus {} and substation {} misaligned", bus.id, sub.id));
            }
            if i > 0 && self.substations[i - 1].id >= sub.id {
                return invalid("substations must be sorted by id without duplicates".into());
            }
        }
        let mut expected: BTreeMap<SubId, BTreeSet<ElementId>> =
            self.substations.iter().map(|s| (s.id, BTreeSet::new())).collect();
        let mut attach = |sub: SubId, elem: ElementId| -> Result<()> {
            match expected.get_mut(&sub) {
                Some(set) => {
                    set.insert(elem);
                    Ok(())
                }
                None => invalid(format!("{elem} references missing substation {sub}")),
            }
        };
        for (i, line) in self.lines.iter().enumerate() {
            if line.id.index() != i {
                return invalid(format!("line at position {i} has id {}", line.id));
            }
            if line.from_sub == line.to_sub {
                return invalid(format!("{} connects {} to itself", line.id, line.from_sub));
            }
            if line.x == 0.0 {
                return invalid(format!("{} has zero reactance", line.id));
            }
            attach(line.from_sub, ElementId::Line(line.id))?;
            attach(line.to_sub, ElementId::Line(line.id))?;
        }
        let mut slack = 0;
        for (i, gen) in self.generators.iter().enumerate() {
            if gen.id.index() != i {
                return invalid(format!("generator at position {i} has id {}", gen.id));
            }
            if gen.q_min > gen.q_max {
                return invalid(format!("{} has q_min > q_max", gen.id));
            }
            if gen.slack {
                slack += 1;
            }
            attach(gen.sub, ElementId::Gen(gen.id))?;
        }
        if slack != 1 {
            return invalid(format!("exactly one slack generator required, found {slack}"));
        }
        for (i, load) in self.loads.iter().enumerate() {
            if load.id.index() != i {
                return invalid(format!("load at position {i} has id {}", load.id));
            }
            if !load.p.is_finite() || !load.q.is_finite() {
                return invalid(format!("{} has non-finite demand", load.id));
            }
            attach(load.sub, ElementId::Load(load.id))?;
        }
        for sub in &self.substations {
            let assigned: BTreeSet<ElementId> = sub.assignment.keys().copied().collect();
            if assigned != expected[&sub.id] {
                return invalid(format!("substation {} busbar assignment is incomplete", sub.id));
            }
        }
        Ok(())
    }

    pub fn sub_index(&self, id: SubId) -> Option<usize> {
        self.substations.binary_search_by_key(&id, |s| s.id).ok()
    }

    pub fn substation(&self, id: SubId) -> Option<&Substation> {
        self.sub_index(id).map(|i| &self.substations[i])
    }

    pub fn bus(&self, id: SubId) -> Option<&Bus> {
        self.sub_index(id).map(|i| &self.buses[i])
    }

    pub fn line(&self, id: LineId) -> Option<&Line> {
        self.lines.get(id.index())
    }

    pub fn slack_generator(&self) -> Option<&Generator> {
        self.generators.iter().find(|g| g.slack)
    }

    pub fn total_load_mw(&self) -> f64 {
        self.loads.iter().map(|l| l.p).sum()
    }

    /// Whether `elem` is attached to substation `sub`.
    pub fn is_attached(&self, sub: SubId, elem: ElementId) -> bool {
        match elem {
            ElementId::Line(id) => self
                .line(id)
                .is_some_and(|l| l.from_sub == sub || l.to_sub == sub),
            ElementId::Gen(id) => self.generators.get(id.index()).is_some_and(|g| g.sub == sub),
            ElementId::Load(id) => self.loads.get(id.index()).is_some_and(|l| l.sub == sub),
        }
    }

    pub fn topology(&self) -> Topology {
        Topology {
            lines: self.lines.iter().map(|l| l.in_service).collect(),
            assignments: self
                .substations
                .iter()
                .flat_map(|s| s.assignment.iter().map(move |(e, b)| (s.id, *e, *b)))
                .collect(),
        }
    }

    pub fn injections(&self) -> Injections {
        Injections {
            loads: self
                .loads
                .iter()
                .map(|l| LoadInjection { id: l.id, p: l.p, q: l.q })
                .collect(),
            gens: self
                .generators
                .iter()
                .map(|g| GenInjection {
                    id: g.id,
                    p_set: g.p_set,
                    v_set: g.v_set,
                    in_service: g.in_service,
                })
                .collect(),
        }
    }

    /// Returns a copy of the grid with the given injections, matched by
    /// element id. Injections for unknown elements are skipped; the number
    /// skipped is returned alongside.
    pub fn with_injections(&self, inj: &Injections) -> (Grid, usize) {
        let mut grid = self.clone();
        let mut dropped = 0;
        for l in &inj.loads {
            match grid.loads.get_mut(l.id.index()) {
                Some(load) => {
                    load.p = l.p;
                    load.q = l.q;
                }
                None => dropped += 1,
            }
        }
        for g in &inj.gens {
            match grid.generators.get_mut(g.id.index()) {
                Some(gen) => {
                    gen.p_set = g.p_set;
                    gen.v_set = g.v_set;
                    gen.in_service = g.in_service;
                }
                None => dropped += 1,
            }
        }
        (grid, dropped)
    }

    /// Returns a copy of the grid carrying `topo`.
    pub fn with_topology(&self, topo: &Topology) -> Result<Grid> {
        if topo.lines.len() != self.lines.len() {
            return Err(GridError::MismatchedGrids(format!(
                "topology has {} lines, grid has {}",
                topo.lines.len(),
                self.lines.len()
            )));
        }
        let mut grid = self.clone();
        for (line, &status) in grid.lines.iter_mut().zip(&topo.lines) {
            line.in_service = status;
        }
        for &(sub, elem, busbar) in &topo.assignments {
            let idx = grid
                .sub_index(sub)
                .ok_or_else(|| GridError::UnknownElement(sub.to_string()))?;
            match grid.substations[idx].assignment.get_mut(&elem) {
                Some(b) => *b = busbar,
                None => return Err(GridError::UnknownElement(format!("{sub}/{elem}"))),
            }
        }
        Ok(grid)
    }

    /// Applies a topology action, returning the modified grid.
    pub fn apply(&self, action: &TopologyAction) -> Result<Grid> {
        apply_action(self, action)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadInjection {
    pub id: LoadId,
    pub p: f64,
    pub q: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenInjection {
    pub id: GenId,
    pub p_set: f64,
    pub v_set: f64,
    pub in_service: bool,
}

/// Loads and generator set points of a grid state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Injections {
    pub loads: Vec<LoadInjection>,
    pub gens: Vec<GenInjection>,
}

/// Switchable state of a grid: line statuses and busbar assignments.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Topology {
    pub lines: Vec<bool>,
    pub assignments: Vec<(SubId, ElementId, Busbar)>,
}

impl Topology {
    /// Hex digest identifying this topology.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for &s in &self.lines {
            hasher.update([s as u8]);
        }
        for (sub, elem, bar) in &self.assignments {
            hasher.update(format!("{sub}/{elem}={};", bar.number()).as_bytes());
        }
        hasher
            .finalize()
            .iter()
            .take(16)
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// One element-level switching operation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Change {
    LineStatus {
        line: LineId,
        in_service: bool,
    },
    Reassign {
        sub: SubId,
        elem: ElementId,
        busbar: Busbar,
    },
}

/// The switchable attribute a change writes to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ChangeTarget {
    LineStatus(LineId),
    Slot(SubId, ElementId),
}

impl fmt::Display for ChangeTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChangeTarget::LineStatus(l) => write!(f, "{l} status"),
            ChangeTarget::Slot(s, e) => write!(f, "{s}/{e}"),
        }
    }
}

impl Change {
    pub fn target(&self) -> ChangeTarget {
        match *self {
            Change::LineStatus { line, .. } => ChangeTarget::LineStatus(line),
            Change::Reassign { sub, elem, .. } => ChangeTarget::Slot(sub, elem),
        }
    }

    /// Substation the change is operated from. Line switching is attributed
    /// to the line's from end.
    pub fn substation(&self, grid: &Grid) -> Option<SubId> {
        match *self {
            Change::LineStatus { line, .. } => grid.line(line).map(|l| l.from_sub),
            Change::Reassign { sub, .. } => Some(sub),
        }
    }

    fn fingerprint(&self) -> String {
        match *self {
            Change::LineStatus { line, in_service } => {
                format!("{line}:{}", if in_service { "on" } else { "off" })
            }
            Change::Reassign { sub, elem, busbar } => format!("{sub}/{elem}:{}", busbar.number()),
        }
    }
}

impl fmt::Display for Change {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.fingerprint())
    }
}

#[derive(Deserialize)]
struct RawAction {
    changes: Vec<Change>,
}

/// A non-empty set of changes, each targeting a distinct attribute. Changes
/// are kept sorted by target so equal sets compare equal.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawAction")]
pub struct TopologyAction {
    changes: Vec<Change>,
}

impl TryFrom<RawAction> for TopologyAction {
    type Error = GridError;

    fn try_from(raw: RawAction) -> Result<Self> {
        TopologyAction::new(raw.changes)
    }
}

impl TopologyAction {
    pub fn new(mut changes: Vec<Change>) -> Result<Self> {
        if changes.is_empty() {
            return Err(GridError::EmptyAction);
        }
        changes.sort_by_key(|c| c.target());
        for pair in changes.windows(2) {
            if pair[0].target() == pair[1].target() {
                return Err(GridError::ConflictingChanges(pair[0].target().to_string()));
            }
        }
        Ok(TopologyAction { changes })
    }

    pub fn single(change: Change) -> Self {
        TopologyAction {
            changes: vec![change],
        }
    }

    pub fn changes(&self) -> &[Change] {
        &self.changes
    }

    pub fn len(&self) -> usize {
        self.changes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.changes.is_empty()
    }

    /// Canonical text form, e.g. `L7:off;S12/G3:2`.
    pub fn fingerprint(&self) -> String {
        self.changes
            .iter()
            .map(Change::fingerprint)
            .collect::<Vec<_>>()
            .join(";")
    }

    /// Substations touched by the action.
    pub fn substations(&self, grid: &Grid) -> Vec<SubId> {
        let set: BTreeSet<SubId> = self
            .changes
            .iter()
            .filter_map(|c| c.substation(grid))
            .collect();
        set.into_iter().collect()
    }

    /// The action restoring `grid`'s current values for every target.
    pub fn inverse_on(&self, grid: &Grid) -> Result<TopologyAction> {
        let changes = self
            .changes
            .iter()
            .map(|c| match *c {
                Change::LineStatus { line, .. } => grid
                    .line(line)
                    .map(|l| Change::LineStatus {
                        line,
                        in_service: l.in_service,
                    })
                    .ok_or_else(|| GridError::UnknownElement(line.to_string())),
                Change::Reassign { sub, elem, .. } => grid
                    .substation(sub)
                    .and_then(|s| s.busbar_of(elem))
                    .map(|busbar| Change::Reassign { sub, elem, busbar })
                    .ok_or_else(|| GridError::UnknownElement(format!("{sub}/{elem}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TopologyAction { changes })
    }

    /// All sub-actions of cardinality `1..=max_cardinality`, by cardinality
    /// then by target order.
    pub fn subsets(&self, max_cardinality: usize) -> Vec<TopologyAction> {
        let n = self.changes.len();
        let mut out = Vec::new();
        for k in 1..=max_cardinality.min(n) {
            let mut idx: Vec<usize> = (0..k).collect();
            loop {
                out.push(TopologyAction {
                    changes: idx.iter().map(|&i| self.changes[i]).collect(),
                });
                // advance to the next k-combination in lexicographic order
                let mut i = k;
                while i > 0 && idx[i - 1] == n - k + i - 1 {
                    i -= 1;
                }
                if i == 0 {
                    break;
                }
                idx[i - 1] += 1;
                for j in i..k {
                    idx[j] = idx[j - 1] + 1;
                }
            }
        }
        out
    }
}

impl fmt::Display for TopologyAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.fingerprint())
    }
}

/// Applies `action` to `grid`; the input is left untouched.
pub fn apply_action(grid: &Grid, action: &TopologyAction) -> Result<Grid> {
    let mut seen = BTreeSet::new();
    for c in &action.changes {
        if !seen.insert(c.target()) {
            return Err(GridError::ConflictingChanges(c.target().to_string()));
        }
    }
    let mut out = grid.clone();
    for change in &action.changes {
        match *change {
            Change::LineStatus { line, in_service } => {
                let l = out
                    .lines
                    .get_mut(line.index())
                    .ok_or_else(|| GridError::UnknownElement(line.to_string()))?;
                l.in_service = in_service;
            }
            Change::Reassign { sub, elem, busbar } => {
                let slot = out
                    .sub_index(sub)
                    .and_then(|i| out.substations[i].assignment.get_mut(&elem))
                    .ok_or_else(|| GridError::UnknownElement(format!("{sub}/{elem}")))?;
                *slot = busbar;
            }
        }
    }
    Ok(out)
}

/// Topological changes turning `a` into `b`, or `None` when both share the
/// same topology.
pub fn topo_diff(a: &Grid, b: &Grid) -> Result<Option<TopologyAction>> {
    if a.lines.len() != b.lines.len() {
        return Err(GridError::MismatchedGrids(format!(
            "{} vs {} lines",
            a.lines.len(),
            b.lines.len()
        )));
    }
    if a.substations.len() != b.substations.len() {
        return Err(GridError::MismatchedGrids(format!(
            "{} vs {} substations",
            a.substations.len(),
            b.substations.len()
        )));
    }
    let mut changes = Vec::new();
    for (la, lb) in a.lines.iter().zip(&b.lines) {
        if la.in_service != lb.in_service {
            changes.push(Change::LineStatus {
                line: lb.id,
                in_service: lb.in_service,
            });
        }
    }
    for (sa, sb) in a.substations.iter().zip(&b.substations) {
        if sa.id != sb.id || sa.assignment.len() != sb.assignment.len() {
            return Err(GridError::MismatchedGrids(format!(
                "substation {} differs structurally",
                sa.id
            )));
        }
        for ((ea, ba), (eb, bb)) in sa.assignment.iter().zip(&sb.assignment) {
            if ea != eb {
                return Err(GridError::MismatchedGrids(format!(
                    "substation {} holds {ea} vs {eb}",
                    sa.id
                )));
            }
            if ba != bb {
                changes.push(Change::Reassign {
                    sub: sb.id,
                    elem: *eb,
                    busbar: *bb,
                });
            }
        }
    }
    if changes.is_empty() {
        Ok(None)
    } else {
        TopologyAction::new(changes).map(Some)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeKey {
    pub sub: SubId,
    pub busbar: Busbar,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodalEdge {
    pub line: LineId,
    pub from: usize,
    pub to: usize,
}

/// Electrical nodes and connectivity of a grid.
#[derive(Clone, Debug, Default)]
pub struct NodalGraph {
    pub nodes: Vec<NodeKey>,
    pub edges: Vec<NodalEdge>,
    /// Connected-component label of each node.
    pub component: Vec<usize>,
    pub n_components: usize,
    /// Component holding the in-service slack generator.
    pub main: Option<usize>,
    /// Components other than the main one, as node index lists.
    pub islands: Vec<Vec<usize>>,
    index: HashMap<NodeKey, usize>,
}

impl NodalGraph {
    pub fn node(&self, key: NodeKey) -> Option<usize> {
        self.index.get(&key).copied()
    }

    /// Node of an element attached at `sub`, if the node exists.
    pub fn node_of(&self, grid: &Grid, sub: SubId, elem: ElementId) -> Option<usize> {
        let busbar = grid.substation(sub)?.busbar_of(elem)?;
        self.node(NodeKey { sub, busbar })
    }

    pub fn in_main(&self, node: usize) -> bool {
        self.main == Some(self.component[node])
    }
}

/// Resolves the nodal topology: one node per busbar holding an in-service
/// element, one edge per in-service line.
pub fn electrical_nodes(grid: &Grid) -> NodalGraph {
    let mut keys = BTreeSet::new();
    for sub in &grid.substations {
        for (&elem, &busbar) in &sub.assignment {
            let live = match elem {
                ElementId::Line(id) => grid.line(id).is_some_and(|l| l.in_service),
                ElementId::Gen(id) => grid.generators.get(id.index()).is_some_and(|g| g.in_service),
                ElementId::Load(_) => true,
            };
            if live {
                keys.insert(NodeKey { sub: sub.id, busbar });
            }
        }
    }
    let nodes: Vec<NodeKey> = keys.into_iter().collect();
    let index: HashMap<NodeKey, usize> = nodes.iter().enumerate().map(|(i, k)| (*k, i)).collect();

    let mut edges = Vec::new();
    for line in grid.lines.iter().filter(|l| l.in_service) {
        let end = |sub: SubId| {
            grid.substation(sub)
                .and_then(|s| s.busbar_of(ElementId::Line(line.id)))
                .and_then(|busbar| index.get(&NodeKey { sub, busbar }).copied())
        };
        if let (Some(from), Some(to)) = (end(line.from_sub), end(line.to_sub)) {
            edges.push(NodalEdge {
                line: line.id,
                from,
                to,
            });
        }
    }

    let mut parent: Vec<usize> = (0..nodes.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for e in &edges {
        let (a, b) = (find(&mut parent, e.from), find(&mut parent, e.to));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut label = HashMap::new();
    let mut component = Vec::with_capacity(nodes.len());
    for i in 0..nodes.len() {
        let root = find(&mut parent, i);
        let next = label.len();
        component.push(*label.entry(root).or_insert(next));
    }
    let n_components = label.len();

    let mut graph = NodalGraph {
        nodes,
        edges,
        component,
        n_components,
        main: None,
        islands: Vec::new(),
        index,
    };
    graph.main = grid
        .slack_generator()
        .filter(|g| g.in_service)
        .and_then(|g| graph.node_of(grid, g.sub, ElementId::Gen(g.id)))
        .map(|n| graph.component[n]);
    let mut islands = vec![Vec::new(); n_components];
    for (i, &c) in graph.component.iter().enumerate() {
        if Some(c) != graph.main {
            islands[c].push(i);
        }
    }
    graph.islands = islands.into_iter().filter(|v| !v.is_empty()).collect();
    graph
}

/// Every single change that is valid on `grid`: each line's status toggle and
/// each element's move to the other busbar.
pub fn feasible_changes(grid: &Grid) -> Vec<Change> {
    let mut out: Vec<Change> = grid
        .lines
        .iter()
        .map(|l| Change::LineStatus {
            line: l.id,
            in_service: !l.in_service,
        })
        .collect();
    for sub in &grid.substations {
        for (&elem, &busbar) in &sub.assignment {
            out.push(Change::Reassign {
                sub: sub.id,
                elem,
                busbar: busbar.other(),
            });
        }
    }
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Three substations in a triangle, a generator at S1 and a load at S3.
    pub(crate) fn triangle() -> Grid {
        let sub_ids = [1, 2, 3];
        let buses = sub_ids
            .iter()
            .map(|&i| Bus {
                id: SubId(i),
                base_kv: 100.0,
                gs: 0.0,
                bs: 0.0,
                v_min: 0.9,
                v_max: 1.1,
            })
            .collect();
        let mk_line = |i: u32, f: u32, t: u32| Line {
            id: LineId(i),
            from_sub: SubId(f),
            to_sub: SubId(t),
            r: 0.01,
            x: 0.1,
            b: 0.0,
            ratio: 1.0,
            shift: 0.0,
            rating: 100.0,
            in_service: true,
        };
        let lines = vec![mk_line(0, 1, 2), mk_line(1, 2, 3), mk_line(2, 1, 3)];
        let generators = vec![Generator {
            id: GenId(0),
            sub: SubId(1),
            p_set: 50.0,
            v_set: 1.0,
            q_min: -100.0,
            q_max: 100.0,
            p_max: 200.0,
            in_service: true,
            slack: true,
        }];
        let loads = vec![Load {
            id: LoadId(0),
            sub: SubId(3),
            p: 50.0,
            q: 10.0,
        }];
        Grid::from_parts(100.0, buses, lines, generators, loads).unwrap()
    }

    #[test]
    fn triangle_is_valid() {
        triangle().validate().unwrap();
    }

    #[test]
    fn element_id_text_round_trip() {
        for e in [
            ElementId::Line(LineId(7)),
            ElementId::Gen(GenId(0)),
            ElementId::Load(LoadId(12)),
        ] {
            assert_eq!(e.to_string().parse::<ElementId>().unwrap(), e);
        }
        assert!("X3".parse::<ElementId>().is_err());
        assert!("L".parse::<ElementId>().is_err());
    }

    #[test]
    fn toggling_a_line_off() {
        let g = triangle();
        let a = TopologyAction::single(Change::LineStatus {
            line: LineId(1),
            in_service: false,
        });
        let out = apply_action(&g, &a).unwrap();
        assert!(!out.lines[1].in_service);
        assert!(g.lines[1].in_service, "input must not be modified");
        assert_eq!(apply_action(&out, &a).unwrap(), out, "idempotent");
    }

    #[test]
    fn inverse_restores_topology() {
        let g = triangle();
        let a = TopologyAction::new(vec![
            Change::LineStatus {
                line: LineId(0),
                in_service: false,
            },
            Change::Reassign {
                sub: SubId(3),
                elem: ElementId::Load(LoadId(0)),
                busbar: Busbar::Two,
            },
        ])
        .unwrap();
        let inv = a.inverse_on(&g).unwrap();
        let back = apply_action(&apply_action(&g, &a).unwrap(), &inv).unwrap();
        assert_eq!(back.topology(), g.topology());
    }

    #[test]
    fn unknown_and_conflicting_changes_are_rejected() {
        let g = triangle();
        let bad = TopologyAction::single(Change::LineStatus {
            line: LineId(99),
            in_service: false,
        });
        assert!(matches!(apply_action(&g, &bad), Err(GridError::UnknownElement(_))));
        let not_here = TopologyAction::single(Change::Reassign {
            sub: SubId(2),
            elem: ElementId::Load(LoadId(0)),
            busbar: Busbar::Two,
        });
        assert!(matches!(apply_action(&g, &not_here), Err(GridError::UnknownElement(_))));
        let conflict = TopologyAction::new(vec![
            Change::LineStatus {
                line: LineId(0),
                in_service: false,
            },
            Change::LineStatus {
                line: LineId(0),
                in_service: true,
            },
        ]);
        assert!(matches!(conflict, Err(GridError::ConflictingChanges(_))));
        assert_eq!(TopologyAction::new(vec![]), Err(GridError::EmptyAction));
    }

    #[test]
    fn diff_of_identical_grids_is_no_change() {
        let g = triangle();
        assert_eq!(topo_diff(&g, &g).unwrap(), None);
    }

    #[test]
    fn diff_reports_opened_line() {
        let g = triangle();
        let mut h = g.clone();
        h.lines[2].in_service = false;
        let d = topo_diff(&g, &h).unwrap().unwrap();
        assert_eq!(
            d.changes(),
            &[Change::LineStatus {
                line: LineId(2),
                in_service: false
            }]
        );
    }

    #[test]
    fn diff_rejects_mismatched_grids() {
        let g = triangle();
        let mut h = g.clone();
        h.lines.pop();
        assert!(matches!(topo_diff(&g, &h), Err(GridError::MismatchedGrids(_))));
    }

    #[test]
    fn node_counts() {
        let g = triangle();
        assert_eq!(electrical_nodes(&g).nodes.len(), 3);
        let split = apply_action(
            &g,
            &TopologyAction::single(Change::Reassign {
                sub: SubId(2),
                elem: ElementId::Line(LineId(1)),
                busbar: Busbar::Two,
            }),
        )
        .unwrap();
        let graph = electrical_nodes(&split);
        assert_eq!(graph.nodes.len(), 4);
        assert!(graph.islands.is_empty());
    }

    #[test]
    fn opening_all_lines_at_a_substation_islands_it() {
        let g = triangle();
        let a = TopologyAction::new(vec![
            Change::LineStatus {
                line: LineId(1),
                in_service: false,
            },
            Change::LineStatus {
                line: LineId(2),
                in_service: false,
            },
        ])
        .unwrap();
        let graph = electrical_nodes(&apply_action(&g, &a).unwrap());
        assert_eq!(graph.islands.len(), 1);
        let island = &graph.islands[0];
        assert_eq!(graph.nodes[island[0]].sub, SubId(3));
    }

    #[test]
    fn empty_grid_has_empty_graph() {
        let g = Grid {
            base_mva: 100.0,
            buses: vec![],
            lines: vec![],
            generators: vec![],
            loads: vec![],
            substations: vec![],
        };
        let graph = electrical_nodes(&g);
        assert!(graph.nodes.is_empty() && graph.edges.is_empty() && graph.islands.is_empty());
    }

    #[test]
    fn subsets_by_cardinality() {
        let a = TopologyAction::new(vec![
            Change::LineStatus {
                line: LineId(0),
                in_service: false,
            },
            Change::LineStatus {
                line: LineId(1),
                in_service: false,
            },
            Change::LineStatus {
                line: LineId(2),
                in_service: false,
            },
        ])
        .unwrap();
        assert_eq!(a.subsets(1).len(), 3);
        let all = a.subsets(3);
        assert_eq!(all.len(), 7);
        assert_eq!(all[3].fingerprint(), "L0:off;L1:off");
        assert_eq!(all[6], a);
    }

    #[test]
    fn action_json_field_names() {
        let a = TopologyAction::new(vec![
            Change::LineStatus {
                line: LineId(7),
                in_service: false,
            },
            Change::Reassign {
                sub: SubId(4),
                elem: ElementId::Gen(GenId(1)),
                busbar: Busbar::Two,
            },
        ])
        .unwrap();
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(
            json,
            r#"{"changes":[{"kind":"line_status","line":7,"in_service":false},{"kind":"reassign","sub":4,"elem":"G1","busbar":2}]}"#
        );
        let back: TopologyAction = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
        assert!(serde_json::from_str::<TopologyAction>(r#"{"changes":[]}"#).is_err());
        assert!(serde_json::from_str::<TopologyAction>(
            r#"{"changes":[{"kind":"reassign","sub":4,"elem":"G1","busbar":3}]}"#
        )
        .is_err());
    }
}
