//! Counterfactual replay of a snapshot archive: find the grids that would
//! have been unsafe without the topology changes operators made, then
//! extract the changes that cure them.

mod db;
mod windows;

pub use db::{dedup, DedupKey, RemedialDB, RemedialRecord, Source, DB_VERSION};
pub use windows::{label, parse_label, WindowError, WindowSet, H_MAX};

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::case_io::{Snapshot, Timestamp};
use crate::grid::{topo_diff, Grid, LineId};
use crate::powerflow::{assess, SecurityCriterion, SecurityIssue, Solver};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinerConfig {
    pub windows: WindowSet,
    pub criterion: SecurityCriterion,
    /// Largest sub-action size tried when looking for a cure.
    pub max_cardinality: usize,
}

impl Default for MinerConfig {
    fn default() -> Self {
        MinerConfig {
            windows: WindowSet::standard(),
            criterion: SecurityCriterion::default(),
            max_cardinality: 1,
        }
    }
}

/// One issue of a counterfactual grid `g̃(t, h)`: topology of `g_t` with
/// the injections of `g_{t+h}`.
#[derive(Clone, Debug)]
pub struct UnsafeCase {
    pub t: Timestamp,
    pub h: u32,
    pub issue: SecurityIssue,
    pub grid: Arc<Grid>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiningStats {
    /// Counterfactual grids evaluated.
    pub computed: usize,
    /// Counterfactuals with at least one thermal issue.
    pub unsafe_grids: usize,
    /// Unsafe counterfactuals with at least one single-action cure.
    pub curable_grids: usize,
    /// Records left after deduplication.
    pub distinct_actions: usize,
    pub lines_stressed: usize,
    pub lines_stressed_with_cure: usize,
    pub non_converged: usize,
    /// `(t, h)` pairs whose `t + h` snapshot is missing inside the archive
    /// span.
    pub gaps: usize,
    /// Candidate cures whose load flow failed.
    pub rejected_candidates: usize,
    pub merged_duplicates: usize,
    /// Injections dropped because the element does not exist at `t`.
    pub dropped_injections: usize,
}

impl MiningStats {
    /// The six headline counters with their labels.
    pub fn table(&self) -> [(&'static str, usize); 6] {
        [
            ("counterfactual grids computed", self.computed),
            ("counterfactual grids unsafe", self.unsafe_grids),
            ("unsafe grids with one curative action", self.curable_grids),
            ("different curative actions", self.distinct_actions),
            ("lines stressed", self.lines_stressed),
            ("lines stressed with a curative action", self.lines_stressed_with_cure),
        ]
    }
}

#[derive(Clone, Debug, Default)]
pub struct UnsafeReport {
    pub cases: Vec<UnsafeCase>,
    pub computed: usize,
    pub unsafe_grids: usize,
    pub non_converged: usize,
    pub gaps: Vec<(Timestamp, u32)>,
    pub dropped_injections: usize,
}

struct Counterfactual {
    t: Timestamp,
    h: u32,
    grid: Arc<Grid>,
    issues: Vec<SecurityIssue>,
    dropped: usize,
}

fn index_by_time(archive: &[Snapshot]) -> BTreeMap<Timestamp, usize> {
    archive
        .iter()
        .enumerate()
        .map(|(i, s)| (s.timestamp, i))
        .collect()
}

/// Every `(t, h)` pair of the archive for which `t + h` lies within its
/// span, in `(t, h)` order, plus the pairs whose target is missing.
fn pairs(archive: &[Snapshot], windows: &WindowSet) -> (Vec<(usize, usize, u32)>, Vec<(Timestamp, u32)>) {
    let index = index_by_time(archive);
    let last = archive.last().map(|s| s.timestamp);
    let mut out = Vec::new();
    let mut gaps = Vec::new();
    for (i, snap) in archive.iter().enumerate() {
        for &h in windows.minutes() {
            let target = snap.timestamp.plus_minutes(h);
            if Some(target) > last {
                continue;
            }
            match index.get(&target) {
                Some(&j) => out.push((i, j, h)),
                None => gaps.push((snap.timestamp, h)),
            }
        }
    }
    (out, gaps)
}

fn counterfactuals<S: Solver + ?Sized>(
    archive: &[Snapshot],
    windows: &WindowSet,
    criterion: &SecurityCriterion,
    solver: &S,
) -> (Vec<Counterfactual>, Vec<(Timestamp, u32)>) {
    let (pairs, gaps) = pairs(archive, windows);
    for (t, h) in &gaps {
        debug!(t = t.0, h, "archive gap");
    }
    let cfs = pairs
        .par_iter()
        .map(|&(i, j, h)| {
            let (grid, dropped) = archive[i].grid.with_injections(&archive[j].grid.injections());
            let issues = assess(&grid, criterion, solver);
            Counterfactual {
                t: archive[i].timestamp,
                h,
                grid: Arc::new(grid),
                issues,
                dropped,
            }
        })
        .collect();
    (cfs, gaps)
}

/// Replays the archive under every window and reports each issue of each
/// unsafe counterfactual. Non-convergent counterfactuals yield a single
/// non-convergence case.
pub fn find_unsafe<S: Solver + ?Sized>(
    archive: &[Snapshot],
    windows: &WindowSet,
    criterion: &SecurityCriterion,
    solver: &S,
) -> UnsafeReport {
    let (cfs, gaps) = counterfactuals(archive, windows, criterion, solver);
    let mut report = UnsafeReport {
        computed: cfs.len(),
        gaps,
        ..UnsafeReport::default()
    };
    for cf in cfs {
        report.dropped_injections += cf.dropped;
        if cf.issues.is_empty() {
            continue;
        }
        if cf.issues.iter().any(SecurityIssue::is_non_convergence) {
            report.non_converged += 1;
        } else {
            report.unsafe_grids += 1;
        }
        for issue in cf.issues {
            report.cases.push(UnsafeCase {
                t: cf.t,
                h: cf.h,
                issue,
                grid: Arc::clone(&cf.grid),
            });
        }
    }
    if report.dropped_injections > 0 {
        warn!(
            dropped = report.dropped_injections,
            "injections for elements absent from the earlier snapshot were dropped"
        );
    }
    report
}

#[derive(Clone, Debug, Default)]
pub struct Extraction {
    /// Records before deduplication, in `(t, h, line)` order.
    pub records: Vec<RemedialRecord>,
    pub curable_grids: usize,
    pub rejected_candidates: usize,
}

/// Tries every sub-action of the topology change between `t` and `t + h`
/// on the counterfactual grids of `cases` and keeps those that clear an
/// issue.
pub fn extract_remedials<S: Solver + ?Sized>(
    cases: &[UnsafeCase],
    archive: &[Snapshot],
    criterion: &SecurityCriterion,
    solver: &S,
    max_cardinality: usize,
) -> Extraction {
    let index = index_by_time(archive);
    // group the issues of each counterfactual so every candidate is solved once
    let mut groups: BTreeMap<(Timestamp, u32), (Arc<Grid>, Vec<&SecurityIssue>)> = BTreeMap::new();
    for c in cases.iter().filter(|c| !c.issue.is_non_convergence()) {
        groups
            .entry((c.t, c.h))
            .or_insert_with(|| (Arc::clone(&c.grid), Vec::new()))
            .1
            .push(&c.issue);
    }
    let groups: Vec<_> = groups.into_iter().collect();

    let results: Vec<(Vec<RemedialRecord>, usize)> = groups
        .par_iter()
        .map(|((t, h), (grid, issues))| {
            let (Some(&i), Some(&j)) = (index.get(t), index.get(&t.plus_minutes(*h))) else {
                return (Vec::new(), 0);
            };
            let gamma = match topo_diff(&archive[i].grid, &archive[j].grid) {
                Ok(Some(g)) => g,
                Ok(None) => return (Vec::new(), 0),
                Err(e) => {
                    warn!(t = t.0, h, error = %e, "snapshots are not comparable");
                    return (Vec::new(), 0);
                }
            };
            let mut records = Vec::new();
            let mut rejected = 0;
            for tau in gamma.subsets(max_cardinality) {
                let Ok(after) = grid.apply(&tau) else {
                    rejected += 1;
                    continue;
                };
                let post = assess(&after, criterion, solver);
                if post.iter().any(SecurityIssue::is_non_convergence) {
                    rejected += 1;
                    continue;
                }
                let remaining: BTreeSet<_> = post.iter().filter_map(SecurityIssue::key).collect();
                for issue in issues {
                    let SecurityIssue::Thermal(th) = issue else { continue };
                    if remaining.contains(&(th.line, th.contingency)) {
                        continue;
                    }
                    records.push(RemedialRecord {
                        issue: th.clone(),
                        action: tau.clone(),
                        substations: tau.substations(grid),
                        source: Source { t: *t, h: *h },
                        post_issues: post.clone(),
                        occurrences: 1,
                        context_grid: Some((**grid).clone()),
                    });
                }
            }
            (records, rejected)
        })
        .collect();

    let mut out = Extraction::default();
    for (mut records, rejected) in results {
        out.rejected_candidates += rejected;
        if !records.is_empty() {
            out.curable_grids += 1;
        }
        records.sort_by(|a, b| {
            (a.issue.line, a.issue.contingency, a.action.fingerprint())
                .cmp(&(b.issue.line, b.issue.contingency, b.action.fingerprint()))
        });
        out.records.extend(records);
    }
    out
}

#[derive(Clone, Debug)]
pub struct MiningResult {
    pub db: RemedialDB,
    pub stats: MiningStats,
    pub gaps: Vec<(Timestamp, u32)>,
}

/// Full pipeline: find unsafe counterfactuals, extract cures, deduplicate.
pub fn mine<S: Solver + ?Sized>(archive: &[Snapshot], config: &MinerConfig, solver: &S) -> MiningResult {
    let report = find_unsafe(archive, &config.windows, &config.criterion, solver);
    let extraction = extract_remedials(
        &report.cases,
        archive,
        &config.criterion,
        solver,
        config.max_cardinality,
    );
    let db = dedup(extraction.records);

    let stressed: BTreeSet<LineId> = report.cases.iter().filter_map(|c| c.issue.line()).collect();
    let cured: BTreeSet<LineId> = db.records.iter().map(|r| r.issue.line).collect();
    let stats = MiningStats {
        computed: report.computed,
        unsafe_grids: report.unsafe_grids,
        curable_grids: extraction.curable_grids,
        distinct_actions: db.len(),
        lines_stressed: stressed.len(),
        lines_stressed_with_cure: cured.len(),
        non_converged: report.non_converged,
        gaps: report.gaps.len(),
        rejected_candidates: extraction.rejected_candidates,
        merged_duplicates: db.merged,
        dropped_injections: report.dropped_injections,
    };
    MiningResult {
        db,
        stats,
        gaps: report.gaps,
    }
}
