use std::collections::{BTreeSet, VecDeque};

use crate::grid::{Change, ElementId, Grid, SubId, TopologyAction};
use crate::miner::RemedialDB;
use crate::powerflow::SecurityIssue;

/// Substations ranked by hop distance from either end of `line`, ties by
/// id. Unreachable substations come last.
fn by_distance(grid: &Grid, from: &[SubId]) -> Vec<SubId> {
    let n = grid.buses.len();
    let mut adj = vec![Vec::new(); n];
    for l in grid.lines.iter().filter(|l| l.in_service) {
        if let (Some(a), Some(b)) = (grid.sub_index(l.from_sub), grid.sub_index(l.to_sub)) {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for s in from.iter().filter_map(|&s| grid.sub_index(s)) {
        dist[s] = 0;
        queue.push_back(s);
    }
    while let Some(a) = queue.pop_front() {
        for &b in &adj[a] {
            if dist[b] == usize::MAX {
                dist[b] = dist[a] + 1;
                queue.push_back(b);
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (dist[i], grid.buses[i].id));
    order.into_iter().map(|i| grid.buses[i].id).collect()
}

/// Substations most likely to hold a cure for `issue`: those of mined
/// records relieving the same line by descending number of mined
/// occurrences, ties by id, then the remaining ones by distance from the
/// overloaded line.
pub fn rank_substations(db: &RemedialDB, grid: &Grid, issue: &SecurityIssue, k: usize) -> Vec<SubId> {
    let Some(line) = issue.line().and_then(|l| grid.line(l)) else {
        return Vec::new();
    };
    let mut counted: Vec<(SubId, usize)> = db.substation_frequency(line.id).into_iter().collect();
    counted.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut out: Vec<SubId> = counted
        .into_iter()
        .map(|(s, _)| s)
        .filter(|&s| grid.substation(s).is_some())
        .take(k)
        .collect();
    if out.len() < k {
        let seen: BTreeSet<SubId> = out.iter().copied().collect();
        let rest = by_distance(grid, &[line.from_sub, line.to_sub]);
        out.extend(rest.into_iter().filter(|s| !seen.contains(s)).take(k - out.len()));
    }
    out
}

/// Every single-change action at `sub`: each attached element moved to the
/// other busbar, in element order, then each incident line toggled, in line
/// order.
pub fn enumerate_actions(grid: &Grid, sub: SubId) -> Vec<TopologyAction> {
    let Some(s) = grid.substation(sub) else {
        return Vec::new();
    };
    let mut out: Vec<TopologyAction> = s
        .assignment
        .iter()
        .map(|(&elem, &busbar)| {
            TopologyAction::single(Change::Reassign {
                sub,
                elem,
                busbar: busbar.other(),
            })
        })
        .collect();
    let mut lines: Vec<_> = s
        .elements()
        .filter_map(|e| match e {
            ElementId::Line(l) => grid.line(l),
            _ => None,
        })
        .collect();
    lines.sort_by_key(|l| l.id);
    lines.dedup_by_key(|l| l.id);
    out.extend(lines.into_iter().map(|l| {
        TopologyAction::single(Change::LineStatus {
            line: l.id,
            in_service: !l.in_service,
        })
    }));
    out
}
