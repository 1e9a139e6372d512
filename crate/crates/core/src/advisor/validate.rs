use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::grid::{electrical_nodes, ElementId, Grid, LineId, NodeKey, TopologyAction};
use crate::powerflow::{
    assess, security_check, CriterionKind, FlowSolution, PowerflowError, SecurityCriterion, SecurityIssue, Solver,
};

/// Solver wrapper counting calls; safe to share across threads.
pub struct CountingSolver<'a, S: ?Sized> {
    inner: &'a S,
    calls: AtomicUsize,
}

impl<'a, S: Solver + ?Sized> CountingSolver<'a, S> {
    pub fn new(inner: &'a S) -> Self {
        CountingSolver {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl<S: Solver + ?Sized> Solver for CountingSolver<'_, S> {
    fn solve(&self, grid: &Grid) -> Result<FlowSolution, PowerflowError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.solve(grid)
    }
}

/// Identity of an issue, non-convergence included.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IssueKey {
    Thermal { line: LineId, contingency: Option<LineId> },
    NonConvergence { contingency: Option<LineId> },
}

impl IssueKey {
    pub fn of(issue: &SecurityIssue) -> IssueKey {
        match issue {
            SecurityIssue::Thermal(t) => IssueKey::Thermal {
                line: t.line,
                contingency: t.contingency,
            },
            SecurityIssue::NonConvergence { contingency, .. } => IssueKey::NonConvergence {
                contingency: *contingency,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Rejection {
    /// Some base-case overloads remain.
    NotCured { remaining: Vec<SecurityIssue> },
    /// Issues absent before the action.
    NewIssues { issues: Vec<SecurityIssue> },
    NonConvergent { detail: String },
    /// Loads or generators cut off from the slack.
    Islanding { elements: Vec<ElementId> },
    Inapplicable { detail: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Validated,
    Rejected { reason: Rejection },
}

impl Verdict {
    pub fn is_validated(&self) -> bool {
        matches!(self, Verdict::Validated)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub verdict: Verdict,
    /// Issues of the grid after the action.
    pub issues: Vec<SecurityIssue>,
    /// Highest base-case loading ratio after the action.
    pub max_loading: Option<f64>,
}

/// Loads and in-service generators outside the slack's island.
pub(crate) fn islanded_injections(grid: &Grid) -> BTreeSet<ElementId> {
    let graph = electrical_nodes(grid);
    let mut out = BTreeSet::new();
    for sub in &grid.substations {
        for (&elem, &busbar) in &sub.assignment {
            let live = match elem {
                ElementId::Gen(g) => grid.generators.get(g.index()).is_some_and(|g| g.in_service),
                ElementId::Load(_) => true,
                ElementId::Line(_) => false,
            };
            if live && !graph.node(NodeKey { sub: sub.id, busbar }).is_some_and(|n| graph.in_main(n)) {
                out.insert(elem);
            }
        }
    }
    out
}

/// Security state of the grid before any action.
#[derive(Clone, Debug)]
pub(crate) struct Baseline {
    pub criterion: SecurityCriterion,
    pub issues: Vec<SecurityIssue>,
    pub keys: BTreeSet<IssueKey>,
    pub islanded: BTreeSet<ElementId>,
    pub solution: Option<FlowSolution>,
}

/// The criterion a validation checks: the N-1 variant when requested.
pub(crate) fn effective(criterion: &SecurityCriterion, n_minus_1: bool) -> SecurityCriterion {
    if n_minus_1 {
        SecurityCriterion::n_minus_one(criterion.threshold)
    } else {
        *criterion
    }
}

impl Baseline {
    pub fn new<S: Solver + ?Sized>(grid: &Grid, criterion: SecurityCriterion, solver: &S) -> Baseline {
        let (solution, issues) = match solver.solve(grid) {
            Ok(sol) => {
                let mut issues = security_check(grid, &criterion, &sol);
                if criterion.kind == CriterionKind::NMinusOne && sol.converged {
                    issues.extend(crate::powerflow::n_minus_1(grid, &criterion, solver).issues().cloned());
                }
                (Some(sol), issues)
            }
            Err(e) => (
                None,
                vec![SecurityIssue::NonConvergence {
                    contingency: None,
                    detail: e.to_string(),
                }],
            ),
        };
        Baseline {
            criterion,
            keys: issues.iter().map(IssueKey::of).collect(),
            issues,
            islanded: islanded_injections(grid),
            solution,
        }
    }

    /// Checks `action` on `grid` with the reference solver.
    pub fn validate<S: Solver + ?Sized>(&self, grid: &Grid, action: &TopologyAction, solver: &S) -> Validation {
        let rejected = |reason| Validation {
            verdict: Verdict::Rejected { reason },
            issues: Vec::new(),
            max_loading: None,
        };
        let after = match grid.apply(action) {
            Ok(g) => g,
            Err(e) => return rejected(Rejection::Inapplicable { detail: e.to_string() }),
        };
        let cut: Vec<ElementId> = islanded_injections(&after).difference(&self.islanded).copied().collect();
        if !cut.is_empty() {
            return rejected(Rejection::Islanding { elements: cut });
        }
        let sol = match solver.solve(&after) {
            Ok(sol) if sol.converged => sol,
            Ok(_) => {
                return rejected(Rejection::NonConvergent {
                    detail: "load flow did not converge".into(),
                })
            }
            Err(e) => return rejected(Rejection::NonConvergent { detail: e.to_string() }),
        };
        let mut issues = security_check(&after, &self.criterion, &sol);
        let max_loading = Some(sol.max_loading(&after));
        let remaining: Vec<SecurityIssue> = issues.clone();
        if self.criterion.kind == CriterionKind::NMinusOne {
            issues.extend(crate::powerflow::n_minus_1(&after, &self.criterion, solver).issues().cloned());
        }
        let new: Vec<SecurityIssue> = issues
            .iter()
            .filter(|i| !self.keys.contains(&IssueKey::of(i)))
            .cloned()
            .collect();
        let verdict = if !new.is_empty() {
            Verdict::Rejected {
                reason: Rejection::NewIssues { issues: new },
            }
        } else if !remaining.is_empty() {
            Verdict::Rejected {
                reason: Rejection::NotCured { remaining },
            }
        } else {
            Verdict::Validated
        };
        Validation {
            verdict,
            issues,
            max_loading,
        }
    }
}

/// Full AC check of `grid ⊙ action`: validated when every base-case
/// overload is gone and no issue absent before the action appears. With
/// `n_minus_1` the single-line outages are rechecked as well.
pub fn validate_action<S: Solver + ?Sized>(
    grid: &Grid,
    action: &TopologyAction,
    criterion: &SecurityCriterion,
    n_minus_1: bool,
    solver: &S,
) -> Validation {
    let baseline = Baseline::new(grid, effective(criterion, n_minus_1), solver);
    baseline.validate(grid, action, solver)
}

/// Issues of `grid` under `criterion`, as keys.
pub fn issue_keys<S: Solver + ?Sized>(grid: &Grid, criterion: &SecurityCriterion, solver: &S) -> BTreeSet<IssueKey> {
    assess(grid, criterion, solver).iter().map(IssueKey::of).collect()
}
