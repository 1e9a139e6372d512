//! Topology advice: rank substations from mined actions, enumerate and
//! pre-screen candidates with the surrogate, validate survivors with the
//! reference solver and order them by switching cost.

mod candidates;
mod cost;
mod validate;

pub use candidates::{enumerate_actions, rank_substations};
pub use cost::{CostModel, SubstationMultiplier};
pub use validate::{issue_keys, validate_action, CountingSolver, IssueKey, Rejection, Validation, Verdict};

use std::collections::{BTreeSet, HashSet};
use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Change, ElementId, Grid, SubId, TopologyAction};
use crate::miner::RemedialDB;
use crate::powerflow::{CriterionKind, SecurityCriterion, SecurityIssue, Solver, ThermalIssue};
use crate::surrogate::{predicted_loading, SurrogateError, SurrogateModel, DEFAULT_MARGIN};
use cost::cmp_cost;
use validate::{effective, Baseline};

#[derive(Debug, Error)]
pub enum AdviceError {
    #[error("invalid advice options: {0}")]
    InvalidOptions(String),
    #[error("the grid's load flow does not converge: {0}")]
    BaseDiverged(String),
    #[error("surrogate does not fit the grid: {0}")]
    Model(#[from] SurrogateError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdviseOptions {
    /// Substations explored per issue.
    pub k: usize,
    /// Recheck single-line outages when validating.
    pub validate_n_minus_1: bool,
    /// Cap on reference-solver calls, the initial assessment included.
    pub budget: Option<usize>,
    /// Elements that cannot be switched at the time of the study.
    pub unavailable: Vec<ElementId>,
    /// Screening tolerance: a candidate is dropped only when the surrogate
    /// puts a line above `threshold + margin`.
    pub margin: f64,
}

impl Default for AdviseOptions {
    fn default() -> Self {
        AdviseOptions {
            k: 3,
            validate_n_minus_1: false,
            budget: None,
            unavailable: Vec::new(),
            margin: DEFAULT_MARGIN,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    /// Position in the final list, from 1. Streamed items carry their
    /// position in validation order instead.
    pub rank: usize,
    pub action: TopologyAction,
    pub substation: SubId,
    pub cost: f64,
    /// Issues the surrogate predicts after the action; absent when the
    /// topology cannot be encoded.
    pub predicted_issues: Option<Vec<SecurityIssue>>,
    pub validated_issues: Vec<SecurityIssue>,
    pub max_loading: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    /// Dropped by the surrogate before validation.
    ScreenedOut,
    Validated,
    Rejected { reason: Rejection },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestedAction {
    pub action: TopologyAction,
    pub substation: SubId,
    pub cost: f64,
    pub predicted_issues: Option<Vec<SecurityIssue>>,
    #[serde(flatten)]
    pub outcome: Outcome,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdviceStatus {
    /// Nothing to cure.
    Secure,
    Found,
    /// No validated action; the operator takes over.
    NoCandidateFound,
}

/// How candidates were pre-screened.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Screening {
    Surrogate,
    /// No model given; every candidate was validated.
    NoModel,
    /// The grid's topology cannot be encoded.
    Unencodable,
    /// The grid's injections lie outside the model's training range, so
    /// its predictions are not trusted.
    OutOfDomain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Advice {
    pub status: AdviceStatus,
    pub screening: Screening,
    /// Issues before any action.
    pub issues: Vec<SecurityIssue>,
    pub recommendations: Vec<Recommendation>,
    pub tested: Vec<TestedAction>,
    pub candidates: usize,
    pub solver_calls: usize,
    pub budget_exhausted: bool,
    pub cancelled: bool,
}

/// Progress notifications while advice is computed.
#[derive(Clone, Copy, Debug)]
pub enum AdviceEvent<'a> {
    Tested(&'a TestedAction),
    Recommended(&'a Recommendation),
}

/// Cancellation flag and progress observer for [`advise_with`].
#[derive(Default)]
pub struct Control<'a> {
    pub cancel: Option<&'a AtomicBool>,
    pub observer: Option<&'a mut dyn FnMut(AdviceEvent<'_>)>,
}

impl Control<'_> {
    fn cancelled(&self) -> bool {
        self.cancel.is_some_and(|c| c.load(Ordering::SeqCst))
    }

    fn emit(&mut self, event: AdviceEvent<'_>) {
        if let Some(f) = self.observer.as_mut() {
            f(event);
        }
    }
}

struct Candidate {
    action: TopologyAction,
    substation: SubId,
    cost: f64,
    /// The base-case overload this candidate was enumerated for.
    target: Option<ThermalIssue>,
}

struct Screened {
    predicted: Option<Vec<SecurityIssue>>,
    predicted_max: Option<f64>,
    /// Lines predicted above `threshold + margin`.
    alarming: Vec<(crate::grid::LineId, f64)>,
}

fn touches(change: &Change, unavailable: &BTreeSet<ElementId>) -> bool {
    match *change {
        Change::LineStatus { line, .. } => unavailable.contains(&ElementId::Line(line)),
        Change::Reassign { elem, .. } => unavailable.contains(&elem),
    }
}

/// Surrogate loading after the action, anchored on the reference solution:
/// the reference ratios plus the predicted change.
fn screen(
    model: &SurrogateModel,
    grid: &Grid,
    action: &TopologyAction,
    reference: &[f64],
    predicted_before: &[f64],
    threshold: f64,
    margin: f64,
) -> Screened {
    let unscreened = Screened {
        predicted: None,
        predicted_max: None,
        alarming: Vec::new(),
    };
    let Ok(after) = grid.apply(action) else {
        return unscreened;
    };
    let Ok(predicted) = predicted_loading(model, &after) else {
        return unscreened;
    };
    let mut issues = Vec::new();
    let mut alarming = Vec::new();
    let mut max = 0.0f64;
    for (i, l) in after.lines.iter().enumerate() {
        if !l.in_service || l.rating <= 0.0 {
            continue;
        }
        let ratio = reference[i] + predicted[i] - predicted_before[i];
        max = max.max(ratio);
        if ratio > threshold + margin {
            alarming.push((l.id, ratio));
        }
        if ratio > threshold {
            issues.push(SecurityIssue::Thermal(ThermalIssue {
                line: l.id,
                flow: ratio * l.rating,
                limit: l.rating,
                ratio,
                contingency: None,
            }));
        }
    }
    Screened {
        predicted: Some(issues),
        predicted_max: Some(max),
        alarming,
    }
}

/// Runs [`advise_with`] without cancellation or observer.
pub fn advise<S: Solver + ?Sized>(
    grid: &Grid,
    criterion: &SecurityCriterion,
    model: Option<&SurrogateModel>,
    db: &RemedialDB,
    cost: &CostModel,
    opts: &AdviseOptions,
    solver: &S,
) -> Result<Advice, AdviceError> {
    advise_with(grid, criterion, model, db, cost, opts, solver, Control::default())
}

/// Proposes validated topological actions curing the grid's overloads.
///
/// Candidates come from the `k` best substations of each issue. With a
/// model whose training range covers the grid, candidates the surrogate
/// expects to leave the target overloaded or to add an overload are
/// dropped; otherwise every candidate goes to validation. Validation runs cheapest first and stops when the budget
/// or the cancellation flag says so.
#[allow(clippy::too_many_arguments)]
pub fn advise_with<S: Solver + ?Sized>(
    grid: &Grid,
    criterion: &SecurityCriterion,
    model: Option<&SurrogateModel>,
    db: &RemedialDB,
    cost: &CostModel,
    opts: &AdviseOptions,
    solver: &S,
    mut control: Control<'_>,
) -> Result<Advice, AdviceError> {
    if opts.k == 0 {
        return Err(AdviceError::InvalidOptions("k must be at least 1".into()));
    }
    if !cost.is_valid() {
        return Err(AdviceError::InvalidOptions("costs must be finite and non-negative".into()));
    }
    if !(opts.margin >= 0.0 && opts.margin.is_finite()) {
        return Err(AdviceError::InvalidOptions(format!("margin {}", opts.margin)));
    }
    if !criterion.is_valid() {
        return Err(AdviceError::InvalidOptions(format!("threshold {}", criterion.threshold)));
    }
    let counter = CountingSolver::new(solver);
    let check = effective(criterion, opts.validate_n_minus_1);
    let baseline = Baseline::new(grid, check, &counter);
    let issues: Vec<SecurityIssue> = if check == *criterion {
        baseline.issues.clone()
    } else {
        baseline
            .issues
            .iter()
            .filter(|i| !matches!(i, SecurityIssue::Thermal(t) if t.contingency.is_some()))
            .filter(|i| !matches!(i, SecurityIssue::NonConvergence { contingency: Some(_), .. }))
            .cloned()
            .collect()
    };
    let mut advice = Advice {
        status: AdviceStatus::Secure,
        screening: Screening::NoModel,
        issues: issues.clone(),
        recommendations: Vec::new(),
        tested: Vec::new(),
        candidates: 0,
        solver_calls: 0,
        budget_exhausted: false,
        cancelled: false,
    };
    let Some(base_solution) = baseline.solution.as_ref().filter(|s| s.converged) else {
        let detail = issues
            .iter()
            .find_map(|i| match i {
                SecurityIssue::NonConvergence { contingency: None, detail } => Some(detail.clone()),
                _ => None,
            })
            .unwrap_or_else(|| "load flow did not converge".into());
        return Err(AdviceError::BaseDiverged(detail));
    };
    if issues.is_empty() {
        advice.solver_calls = counter.calls();
        return Ok(advice);
    }

    // Targets, worst first; contingency issues after base-case ones.
    let mut targets: Vec<&SecurityIssue> = issues.iter().filter(|i| i.line().is_some()).collect();
    targets.sort_by(|a, b| {
        let key = |i: &SecurityIssue| match i {
            SecurityIssue::Thermal(t) => (t.contingency.is_some(), -t.ratio),
            _ => (true, 0.0),
        };
        let (ka, kb) = (key(a), key(b));
        ka.0.cmp(&kb.0).then(ka.1.total_cmp(&kb.1))
    });
    let unavailable: BTreeSet<ElementId> = opts.unavailable.iter().copied().collect();
    let mut seen = HashSet::new();
    let mut pool = Vec::new();
    for issue in targets {
        let target = match issue {
            SecurityIssue::Thermal(t) if t.contingency.is_none() => Some(t.clone()),
            _ => None,
        };
        for sub in rank_substations(db, grid, issue, opts.k) {
            for action in enumerate_actions(grid, sub) {
                if action.changes().iter().any(|c| touches(c, &unavailable)) {
                    continue;
                }
                if seen.insert(action.fingerprint()) {
                    pool.push(Candidate {
                        cost: cost.action_cost(grid, &action),
                        action,
                        substation: sub,
                        target: target.clone(),
                    });
                }
            }
        }
    }
    advice.candidates = pool.len();

    let reference: Vec<f64> = grid
        .lines
        .iter()
        .zip(&base_solution.lines)
        .map(|(l, f)| if l.in_service && l.rating > 0.0 { f.s_max() / l.rating } else { 0.0 })
        .collect();
    let predicted_before = match model {
        Some(m) => match m.encoding.raw_input(grid) {
            Ok(raw) if !m.encoding.in_domain(&raw) => {
                advice.screening = Screening::OutOfDomain;
                None
            }
            Ok(_) => {
                advice.screening = Screening::Surrogate;
                Some(predicted_loading(m, grid)?)
            }
            Err(SurrogateError::MultipleOutages(_)) | Err(SurrogateError::UnsupportedTopology(_)) => {
                advice.screening = Screening::Unencodable;
                None
            }
            Err(e) => return Err(e.into()),
        },
        None => None,
    };
    let screened: Vec<Screened> = match (model, &predicted_before) {
        (Some(m), Some(before)) => pool
            .par_iter()
            .map(|c| screen(m, grid, &c.action, &reference, before, criterion.threshold, opts.margin))
            .collect(),
        _ => pool
            .iter()
            .map(|_| Screened {
                predicted: None,
                predicted_max: None,
                alarming: Vec::new(),
            })
            .collect(),
    };

    let pre_keys = &baseline.keys;
    let mut queue = Vec::new();
    for (c, s) in pool.into_iter().zip(screened) {
        let passes = s.predicted.is_none() || {
            let target_dropped = c
                .target
                .as_ref()
                .is_none_or(|t| s.alarming.iter().all(|&(l, _)| l != t.line));
            target_dropped
                && s.alarming.iter().all(|&(line, _)| {
                    pre_keys.contains(&IssueKey::Thermal {
                        line,
                        contingency: None,
                    })
                })
        };
        if passes {
            queue.push((c, s));
        } else {
            let tested = TestedAction {
                action: c.action,
                substation: c.substation,
                cost: c.cost,
                predicted_issues: s.predicted,
                outcome: Outcome::ScreenedOut,
            };
            control.emit(AdviceEvent::Tested(&tested));
            advice.tested.push(tested);
        }
    }
    queue.sort_by(|(a, sa), (b, sb)| {
        cmp_cost(a.cost, b.cost)
            .then(
                sa.predicted_max
                    .unwrap_or(f64::INFINITY)
                    .total_cmp(&sb.predicted_max.unwrap_or(f64::INFINITY)),
            )
            .then_with(|| a.action.fingerprint().cmp(&b.action.fingerprint()))
    });

    let per_validation = |action: &TopologyAction| {
        if check.kind == CriterionKind::NMinusOne {
            let lines = grid.apply(action).map_or(grid.lines.len(), |g| {
                g.lines.iter().filter(|l| l.in_service).count()
            });
            1 + lines
        } else {
            1
        }
    };
    for (c, s) in queue {
        if control.cancelled() {
            advice.cancelled = true;
            break;
        }
        if opts
            .budget
            .is_some_and(|b| counter.calls() + per_validation(&c.action) > b)
        {
            advice.budget_exhausted = true;
            break;
        }
        let v = baseline.validate(grid, &c.action, &counter);
        let outcome = match &v.verdict {
            Verdict::Validated => Outcome::Validated,
            Verdict::Rejected { reason } => Outcome::Rejected { reason: reason.clone() },
        };
        let tested = TestedAction {
            action: c.action.clone(),
            substation: c.substation,
            cost: c.cost,
            predicted_issues: s.predicted.clone(),
            outcome,
        };
        control.emit(AdviceEvent::Tested(&tested));
        advice.tested.push(tested);
        if v.verdict.is_validated() {
            let rec = Recommendation {
                rank: advice.recommendations.len() + 1,
                action: c.action,
                substation: c.substation,
                cost: c.cost,
                predicted_issues: s.predicted,
                validated_issues: v.issues,
                max_loading: v.max_loading.unwrap_or(0.0),
            };
            control.emit(AdviceEvent::Recommended(&rec));
            advice.recommendations.push(rec);
        }
    }

    advice.recommendations.sort_by(|a, b| {
        cmp_cost(a.cost, b.cost)
            .then(a.max_loading.total_cmp(&b.max_loading))
            .then_with(|| a.action.fingerprint().cmp(&b.action.fingerprint()))
    });
    for (i, r) in advice.recommendations.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    advice.status = if advice.recommendations.is_empty() {
        AdviceStatus::NoCandidateFound
    } else {
        AdviceStatus::Found
    };
    advice.solver_calls = counter.calls();
    Ok(advice)
}
