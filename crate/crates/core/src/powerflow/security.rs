use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FlowSolution, PowerflowError, Solver};
use crate::grid::{electrical_nodes, Grid, LineId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionKind {
    ThermalOnly,
    NMinusOne,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SecurityCriterion {
    pub kind: CriterionKind,
    /// Fraction of the rating above which a line is flagged.
    pub threshold: f64,
}

impl Default for SecurityCriterion {
    fn default() -> Self {
        SecurityCriterion {
            kind: CriterionKind::ThermalOnly,
            threshold: 0.95,
        }
    }
}

impl SecurityCriterion {
    pub fn thermal(threshold: f64) -> Self {
        SecurityCriterion {
            kind: CriterionKind::ThermalOnly,
            threshold,
        }
    }

    pub fn n_minus_one(threshold: f64) -> Self {
        SecurityCriterion {
            kind: CriterionKind::NMinusOne,
            threshold,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.threshold > 0.0 && self.threshold <= 1.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermalIssue {
    pub line: LineId,
    /// Apparent flow, MVA.
    pub flow: f64,
    /// Rating, MVA.
    pub limit: f64,
    pub ratio: f64,
    /// Outaged line when the issue comes from a contingency.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contingency: Option<LineId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SecurityIssue {
    Thermal(ThermalIssue),
    NonConvergence {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        contingency: Option<LineId>,
        detail: String,
    },
}

impl SecurityIssue {
    pub fn line(&self) -> Option<LineId> {
        match self {
            SecurityIssue::Thermal(t) => Some(t.line),
            SecurityIssue::NonConvergence { .. } => None,
        }
    }

    /// Identity of the violated constraint: overloaded line and outage.
    pub fn key(&self) -> Option<(LineId, Option<LineId>)> {
        match self {
            SecurityIssue::Thermal(t) => Some((t.line, t.contingency)),
            SecurityIssue::NonConvergence { .. } => None,
        }
    }

    pub fn is_non_convergence(&self) -> bool {
        matches!(self, SecurityIssue::NonConvergence { .. })
    }

    fn non_convergence(contingency: Option<LineId>, err: &PowerflowError) -> Self {
        SecurityIssue::NonConvergence {
            contingency,
            detail: err.to_string(),
        }
    }
}

/// Lines of `sol` loaded above `threshold` times their rating.
pub fn thermal_issues(grid: &Grid, sol: &FlowSolution, threshold: f64) -> Vec<ThermalIssue> {
    grid.lines
        .iter()
        .zip(&sol.lines)
        .filter(|(l, _)| l.in_service && l.rating > 0.0)
        .filter_map(|(l, f)| {
            let flow = f.s_max();
            let ratio = flow / l.rating;
            (ratio > threshold).then(|| ThermalIssue {
                line: l.id,
                flow,
                limit: l.rating,
                ratio,
                contingency: None,
            })
        })
        .collect()
}

/// Issues of an already computed base-case solution. Only the thermal part
/// of the criterion is evaluated; see [`assess`] for N-1.
pub fn security_check(
    grid: &Grid,
    criterion: &SecurityCriterion,
    solution: &FlowSolution,
) -> Vec<SecurityIssue> {
    if !solution.converged {
        return vec![SecurityIssue::NonConvergence {
            contingency: None,
            detail: "load flow did not converge".into(),
        }];
    }
    thermal_issues(grid, solution, criterion.threshold)
        .into_iter()
        .map(SecurityIssue::Thermal)
        .collect()
}

/// Solves `grid` and evaluates the full criterion. An empty result means
/// the grid is secure.
pub fn assess<S: Solver + ?Sized>(
    grid: &Grid,
    criterion: &SecurityCriterion,
    solver: &S,
) -> Vec<SecurityIssue> {
    let sol = match solver.solve(grid) {
        Ok(sol) => sol,
        Err(e) => return vec![SecurityIssue::non_convergence(None, &e)],
    };
    let mut issues = security_check(grid, criterion, &sol);
    if criterion.kind == CriterionKind::NMinusOne {
        issues.extend(n_minus_1(grid, criterion, solver).issues().cloned());
    }
    issues
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContingencyOutcome {
    pub line: LineId,
    /// The outage splits the grid into more electrical islands.
    pub islanding: bool,
    pub issues: Vec<SecurityIssue>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContingencyReport {
    /// One entry per in-service line, in line order.
    pub outcomes: Vec<ContingencyOutcome>,
}

impl ContingencyReport {
    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn issues(&self) -> impl Iterator<Item = &SecurityIssue> {
        self.outcomes.iter().flat_map(|o| o.issues.iter())
    }

    pub fn is_secure(&self) -> bool {
        self.issues().next().is_none()
    }

    pub fn islanding(&self) -> impl Iterator<Item = LineId> + '_ {
        self.outcomes.iter().filter(|o| o.islanding).map(|o| o.line)
    }
}

/// Solves every single-line outage of `grid` and collects thermal issues
/// at the criterion's threshold.
pub fn n_minus_1<S: Solver + ?Sized>(
    grid: &Grid,
    criterion: &SecurityCriterion,
    solver: &S,
) -> ContingencyReport {
    let base_components = electrical_nodes(grid).n_components;
    let outaged: Vec<LineId> = grid
        .lines
        .iter()
        .filter(|l| l.in_service)
        .map(|l| l.id)
        .collect();
    let outcomes = outaged
        .par_iter()
        .map(|&k| {
            let mut g = grid.clone();
            g.lines[k.index()].in_service = false;
            let islanding = electrical_nodes(&g).n_components > base_components;
            let issues = match solver.solve(&g) {
                Ok(sol) => thermal_issues(&g, &sol, criterion.threshold)
                    .into_iter()
                    .map(|mut t| {
                        t.contingency = Some(k);
                        SecurityIssue::Thermal(t)
                    })
                    .collect(),
                Err(e) => vec![SecurityIssue::non_convergence(Some(k), &e)],
            };
            ContingencyOutcome {
                line: k,
                islanding,
                issues,
            }
        })
        .collect();
    ContingencyReport { outcomes }
}
