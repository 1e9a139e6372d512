use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::grid::{Change, Grid, SubId, TopologyAction};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubstationMultiplier {
    pub sub: SubId,
    pub factor: f64,
}

/// Switching cost of topological actions, additive over changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    /// Cost of opening or closing a line.
    pub line_switch: f64,
    /// Cost of moving an element to the other busbar.
    pub busbar_switch: f64,
    /// Factors applied to changes operated from a substation.
    pub multipliers: Vec<SubstationMultiplier>,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            line_switch: 1.0,
            busbar_switch: 2.0,
            multipliers: Vec::new(),
        }
    }
}

impl CostModel {
    pub fn is_valid(&self) -> bool {
        let ok = |c: f64| c.is_finite() && c >= 0.0;
        ok(self.line_switch) && ok(self.busbar_switch) && self.multipliers.iter().all(|m| ok(m.factor))
    }

    fn multiplier(&self, sub: Option<SubId>) -> f64 {
        sub.and_then(|s| self.multipliers.iter().find(|m| m.sub == s))
            .map_or(1.0, |m| m.factor)
    }

    pub fn change_cost(&self, grid: &Grid, change: &Change) -> f64 {
        let base = match change {
            Change::LineStatus { .. } => self.line_switch,
            Change::Reassign { .. } => self.busbar_switch,
        };
        base * self.multiplier(change.substation(grid))
    }

    pub fn action_cost(&self, grid: &Grid, action: &TopologyAction) -> f64 {
        action.changes().iter().map(|c| self.change_cost(grid, c)).sum()
    }

    /// Every cost multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> CostModel {
        CostModel {
            line_switch: self.line_switch * factor,
            busbar_switch: self.busbar_switch * factor,
            multipliers: self.multipliers.clone(),
        }
    }
}

/// Orders costs, treating values within a relative 1e-9 as equal so that
/// rounding in sums does not split ties.
pub(crate) fn cmp_cost(a: f64, b: f64) -> Ordering {
    if (a - b).abs() <= 1e-9 * a.abs().max(b.abs()) {
        Ordering::Equal
    } else {
        a.total_cmp(&b)
    }
}
