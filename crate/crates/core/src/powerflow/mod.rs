//! Reference load-flow solvers, the thermal security function and N-1
//! contingency analysis.

mod ac;
mod dc;
mod network;
mod security;

pub use ac::{solve_ac, AcModel, AcOptions};
pub use dc::solve_dc;
pub use security::{
    assess, n_minus_1, security_check, thermal_issues, ContingencyOutcome, ContingencyReport,
    CriterionKind, SecurityCriterion, SecurityIssue, ThermalIssue,
};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{ElementId, Grid, NodeKey};
use network::Network;

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum PowerflowError {
    #[error("no in-service slack generator in the network")]
    NoSlack,
    #[error("singular system: {detail}")]
    SingularSystem { detail: String },
    #[error("Newton-Raphson diverged after {iterations} iterations (mismatch {final_mismatch:.3e} pu)")]
    Diverged {
        iterations: usize,
        final_mismatch: f64,
    },
    #[error("singular Jacobian at iteration {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("invalid set point: {detail}")]
    InvalidSetpoint { detail: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Ac,
    Dc,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeVoltage {
    pub node: NodeKey,
    /// Magnitude, pu.
    pub vm: f64,
    /// Angle, rad.
    pub va: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenOutput {
    /// MW.
    pub p: f64,
    /// MVAr.
    pub q: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LineFlow {
    /// MW entering the line at the from end.
    pub p_from: f64,
    pub q_from: f64,
    pub p_to: f64,
    pub q_to: f64,
    /// MVA at the from end.
    pub s_from: f64,
    pub s_to: f64,
    /// Current at the sending end, A.
    pub current_a: f64,
}

impl LineFlow {
    /// Active flow `f_MW`.
    pub fn f_mw(&self) -> f64 {
        self.p_from
    }

    pub fn s_max(&self) -> f64 {
        self.s_from.max(self.s_to)
    }
}

/// Result of a load-flow computation. Elements outside the slack island
/// report zero flows and zero voltage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSolution {
    pub kind: SolverKind,
    pub nodes: Vec<NodeVoltage>,
    /// Indexed by generator id.
    pub gens: Vec<GenOutput>,
    /// Voltage magnitude at each load's node, indexed by load id.
    pub load_vm: Vec<f64>,
    /// Indexed by line id.
    pub lines: Vec<LineFlow>,
    pub converged: bool,
    pub iterations: usize,
    /// Active output of the slack generator, MW.
    pub slack_injection: f64,
    /// Final infinity-norm power mismatch, pu.
    pub max_mismatch: f64,
    /// Active losses, MW.
    pub losses: f64,
    pub islanded: Vec<ElementId>,
}

impl FlowSolution {
    pub fn max_loading(&self, grid: &Grid) -> f64 {
        grid.lines
            .iter()
            .zip(&self.lines)
            .filter(|(l, _)| l.in_service && l.rating > 0.0)
            .map(|(l, f)| f.s_max() / l.rating)
            .fold(0.0, f64::max)
    }
}

/// Anything that maps a grid to a flow solution.
pub trait Solver: Sync {
    fn solve(&self, grid: &Grid) -> Result<FlowSolution, PowerflowError>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct AcSolver(pub AcOptions);

impl Solver for AcSolver {
    fn solve(&self, grid: &Grid) -> Result<FlowSolution, PowerflowError> {
        solve_ac(grid, &self.0)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct DcSolver;

impl Solver for DcSolver {
    fn solve(&self, grid: &Grid) -> Result<FlowSolution, PowerflowError> {
        solve_dc(grid)
    }
}

impl<S: Solver + ?Sized> Solver for &S {
    fn solve(&self, grid: &Grid) -> Result<FlowSolution, PowerflowError> {
        (**self).solve(grid)
    }
}

/// Per-generator split of a node's reactive output, proportional to the
/// units' reactive ranges (equal shares when a range is unbounded or zero).
fn split_q(grid: &Grid, gens: &[crate::grid::GenId], q_total: f64) -> Vec<f64> {
    if gens.len() == 1 {
        return vec![q_total];
    }
    let units: Vec<_> = gens.iter().map(|g| &grid.generators[g.index()]).collect();
    let range: f64 = units.iter().map(|g| g.q_max - g.q_min).sum();
    let q_min: f64 = units.iter().map(|g| g.q_min).sum();
    if range.is_finite() && range > 1e-9 {
        units
            .iter()
            .map(|g| g.q_min + (q_total - q_min) * (g.q_max - g.q_min) / range)
            .collect()
    } else {
        vec![q_total / gens.len() as f64; gens.len()]
    }
}

/// Builds the solution record from solver-node voltages.
fn assemble(
    grid: &Grid,
    net: &Network,
    vm: &[f64],
    va: &[f64],
    kind: SolverKind,
    iterations: usize,
    max_mismatch: f64,
) -> FlowSolution {
    let base = grid.base_mva;
    let v: Vec<Complex64> = vm
        .iter()
        .zip(va)
        .map(|(&m, &a)| Complex64::from_polar(m, a))
        .collect();

    let mut lines = vec![LineFlow::default(); grid.lines.len()];
    let mut losses = 0.0;
    for br in &net.branches {
        let (f, t) = (br.from, br.to);
        let line = &grid.lines[br.line.index()];
        let (sf, st) = match kind {
            SolverKind::Ac => {
                let i_f = br.yff * v[f] + br.yft * v[t];
                let i_t = br.ytf * v[f] + br.ytt * v[t];
                (v[f] * i_f.conj() * base, v[t] * i_t.conj() * base)
            }
            SolverKind::Dc => {
                let b = 1.0 / (line.x * line.ratio);
                let p = b * (va[f] - va[t] - line.shift) * base;
                (Complex64::new(p, 0.0), Complex64::new(-p, 0.0))
            }
        };
        let (s_send, node_send) = if sf.re >= 0.0 { (sf.norm(), f) } else { (st.norm(), t) };
        let kv = vm[node_send] * net.base_kv[node_send];
        losses += sf.re + st.re;
        lines[br.line.index()] = LineFlow {
            p_from: sf.re,
            q_from: sf.im,
            p_to: st.re,
            q_to: st.im,
            s_from: sf.norm(),
            s_to: st.norm(),
            current_a: s_send / (3f64.sqrt() * kv) * 1000.0,
        };
    }

    let mut gens = vec![GenOutput::default(); grid.generators.len()];
    let mut slack_injection = 0.0;
    for (i, at) in net.gens_at.iter().enumerate() {
        if at.is_empty() {
            continue;
        }
        let (p_calc, q_calc) = match kind {
            SolverKind::Ac => {
                let s: Complex64 = net.ybus[i].iter().map(|&(k, y)| y * v[k]).sum();
                let s = v[i] * s.conj();
                (s.re, s.im)
            }
            SolverKind::Dc => (dc_injection(grid, net, va, i), 0.0),
        };
        let q_total = (q_calc + net.q_load[i]) * base;
        let q_split = match kind {
            SolverKind::Ac => split_q(grid, at, q_total),
            SolverKind::Dc => vec![0.0; at.len()],
        };
        for (g, q) in at.iter().zip(q_split) {
            let unit = &grid.generators[g.index()];
            gens[g.index()] = GenOutput { p: unit.p_set, q };
        }
        if i == net.slack {
            let p_total = (p_calc + net.p_load[i]) * base;
            let others: f64 = at
                .iter()
                .map(|g| &grid.generators[g.index()])
                .filter(|g| !g.slack)
                .map(|g| g.p_set)
                .sum();
            let slack_id = at
                .iter()
                .find(|g| grid.generators[g.index()].slack)
                .expect("slack node holds the slack");
            slack_injection = p_total - others;
            gens[slack_id.index()].p = slack_injection;
        }
    }

    let load_vm = net
        .load_node
        .iter()
        .map(|n| n.map_or(0.0, |i| vm[i]))
        .collect();
    let nodes = net
        .graph_node
        .iter()
        .enumerate()
        .map(|(i, &g)| NodeVoltage {
            node: net.graph.nodes[g],
            vm: vm[i],
            va: va[i],
        })
        .collect();

    FlowSolution {
        kind,
        nodes,
        gens,
        load_vm,
        lines,
        converged: true,
        iterations,
        slack_injection,
        max_mismatch,
        losses,
        islanded: net.islanded.clone(),
    }
}

/// DC active injection at node `i` implied by the angles, pu.
fn dc_injection(grid: &Grid, net: &Network, va: &[f64], i: usize) -> f64 {
    let mut p = net.gs[i];
    for br in &net.branches {
        let line = &grid.lines[br.line.index()];
        let b = 1.0 / (line.x * line.ratio);
        let flow = b * (va[br.from] - va[br.to] - line.shift);
        if br.from == i {
            p += flow;
        } else if br.to == i {
            p -= flow;
        }
    }
    p
}
