use nalgebra::{DMatrix, DVector};

use super::network::Network;
use super::{assemble, FlowSolution, PowerflowError, SolverKind};
use crate::grid::Grid;

/// Linearised load flow: unit voltages, lossless branches, `B θ = P`.
pub fn solve_dc(grid: &Grid) -> Result<FlowSolution, PowerflowError> {
    let net = Network::build(grid)?;
    let n = net.len();
    let slack = net.slack;
    let red = |i: usize| if i < slack { i } else { i - 1 };

    let mut b = DMatrix::<f64>::zeros(n - 1, n - 1);
    let mut p = DVector::<f64>::zeros(n - 1);
    for i in (0..n).filter(|&i| i != slack) {
        p[red(i)] = net.p_spec[i] - net.gs[i];
    }
    for br in &net.branches {
        let line = &grid.lines[br.line.index()];
        let y = 1.0 / (line.x * line.ratio);
        let (f, t) = (br.from, br.to);
        if f == t {
            continue;
        }
        if f != slack {
            b[(red(f), red(f))] += y;
            p[red(f)] += y * line.shift;
        }
        if t != slack {
            b[(red(t), red(t))] += y;
            p[red(t)] -= y * line.shift;
        }
        if f != slack && t != slack {
            b[(red(f), red(t))] -= y;
            b[(red(t), red(f))] -= y;
        }
    }

    let theta = if n > 1 {
        b.lu().solve(&p).ok_or_else(|| PowerflowError::SingularSystem {
            detail: "reduced susceptance matrix".into(),
        })?
    } else {
        DVector::zeros(0)
    };
    let mut va = vec![0.0; n];
    for i in (0..n).filter(|&i| i != slack) {
        va[i] = theta[red(i)];
    }
    if va.iter().any(|a| !a.is_finite()) {
        return Err(PowerflowError::SingularSystem {
            detail: "non-finite angles".into(),
        });
    }
    let vm = vec![1.0; n];
    Ok(assemble(grid, &net, &vm, &va, SolverKind::Dc, 1, 0.0))
}
