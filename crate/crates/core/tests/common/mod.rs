//! Independent reference computations shared by the integration tests.
//!
//! Everything here works on the plain bus-branch view of a grid (one node
//! per substation, every in-service element on it) and shares no code with
//! the solvers under test.

#![allow(dead_code)]

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use topoadvisor::grid::Grid;

/// Bus index by substation id, in id order.
pub fn bus_index(grid: &Grid) -> BTreeMap<u32, usize> {
    grid.buses
        .iter()
        .enumerate()
        .map(|(i, b)| (b.id.0, i))
        .collect()
}

fn slack_bus(grid: &Grid, idx: &BTreeMap<u32, usize>) -> usize {
    let g = grid
        .generators
        .iter()
        .find(|g| g.slack && g.in_service)
        .expect("slack generator");
    idx[&g.sub.0]
}

/// Net scheduled injections per bus, pu, with the slack's own output left
/// out.
pub fn bus_injections(grid: &Grid) -> (Vec<f64>, Vec<f64>) {
    let idx = bus_index(grid);
    let n = grid.buses.len();
    let (mut p, mut q) = (vec![0.0; n], vec![0.0; n]);
    for l in &grid.loads {
        p[idx[&l.sub.0]] -= l.p / grid.base_mva;
        q[idx[&l.sub.0]] -= l.q / grid.base_mva;
    }
    for g in grid.generators.iter().filter(|g| g.in_service && !g.slack) {
        p[idx[&g.sub.0]] += g.p_set / grid.base_mva;
    }
    (p, q)
}

pub fn ybus(grid: &Grid) -> DMatrix<Complex64> {
    let idx = bus_index(grid);
    let n = grid.buses.len();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for (i, b) in grid.buses.iter().enumerate() {
        y[(i, i)] += Complex64::new(b.gs, b.bs) / grid.base_mva;
    }
    for l in grid.lines.iter().filter(|l| l.in_service) {
        let (f, t) = (idx[&l.from_sub.0], idx[&l.to_sub.0]);
        let z = Complex64::new(l.r, l.x);
        let ys = 1.0 / z;
        let bc = Complex64::new(0.0, l.b / 2.0);
        let a = Complex64::new(l.ratio * l.shift.cos(), l.ratio * l.shift.sin());
        y[(f, f)] += (ys + bc) / (a * a.conj());
        y[(t, t)] += ys + bc;
        y[(f, t)] -= ys / a.conj();
        y[(t, f)] -= ys / a;
    }
    y
}

/// Accelerated Gauss-Seidel load flow without reactive limits. Returns
/// magnitudes and angles per bus in id order.
pub fn gauss_seidel(grid: &Grid, tol: f64, max_sweeps: usize) -> (Vec<f64>, Vec<f64>) {
    let idx = bus_index(grid);
    let n = grid.buses.len();
    let y = ybus(grid);
    let (p, q_spec) = bus_injections(grid);
    let slack = slack_bus(grid, &idx);
    let mut v_set: Vec<Option<f64>> = vec![None; n];
    for g in grid.generators.iter().filter(|g| g.in_service) {
        v_set[idx[&g.sub.0]] = Some(g.v_set);
    }
    let mut v: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(v_set[i].unwrap_or(1.0), 0.0))
        .collect();
    let alpha = 1.6;
    for _ in 0..max_sweeps {
        let mut delta: f64 = 0.0;
        for i in (0..n).filter(|&i| i != slack) {
            let sum: Complex64 = (0..n).filter(|&k| k != i).map(|k| y[(i, k)] * v[k]).sum();
            let q = match v_set[i] {
                Some(_) => -(v[i].conj() * (sum + y[(i, i)] * v[i])).im,
                None => q_spec[i],
            };
            let s = Complex64::new(p[i], -q);
            let v_new = (s / v[i].conj() - sum) / y[(i, i)];
            let v_new = match v_set[i] {
                Some(m) => Complex64::from_polar(m, v_new.arg()),
                None => v[i] + alpha * (v_new - v[i]),
            };
            delta = delta.max((v_new - v[i]).norm());
            v[i] = v_new;
        }
        if delta < tol {
            break;
        }
    }
    (v.iter().map(|c| c.norm()).collect(), v.iter().map(|c| c.arg()).collect())
}

/// PTDF matrix (lines × buses, slack column zero) from the explicit inverse
/// of the reduced susceptance matrix; pu flow per pu injection.
pub fn ptdf(grid: &Grid) -> DMatrix<f64> {
    let idx = bus_index(grid);
    let n = grid.buses.len();
    let slack = slack_bus(grid, &idx);
    let mut b = DMatrix::<f64>::zeros(n, n);
    for l in grid.lines.iter().filter(|l| l.in_service) {
        let (f, t) = (idx[&l.from_sub.0], idx[&l.to_sub.0]);
        let s = 1.0 / (l.x * l.ratio);
        b[(f, f)] += s;
        b[(t, t)] += s;
        b[(f, t)] -= s;
        b[(t, f)] -= s;
    }
    let keep: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let red = DMatrix::from_fn(n - 1, n - 1, |r, c| b[(keep[r], keep[c])]);
    let x = red.try_inverse().expect("connected network");
    let mut out = DMatrix::<f64>::zeros(grid.lines.len(), n);
    for l in grid.lines.iter().filter(|l| l.in_service) {
        let (f, t) = (idx[&l.from_sub.0], idx[&l.to_sub.0]);
        let s = 1.0 / (l.x * l.ratio);
        for (c, &bus) in keep.iter().enumerate() {
            let xf = if f == slack { 0.0 } else { x[(keep.iter().position(|&k| k == f).unwrap(), c)] };
            let xt = if t == slack { 0.0 } else { x[(keep.iter().position(|&k| k == t).unwrap(), c)] };
            out[(l.id.index(), bus)] = s * (xf - xt);
        }
    }
    out
}

/// DC flows in MW by PTDF superposition, for grids without phase shifters
/// and shunt conductance.
pub fn ptdf_flows(grid: &Grid) -> Vec<f64> {
    let (p, _) = bus_injections(grid);
    let flows = ptdf(grid) * DVector::from_vec(p);
    flows.iter().map(|f| f * grid.base_mva).collect()
}

/// Small grid: substations `1..=n_subs`, 100 kV, one slack unit at S1 and
/// loads given as `(sub, mw)` with a 0.2 MVAr/MW power factor.
pub fn toy(n_subs: u32, lines: &[(u32, u32)], loads: &[(u32, f64)], rating: f64) -> Grid {
    use topoadvisor::grid::{Bus, GenId, Generator, Line, LineId, Load, LoadId, SubId};
    let buses = (1..=n_subs)
        .map(|i| Bus {
            id: SubId(i),
            base_kv: 100.0,
            gs: 0.0,
            bs: 0.0,
            v_min: 0.9,
            v_max: 1.1,
        })
        .collect();
    let lines = lines
        .iter()
        .enumerate()
        .map(|(i, &(f, t))| Line {
            id: LineId(i as u32),
            from_sub: SubId(f),
            to_sub: SubId(t),
            r: 0.005,
            x: 0.05,
            b: 0.0,
            ratio: 1.0,
            shift: 0.0,
            rating,
            in_service: true,
        })
        .collect();
    let total: f64 = loads.iter().map(|l| l.1).sum();
    let generators = vec![Generator {
        id: GenId(0),
        sub: SubId(1),
        p_set: total,
        v_set: 1.0,
        q_min: -1000.0,
        q_max: 1000.0,
        p_max: 10.0 * total + 100.0,
        in_service: true,
        slack: true,
    }];
    let loads = loads
        .iter()
        .enumerate()
        .map(|(i, &(sub, p))| Load {
            id: LoadId(i as u32),
            sub: SubId(sub),
            p,
            q: 0.2 * p,
        })
        .collect();
    Grid::from_parts(100.0, buses, lines, generators, loads).expect("valid toy grid")
}

pub fn case30() -> Grid {
    topoadvisor::case_io::load_builtin("case30").unwrap().grid
}
