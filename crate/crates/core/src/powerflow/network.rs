use num_complex::Complex64;

use super::PowerflowError;
use crate::grid::{electrical_nodes, ElementId, GenId, Grid, LineId, NodalGraph};

/// Branch admittances of the pi model, in pu.
#[derive(Clone, Copy, Debug)]
pub(crate) struct BranchModel {
    pub line: LineId,
    pub from: usize,
    pub to: usize,
    pub yff: Complex64,
    pub yft: Complex64,
    pub ytf: Complex64,
    pub ytt: Complex64,
}

/// Per-unit network restricted to the island holding the slack.
#[derive(Clone, Debug)]
pub(crate) struct Network {
    pub graph: NodalGraph,
    /// Graph node index of each solver node.
    pub graph_node: Vec<usize>,
    pub slack: usize,
    /// Scheduled active injection of non-slack generators minus load, pu.
    pub p_spec: Vec<f64>,
    pub q_load: Vec<f64>,
    pub p_load: Vec<f64>,
    /// Voltage set point where the node holds an in-service generator.
    pub v_set: Vec<Option<f64>>,
    pub gens_at: Vec<Vec<GenId>>,
    pub branches: Vec<BranchModel>,
    /// Sparse rows of the bus admittance matrix.
    pub ybus: Vec<Vec<(usize, Complex64)>>,
    /// Shunt conductance per node, pu at 1 pu voltage.
    pub gs: Vec<f64>,
    /// Solver node of each load, `None` when islanded.
    pub load_node: Vec<Option<usize>>,
    pub gen_node: Vec<Option<usize>>,
    /// Base kV per solver node.
    pub base_kv: Vec<f64>,
    pub islanded: Vec<ElementId>,
}

impl Network {
    pub fn build(grid: &Grid) -> Result<Network, PowerflowError> {
        let graph = electrical_nodes(grid);
        let main = graph.main.ok_or(PowerflowError::NoSlack)?;
        let graph_node: Vec<usize> = (0..graph.nodes.len())
            .filter(|&n| graph.component[n] == main)
            .collect();
        let mut pos = vec![None; graph.nodes.len()];
        for (i, &g) in graph_node.iter().enumerate() {
            pos[g] = Some(i);
        }
        let n = graph_node.len();
        let base = grid.base_mva;

        let mut net = Network {
            slack: 0,
            p_spec: vec![0.0; n],
            q_load: vec![0.0; n],
            p_load: vec![0.0; n],
            v_set: vec![None; n],
            gens_at: vec![Vec::new(); n],
            branches: Vec::new(),
            ybus: vec![Vec::new(); n],
            gs: vec![0.0; n],
            load_node: vec![None; grid.loads.len()],
            gen_node: vec![None; grid.generators.len()],
            base_kv: vec![1.0; n],
            islanded: Vec::new(),
            graph_node,
            graph: NodalGraph::default(),
        };
        let solver_node = |graph: &NodalGraph, sub, elem| {
            graph.node_of(grid, sub, elem).and_then(|g| pos[g])
        };

        for load in &grid.loads {
            match solver_node(&graph, load.sub, ElementId::Load(load.id)) {
                Some(i) => {
                    net.load_node[load.id.index()] = Some(i);
                    net.p_load[i] += load.p / base;
                    net.q_load[i] += load.q / base;
                    net.p_spec[i] -= load.p / base;
                }
                None => net.islanded.push(ElementId::Load(load.id)),
            }
        }
        let mut slack = None;
        for gen in grid.generators.iter().filter(|g| g.in_service) {
            match solver_node(&graph, gen.sub, ElementId::Gen(gen.id)) {
                Some(i) => {
                    net.gen_node[gen.id.index()] = Some(i);
                    net.gens_at[i].push(gen.id);
                    if net.v_set[i].is_none() {
                        net.v_set[i] = Some(gen.v_set);
                    }
                    if gen.slack {
                        slack = Some(i);
                    } else {
                        net.p_spec[i] += gen.p_set / base;
                    }
                }
                None => net.islanded.push(ElementId::Gen(gen.id)),
            }
        }
        net.slack = slack.ok_or(PowerflowError::NoSlack)?;

        let mut diag = vec![Complex64::new(0.0, 0.0); n];
        for (i, &g) in net.graph_node.iter().enumerate() {
            let key = graph.nodes[g];
            let bus = grid.bus(key.sub).expect("validated grid");
            net.base_kv[i] = bus.base_kv;
            // shunts sit on busbar 1, or on busbar 2 when busbar 1 is not a node
            let shunt_here = match key.busbar {
                crate::grid::Busbar::One => true,
                crate::grid::Busbar::Two => graph
                    .node(crate::grid::NodeKey {
                        sub: key.sub,
                        busbar: crate::grid::Busbar::One,
                    })
                    .is_none(),
            };
            if shunt_here {
                net.gs[i] = bus.gs / base;
                diag[i] += Complex64::new(bus.gs, bus.bs) / base;
            }
        }

        let mut offdiag: Vec<std::collections::BTreeMap<usize, Complex64>> =
            vec![Default::default(); n];
        for edge in &graph.edges {
            let (Some(f), Some(t)) = (pos[edge.from], pos[edge.to]) else {
                continue;
            };
            let line = &grid.lines[edge.line.index()];
            let ys = Complex64::new(1.0, 0.0) / Complex64::new(line.r, line.x);
            let tap = Complex64::from_polar(line.ratio, line.shift);
            let ytt = ys + Complex64::new(0.0, line.b / 2.0);
            let yff = ytt / (line.ratio * line.ratio);
            let yft = -ys / tap.conj();
            let ytf = -ys / tap;
            diag[f] += yff;
            diag[t] += ytt;
            *offdiag[f].entry(t).or_default() += yft;
            *offdiag[t].entry(f).or_default() += ytf;
            net.branches.push(BranchModel {
                line: line.id,
                from: f,
                to: t,
                yff,
                yft,
                ytf,
                ytt,
            });
        }
        for i in 0..n {
            let mut row = vec![(i, diag[i])];
            row.extend(offdiag[i].iter().map(|(&k, &y)| (k, y)));
            row.sort_by_key(|&(k, _)| k);
            net.ybus[i] = row;
        }
        net.graph = graph;
        Ok(net)
    }

    pub fn len(&self) -> usize {
        self.graph_node.len()
    }
}
