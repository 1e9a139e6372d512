use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::info;

use super::sampling::{Sampler, SamplingConfig};
use super::ScenarioError;
use crate::grid::{GenId, Grid, LineId, LoadId};
use crate::powerflow::{FlowSolution, Solver};

pub const DATASET_VERSION: u32 = 1;
const DATASET_FORMAT: &str = "topoadvisor-dataset";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Valid => 1,
            Split::Test => 2,
        }
    }

    fn from_code(c: u8) -> Option<Split> {
        match c {
            0 => Some(Split::Train),
            1 => Some(Split::Valid),
            2 => Some(Split::Test),
            _ => None,
        }
    }
}

/// One sampled state and its reference load flow.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledCase {
    /// Load active power, MW.
    pub c_p: Vec<f64>,
    /// Load reactive power, MVAr.
    pub c_q: Vec<f64>,
    /// Generator active set points, MW; 0 when disconnected.
    pub p_p: Vec<f64>,
    /// Generator voltage set points, pu; 0 when disconnected.
    pub p_v: Vec<f64>,
    pub outage: Option<LineId>,
    /// Generator reactive output, MVAr.
    pub p_q: Vec<f64>,
    /// Load voltage magnitude, pu.
    pub c_v: Vec<f64>,
    /// Active flow at the sending end, MW.
    pub f_mw: Vec<f64>,
    /// Current at the sending end, A.
    pub f_a: Vec<f64>,
    pub split: Split,
}

impl LabeledCase {
    /// Builds the case from a solved grid. Element vectors follow id order.
    pub fn from_solution(grid: &Grid, outage: Option<LineId>, sol: &FlowSolution) -> Self {
        let on = |b: bool, v: f64| if b { v } else { 0.0 };
        LabeledCase {
            c_p: grid.loads.iter().map(|l| l.p).collect(),
            c_q: grid.loads.iter().map(|l| l.q).collect(),
            p_p: grid.generators.iter().map(|g| on(g.in_service, g.p_set)).collect(),
            p_v: grid.generators.iter().map(|g| on(g.in_service, g.v_set)).collect(),
            outage,
            p_q: sol.gens.iter().map(|g| g.q).collect(),
            c_v: sol.load_vm.clone(),
            f_mw: sol.lines.iter().map(|f| f.f_mw()).collect(),
            f_a: sol.lines.iter().map(|f| f.current_a).collect(),
            split: Split::Train,
        }
    }

    /// The sampled grid state, rebuilt on `base`. A generator counts as
    /// disconnected when its voltage set point is 0.
    pub fn grid(&self, base: &Grid) -> Grid {
        let mut g = base.clone();
        for (l, (&p, &q)) in g.loads.iter_mut().zip(self.c_p.iter().zip(&self.c_q)) {
            l.p = p;
            l.q = q;
        }
        for (gen, (&p, &v)) in g.generators.iter_mut().zip(self.p_p.iter().zip(&self.p_v)) {
            gen.in_service = v > 0.0;
            if gen.in_service {
                gen.p_set = p;
                gen.v_set = v;
            } else {
                gen.p_set = 0.0;
            }
        }
        if let Some(k) = self.outage {
            g.lines[k.index()].in_service = false;
        }
        g
    }

    /// Position of the outage in the one-hot block: 0 for none, `k + 1`
    /// for line `k`.
    pub fn outage_index(&self) -> usize {
        self.outage.map_or(0, |k| k.index() + 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub loads: Vec<LoadId>,
    pub gens: Vec<GenId>,
    pub lines: Vec<LineId>,
    pub cases: Vec<LabeledCase>,
    /// Samples dropped because the load flow failed.
    pub diverged: usize,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &LabeledCase> {
        self.cases.iter().filter(move |c| c.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn columns(&self) -> Vec<String> {
        let mut cols = Vec::new();
        let block = |cols: &mut Vec<String>, prefix: &str, ids: &[String]| {
            cols.extend(ids.iter().map(|id| format!("{prefix}[{id}]")));
        };
        let loads: Vec<String> = self.loads.iter().map(|i| i.to_string()).collect();
        let gens: Vec<String> = self.gens.iter().map(|i| i.to_string()).collect();
        let lines: Vec<String> = self.lines.iter().map(|i| i.to_string()).collect();
        block(&mut cols, "c_p", &loads);
        block(&mut cols, "c_q", &loads);
        block(&mut cols, "p_p", &gens);
        block(&mut cols, "p_v", &gens);
        cols.push("outage_index".into());
        block(&mut cols, "p_q", &gens);
        block(&mut cols, "c_v", &loads);
        block(&mut cols, "f_mw", &lines);
        block(&mut cols, "f_a", &lines);
        cols.push("split".into());
        cols
    }

    /// Writes a JSON header line followed by little-endian rows: every
    /// real column as f64, the outage index as u32 and the split as u8.
    pub fn write<W: Write>(&self, mut out: W) -> Result<(), ScenarioError> {
        let header = Header {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            n_cases: self.cases.len(),
            diverged: self.diverged,
            loads: self.loads.clone(),
            gens: self.gens.clone(),
            lines: self.lines.clone(),
            columns: self.columns(),
        };
        serde_json::to_writer(&mut out, &header).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
        let mut row = Vec::new();
        for c in &self.cases {
            row.clear();
            for block in [&c.c_p, &c.c_q, &c.p_p, &c.p_v] {
                block.iter().for_each(|v| row.extend_from_slice(&v.to_le_bytes()));
            }
            row.extend_from_slice(&(c.outage_index() as u32).to_le_bytes());
            for block in [&c.p_q, &c.c_v, &c.f_mw, &c.f_a] {
                block.iter().for_each(|v| row.extend_from_slice(&v.to_le_bytes()));
            }
            row.push(c.split.code());
            out.write_all(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read<R: BufRead>(mut input: R) -> Result<Dataset, ScenarioError> {
        let mut line = String::new();
        input.read_line(&mut line)?;
        let header: Header =
            serde_json::from_str(&line).map_err(|e| ScenarioError::Format(e.to_string()))?;
        if header.format != DATASET_FORMAT {
            return Err(ScenarioError::Format(format!("not a dataset file ({})", header.format)));
        }
        if header.version != DATASET_VERSION {
            return Err(ScenarioError::Format(format!(
                "dataset version {} (expected {DATASET_VERSION})",
                header.version
            )));
        }
        let (nl, ng, nk) = (header.loads.len(), header.gens.len(), header.lines.len());
        let mut cases = Vec::with_capacity(header.n_cases);
        let mut buf8 = [0u8; 8];
        let mut read_block = |input: &mut R, n: usize| -> std::io::Result<Vec<f64>> {
            (0..n)
                .map(|_| {
                    input.read_exact(&mut buf8)?;
                    Ok(f64::from_le_bytes(buf8))
                })
                .collect()
        };
        for i in 0..header.n_cases {
            let c_p = read_block(&mut input, nl)?;
            let c_q = read_block(&mut input, nl)?;
            let p_p = read_block(&mut input, ng)?;
            let p_v = read_block(&mut input, ng)?;
            let mut b4 = [0u8; 4];
            input.read_exact(&mut b4)?;
            let idx = u32::from_le_bytes(b4) as usize;
            if idx > nk {
                return Err(ScenarioError::Format(format!("case {i}: outage index {idx}")));
            }
            let outage = idx.checked_sub(1).map(|k| header.lines[k]);
            let p_q = read_block(&mut input, ng)?;
            let c_v = read_block(&mut input, nl)?;
            let f_mw = read_block(&mut input, nk)?;
            let f_a = read_block(&mut input, nk)?;
            let mut b1 = [0u8; 1];
            input.read_exact(&mut b1)?;
            let split = Split::from_code(b1[0])
                .ok_or_else(|| ScenarioError::Format(format!("case {i}: split code {}", b1[0])))?;
            cases.push(LabeledCase {
                c_p,
                c_q,
                p_p,
                p_v,
                outage,
                p_q,
                c_v,
                f_mw,
                f_a,
                split,
            });
        }
        Ok(Dataset {
            loads: header.loads,
            gens: header.gens,
            lines: header.lines,
            cases,
            diverged: header.diverged,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    n_cases: usize,
    diverged: usize,
    loads: Vec<LoadId>,
    gens: Vec<GenId>,
    lines: Vec<LineId>,
    columns: Vec<String>,
}

/// Random stream for case `index` of a run seeded with `seed`.
pub fn case_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Intact grid plus every single in-service line outage.
pub fn outage_configurations(grid: &Grid) -> Vec<Option<LineId>> {
    std::iter::once(None)
        .chain(grid.lines.iter().filter(|l| l.in_service).map(|l| Some(l.id)))
        .collect()
}

/// Samples `n_s` states per outage configuration, labels them with the
/// reference solver, shuffles and tags them 50/25/25.
pub fn build_dataset<S: Solver + ?Sized>(
    grid: &Grid,
    config: &SamplingConfig,
    solver: &S,
) -> Result<Dataset, ScenarioError> {
    let sampler = Sampler::new(config)?;
    let configs = outage_configurations(grid);
    let n_s = config.n_s;
    let jobs: Vec<(usize, usize)> = (0..configs.len())
        .flat_map(|c| (0..n_s).map(move |i| (c, i)))
        .collect();

    let labeled: Vec<Result<Option<LabeledCase>, ScenarioError>> = jobs
        .par_iter()
        .map(|&(c, i)| {
            let mut rng = case_rng(config.seed, (c * n_s + i) as u64);
            let outage = configs[c];
            let g = loop {
                match sampler.sample(grid, outage, &mut rng) {
                    Err(ScenarioError::AllGeneratorsOut) => continue,
                    other => break other?,
                }
            };
            Ok(match solver.solve(&g) {
                Ok(sol) if sol.converged => Some(LabeledCase::from_solution(&g, outage, &sol)),
                _ => None,
            })
        })
        .collect();

    let mut cases = Vec::with_capacity(labeled.len());
    let mut bad = vec![0usize; configs.len()];
    for ((c, _), r) in jobs.iter().zip(labeled) {
        match r? {
            Some(case) => cases.push(case),
            None => bad[*c] += 1,
        }
    }
    if let Some(c) = (0..configs.len()).find(|&c| 2 * bad[c] > n_s) {
        return Err(ScenarioError::DegenerateConfig {
            outage: configs[c],
            diverged: bad[c],
            total: n_s,
        });
    }
    let diverged = bad.iter().sum();

    let mut rng = case_rng(config.seed, u64::MAX);
    cases.shuffle(&mut rng);
    assign_splits(&mut cases);
    info!(cases = cases.len(), diverged, "dataset built");
    Ok(Dataset {
        loads: grid.loads.iter().map(|l| l.id).collect(),
        gens: grid.generators.iter().map(|g| g.id).collect(),
        lines: grid.lines.iter().map(|l| l.id).collect(),
        cases,
        diverged,
    })
}

/// First half train, next quarter validation, rest test.
pub fn assign_splits(cases: &mut [LabeledCase]) {
    let n = cases.len();
    let (a, b) = (n / 2, n / 2 + n / 4);
    for (i, c) in cases.iter_mut().enumerate() {
        c.split = if i < a {
            Split::Train
        } else if i < b {
            Split::Valid
        } else {
            Split::Test
        };
    }
}
