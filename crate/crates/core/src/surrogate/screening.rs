use serde::{Deserialize, Serialize};

use super::encoding::Prediction;
use super::model::SurrogateModel;
use super::SurrogateError;
use crate::grid::{Grid, LineId};
use crate::powerflow::{SecurityCriterion, SecurityIssue, ThermalIssue};

/// Flags are raised at `threshold - margin` to favour recall.
pub const DEFAULT_MARGIN: f64 = 0.05;

#[derive(Clone, Debug)]
enum VoltageSource {
    Load(usize),
    Gen(usize),
    Neighbours(Vec<usize>),
    Nominal,
}

/// Per-substation estimate of the voltage magnitude from surrogate
/// outputs: a load's predicted voltage, else a generator set point, else
/// the mean over neighbours that have one.
#[derive(Clone, Debug)]
struct VoltageMap {
    sources: Vec<VoltageSource>,
}

impl VoltageMap {
    fn new(grid: &Grid) -> VoltageMap {
        let n = grid.buses.len();
        let mut sources = vec![VoltageSource::Nominal; n];
        for (i, l) in grid.loads.iter().enumerate().rev() {
            if let Some(s) = grid.sub_index(l.sub) {
                sources[s] = VoltageSource::Load(i);
            }
        }
        for (i, g) in grid.generators.iter().enumerate().rev() {
            if let Some(s) = grid.sub_index(g.sub) {
                if g.in_service && matches!(sources[s], VoltageSource::Nominal) {
                    sources[s] = VoltageSource::Gen(i);
                }
            }
        }
        let direct: Vec<bool> = sources.iter().map(|s| !matches!(s, VoltageSource::Nominal)).collect();
        let mut nbrs: Vec<Vec<usize>> = vec![Vec::new(); n];
        for l in grid.lines.iter().filter(|l| l.in_service) {
            if let (Some(a), Some(b)) = (grid.sub_index(l.from_sub), grid.sub_index(l.to_sub)) {
                if direct[b] && !nbrs[a].contains(&b) {
                    nbrs[a].push(b);
                }
                if direct[a] && !nbrs[b].contains(&a) {
                    nbrs[b].push(a);
                }
            }
        }
        for (s, src) in sources.iter_mut().enumerate() {
            if !direct[s] && !nbrs[s].is_empty() {
                *src = VoltageSource::Neighbours(std::mem::take(&mut nbrs[s]));
            }
        }
        VoltageMap { sources }
    }

    fn direct(&self, s: usize, p: &Prediction, grid: &Grid) -> f64 {
        match self.sources[s] {
            VoltageSource::Load(i) => p.c_v[i],
            VoltageSource::Gen(i) => grid.generators[i].v_set,
            _ => 1.0,
        }
    }

    fn vm(&self, s: usize, p: &Prediction, grid: &Grid) -> f64 {
        match &self.sources[s] {
            VoltageSource::Neighbours(v) => {
                v.iter().map(|&b| self.direct(b, p, grid)).sum::<f64>() / v.len() as f64
            }
            _ => self.direct(s, p, grid),
        }
    }
}

/// Predicted apparent flow at the sending end of each line, MVA; 0 for
/// lines out of service.
fn predicted_mva(grid: &Grid, vmap: &VoltageMap, p: &Prediction) -> Vec<f64> {
    grid.lines
        .iter()
        .enumerate()
        .map(|(i, l)| {
            if !l.in_service {
                return 0.0;
            }
            let send = if p.f_mw[i] >= 0.0 { l.from_sub } else { l.to_sub };
            let Some(s) = grid.sub_index(send) else {
                return p.f_mw[i].abs();
            };
            let kv = grid.buses[s].base_kv * vmap.vm(s, p, grid);
            let from_current = 3f64.sqrt() * kv * p.f_a[i].abs() / 1000.0;
            from_current.max(p.f_mw[i].abs())
        })
        .collect()
}

/// Predicted loading ratio of every line of `grid`.
pub fn predicted_loading(model: &SurrogateModel, grid: &Grid) -> Result<Vec<f64>, SurrogateError> {
    let p = model.predict_grid(grid)?;
    let vmap = VoltageMap::new(grid);
    Ok(ratios(grid, &predicted_mva(grid, &vmap, &p)))
}

fn ratios(grid: &Grid, mva: &[f64]) -> Vec<f64> {
    grid.lines
        .iter()
        .zip(mva)
        .map(|(l, s)| if l.rating > 0.0 { s / l.rating } else { 0.0 })
        .collect()
}

fn flag(grid: &Grid, mva: &[f64], level: f64, contingency: Option<LineId>) -> Vec<ThermalIssue> {
    grid.lines
        .iter()
        .zip(mva)
        .filter(|(l, _)| l.in_service && l.rating > 0.0)
        .filter_map(|(l, &flow)| {
            let ratio = flow / l.rating;
            (ratio > level).then(|| ThermalIssue {
                line: l.id,
                flow,
                limit: l.rating,
                ratio,
                contingency,
            })
        })
        .collect()
}

/// Thermal issues predicted by the surrogate, flagged at
/// `criterion.threshold - margin`.
pub fn fast_screen(
    model: &SurrogateModel,
    grid: &Grid,
    criterion: &SecurityCriterion,
    margin: f64,
) -> Result<Vec<SecurityIssue>, SurrogateError> {
    let p = model.predict_grid(grid)?;
    let vmap = VoltageMap::new(grid);
    let mva = predicted_mva(grid, &vmap, &p);
    Ok(flag(grid, &mva, criterion.threshold - margin, None)
        .into_iter()
        .map(SecurityIssue::Thermal)
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreenedContingency {
    pub line: LineId,
    pub issues: Vec<ThermalIssue>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScreeningReport {
    pub margin: f64,
    /// Predicted issues of the intact grid.
    pub base: Vec<ThermalIssue>,
    /// Contingencies with at least one predicted issue, in line order.
    pub flagged: Vec<ScreenedContingency>,
    pub screened: usize,
}

impl ScreeningReport {
    pub fn is_flagged(&self, line: LineId) -> bool {
        self.flagged.iter().any(|c| c.line == line)
    }

    pub fn flags(&self, line: LineId, contingency: LineId) -> bool {
        self.flagged
            .iter()
            .any(|c| c.line == contingency && c.issues.iter().any(|i| i.line == line))
    }
}

/// Screens every single-line outage of `grid` with one batched forward
/// pass in single precision.
pub fn fast_n_minus_1(
    model: &SurrogateModel,
    grid: &Grid,
    criterion: &SecurityCriterion,
    margin: f64,
) -> Result<ScreeningReport, SurrogateError> {
    let enc = &model.encoding;
    if enc.outage_of(grid)?.is_some() {
        return Err(SurrogateError::MultipleOutages(2));
    }
    let raw = enc.raw_input(grid)?;
    let n_in = enc.n_inputs();
    let hot = n_in - enc.lines.len() - 1;
    let outaged: Vec<LineId> = grid.lines.iter().filter(|l| l.in_service).map(|l| l.id).collect();
    let rows = outaged.len() + 1;

    let mut x = Vec::with_capacity(rows * n_in);
    for r in 0..rows {
        let mut row = raw.clone();
        if r > 0 {
            row[hot] = 0.0;
            row[hot + outaged[r - 1].index() + 1] = 1.0;
        }
        enc.input.normalize(&mut row);
        x.extend(row.iter().map(|&v| v as f32));
    }
    let out = model.fast().forward(&x, rows);

    let vmap = VoltageMap::new(grid);
    let level = criterion.threshold - margin;
    let mut report = ScreeningReport {
        margin,
        screened: outaged.len(),
        ..ScreeningReport::default()
    };
    let mut g = grid.clone();
    for (r, y) in out.chunks_exact(enc.n_outputs()).enumerate() {
        let y: Vec<f64> = y.iter().map(|&v| v as f64).collect();
        let p = enc.decode(&y)?;
        if r == 0 {
            report.base = flag(grid, &predicted_mva(grid, &vmap, &p), level, None);
            continue;
        }
        let k = outaged[r - 1];
        g.lines[k.index()].in_service = false;
        let issues = flag(&g, &predicted_mva(&g, &vmap, &p), level, Some(k));
        g.lines[k.index()].in_service = true;
        if !issues.is_empty() {
            report.flagged.push(ScreenedContingency { line: k, issues });
        }
    }
    Ok(report)
}
