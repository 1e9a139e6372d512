use serde::{Deserialize, Serialize};

use super::SurrogateError;
use crate::grid::{GenId, Grid, LineId, LoadId};
use crate::scenario::{Dataset, LabeledCase, Split};

/// Per-feature affine normalization `(x - mean) / sd`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Normalizer {
    /// Fits on the rows of `data` (row-major, `width` columns). Features
    /// with no spread get sd 0: they normalize to 0 and denormalize to the
    /// training constant.
    pub fn fit(data: &[f64], width: usize) -> Normalizer {
        let n = data.len() / width.max(1);
        let mut mean = vec![0.0; width];
        let mut sd = vec![0.0; width];
        if n == 0 {
            return Normalizer { mean, sd };
        }
        for row in data.chunks_exact(width) {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; width];
        for row in data.chunks_exact(width) {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        for j in 0..width {
            let s = (var[j] / n as f64).sqrt();
            if s > 1e-9 * mean[j].abs().max(1.0) {
                sd[j] = s;
            }
        }
        Normalizer { mean, sd }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, row: &mut [f64]) {
        for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.sd) {
            *x = if *s > 0.0 { (*x - m) / s } else { 0.0 };
        }
    }

    pub fn denormalize(&self, row: &mut [f64]) {
        for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.sd) {
            *x = if *s > 0.0 { *x * s + m } else { *m };
        }
    }
}

/// Fraction of a column's training range by which an input may exceed it
/// and still count as familiar to the model.
pub const DOMAIN_SLACK: f64 = 0.1;

/// Feature layout and normalization of the surrogate.
///
/// Inputs: `c_p, c_q` per load, `p_p, p_v` per generator, then a one-hot
/// outage block of `n_line + 1` entries (index 0 = intact). Outputs:
/// `p_q` per generator, `c_v` per load, `f_mw` and `f_a` per line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoding {
    pub loads: Vec<LoadId>,
    pub gens: Vec<GenId>,
    pub lines: Vec<LineId>,
    pub input: Normalizer,
    pub output: Normalizer,
    /// `[min, max]` of every input column over the training split.
    #[serde(default)]
    pub input_range: Vec<[f64; 2]>,
}

/// Denormalized surrogate outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub p_q: Vec<f64>,
    pub c_v: Vec<f64>,
    pub f_mw: Vec<f64>,
    pub f_a: Vec<f64>,
}

impl Encoding {
    pub fn n_inputs(&self) -> usize {
        2 * self.loads.len() + 2 * self.gens.len() + self.lines.len() + 1
    }

    pub fn n_outputs(&self) -> usize {
        self.gens.len() + self.loads.len() + 2 * self.lines.len()
    }

    /// Fits normalization statistics on the training split.
    pub fn fit(dataset: &Dataset) -> Result<Encoding, SurrogateError> {
        let mut enc = Encoding {
            loads: dataset.loads.clone(),
            gens: dataset.gens.clone(),
            lines: dataset.lines.clone(),
            input: Normalizer {
                mean: vec![],
                sd: vec![],
            },
            output: Normalizer {
                mean: vec![],
                sd: vec![],
            },
            input_range: Vec::new(),
        };
        let train: Vec<&LabeledCase> = dataset.split(Split::Train).collect();
        if train.is_empty() {
            return Err(SurrogateError::EmptySplit(Split::Train));
        }
        let (x, y) = enc.raw_matrices(train.iter().copied());
        enc.input = Normalizer::fit(&x, enc.n_inputs());
        enc.output = Normalizer::fit(&y, enc.n_outputs());
        let mut range = vec![[f64::INFINITY, f64::NEG_INFINITY]; enc.n_inputs()];
        for row in x.chunks_exact(enc.n_inputs()) {
            for (r, &v) in range.iter_mut().zip(row) {
                r[0] = r[0].min(v);
                r[1] = r[1].max(v);
            }
        }
        enc.input_range = range;
        Ok(enc)
    }

    /// Whether every raw input lies within the training range widened by
    /// [`DOMAIN_SLACK`] of its width. Encodings without a recorded range
    /// accept everything.
    pub fn in_domain(&self, raw: &[f64]) -> bool {
        if self.input_range.len() != raw.len() {
            return self.input_range.is_empty();
        }
        raw.iter().zip(&self.input_range).all(|(&v, &[lo, hi])| {
            let pad = (DOMAIN_SLACK * (hi - lo)).max(1e-9 * lo.abs().max(hi.abs()).max(1.0));
            v >= lo - pad && v <= hi + pad
        })
    }

    pub fn raw_input_of_case(&self, case: &LabeledCase) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.n_inputs());
        x.extend_from_slice(&case.c_p);
        x.extend_from_slice(&case.c_q);
        x.extend_from_slice(&case.p_p);
        x.extend_from_slice(&case.p_v);
        let mut hot = vec![0.0; self.lines.len() + 1];
        hot[case.outage_index()] = 1.0;
        x.extend_from_slice(&hot);
        x
    }

    pub fn raw_target_of_case(&self, case: &LabeledCase) -> Vec<f64> {
        let mut y = Vec::with_capacity(self.n_outputs());
        y.extend_from_slice(&case.p_q);
        y.extend_from_slice(&case.c_v);
        y.extend_from_slice(&case.f_mw);
        y.extend_from_slice(&case.f_a);
        y
    }

    /// Row-major raw inputs and targets.
    pub fn raw_matrices<'a>(&self, cases: impl Iterator<Item = &'a LabeledCase>) -> (Vec<f64>, Vec<f64>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for c in cases {
            x.extend(self.raw_input_of_case(c));
            y.extend(self.raw_target_of_case(c));
        }
        (x, y)
    }

    /// Normalized inputs and targets.
    pub fn matrices<'a>(&self, cases: impl Iterator<Item = &'a LabeledCase>) -> (Vec<f64>, Vec<f64>) {
        let (mut x, mut y) = self.raw_matrices(cases);
        x.chunks_exact_mut(self.n_inputs()).for_each(|r| self.input.normalize(r));
        y.chunks_exact_mut(self.n_outputs()).for_each(|r| self.output.normalize(r));
        (x, y)
    }

    fn check_elements(&self, grid: &Grid) -> Result<(), SurrogateError> {
        let same = grid.loads.len() == self.loads.len()
            && grid.generators.len() == self.gens.len()
            && grid.lines.len() == self.lines.len()
            && grid.loads.iter().zip(&self.loads).all(|(l, id)| l.id == *id)
            && grid.generators.iter().zip(&self.gens).all(|(g, id)| g.id == *id)
            && grid.lines.iter().zip(&self.lines).all(|(l, id)| l.id == *id);
        if same {
            Ok(())
        } else {
            Err(SurrogateError::UnknownElement(format!(
                "grid has {} loads, {} generators, {} lines; model expects {}, {}, {}",
                grid.loads.len(),
                grid.generators.len(),
                grid.lines.len(),
                self.loads.len(),
                self.gens.len(),
                self.lines.len()
            )))
        }
    }

    /// The disconnected line of `grid`, if any.
    pub fn outage_of(&self, grid: &Grid) -> Result<Option<LineId>, SurrogateError> {
        self.check_elements(grid)?;
        for s in &grid.substations {
            let mut bars = s.assignment.values();
            if let Some(first) = bars.next() {
                if bars.any(|b| b != first) {
                    return Err(SurrogateError::UnsupportedTopology(format!(
                        "substation {} is split across busbars",
                        s.id
                    )));
                }
            }
        }
        let out: Vec<LineId> = grid.lines.iter().filter(|l| !l.in_service).map(|l| l.id).collect();
        match out.len() {
            0 => Ok(None),
            1 => Ok(Some(out[0])),
            n => Err(SurrogateError::MultipleOutages(n)),
        }
    }

    /// Raw (unnormalized) input vector of a grid state.
    pub fn raw_input(&self, grid: &Grid) -> Result<Vec<f64>, SurrogateError> {
        let outage = self.outage_of(grid)?;
        let on = |b: bool, v: f64| if b { v } else { 0.0 };
        let mut x = Vec::with_capacity(self.n_inputs());
        x.extend(grid.loads.iter().map(|l| l.p));
        x.extend(grid.loads.iter().map(|l| l.q));
        x.extend(grid.generators.iter().map(|g| on(g.in_service, g.p_set)));
        x.extend(grid.generators.iter().map(|g| on(g.in_service, g.v_set)));
        let mut hot = vec![0.0; self.lines.len() + 1];
        hot[outage.map_or(0, |k| k.index() + 1)] = 1.0;
        x.extend(hot);
        Ok(x)
    }

    /// Normalized input vector of a grid state.
    pub fn encode(&self, grid: &Grid) -> Result<Vec<f64>, SurrogateError> {
        let mut x = self.raw_input(grid)?;
        self.input.normalize(&mut x);
        Ok(x)
    }

    /// Splits a normalized output row into denormalized blocks.
    pub fn decode(&self, output: &[f64]) -> Result<Prediction, SurrogateError> {
        if output.len() != self.n_outputs() {
            return Err(SurrogateError::ShapeMismatch {
                expected: self.n_outputs(),
                found: output.len(),
            });
        }
        let mut y = output.to_vec();
        self.output.denormalize(&mut y);
        let (ng, nl, nk) = (self.gens.len(), self.loads.len(), self.lines.len());
        Ok(Prediction {
            p_q: y[..ng].to_vec(),
            c_v: y[ng..ng + nl].to_vec(),
            f_mw: y[ng + nl..ng + nl + nk].to_vec(),
            f_a: y[ng + nl + nk..].to_vec(),
        })
    }
}
