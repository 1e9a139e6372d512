use std::io::{Read, Write};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::encoding::{Encoding, Prediction};
use super::metrics::{mae, mape, Mape};
use super::mlp::{Activation, FastMlp, Mlp};
use super::SurrogateError;
use crate::grid::Grid;
use crate::scenario::{Dataset, Split};

pub const MODEL_VERSION: u32 = 1;
const MODEL_FORMAT: &str = "topoadvisor-model";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub best_epoch: usize,
    pub lr: f64,
    pub batch: usize,
    /// `(train, validation)` loss per epoch, on normalized targets.
    pub loss_curve: Vec<(f64, f64)>,
    /// Wall-clock training time; not saved, so model files stay
    /// reproducible.
    #[serde(skip)]
    pub seconds: f64,
}

/// A trained load-flow surrogate with its feature encoding. Equality
/// ignores the training time.
#[derive(Clone, Debug)]
pub struct SurrogateModel {
    pub mlp: Mlp,
    pub encoding: Encoding,
    pub meta: TrainingMeta,
    fast: OnceLock<FastMlp>,
}

impl PartialEq for SurrogateModel {
    fn eq(&self, other: &Self) -> bool {
        let untimed = |m: &TrainingMeta| TrainingMeta { seconds: 0.0, ..m.clone() };
        self.mlp == other.mlp && self.encoding == other.encoding && untimed(&self.meta) == untimed(&other.meta)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    sizes: Vec<usize>,
    activation: Activation,
    /// Row-major `sizes[l] × sizes[l + 1]` matrices.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    encoding: Encoding,
    meta: TrainingMeta,
}

impl SurrogateModel {
    pub fn new(mlp: Mlp, encoding: Encoding, meta: TrainingMeta) -> Result<Self, SurrogateError> {
        if !mlp.is_consistent() {
            return Err(SurrogateError::Format("inconsistent or non-finite parameters".into()));
        }
        if mlp.n_inputs() != encoding.n_inputs() || mlp.n_outputs() != encoding.n_outputs() {
            return Err(SurrogateError::ShapeMismatch {
                expected: encoding.n_inputs(),
                found: mlp.n_inputs(),
            });
        }
        Ok(SurrogateModel {
            mlp,
            encoding,
            meta,
            fast: OnceLock::new(),
        })
    }

    pub(crate) fn fast(&self) -> &FastMlp {
        self.fast.get_or_init(|| self.mlp.to_f32())
    }

    fn check_width(&self, len: usize, rows: usize) -> Result<(), SurrogateError> {
        let want = rows * self.mlp.n_inputs();
        if len != want {
            return Err(SurrogateError::ShapeMismatch {
                expected: want,
                found: len,
            });
        }
        Ok(())
    }

    /// Normalized outputs for one normalized input row.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>, SurrogateError> {
        self.check_width(input.len(), 1)?;
        Ok(self.mlp.forward(input, 1))
    }

    /// Row-major outputs for `rows` row-major normalized inputs.
    pub fn predict_batch(&self, inputs: &[f64], rows: usize) -> Result<Vec<f64>, SurrogateError> {
        self.check_width(inputs.len(), rows)?;
        Ok(self.mlp.forward(inputs, rows))
    }

    /// Predicted load flow of a grid state.
    pub fn predict_grid(&self, grid: &Grid) -> Result<Prediction, SurrogateError> {
        let x = self.encoding.encode(grid)?;
        self.encoding.decode(&self.mlp.forward(&x, 1))
    }

    pub fn write<W: Write>(&self, out: W) -> Result<(), SurrogateError> {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            sizes: self.mlp.sizes.clone(),
            activation: self.mlp.activation,
            weights: self.mlp.weights.clone(),
            biases: self.mlp.biases.clone(),
            encoding: self.encoding.clone(),
            meta: self.meta.clone(),
        };
        serde_json::to_writer(out, &file).map_err(|e| SurrogateError::Format(e.to_string()))
    }

    pub fn read<R: Read>(input: R) -> Result<SurrogateModel, SurrogateError> {
        let file: ModelFile =
            serde_json::from_reader(input).map_err(|e| SurrogateError::Format(e.to_string()))?;
        if file.format != MODEL_FORMAT {
            return Err(SurrogateError::Format(format!("not a model file ({})", file.format)));
        }
        if file.version != MODEL_VERSION {
            return Err(SurrogateError::Format(format!(
                "model version {} (expected {MODEL_VERSION})",
                file.version
            )));
        }
        let mlp = Mlp {
            sizes: file.sizes,
            activation: file.activation,
            weights: file.weights,
            biases: file.biases,
        };
        SurrogateModel::new(mlp, file.encoding, file.meta)
    }

    /// Error of every output block on one split of a dataset.
    pub fn evaluate(&self, dataset: &Dataset, split: Split) -> Result<EvalReport, SurrogateError> {
        let cases: Vec<_> = dataset.split(split).collect();
        if cases.is_empty() {
            return Err(SurrogateError::EmptySplit(split));
        }
        let enc = &self.encoding;
        let mut blocks: [(Vec<f64>, Vec<f64>); 4] = Default::default();
        for chunk in cases.chunks(4096) {
            let (x, _) = enc.matrices(chunk.iter().copied());
            let out = self.mlp.forward(&x, chunk.len());
            for (case, row) in chunk.iter().zip(out.chunks_exact(enc.n_outputs())) {
                let p = enc.decode(row)?;
                for (b, (pred, truth)) in blocks.iter_mut().zip([
                    (&p.c_v, &case.c_v),
                    (&p.p_q, &case.p_q),
                    (&p.f_a, &case.f_a),
                    (&p.f_mw, &case.f_mw),
                ]) {
                    b.0.extend_from_slice(pred);
                    b.1.extend_from_slice(truth);
                }
            }
        }
        let names = ["c_v", "p_q", "f_a", "f_mw"];
        let rows = names
            .iter()
            .zip(&blocks)
            .map(|(name, (pred, truth))| {
                Ok(BlockMetrics {
                    variable: name.to_string(),
                    mae: mae(pred, truth)?,
                    mape: mape(pred, truth)?,
                })
            })
            .collect::<Result<Vec<_>, SurrogateError>>()?;
        Ok(EvalReport {
            split,
            cases: cases.len(),
            rows,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockMetrics {
    pub variable: String,
    pub mae: f64,
    pub mape: Mape,
}

/// MAE and MAPE per output block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub cases: usize,
    pub rows: Vec<BlockMetrics>,
}

impl EvalReport {
    pub fn get(&self, variable: &str) -> Option<&BlockMetrics> {
        self.rows.iter().find(|r| r.variable == variable)
    }
}
