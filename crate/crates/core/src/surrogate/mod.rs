//! Neural load-flow surrogate: encoding, a fully connected network trained
//! from scratch, accuracy metrics and fast security screening.

mod encoding;
mod metrics;
mod mlp;
mod model;
mod screening;
mod train;

pub use encoding::{Encoding, Normalizer, Prediction, DOMAIN_SLACK};
pub use metrics::{mae, mape, mape_eps, Mape, MAPE_EPS};
pub use mlp::{Activation, FastMlp, Gradients, Mlp, Trace};
pub use model::{BlockMetrics, EvalReport, SurrogateModel, TrainingMeta, MODEL_VERSION};
pub use screening::{
    fast_n_minus_1, fast_screen, predicted_loading, ScreenedContingency, ScreeningReport,
    DEFAULT_MARGIN,
};
pub use train::{train, TrainConfig};

use thiserror::Error;

use crate::scenario::Split;

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error("grid does not match the model's elements: {0}")]
    UnknownElement(String),
    #[error("{0} lines out of service; the encoding handles at most one")]
    MultipleOutages(usize),
    #[error("topology not representable by the encoding: {0}")]
    UnsupportedTopology(String),
    #[error("expected {expected} values, got {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("{pred} predictions for {truth} true values")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("the {0:?} split is empty")]
    EmptySplit(Split),
    #[error("training diverged at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("malformed model: {0}")]
    Format(String),
}
