//! Sampled operating points for surrogate training and synthetic snapshot
//! archives for mining.

mod dataset;
mod history;
mod profile;
mod sampling;

pub use dataset::{
    assign_splits, build_dataset, case_rng, outage_configurations, Dataset, LabeledCase, Split,
    DATASET_VERSION,
};
pub use history::{
    event_fixture, plan_events, snapshot_at, synth_history, EventKind, HistoryConfig, PlantedEvent,
    Stress, SynthHistory, DEFAULT_START, SLOT_MINUTES,
};
pub use profile::{Curve, LoadProfile, Peak, HOURS_PER_WEEK};
pub use sampling::{sample_case, PqRatio, Sampler, SamplingConfig};

use thiserror::Error;

use crate::case_io::Timestamp;
use crate::grid::LineId;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("every generator is disconnected")]
    AllGeneratorsOut,
    #[error("the grid has no in-service slack generator")]
    NoSlackSurviving,
    #[error("unknown line {0}")]
    UnknownLine(LineId),
    #[error("outage {outage:?}: {diverged} of {total} samples diverged")]
    DegenerateConfig {
        outage: Option<LineId>,
        diverged: usize,
        total: usize,
    },
    #[error("event {index} cannot be planted: {reason}")]
    UnplantableEvent { index: usize, reason: String },
    #[error("{requested} events requested but the archive has {slots} slots")]
    TooManyEvents { requested: usize, slots: usize },
    #[error("snapshot at {} is insecure", .t.0)]
    InsecureSnapshot { t: Timestamp },
    #[error("malformed dataset: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
