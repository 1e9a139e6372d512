//! Grid model, load-flow physics, remedial-action mining, load-flow
//! surrogates and topology advice for transmission grids.

pub mod advisor;
pub mod case_io;
pub mod config;
pub mod grid;
pub mod miner;
pub mod powerflow;
pub mod scenario;
pub mod surrogate;

pub use grid::{
    Busbar, Change, ElementId, GenId, Grid, GridError, LineId, LoadId, SubId, Topology,
    TopologyAction,
};
pub use powerflow::{FlowSolution, PowerflowError, SecurityCriterion, SecurityIssue};
