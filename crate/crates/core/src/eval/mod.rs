//! Evaluation harness: error metrics, observability sweeps, the linear
//! baseline, false-data injection and the five case studies.
//!
//! Targets are always the masked bus-phases. Evaluation masks depend only
//! on `(seed, substation, snapshot)`, so they are nested across levels and
//! identical for every model scored on the same data.

mod attack;
mod baseline;
mod metrics;
mod studies;
mod sweep;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::gnn::GnnError;
use crate::grid::GridError;
use crate::sim::SimError;

pub use attack::{attack_count, inject_attack, AttackConfig, AttackTargets, MAX_PENETRATION};
pub use baseline::{LinearBaseline, RIDGE};
pub use metrics::{mae, rmse, ErrorAccumulator};
pub use studies::{run_study, Study, StudyConfig, StudyInputs, StudyReport};
pub use sweep::{
    eval_mask, linear_baseline, observability_sweep, pick_snapshots, prepare, summarize, sweep_with, BaselineReport, ReportRow,
    SummaryRow, SweepOptions,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluation config: {0}")]
    Config(String),
    #[error("empty {0}")]
    Empty(String),
    #[error("baseline: {0}")]
    Baseline(String),
    #[error("study {study}: {source}")]
    Study {
        study: char,
        #[source]
        source: Box<EvalError>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl EvalError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        EvalError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
