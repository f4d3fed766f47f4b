//! Physics-biased typed message passing over bus-phase graphs.
//!
//! The encoder stacks `layers` blocks. Each block forms per-edge inputs
//! `[h_i ‖ h_j ‖ z_ij]`, scores them with a learned attention term plus a
//! physics prior over `(-|Z|, phase match, is regulator/transformer,
//! -length)`, normalizes the scores with a temperature softmax over each
//! node's gated neighbourhood, aggregates edge-type-conditioned messages,
//! and applies a residual MLP update with layer normalization.
//!
//! After the last block a hub stage pools each feeder, averages the feeder
//! summaries into a substation context and modulates every embedding with a
//! feature-wise affine map, scaled by a per-feeder gate. A node-wise MLP
//! decodes voltage magnitudes.
//!
//! ```
//! use substation_gnn::gnn::{GraphInput, Model, ModelConfig};
//! use substation_gnn::sim::{generate_substation, run_timeseries, SimScenario, SizeClass};
//!
//! let spec = generate_substation(1, SizeClass::Tiny, 2).unwrap();
//! let snaps = run_timeseries(&spec, &SimScenario::new(0, 0, 15)).unwrap();
//! let mut model = Model::new(ModelConfig { hidden: 8, decoder_hidden: 8, ..ModelConfig::default() }, 0);
//! let graph = GraphInput::build(&snaps[0], &spec.name).unwrap();
//! model.register_feeders(&graph);
//! let v = model.predict(&graph).unwrap();
//! assert_eq!(v.len(), snaps[0].len());
//! ```

mod checkpoint;
mod graph;
mod model;
mod params;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::GridError;
use crate::tensor::TensorError;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use graph::{status_gate, GraphInput, PhysicsEdges, PRIOR_FEATURES};
pub use model::{ForwardPass, Model, Trainable};
pub use params::{FreezeGroup, ParamStore, ParamTensor};

#[derive(Debug, Error)]
pub enum GnnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("feeder {0} has no bus-phases to pool")]
    EmptyFeeder(String),
    #[error("graph has no feeders")]
    NoFeeders,
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("checkpoint feature layout {found} does not match this build ({expected})")]
    FeatureHash { expected: String, found: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub layers: usize,
    /// Embedding width d.
    pub hidden: usize,
    pub decoder_hidden: usize,
    /// Attention softmax temperature.
    pub tau: f64,
    /// Initial physics-prior coefficients.
    pub prior_init: [f64; PRIOR_FEATURES],
    pub norm_eps: f64,
    /// Observed voltages enter the input projection as
    /// `(v - 1) / voltage_scale`, so deviations are not swamped by the
    /// nominal level.
    pub voltage_scale: f64,
    /// Multiplier on the initial decoder output weights.
    pub head_init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 4,
            hidden: 64,
            decoder_hidden: 64,
            tau: 1.0,
            prior_init: [1.0, 1.0, 0.5, 0.5],
            norm_eps: 1e-5,
            voltage_scale: 0.02,
            head_init_scale: 0.1,
        }
    }
}
