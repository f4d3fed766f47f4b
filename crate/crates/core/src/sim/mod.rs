//! Synthetic radial multi-feeder substations and their quasi-static
//! per-phase power flow.
//!
//! Per-unit conventions: every per-phase power is expressed on a 1 MVA base
//! and every per-phase impedance on `kv_ln^2 / 1 MVA`.

mod generate;
mod network;
mod powerflow;
mod profiles;
mod timeseries;

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{BusType, DeviceKind, GridError, Phase, TapPosition};

pub use generate::{generate_substation, SizeClass};
pub use network::{EdgeOrigin, Network, PhaseEdge};
pub use powerflow::{solve_powerflow, Controls, PowerFlowOptions, PowerFlowSolution};
pub use profiles::ProfileBank;
pub use timeseries::{run_timeseries, run_timeseries_raw, ControllerState, SimScenario, TieClosure, STEP_MINUTES};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("power flow did not converge after {iterations} iterations (last max |dV| = {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("bus-phase {0} is islanded")]
    Islanded(usize),
    #[error("closed devices form a loop that re-rooting cannot resolve at edge {0}")]
    Loop(usize),
    #[error("feeder count {0} outside 2..=6")]
    FeederCount(usize),
    #[error("DER penetration {0}% not in {{0, 20..=40}}")]
    DerPenetration(u32),
    #[error("horizon of {requested} steps exceeds the {available}-step profiles")]
    Horizon { requested: usize, available: usize },
    #[error("unknown tie switch {0}")]
    UnknownTie(usize),
    #[error("unknown bus {bus} referenced by {what}")]
    UnknownBus { bus: usize, what: String },
    #[error("timestep {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<SimError>,
    },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("feeder file: {0}")]
    Io(#[from] std::io::Error),
    #[error("feeder file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusSpec {
    pub id: usize,
    /// Line-to-neutral kV.
    pub kv: f64,
    pub bus_type: BusType,
    pub phases: Vec<Phase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub id: usize,
    pub from_bus: usize,
    pub to_bus: usize,
    pub kind: DeviceKind,
    pub phases: Vec<Phase>,
    pub r_pu: f64,
    pub x_pu: f64,
    pub length_km: f64,
    pub rating_kva: f64,
    /// Initial tap position for transformers and regulators.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tap: Option<TapPosition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSpec {
    pub bus: usize,
    pub phase: Phase,
    pub profile: u32,
    pub peak_kw: f64,
    pub peak_kvar: f64,
}

/// Rooftop PV. `peak_kw` is the installed capacity at 100 % penetration;
/// scenarios scale it linearly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerSpec {
    pub bus: usize,
    pub phase: Phase,
    pub profile: u32,
    pub peak_kw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacitorSpec {
    pub bus: usize,
    pub phases: Vec<Phase>,
    pub kvar_per_phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeederSpec {
    pub id: u32,
    pub head_bus: usize,
    pub head_rating_kva: f64,
    /// Mean number of children per non-leaf medium-voltage bus.
    pub branching_factor: f64,
    pub buses: Vec<BusSpec>,
    pub devices: Vec<DeviceSpec>,
    pub loads: Vec<LoadSpec>,
    pub ders: Vec<DerSpec>,
    pub capacitors: Vec<CapacitorSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TieSwitch {
    pub id: usize,
    pub bus_a: usize,
    pub bus_b: usize,
    pub feeder_a: u32,
    pub feeder_b: u32,
    pub phases: Vec<Phase>,
    pub r_pu: f64,
    pub x_pu: f64,
    pub length_km: f64,
    pub normally_open: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstationSpec {
    pub name: String,
    pub seed: u64,
    pub size: SizeClass,
    pub hub_bus: usize,
    /// Line-to-neutral kV of the substation low-voltage bus.
    pub hub_kv: f64,
    pub xfmr_rating_kva: f64,
    /// Nominal LTC voltage setpoint at the hub, p.u.
    pub ltc_setpoint: f64,
    /// Station auxiliary load, p.u.
    pub aux_load: Complex64,
    /// Length of every load and PV profile, 15-minute steps.
    pub profile_steps: usize,
    pub feeders: Vec<FeederSpec>,
    pub tie_switches: Vec<TieSwitch>,
}

impl SubstationSpec {
    pub fn to_toml(&self) -> Result<String, SimError> {
        toml::to_string(self).map_err(|e| SimError::Parse(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), SimError> {
        fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn feeder(&self, id: u32) -> Option<&FeederSpec> {
        self.feeders.iter().find(|f| f.id == id)
    }

    pub fn bus_count(&self) -> usize {
        1 + self.feeders.iter().map(|f| f.buses.len()).sum::<usize>()
    }
}
