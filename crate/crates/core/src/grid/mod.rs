//! Substation graph data model: bus-phase nodes, device edges, the 17-wide
//! node and 13-wide edge feature vectors, and observability masks.

mod features;
mod mask;
mod structure;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use features::{build_features, FeatureScales, RawEdge, RawNode, RawSnapshot, SolverStats};
pub use mask::{sample_mask, sample_mask_anchored, ObservabilityMask, OBSERVABILITY_LEVELS};
pub use structure::{structural_annotations, StructuralAnnotations};

pub const NODE_FEATURES: usize = 17;
pub const EDGE_FEATURES: usize = 13;

/// Node feature names in vector order.
pub const NODE_FEATURE_NAMES: [&str; NODE_FEATURES] = [
    "phase_a",
    "phase_b",
    "phase_c",
    "kv",
    "type_hub",
    "type_feeder_head",
    "type_dist_xfmr",
    "type_lv",
    "p_pu",
    "tap",
    "cap_on",
    "sw_closed",
    "depth",
    "elec_dist",
    "degree",
    "m_obs",
    "m_obs_v_pu",
];

/// Edge feature names in vector order.
pub const EDGE_FEATURE_NAMES: [&str; EDGE_FEATURES] = [
    "r_pu",
    "x_pu",
    "length",
    "thermal_rating",
    "dev_line",
    "dev_cable",
    "dev_xfmr_reg",
    "dev_switch",
    "status",
    "phase_mask_a",
    "phase_mask_b",
    "phase_mask_c",
    "tap_pos",
];

/// Hex SHA-256 over the node and edge feature names in order. Stored with
/// datasets and checkpoints so that mismatched layouts are rejected.
pub fn feature_order_hash() -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for name in NODE_FEATURE_NAMES {
        h.update(name.as_bytes());
        h.update(b",");
    }
    h.update(b"|");
    for name in EDGE_FEATURE_NAMES {
        h.update(name.as_bytes());
        h.update(b",");
    }
    hex::encode(h.finalize())
}

/// Offsets into [`NodeFeatures`].
pub mod node_idx {
    pub const PHASE: usize = 0;
    pub const KV: usize = 3;
    pub const TYPE: usize = 4;
    pub const P_PU: usize = 8;
    pub const TAP: usize = 9;
    pub const CAP_ON: usize = 10;
    pub const SW_CLOSED: usize = 11;
    pub const DEPTH: usize = 12;
    pub const ELEC_DIST: usize = 13;
    pub const DEGREE: usize = 14;
    pub const M_OBS: usize = 15;
    pub const M_OBS_V: usize = 16;
}

/// Offsets into an edge feature vector.
pub mod edge_idx {
    pub const R: usize = 0;
    pub const X: usize = 1;
    pub const LENGTH: usize = 2;
    pub const RATING: usize = 3;
    pub const DEVICE: usize = 4;
    pub const STATUS: usize = 8;
    pub const PHASE_MASK: usize = 9;
    pub const TAP_POS: usize = 12;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("unknown bus type `{0}`")]
    UnknownBusType(String),
    #[error("unknown device kind `{0}`")]
    UnknownDevice(String),
    #[error("unknown phase `{0}`")]
    UnknownPhase(String),
    #[error("bus-phase {node}: kv_base must be positive, got {kv}")]
    NonPositiveKv { node: usize, kv: f64 },
    #[error("bus-phase {0} is not reachable from a feeder head over closed edges")]
    Unreachable(usize),
    #[error("edge {edge} references missing bus-phase {node}")]
    DanglingEdge { edge: usize, node: usize },
    #[error("node ids must be dense and ordered; position {pos} holds id {id}")]
    NodeOrder { pos: usize, id: usize },
    #[error("not a permutation of 0..{0}")]
    Permutation(usize),
    #[error("duplicate bus-phase ({bus}, {phase})")]
    DuplicateBusPhase { bus: usize, phase: Phase },
    #[error("mask covers {mask} nodes but the snapshot has {nodes}")]
    MaskSize { mask: usize, nodes: usize },
    #[error("observability level {0}% is not in the schedule")]
    Level(u32),
    #[error("tap position {position} outside 0..={max}")]
    Tap { position: i32, max: i32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::A => "A",
            Phase::B => "B",
            Phase::C => "C",
        };
        f.write_str(s)
    }
}

impl FromStr for Phase {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" | "a" => Ok(Phase::A),
            "B" | "b" => Ok(Phase::B),
            "C" | "c" => Ok(Phase::C),
            other => Err(GridError::UnknownPhase(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusType {
    SubstationHub,
    FeederHead,
    DtHigh,
    DtLow,
    LvNode,
}

impl BusType {
    /// Slot in the 4-wide type one-hot. Both sides of a distribution
    /// transformer share the "distribution transformer" slot.
    pub fn onehot_slot(self) -> usize {
        match self {
            BusType::SubstationHub => 0,
            BusType::FeederHead => 1,
            BusType::DtHigh | BusType::DtLow => 2,
            BusType::LvNode => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BusType::SubstationHub => "substation_hub",
            BusType::FeederHead => "feeder_head",
            BusType::DtHigh => "dt_high",
            BusType::DtLow => "dt_low",
            BusType::LvNode => "lv_node",
        }
    }
}

impl FromStr for BusType {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "substation_hub" => Ok(BusType::SubstationHub),
            "feeder_head" => Ok(BusType::FeederHead),
            "dt_high" => Ok(BusType::DtHigh),
            "dt_low" => Ok(BusType::DtLow),
            "lv_node" => Ok(BusType::LvNode),
            other => Err(GridError::UnknownBusType(other.to_string())),
        }
    }
}

/// Feeder membership. The hub belongs to the substation, not to a feeder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeederTag {
    Substation,
    Feeder(u32),
}

impl FeederTag {
    pub fn feeder(self) -> Option<u32> {
        match self {
            FeederTag::Substation => None,
            FeederTag::Feeder(f) => Some(f),
        }
    }

    /// `-1` for the substation, the feeder id otherwise.
    pub fn code(self) -> i64 {
        self.feeder().map_or(-1, i64::from)
    }

    pub fn from_code(code: i64) -> Self {
        if code < 0 {
            FeederTag::Substation
        } else {
            FeederTag::Feeder(code as u32)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusPhase {
    pub id: usize,
    pub bus_id: usize,
    pub phase: Phase,
    /// Line-to-neutral base voltage in kV.
    pub kv_base: f64,
    pub bus_type: BusType,
    pub feeder: FeederTag,
}

/// Physical device kinds. Transformers and regulators share one one-hot
/// slot but remain distinct edge types for message passing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    OverheadLine,
    Cable,
    Transformer,
    Regulator,
    Switch,
}

impl DeviceKind {
    pub fn onehot_slot(self) -> usize {
        match self {
            DeviceKind::OverheadLine => 0,
            DeviceKind::Cable => 1,
            DeviceKind::Transformer | DeviceKind::Regulator => 2,
            DeviceKind::Switch => 3,
        }
    }

    pub fn edge_type(self) -> EdgeType {
        match self {
            DeviceKind::OverheadLine | DeviceKind::Cable => EdgeType::Line,
            DeviceKind::Transformer => EdgeType::Xfmr,
            DeviceKind::Regulator => EdgeType::Reg,
            DeviceKind::Switch => EdgeType::Switch,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DeviceKind::OverheadLine => "overhead_line",
            DeviceKind::Cable => "cable",
            DeviceKind::Transformer => "transformer",
            DeviceKind::Regulator => "regulator",
            DeviceKind::Switch => "switch",
        }
    }
}

impl FromStr for DeviceKind {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "overhead_line" => Ok(DeviceKind::OverheadLine),
            "cable" => Ok(DeviceKind::Cable),
            "transformer" => Ok(DeviceKind::Transformer),
            "regulator" => Ok(DeviceKind::Regulator),
            "switch" => Ok(DeviceKind::Switch),
            other => Err(GridError::UnknownDevice(other.to_string())),
        }
    }
}

/// Edge-type label selecting the type-conditioned message weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EdgeType {
    Line,
    Xfmr,
    Reg,
    Switch,
}

impl EdgeType {
    pub const ALL: [EdgeType; 4] = [EdgeType::Line, EdgeType::Xfmr, EdgeType::Reg, EdgeType::Switch];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeType::Line => "line",
            EdgeType::Xfmr => "xfmr",
            EdgeType::Reg => "reg",
            EdgeType::Switch => "switch",
        }
    }
}

impl FromStr for EdgeType {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "line" => Ok(EdgeType::Line),
            "xfmr" => Ok(EdgeType::Xfmr),
            "reg" => Ok(EdgeType::Reg),
            "switch" => Ok(EdgeType::Switch),
            other => Err(GridError::UnknownDevice(other.to_string())),
        }
    }
}

/// Tap changer position on a 0..=32 scale, neutral at 16.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TapPosition(i32);

impl TapPosition {
    pub const MAX: i32 = 32;
    pub const NEUTRAL: i32 = 16;
    /// Voltage change per step, p.u.
    pub const STEP_PU: f64 = 0.00625;

    pub fn new(position: i32) -> Result<Self, GridError> {
        if !(0..=Self::MAX).contains(&position) {
            return Err(GridError::Tap {
                position,
                max: Self::MAX,
            });
        }
        Ok(TapPosition(position))
    }

    pub fn neutral() -> Self {
        TapPosition(Self::NEUTRAL)
    }

    pub fn position(self) -> i32 {
        self.0
    }

    /// Affine map of the tap range onto [-1, 1].
    pub fn normalized(self) -> f64 {
        f64::from(self.0 - Self::NEUTRAL) / f64::from(Self::NEUTRAL)
    }

    /// Off-nominal voltage ratio.
    pub fn ratio(self) -> f64 {
        1.0 + f64::from(self.0 - Self::NEUTRAL) * Self::STEP_PU
    }

    pub fn stepped(self, delta: i32) -> Self {
        TapPosition((self.0 + delta).clamp(0, Self::MAX))
    }
}

/// The 17-wide node feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeFeatures(pub [f64; NODE_FEATURES]);

impl NodeFeatures {
    pub fn m_obs(&self) -> f64 {
        self.0[node_idx::M_OBS]
    }

    pub fn observed_voltage(&self) -> f64 {
        self.0[node_idx::M_OBS_V]
    }

    /// Sets the observation flag and the measured voltage (zero when masked).
    pub fn set_observation(&mut self, observed: bool, v_pu: f64) {
        self.0[node_idx::M_OBS] = if observed { 1.0 } else { 0.0 };
        self.0[node_idx::M_OBS_V] = if observed { v_pu } else { 0.0 };
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub bus: BusPhase,
    pub features: NodeFeatures,
    pub v_true_pu: f64,
}

/// One phase of one physical device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub from: usize,
    pub to: usize,
    pub kind: DeviceKind,
    pub features: [f64; EDGE_FEATURES],
    /// Active flow measured at the `from` end toward `to`, p.u.
    pub p_flow_pu: f64,
    /// Reactive flow measured at the `from` end toward `to`, p.u.
    pub q_flow_pu: f64,
    /// Whether the flow is usable by the linearized branch-flow penalty.
    pub in_physics_set: bool,
}

impl EdgeRecord {
    pub fn r_pu(&self) -> f64 {
        self.features[edge_idx::R]
    }

    pub fn x_pu(&self) -> f64 {
        self.features[edge_idx::X]
    }

    pub fn impedance_magnitude(&self) -> f64 {
        self.r_pu().hypot(self.x_pu())
    }

    pub fn length(&self) -> f64 {
        self.features[edge_idx::LENGTH]
    }

    pub fn is_closed(&self) -> bool {
        self.features[edge_idx::STATUS] > 0.5
    }

    pub fn set_status(&mut self, closed: bool) {
        self.features[edge_idx::STATUS] = if closed { 1.0 } else { 0.0 };
    }

    pub fn has_phase(&self, phase: Phase) -> bool {
        self.features[edge_idx::PHASE_MASK + phase.index()] > 0.5
    }

    pub fn edge_type(&self) -> EdgeType {
        self.kind.edge_type()
    }
}

/// One timestep of one substation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    /// Minutes since scenario start.
    pub timestamp: u32,
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<EdgeRecord>,
    /// Complex power at each feeder head, p.u.
    pub feeder_heads: BTreeMap<u32, Complex64>,
    pub s_subxfmr: Complex64,
    pub s_aux: Complex64,
}

impl Snapshot {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Ids of hub bus-phases.
    pub fn hub_nodes(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter(|n| n.bus.bus_type == BusType::SubstationHub)
            .map(|n| n.bus.id)
            .collect()
    }

    pub fn voltages(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.v_true_pu).collect()
    }

    /// Overwrites the observation features of every node from `mask`.
    pub fn apply_mask(&mut self, mask: &ObservabilityMask) -> Result<(), GridError> {
        if mask.len() != self.nodes.len() {
            return Err(GridError::MaskSize {
                mask: mask.len(),
                nodes: self.nodes.len(),
            });
        }
        for (node, &obs) in self.nodes.iter_mut().zip(mask.observed()) {
            let v = node.v_true_pu;
            node.features.set_observation(obs, v);
        }
        Ok(())
    }

    /// Same network with node `i` renamed `node_perm[i]` and edge `k`
    /// moved to position `edge_perm[k]`.
    pub fn relabeled(&self, node_perm: &[usize], edge_perm: &[usize]) -> Result<Snapshot, GridError> {
        let check = |perm: &[usize], n: usize| {
            let mut seen = vec![false; n];
            if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
                return Err(GridError::Permutation(n));
            }
            Ok(())
        };
        check(node_perm, self.nodes.len())?;
        check(edge_perm, self.edges.len())?;
        let mut nodes = self.nodes.clone();
        for (old, n) in self.nodes.iter().enumerate() {
            let mut n = n.clone();
            n.bus.id = node_perm[old];
            nodes[node_perm[old]] = n;
        }
        let mut edges = self.edges.clone();
        for (old, e) in self.edges.iter().enumerate() {
            let mut e = e.clone();
            e.from = node_perm[e.from];
            e.to = node_perm[e.to];
            edges[edge_perm[old]] = e;
        }
        Ok(Snapshot {
            nodes,
            edges,
            ..self.clone()
        })
    }

    /// Checks ids, edge endpoints and the voltage sanity band.
    pub fn validate(&self) -> Result<(), GridError> {
        let mut seen = std::collections::BTreeSet::new();
        for (pos, n) in self.nodes.iter().enumerate() {
            if n.bus.id != pos {
                return Err(GridError::NodeOrder { pos, id: n.bus.id });
            }
            if !(n.bus.kv_base > 0.0) {
                return Err(GridError::NonPositiveKv {
                    node: pos,
                    kv: n.bus.kv_base,
                });
            }
            if !seen.insert((n.bus.bus_id, n.bus.phase)) {
                return Err(GridError::DuplicateBusPhase {
                    bus: n.bus.bus_id,
                    phase: n.bus.phase,
                });
            }
        }
        for (k, e) in self.edges.iter().enumerate() {
            for node in [e.from, e.to] {
                if node >= self.nodes.len() {
                    return Err(GridError::DanglingEdge { edge: k, node });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tap_midpoint_maps_to_zero() {
        assert_eq!(TapPosition::new(16).unwrap().normalized(), 0.0);
        assert_eq!(TapPosition::new(0).unwrap().normalized(), -1.0);
        assert_eq!(TapPosition::new(32).unwrap().normalized(), 1.0);
        assert!(TapPosition::new(33).is_err());
    }

    #[test]
    fn unknown_bus_type_is_an_error() {
        assert_eq!(
            "junction".parse::<BusType>().unwrap_err(),
            GridError::UnknownBusType("junction".into())
        );
        assert_eq!("dt_low".parse::<BusType>().unwrap(), BusType::DtLow);
    }

    #[test]
    fn feature_name_tables_match_widths() {
        assert_eq!(NODE_FEATURE_NAMES.len(), 17);
        assert_eq!(EDGE_FEATURE_NAMES.len(), 13);
        assert_eq!(NODE_FEATURE_NAMES[node_idx::M_OBS_V], "m_obs_v_pu");
        assert_eq!(EDGE_FEATURE_NAMES[edge_idx::TAP_POS], "tap_pos");
    }

    #[test]
    fn relabel_round_trips_and_rejects_non_permutations() {
        let spec = crate::sim::generate_substation(2, crate::sim::SizeClass::Tiny, 2).unwrap();
        let s = crate::sim::run_timeseries(&spec, &crate::sim::SimScenario::new(0, 0, 15)).unwrap().remove(0);
        let n = s.len();
        let m = s.edges.len();
        let fwd: Vec<usize> = (0..n).map(|i| (i + 5) % n).collect();
        let back: Vec<usize> = (0..n).map(|i| (i + n - 5) % n).collect();
        let rev: Vec<usize> = (0..m).rev().collect();
        let r = s.relabeled(&fwd, &rev).unwrap();
        r.validate().unwrap();
        assert_eq!(r.nodes[fwd[3]].v_true_pu, s.nodes[3].v_true_pu);
        assert_eq!(r.relabeled(&back, &rev).unwrap(), s);
        assert!(s.relabeled(&vec![0; n], &rev).is_err());
        assert!(s.relabeled(&fwd, &rev[1..]).is_err());
    }
}
