use std::collections::BTreeMap;
use std::sync::Arc;

use super::GnnError;
use crate::losses::hub_balance_penalty;
use crate::grid::{
    edge_idx, BusType, EdgeRecord, EdgeType, FeederTag, GridError, NodeFeatures, ObservabilityMask, Snapshot, EDGE_FEATURES, NODE_FEATURES};
use crate::tensor::{Index, Matrix};

/// Width of the physics-prior feature vector.
pub const PRIOR_FEATURES: usize = 4;

/// 1 iff the edge is closed and its phase mask covers both endpoint phases.
pub fn status_gate(edge: &EdgeRecord, snapshot: &Snapshot) -> bool {
    edge.is_closed() && edge.has_phase(snapshot.nodes[edge.from].bus.phase) && edge.has_phase(snapshot.nodes[edge.to].bus.phase)
}

/// Edges entering the linearized branch-flow penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicsEdges {
    pub from: Index,
    pub to: Index,
    /// `2 (R P + X Q)` per edge.
    pub drop: Matrix,
    pub weight: Matrix,
}

impl PhysicsEdges {
    pub fn len(&self) -> usize {
        self.from.len()
    }

    pub fn is_empty(&self) -> bool {
        self.from.is_empty()
    }
}

/// Model-ready view of one snapshot: node features, gated directed edges
/// grouped by type, pooling indices and loss inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    pub nodes: usize,
    pub x: Matrix,
    /// Receiver of each directed edge.
    pub dst: Index,
    /// Sender of each directed edge.
    pub src: Index,
    pub z: Matrix,
    pub prior: Matrix,
    /// Per edge type: positions into the directed-edge list and their receivers.
    pub by_type: [(Index, Index); 4],
    /// Non-hub nodes and their feeder slot, for pooling.
    pub pool_rows: Index,
    pub pool_seg: Index,
    /// `substation/feeder` keys in slot order.
    pub feeder_keys: Vec<String>,
    /// Gate slot per node; `feeder_keys.len()` selects the unit gate.
    pub gate_slot: Index,
    pub v_true: Vec<f64>,
    pub observed: Vec<bool>,
    pub physics: PhysicsEdges,
    pub hub_nodes: Vec<usize>,
    /// Substation power-balance mismatch carried by the snapshot.
    pub hub_mismatch: f64,
}

impl GraphInput {
    /// Builds the model input. Edges failing [`status_gate`] are dropped, so
    /// an open switch is indistinguishable from an absent one.
    pub fn build(snapshot: &Snapshot, substation: &str) -> Result<Self, GnnError> {
        let n = snapshot.nodes.len();
        let mut x = Matrix::zeros(n, NODE_FEATURES);
        for (i, node) in snapshot.nodes.iter().enumerate() {
            x.row_mut(i).copy_from_slice(&node.features.0);
        }

        let mut dst = Vec::new();
        let mut src = Vec::new();
        let mut z_rows = Vec::new();
        let mut prior_rows = Vec::new();
        let mut types = Vec::new();
        for e in &snapshot.edges {
            if !status_gate(e, snapshot) {
                continue;
            }
            let phase_match = if snapshot.nodes[e.from].bus.phase == snapshot.nodes[e.to].bus.phase { 1.0 } else { 0.0 };
            let is_reg_xfmr = e.features[edge_idx::DEVICE + 2];
            let prior = [-e.impedance_magnitude(), phase_match, is_reg_xfmr, -e.length()];
            for (i, j) in [(e.to, e.from), (e.from, e.to)] {
                dst.push(i);
                src.push(j);
                z_rows.extend_from_slice(&e.features);
                prior_rows.extend_from_slice(&prior);
                types.push(e.edge_type());
            }
        }
        let edges = dst.len();
        let by_type = EdgeType::ALL.map(|r| {
            let pos: Vec<usize> = (0..edges).filter(|k| types[*k] == r).collect();
            let recv: Vec<usize> = pos.iter().map(|k| dst[*k]).collect();
            (Index::from(pos), Index::from(recv))
        });

        let mut feeders: BTreeMap<u32, usize> = BTreeMap::new();
        for node in &snapshot.nodes {
            if let FeederTag::Feeder(f) = node.bus.feeder {
                if node.bus.bus_type != BusType::SubstationHub {
                    let next = feeders.len();
                    feeders.entry(f).or_insert(next);
                }
            }
        }
        if feeders.is_empty() {
            return Err(GnnError::NoFeeders);
        }
        // slots in feeder-id order
        for (slot, v) in feeders.values_mut().enumerate() {
            *v = slot;
        }
        let feeder_keys: Vec<String> = feeders.keys().map(|f| format!("{substation}/{f}")).collect();
        let mut pool_rows = Vec::new();
        let mut pool_seg = Vec::new();
        let mut gate_slot = Vec::with_capacity(n);
        for (i, node) in snapshot.nodes.iter().enumerate() {
            match node.bus.feeder {
                FeederTag::Feeder(f) if node.bus.bus_type != BusType::SubstationHub => {
                    pool_rows.push(i);
                    pool_seg.push(feeders[&f]);
                    gate_slot.push(feeders[&f]);
                }
                _ => gate_slot.push(feeder_keys.len()),
            }
        }

        let mut from = Vec::new();
        let mut to = Vec::new();
        let mut drop = Vec::new();
        for e in &snapshot.edges {
            if e.in_physics_set && e.is_closed() {
                from.push(e.from);
                to.push(e.to);
                drop.push(2.0 * (e.r_pu() * e.p_flow_pu + e.x_pu() * e.q_flow_pu));
            }
        }
        let weight = Matrix::filled(drop.len(), 1, 1.0);

        Ok(GraphInput {
            nodes: n,
            x,
            dst: Arc::from(dst),
            src: Arc::from(src),
            z: Matrix::from_vec(edges, EDGE_FEATURES, z_rows)?,
            prior: Matrix::from_vec(edges, PRIOR_FEATURES, prior_rows)?,
            by_type,
            pool_rows: Arc::from(pool_rows),
            pool_seg: Arc::from(pool_seg),
            feeder_keys,
            gate_slot: Arc::from(gate_slot),
            v_true: snapshot.voltages(),
            observed: snapshot.nodes.iter().map(|n| n.features.m_obs() > 0.5).collect(),
            physics: PhysicsEdges {
                from: Arc::from(from),
                to: Arc::from(to),
                drop: Matrix::column(&drop),
                weight,
            },
            hub_nodes: snapshot.hub_nodes(),
            hub_mismatch: hub_balance_penalty(snapshot.feeder_heads.values().copied(), snapshot.s_aux, snapshot.s_subxfmr),
        })
    }

    /// Rewrites observation features in place, matching
    /// [`Snapshot::apply_mask`] followed by a rebuild.
    pub fn apply_mask(&mut self, mask: &ObservabilityMask) -> Result<(), GnnError> {
        if mask.len() != self.nodes {
            return Err(GridError::MaskSize {
                mask: mask.len(),
                nodes: self.nodes,
            }
            .into());
        }
        for (i, &obs) in mask.observed().iter().enumerate() {
            let mut f = NodeFeatures([0.0; NODE_FEATURES]);
            f.0.copy_from_slice(self.x.row(i));
            f.set_observation(obs, self.v_true[i]);
            self.x.row_mut(i).copy_from_slice(&f.0);
            self.observed[i] = obs;
        }
        Ok(())
    }

    pub fn edge_count(&self) -> usize {
        self.dst.len()
    }

    pub fn masked_nodes(&self) -> Vec<usize> {
        (0..self.nodes).filter(|i| !self.observed[*i]).collect()
    }

    /// Per-edge physics weights; pseudo-measured flows can be scaled down.
    pub fn set_physics_weights(&mut self, weights: &[f64]) -> Result<(), GnnError> {
        if weights.len() != self.physics.len() {
            return Err(crate::tensor::TensorError::Shape {
                op: "physics weights",
                lhs: (weights.len(), 1),
                rhs: (self.physics.len(), 1),
            }
            .into());
        }
        self.physics.weight = Matrix::column(weights);
        Ok(())
    }
}
