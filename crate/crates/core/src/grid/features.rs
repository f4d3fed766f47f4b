use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{
    edge_idx, node_idx, structural_annotations, BusPhase, DeviceKind, EdgeRecord, GridError, NodeFeatures, NodeRecord,
    ObservabilityMask, Snapshot, TapPosition, EDGE_FEATURES, NODE_FEATURES,
};

/// Normalization constants applied when assembling feature vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScales {
    /// Line-to-neutral kV mapped to 1.0.
    pub kv_ref: f64,
    pub depth: f64,
    pub degree: f64,
    pub length_km: f64,
    /// Thermal ratings are divided by this (kVA), giving MVA on a 1 MVA base.
    pub rating_kva: f64,
}

impl Default for FeatureScales {
    fn default() -> Self {
        FeatureScales {
            kv_ref: 7.2,
            depth: 10.0,
            degree: 4.0,
            length_km: 1.0,
            rating_kva: 1000.0,
        }
    }
}

/// Solver-side view of one bus-phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawNode {
    pub bus: BusPhase,
    /// Net active injection (generation minus demand), kW.
    pub p_inj_kw: f64,
    /// Rating of the transformer serving this node, kVA.
    pub local_kva: f64,
    pub cap_on: bool,
    pub v_pu: f64,
}

/// Solver-side view of one device phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEdge {
    pub from: usize,
    pub to: usize,
    pub kind: DeviceKind,
    pub r_pu: f64,
    pub x_pu: f64,
    pub length_km: f64,
    pub rating_kva: f64,
    pub closed: bool,
    pub phases: [bool; 3],
    pub tap: Option<TapPosition>,
    pub p_flow_pu: f64,
    pub q_flow_pu: f64,
    pub in_physics_set: bool,
}

/// Convergence record of the power-flow solve behind a snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolverStats {
    pub iterations: usize,
    /// Largest voltage update in the final sweep.
    pub residual: f64,
    /// Largest per-bus complex power mismatch, p.u.
    pub balance_residual: f64,
}

/// Converged power-flow state for one timestep, before feature assembly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSnapshot {
    pub timestamp: u32,
    pub nodes: Vec<RawNode>,
    pub edges: Vec<RawEdge>,
    pub feeder_heads: BTreeMap<u32, Complex64>,
    pub s_subxfmr: Complex64,
    pub s_aux: Complex64,
    #[serde(default)]
    pub solver: SolverStats,
}

fn edge_features(e: &RawEdge, scales: &FeatureScales) -> [f64; EDGE_FEATURES] {
    let mut z = [0.0; EDGE_FEATURES];
    z[edge_idx::R] = e.r_pu;
    z[edge_idx::X] = e.x_pu;
    z[edge_idx::LENGTH] = e.length_km / scales.length_km;
    z[edge_idx::RATING] = e.rating_kva / scales.rating_kva;
    z[edge_idx::DEVICE + e.kind.onehot_slot()] = 1.0;
    z[edge_idx::STATUS] = if e.closed { 1.0 } else { 0.0 };
    for (k, on) in e.phases.iter().enumerate() {
        z[edge_idx::PHASE_MASK + k] = if *on { 1.0 } else { 0.0 };
    }
    z[edge_idx::TAP_POS] = e.tap.map_or(0.0, TapPosition::normalized);
    z
}

/// Assembles node and edge feature vectors from a converged power-flow
/// state and applies the observability mask.
pub fn build_features(raw: &RawSnapshot, mask: &ObservabilityMask, scales: &FeatureScales) -> Result<Snapshot, GridError> {
    let n = raw.nodes.len();
    if mask.len() != n {
        return Err(GridError::MaskSize { mask: mask.len(), nodes: n });
    }
    for (pos, node) in raw.nodes.iter().enumerate() {
        if node.bus.id != pos {
            return Err(GridError::NodeOrder { pos, id: node.bus.id });
        }
        if !(node.bus.kv_base > 0.0) {
            return Err(GridError::NonPositiveKv {
                node: pos,
                kv: node.bus.kv_base,
            });
        }
    }

    let edges: Vec<EdgeRecord> = raw
        .edges
        .iter()
        .map(|e| EdgeRecord {
            from: e.from,
            to: e.to,
            kind: e.kind,
            features: edge_features(e, scales),
            p_flow_pu: e.p_flow_pu,
            q_flow_pu: e.q_flow_pu,
            in_physics_set: e.in_physics_set,
        })
        .collect();

    let buses: Vec<BusPhase> = raw.nodes.iter().map(|r| r.bus.clone()).collect();
    let structure = structural_annotations(&buses, &edges)?;

    let mut tap = vec![0.0; n];
    let mut sw_closed = vec![0.0; n];
    for e in &raw.edges {
        if let Some(t) = e.tap {
            tap[e.to] = t.normalized();
        }
        if e.kind == DeviceKind::Switch && e.closed {
            sw_closed[e.from] = 1.0;
            sw_closed[e.to] = 1.0;
        }
    }

    let nodes = raw
        .nodes
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut x = [0.0; NODE_FEATURES];
            x[node_idx::PHASE + r.bus.phase.index()] = 1.0;
            x[node_idx::KV] = r.bus.kv_base / scales.kv_ref;
            x[node_idx::TYPE + r.bus.bus_type.onehot_slot()] = 1.0;
            x[node_idx::P_PU] = if r.local_kva > 0.0 { r.p_inj_kw / r.local_kva } else { 0.0 };
            x[node_idx::TAP] = tap[i];
            x[node_idx::CAP_ON] = if r.cap_on { 1.0 } else { 0.0 };
            x[node_idx::SW_CLOSED] = sw_closed[i];
            x[node_idx::DEPTH] = f64::from(structure.depth[i]) / scales.depth;
            x[node_idx::ELEC_DIST] = structure.elec_dist[i];
            x[node_idx::DEGREE] = f64::from(structure.degree[i]) / scales.degree;
            let mut features = NodeFeatures(x);
            features.set_observation(mask.is_observed(i), r.v_pu);
            NodeRecord {
                bus: r.bus.clone(),
                features,
                v_true_pu: r.v_pu,
            }
        })
        .collect();

    Ok(Snapshot {
        timestamp: raw.timestamp,
        nodes,
        edges,
        feeder_heads: raw.feeder_heads.clone(),
        s_subxfmr: raw.s_subxfmr,
        s_aux: raw.s_aux,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{BusType, FeederTag, Phase};
    use super::*;

    fn raw() -> RawSnapshot {
        let mk = |id: usize, bus_type, phase, kv: f64, v: f64| RawNode {
            bus: BusPhase {
                id,
                bus_id: id,
                phase,
                kv_base: kv,
                bus_type,
                feeder: if bus_type == BusType::SubstationHub {
                    FeederTag::Substation
                } else {
                    FeederTag::Feeder(0)
                },
            },
            p_inj_kw: -10.0,
            local_kva: 50.0,
            cap_on: false,
            v_pu: v,
        };
        let edge = |from, to, kind, tap| RawEdge {
            from,
            to,
            kind,
            r_pu: 0.01,
            x_pu: 0.02,
            length_km: 0.5,
            rating_kva: 500.0,
            closed: true,
            phases: [true, false, false],
            tap,
            p_flow_pu: 0.0,
            q_flow_pu: 0.0,
            in_physics_set: true,
        };
        RawSnapshot {
            timestamp: 0,
            nodes: vec![
                mk(0, BusType::SubstationHub, Phase::A, 7.2, 1.0),
                mk(1, BusType::FeederHead, Phase::A, 7.2, 1.02),
                mk(2, BusType::DtHigh, Phase::A, 7.2, 1.01),
                mk(3, BusType::DtLow, Phase::A, 0.12, 0.99),
            ],
            edges: vec![
                edge(0, 1, DeviceKind::Switch, None),
                edge(1, 2, DeviceKind::OverheadLine, None),
                edge(2, 3, DeviceKind::Transformer, Some(TapPosition::neutral())),
            ],
            feeder_heads: BTreeMap::new(),
            s_subxfmr: Complex64::new(0.0, 0.0),
            s_aux: Complex64::new(0.0, 0.0),
            solver: SolverStats::default(),
        }
    }

    #[test]
    fn masked_node_carries_zero_voltage() {
        let mask = ObservabilityMask::new(vec![true, false, true, true]);
        let s = build_features(&raw(), &mask, &FeatureScales::default()).unwrap();
        assert_eq!(s.nodes[1].features.m_obs(), 0.0);
        assert_eq!(s.nodes[1].features.observed_voltage(), 0.0);
        assert_eq!(s.nodes[1].v_true_pu, 1.02);
    }

    #[test]
    fn unmasked_node_carries_its_voltage() {
        let mut r = raw();
        r.nodes[0].v_pu = 1.0;
        let s = build_features(&r, &ObservabilityMask::all_observed(4), &FeatureScales::default()).unwrap();
        assert_eq!(s.nodes[0].features.m_obs(), 1.0);
        assert_eq!(s.nodes[0].features.observed_voltage(), 1.0);
    }

    #[test]
    fn one_hots_and_scaling() {
        let s = build_features(&raw(), &ObservabilityMask::all_observed(4), &FeatureScales::default()).unwrap();
        for node in &s.nodes {
            let x = node.features.0;
            assert_eq!(x[0..3].iter().sum::<f64>(), 1.0);
            assert_eq!(x[4..8].iter().sum::<f64>(), 1.0);
        }
        let lv = s.nodes[3].features.0;
        assert_eq!(lv[node_idx::P_PU], -0.2);
        assert_eq!(lv[node_idx::TYPE + 2], 1.0);
        assert_eq!(lv[node_idx::TAP], 0.0);
        assert_eq!(s.nodes[0].features.0[node_idx::SW_CLOSED], 1.0);
        assert_eq!(s.edges[2].features[edge_idx::DEVICE + 2], 1.0);
    }

    #[test]
    fn negative_kv_rejected() {
        let mut r = raw();
        r.nodes[2].bus.kv_base = -7.2;
        let err = build_features(&r, &ObservabilityMask::all_observed(4), &FeatureScales::default()).unwrap_err();
        assert_eq!(err, GridError::NonPositiveKv { node: 2, kv: -7.2 });
    }

    #[test]
    fn rebuild_is_bit_identical() {
        let mask = ObservabilityMask::new(vec![true, false, false, true]);
        let a = build_features(&raw(), &mask, &FeatureScales::default()).unwrap();
        let b = build_features(&raw(), &mask, &FeatureScales::default()).unwrap();
        assert_eq!(a, b);
    }
}
