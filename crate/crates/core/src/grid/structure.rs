use std::collections::VecDeque;

use super::{BusPhase, BusType, EdgeRecord, GridError};

/// Per-node structural context.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralAnnotations {
    /// Hop count from the feeder head.
    pub depth: Vec<u32>,
    /// Sum of series-impedance magnitudes along the path from the feeder head, p.u.
    pub elec_dist: Vec<f64>,
    /// Number of incident closed edges.
    pub degree: Vec<u32>,
}

/// Breadth-first walk from every feeder head over closed edges, never
/// passing through the hub. Hub bus-phases sit at depth 0.
pub fn structural_annotations(nodes: &[BusPhase], edges: &[EdgeRecord]) -> Result<StructuralAnnotations, GridError> {
    let n = nodes.len();
    let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut degree = vec![0u32; n];
    for (k, e) in edges.iter().enumerate() {
        for node in [e.from, e.to] {
            if node >= n {
                return Err(GridError::DanglingEdge { edge: k, node });
            }
        }
        if !e.is_closed() {
            continue;
        }
        degree[e.from] += 1;
        degree[e.to] += 1;
        let hub = |i: usize| nodes[i].bus_type == BusType::SubstationHub;
        if hub(e.from) || hub(e.to) {
            continue;
        }
        let z = e.impedance_magnitude();
        adjacency[e.from].push((e.to, z));
        adjacency[e.to].push((e.from, z));
    }

    let mut depth = vec![u32::MAX; n];
    let mut elec_dist = vec![0.0; n];
    let mut queue = VecDeque::new();
    for (i, b) in nodes.iter().enumerate() {
        match b.bus_type {
            BusType::SubstationHub => depth[i] = 0,
            BusType::FeederHead => {
                depth[i] = 0;
                queue.push_back(i);
            }
            _ => {}
        }
    }
    while let Some(u) = queue.pop_front() {
        for &(v, z) in &adjacency[u] {
            if depth[v] == u32::MAX {
                depth[v] = depth[u] + 1;
                elec_dist[v] = elec_dist[u] + z;
                queue.push_back(v);
            }
        }
    }
    if let Some(i) = depth.iter().position(|d| *d == u32::MAX) {
        return Err(GridError::Unreachable(i));
    }
    Ok(StructuralAnnotations {
        depth,
        elec_dist,
        degree,
    })
}
