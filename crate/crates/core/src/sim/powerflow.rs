use std::collections::{BTreeMap, BTreeSet, VecDeque};

use num_complex::Complex64;

use super::{EdgeOrigin, Network, SimError};
use crate::grid::{DeviceKind, FeederTag, TapPosition};

/// Switching and tap state for one solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Controls {
    /// Slack voltage magnitude at the hub, p.u. (angle zero).
    pub hub_voltage: f64,
    /// Tap overrides keyed by phase-edge index.
    pub taps: BTreeMap<usize, TapPosition>,
    /// Energized capacitor banks, by index into [`Network::capacitors`].
    pub caps_on: Vec<bool>,
    /// Tie switches (spec ids) that are closed.
    pub closed_ties: BTreeSet<usize>,
}

impl Controls {
    pub fn nominal(net: &Network, hub_voltage: f64) -> Self {
        Controls {
            hub_voltage,
            taps: BTreeMap::new(),
            caps_on: vec![false; net.capacitors.len()],
            closed_ties: BTreeSet::new(),
        }
    }

    pub fn tap(&self, net: &Network, edge: usize) -> Option<TapPosition> {
        self.taps.get(&edge).copied().or(net.edges[edge].tap)
    }

    pub fn is_closed(&self, net: &Network, edge: usize) -> bool {
        match net.edges[edge].origin {
            EdgeOrigin::Tie(id) => net.edges[edge].normally_closed || self.closed_ties.contains(&id),
            EdgeOrigin::Device(_) => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerFlowOptions {
    /// Stop when the largest voltage update falls below this, p.u.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        PowerFlowOptions {
            tolerance: 1e-12,
            max_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    pub voltages: Vec<Complex64>,
    /// Complex power at the `from` end toward `to`; zero on open or dead edges.
    pub edge_flows: Vec<Complex64>,
    pub closed: Vec<bool>,
    /// Closed edges cut out of the sweep tree by tie re-rooting.
    pub dead: Vec<bool>,
    pub iterations: usize,
    /// Largest voltage update in the final iteration.
    pub residual: f64,
    /// Largest per-bus complex power mismatch.
    pub balance_residual: f64,
    pub feeder_heads: BTreeMap<u32, Complex64>,
    pub s_subxfmr: Complex64,
}

impl PowerFlowSolution {
    pub fn magnitudes(&self) -> Vec<f64> {
        self.voltages.iter().map(|v| v.norm()).collect()
    }
}

/// Sweep tree: parent edge of every non-hub node, plus a root-first order.
struct Tree {
    parent_edge: Vec<Option<usize>>,
    parent: Vec<usize>,
    order: Vec<usize>,
    dead: Vec<bool>,
}

fn build_tree(net: &Network, closed: &[bool]) -> Result<Tree, SimError> {
    let n = net.len();
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut ties = Vec::new();
    for (k, e) in net.edges.iter().enumerate() {
        if !closed[k] {
            continue;
        }
        if matches!(e.origin, EdgeOrigin::Tie(_)) {
            ties.push(k);
        } else {
            adjacency[e.from].push(k);
            adjacency[e.to].push(k);
        }
    }

    let mut parent_edge = vec![None; n];
    let mut parent = vec![usize::MAX; n];
    let mut seen = vec![false; n];
    let mut queue: VecDeque<usize> = net.hub_nodes.iter().copied().collect();
    for &h in &net.hub_nodes {
        seen[h] = true;
    }
    while let Some(u) = queue.pop_front() {
        for &k in &adjacency[u] {
            if parent_edge[u] == Some(k) {
                continue;
            }
            let e = &net.edges[k];
            let v = if e.from == u { e.to } else { e.from };
            if seen[v] {
                return Err(SimError::Loop(k));
            }
            seen[v] = true;
            parent_edge[v] = Some(k);
            parent[v] = u;
            queue.push_back(v);
        }
    }

    let mut dead = vec![false; net.edges.len()];
    for &k in &ties {
        let e = &net.edges[k];
        if !seen[e.from] || !seen[e.to] {
            // a tie may pick up an otherwise islanded segment
            let (fed, other) = if seen[e.from] { (e.from, e.to) } else { (e.to, e.from) };
            if !seen[fed] {
                continue;
            }
            attach_subtree(net, &adjacency, other, fed, k, &mut seen, &mut parent, &mut parent_edge)?;
            continue;
        }
        let dist = electrical_distance(net, &parent, &parent_edge);
        let (mut weak, mut strong) = if dist[e.to] >= dist[e.from] { (e.to, e.from) } else { (e.from, e.to) };
        if is_ancestor(&parent, weak, strong) {
            std::mem::swap(&mut weak, &mut strong);
        }
        let Some(old) = parent_edge[weak] else {
            return Err(SimError::Loop(k));
        };
        if matches!(net.edges[old].origin, EdgeOrigin::Tie(_)) {
            return Err(SimError::Loop(k));
        }
        dead[old] = true;
        parent_edge[weak] = Some(k);
        parent[weak] = strong;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(SimError::Islanded(i));
    }

    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    for v in 0..n {
        if parent_edge[v].is_some() {
            children[parent[v]].push(v);
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut queue: VecDeque<usize> = net.hub_nodes.iter().copied().collect();
    while let Some(u) = queue.pop_front() {
        order.push(u);
        queue.extend(children[u].iter().copied());
    }
    if order.len() != n {
        let mut placed = vec![false; n];
        for &u in &order {
            placed[u] = true;
        }
        let i = placed.iter().position(|p| !p).unwrap_or(0);
        return Err(SimError::Loop(parent_edge[i].unwrap_or(0)));
    }
    Ok(Tree {
        parent_edge,
        parent,
        order,
        dead,
    })
}

#[allow(clippy::too_many_arguments)]
fn attach_subtree(
    net: &Network,
    adjacency: &[Vec<usize>],
    root: usize,
    from: usize,
    tie: usize,
    seen: &mut [bool],
    parent: &mut [usize],
    parent_edge: &mut [Option<usize>],
) -> Result<(), SimError> {
    seen[root] = true;
    parent[root] = from;
    parent_edge[root] = Some(tie);
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        for &k in &adjacency[u] {
            if parent_edge[u] == Some(k) {
                continue;
            }
            let e = &net.edges[k];
            let v = if e.from == u { e.to } else { e.from };
            if seen[v] {
                return Err(SimError::Loop(k));
            }
            seen[v] = true;
            parent_edge[v] = Some(k);
            parent[v] = u;
            queue.push_back(v);
        }
    }
    Ok(())
}

fn electrical_distance(net: &Network, parent: &[usize], parent_edge: &[Option<usize>]) -> Vec<f64> {
    let n = parent.len();
    let mut dist = vec![f64::NAN; n];
    fn walk(v: usize, net: &Network, parent: &[usize], parent_edge: &[Option<usize>], dist: &mut [f64]) -> f64 {
        if !dist[v].is_nan() {
            return dist[v];
        }
        let d = match parent_edge[v] {
            None => 0.0,
            Some(k) => {
                let e = &net.edges[k];
                walk(parent[v], net, parent, parent_edge, dist) + e.r_pu.hypot(e.x_pu)
            }
        };
        dist[v] = d;
        d
    }
    for v in 0..n {
        walk(v, net, parent, parent_edge, &mut dist);
    }
    dist
}

/// Whether `a` lies on the tree path from `b` to the root.
fn is_ancestor(parent: &[usize], a: usize, b: usize) -> bool {
    let mut v = b;
    while v != usize::MAX {
        if v == a {
            return true;
        }
        v = parent[v];
    }
    false
}

/// Backward-forward sweep with constant-power loads.
///
/// `demand` is the complex power drawn at each bus-phase, p.u. (negative
/// real part for net generation). Capacitors in `controls` are added as
/// constant reactive injections. The hub bus-phases are the slack.
pub fn solve_powerflow(net: &Network, demand: &[Complex64], controls: &Controls, opts: &PowerFlowOptions) -> Result<PowerFlowSolution, SimError> {
    let n = net.len();
    assert_eq!(demand.len(), n, "demand vector must cover every bus-phase");
    let closed: Vec<bool> = (0..net.edges.len()).map(|k| controls.is_closed(net, k)).collect();
    let tree = build_tree(net, &closed)?;

    let mut load = demand.to_vec();
    for (bank, on) in net.capacitors.iter().zip(&controls.caps_on) {
        if *on {
            for &(node, q) in bank {
                load[node] -= Complex64::new(0.0, q);
            }
        }
    }

    // per-node ratio and impedance of the edge feeding it, oriented parent -> child
    let mut ratio = vec![1.0; n];
    let mut z = vec![Complex64::new(0.0, 0.0); n];
    for v in 0..n {
        if let Some(k) = tree.parent_edge[v] {
            let e = &net.edges[k];
            z[v] = Complex64::new(e.r_pu, e.x_pu);
            ratio[v] = controls.tap(net, k).map_or(1.0, TapPosition::ratio);
        }
    }

    let slack = Complex64::new(controls.hub_voltage, 0.0);
    let mut v = vec![slack; n];
    let mut i_sub = vec![Complex64::new(0.0, 0.0); n];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let backward = |v: &[Complex64], i_sub: &mut [Complex64]| {
        for x in i_sub.iter_mut() {
            *x = Complex64::new(0.0, 0.0);
        }
        for &u in tree.order.iter().rev() {
            i_sub[u] += (load[u] / v[u]).conj();
            if tree.parent_edge[u].is_some() {
                let up = i_sub[u] * ratio[u];
                i_sub[tree.parent[u]] += up;
            }
        }
    };
    while iterations < opts.max_iterations {
        iterations += 1;
        backward(&v, &mut i_sub);
        residual = 0.0;
        for &u in &tree.order {
            if tree.parent_edge[u].is_none() {
                continue;
            }
            let i_p = i_sub[u] * ratio[u];
            let new = (v[tree.parent[u]] - z[u] * i_p) * ratio[u];
            residual = f64::max(residual, (new - v[u]).norm());
            v[u] = new;
        }
        if !residual.is_finite() {
            break;
        }
        if residual < opts.tolerance {
            break;
        }
    }
    if !(residual < opts.tolerance) {
        return Err(SimError::NonConvergence { iterations, residual });
    }
    backward(&v, &mut i_sub);

    // flows: power leaving the parent end and arriving at the child end
    let mut edge_flows = vec![Complex64::new(0.0, 0.0); net.edges.len()];
    let mut sent = vec![Complex64::new(0.0, 0.0); n];
    let mut received = vec![Complex64::new(0.0, 0.0); n];
    for u in 0..n {
        let Some(k) = tree.parent_edge[u] else { continue };
        let p = tree.parent[u];
        let i_p = i_sub[u] * ratio[u];
        let s_send = v[p] * i_p.conj();
        let s_recv = v[u] * i_sub[u].conj();
        sent[p] += s_send;
        received[u] += s_recv;
        edge_flows[k] = if net.edges[k].from == p { s_send } else { -s_recv };
    }
    let mut balance_residual: f64 = 0.0;
    for u in 0..n {
        if tree.parent_edge[u].is_none() {
            continue;
        }
        balance_residual = balance_residual.max((received[u] - sent[u] - load[u]).norm());
    }

    let mut feeder_heads = BTreeMap::new();
    let mut hub_out = Complex64::new(0.0, 0.0);
    for (k, e) in net.edges.iter().enumerate() {
        let hub = |i: usize| net.nodes[i].feeder == FeederTag::Substation;
        if !closed[k] || tree.dead[k] || !(hub(e.from) ^ hub(e.to)) {
            continue;
        }
        let (s, feeder_node) = if hub(e.from) { (edge_flows[k], e.to) } else { (-edge_flows[k], e.from) };
        if let FeederTag::Feeder(f) = net.nodes[feeder_node].feeder {
            *feeder_heads.entry(f).or_insert(Complex64::new(0.0, 0.0)) += s;
        }
        hub_out += s;
    }
    for &h in &net.hub_nodes {
        hub_out += load[h];
    }

    Ok(PowerFlowSolution {
        voltages: v,
        edge_flows,
        closed,
        dead: tree.dead,
        iterations,
        residual,
        balance_residual,
        feeder_heads,
        s_subxfmr: hub_out + net.aux_load,
    })
}

/// Whether a phase edge qualifies for the linearized branch-flow relation:
/// closed, carrying flow in the sweep, not a regulator, and at neutral tap.
pub(crate) fn in_physics_set(net: &Network, sol: &PowerFlowSolution, controls: &Controls, k: usize) -> bool {
    let e = &net.edges[k];
    sol.closed[k]
        && !sol.dead[k]
        && e.kind != DeviceKind::Regulator
        && controls.tap(net, k).is_none_or(|t| t.position() == TapPosition::NEUTRAL)
}
