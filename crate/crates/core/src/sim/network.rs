use std::collections::BTreeMap;

use num_complex::Complex64;

use super::{SimError, SubstationSpec};
use crate::grid::{BusPhase, BusType, DeviceKind, FeederTag, Phase, TapPosition};

/// Which spec entry a phase edge came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeOrigin {
    Device(usize),
    Tie(usize),
}

/// One phase of one device, between two bus-phases.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseEdge {
    pub origin: EdgeOrigin,
    pub from: usize,
    pub to: usize,
    pub phase: Phase,
    pub kind: DeviceKind,
    pub r_pu: f64,
    pub x_pu: f64,
    pub length_km: f64,
    pub rating_kva: f64,
    /// All phases the device connects.
    pub phases: [bool; 3],
    pub tap: Option<TapPosition>,
    pub normally_closed: bool,
}

/// Bus-phase indexed view of a substation.
#[derive(Debug, Clone)]
pub struct Network {
    pub nodes: Vec<BusPhase>,
    pub edges: Vec<PhaseEdge>,
    pub hub_nodes: Vec<usize>,
    /// Rating of the transformer serving each node, kVA.
    pub local_kva: Vec<f64>,
    /// Per capacitor bank: (bus-phase, reactive injection p.u.) per phase.
    pub capacitors: Vec<Vec<(usize, f64)>>,
    /// Station auxiliary load, p.u.
    pub aux_load: Complex64,
    index: BTreeMap<(usize, Phase), usize>,
}

impl Network {
    /// Indexes bus-phases in hub, feeder, bus, phase order.
    pub fn compile(spec: &SubstationSpec) -> Result<Self, SimError> {
        let mut nodes = Vec::new();
        let mut index = BTreeMap::new();
        let mut push = |nodes: &mut Vec<BusPhase>, bus_id: usize, phase: Phase, kv: f64, bus_type: BusType, feeder: FeederTag| {
            let id = nodes.len();
            index.insert((bus_id, phase), id);
            nodes.push(BusPhase {
                id,
                bus_id,
                phase,
                kv_base: kv,
                bus_type,
                feeder,
            });
        };
        for phase in Phase::ALL {
            push(&mut nodes, spec.hub_bus, phase, spec.hub_kv, BusType::SubstationHub, FeederTag::Substation);
        }
        for f in &spec.feeders {
            for b in &f.buses {
                for &phase in &b.phases {
                    push(&mut nodes, b.id, phase, b.kv, b.bus_type, FeederTag::Feeder(f.id));
                }
            }
        }
        let lookup = |bus: usize, phase: Phase, what: &str| {
            index.get(&(bus, phase)).copied().ok_or_else(|| SimError::UnknownBus {
                bus,
                what: what.to_string(),
            })
        };
        let mask = |phases: &[Phase]| {
            let mut m = [false; 3];
            for p in phases {
                m[p.index()] = true;
            }
            m
        };

        let mut edges = Vec::new();
        let mut local_kva = vec![0.0; nodes.len()];
        for f in &spec.feeders {
            for n in nodes.iter().filter(|n| n.feeder == FeederTag::Feeder(f.id)) {
                local_kva[n.id] = f.head_rating_kva;
            }
        }
        for f in &spec.feeders {
            for d in &f.devices {
                for &phase in &d.phases {
                    let what = format!("device {}", d.id);
                    let from = lookup(d.from_bus, phase, &what)?;
                    let to = lookup(d.to_bus, phase, &what)?;
                    if d.kind == DeviceKind::Transformer {
                        local_kva[to] = d.rating_kva;
                    }
                    edges.push(PhaseEdge {
                        origin: EdgeOrigin::Device(d.id),
                        from,
                        to,
                        phase,
                        kind: d.kind,
                        r_pu: d.r_pu,
                        x_pu: d.x_pu,
                        length_km: d.length_km,
                        rating_kva: d.rating_kva,
                        phases: mask(&d.phases),
                        tap: d.tap,
                        normally_closed: true,
                    });
                }
            }
        }
        // LV nodes inherit the rating of the transformer above them; edges
        // are listed parent-first, so one pass suffices.
        for e in &edges {
            if e.kind == DeviceKind::Cable {
                local_kva[e.to] = local_kva[e.from];
            }
        }
        for t in &spec.tie_switches {
            for &phase in &t.phases {
                let what = format!("tie {}", t.id);
                edges.push(PhaseEdge {
                    origin: EdgeOrigin::Tie(t.id),
                    from: lookup(t.bus_a, phase, &what)?,
                    to: lookup(t.bus_b, phase, &what)?,
                    phase,
                    kind: DeviceKind::Switch,
                    r_pu: t.r_pu,
                    x_pu: t.x_pu,
                    length_km: t.length_km,
                    rating_kva: 5000.0,
                    phases: mask(&t.phases),
                    tap: None,
                    normally_closed: !t.normally_open,
                });
            }
        }
        let mut capacitors = Vec::new();
        for f in &spec.feeders {
            for c in &f.capacitors {
                let mut bank = Vec::new();
                for &phase in &c.phases {
                    bank.push((lookup(c.bus, phase, "capacitor")?, c.kvar_per_phase / 1000.0));
                }
                capacitors.push(bank);
            }
        }
        Ok(Network::new(nodes, edges, local_kva, capacitors, spec.aux_load))
    }

    /// Assembles a network from parts; hub nodes are those typed as the hub.
    pub fn new(nodes: Vec<BusPhase>, edges: Vec<PhaseEdge>, local_kva: Vec<f64>, capacitors: Vec<Vec<(usize, f64)>>, aux_load: Complex64) -> Self {
        let index = nodes.iter().map(|n| ((n.bus_id, n.phase), n.id)).collect();
        let hub_nodes = nodes.iter().filter(|n| n.bus_type == BusType::SubstationHub).map(|n| n.id).collect();
        Network {
            nodes,
            edges,
            hub_nodes,
            local_kva,
            capacitors,
            aux_load,
            index,
        }
    }

    pub fn node(&self, bus: usize, phase: Phase) -> Option<usize> {
        self.index.get(&(bus, phase)).copied()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}
