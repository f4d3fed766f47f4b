use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BusSpec, CapacitorSpec, DerSpec, DeviceSpec, FeederSpec, LoadSpec, SimError, SubstationSpec, TieSwitch};
use crate::grid::{BusType, DeviceKind, Phase, TapPosition};

/// Target feeder size, in bus-phases per feeder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeClass {
    /// About 30 bus-phases per feeder.
    Tiny,
    /// About 80.
    Small,
    /// About 200.
    Medium,
}

impl SizeClass {
    fn layout(self) -> Layout {
        match self {
            SizeClass::Tiny => Layout {
                backbone: 4,
                laterals: 1,
                lv_per_dt: (1, 3),
            },
            SizeClass::Small => Layout {
                backbone: 10,
                laterals: 3,
                lv_per_dt: (1, 3),
            },
            SizeClass::Medium => Layout {
                backbone: 26,
                laterals: 10,
                lv_per_dt: (1, 3),
            },
        }
    }
}

impl std::str::FromStr for SizeClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tiny" => Ok(SizeClass::Tiny),
            "small" => Ok(SizeClass::Small),
            "medium" => Ok(SizeClass::Medium),
            other => Err(format!("unknown size class `{other}` (expected tiny, small or medium)")),
        }
    }
}

struct Layout {
    /// Three-phase MV buses below the head.
    backbone: usize,
    /// Single-phase MV lateral buses.
    laterals: usize,
    /// Inclusive range of LV nodes hanging off each distribution transformer.
    lv_per_dt: (usize, usize),
}

const MV_KV_LN: f64 = 7.2;
const LV_KV_LN: f64 = 0.12;
const S_BASE_MVA: f64 = 1.0;
const DT_RATINGS_KVA: [f64; 5] = [25.0, 37.5, 50.0, 75.0, 100.0];
const PROFILE_STEPS: usize = 35_040;

fn z_base(kv_ln: f64) -> f64 {
    kv_ln * kv_ln / S_BASE_MVA
}

/// Per-kilometre impedances in ohms.
const MV_BACKBONE_OHM_KM: (f64, f64) = (0.35, 0.45);
const MV_LATERAL_OHM_KM: (f64, f64) = (0.65, 0.50);
const LV_CABLE_OHM_KM: (f64, f64) = (0.25, 0.08);

struct Builder<'a> {
    rng: &'a mut ChaCha8Rng,
    next_bus: usize,
    next_device: usize,
    next_profile: u32,
}

impl Builder<'_> {
    fn bus(&mut self) -> usize {
        self.next_bus += 1;
        self.next_bus - 1
    }

    fn device(&mut self) -> usize {
        self.next_device += 1;
        self.next_device - 1
    }

    fn profile(&mut self) -> u32 {
        self.next_profile += 1;
        self.next_profile - 1
    }

    fn line(&mut self, from: usize, to: usize, phases: Vec<Phase>, ohm_km: (f64, f64), km: f64, kv: f64, kind: DeviceKind, rating_kva: f64) -> DeviceSpec {
        let zb = z_base(kv);
        DeviceSpec {
            id: self.device(),
            from_bus: from,
            to_bus: to,
            kind,
            phases,
            r_pu: ohm_km.0 * km / zb,
            x_pu: ohm_km.1 * km / zb,
            length_km: km,
            rating_kva,
            tap: None,
        }
    }
}

fn rotate_phase(k: usize) -> Phase {
    Phase::ALL[k % 3]
}

fn generate_feeder(b: &mut Builder<'_>, id: u32, hub_bus: usize, layout: &Layout, with_regulator: bool, with_capacitor: bool) -> FeederSpec {
    let abc = Phase::ALL.to_vec();
    let mut buses = Vec::new();
    let mut devices = Vec::new();
    let mut loads = Vec::new();

    let head = b.bus();
    buses.push(BusSpec {
        id: head,
        kv: MV_KV_LN,
        bus_type: BusType::FeederHead,
        phases: abc.clone(),
    });
    // feeder breaker
    devices.push(DeviceSpec {
        id: b.device(),
        from_bus: hub_bus,
        to_bus: head,
        kind: DeviceKind::Switch,
        phases: abc.clone(),
        r_pu: 0.0,
        x_pu: 0.0,
        length_km: 0.0,
        rating_kva: 6000.0,
        tap: None,
    });

    // three-phase backbone: chain with occasional branching
    let mut backbone = vec![head];
    let mut children = vec![0usize; layout.backbone + 1];
    for k in 0..layout.backbone {
        let parent_pos = if k > 1 && b.rng.random_bool(0.3) {
            b.rng.random_range(1..backbone.len())
        } else {
            backbone.len() - 1
        };
        children[parent_pos] += 1;
        let bus = b.bus();
        buses.push(BusSpec {
            id: bus,
            kv: MV_KV_LN,
            bus_type: BusType::DtHigh,
            phases: abc.clone(),
        });
        let km = b.rng.random_range(0.8..2.5);
        let mut dev = b.line(backbone[parent_pos], bus, abc.clone(), MV_BACKBONE_OHM_KM, km, MV_KV_LN, DeviceKind::OverheadLine, 5000.0);
        if k == 1 {
            // sectionalizing switch
            dev.kind = DeviceKind::Switch;
            dev.r_pu = 1e-5;
            dev.x_pu = 1e-5;
            dev.length_km = 0.01;
        } else if with_regulator && k == layout.backbone / 2 {
            dev.kind = DeviceKind::Regulator;
            dev.r_pu = 2e-4;
            dev.x_pu = 6e-4;
            dev.length_km = 0.0;
            dev.tap = Some(TapPosition::neutral());
        }
        devices.push(dev);
        backbone.push(bus);
    }
    let non_leaf = children.iter().filter(|c| **c > 0).count().max(1);
    let branching_factor = children.iter().sum::<usize>() as f64 / non_leaf as f64;

    // single-phase laterals
    let mut mv_buses: Vec<(usize, Vec<Phase>)> = backbone[1..].iter().map(|&bus| (bus, abc.clone())).collect();
    for _ in 0..layout.laterals {
        let parent = backbone[b.rng.random_range(1..backbone.len())];
        let phase = Phase::ALL[b.rng.random_range(0..3)];
        let bus = b.bus();
        buses.push(BusSpec {
            id: bus,
            kv: MV_KV_LN,
            bus_type: BusType::DtHigh,
            phases: vec![phase],
        });
        let km = b.rng.random_range(0.5..1.5);
        devices.push(b.line(parent, bus, vec![phase], MV_LATERAL_OHM_KM, km, MV_KV_LN, DeviceKind::OverheadLine, 1500.0));
        mv_buses.push((bus, vec![phase]));
    }

    // one single-phase distribution transformer per MV bus, LV nodes below it
    let mut head_kw = 0.0;
    for (k, (mv_bus, phases)) in mv_buses.iter().enumerate() {
        let phase = if phases.len() == 1 { phases[0] } else { rotate_phase(k + id as usize) };
        let n_lv = b.rng.random_range(layout.lv_per_dt.0..=layout.lv_per_dt.1);
        let dt_low = b.bus();
        buses.push(BusSpec {
            id: dt_low,
            kv: LV_KV_LN,
            bus_type: BusType::DtLow,
            phases: vec![phase],
        });
        let mut lv_loads = Vec::new();
        let mut total_kw = 0.0;
        let mut add_load = |b: &mut Builder<'_>, bus: usize, houses: usize| {
            let peak_kw: f64 = (0..houses).map(|_| b.rng.random_range(3.0..7.0)).sum();
            let pf_ratio = b.rng.random_range(0.25..0.45);
            total_kw += peak_kw;
            lv_loads.push(LoadSpec {
                bus,
                phase,
                profile: b.profile(),
                peak_kw,
                peak_kvar: peak_kw * pf_ratio,
            });
        };
        let houses = b.rng.random_range(1..=3);
        add_load(b, dt_low, houses);
        let mut lv_devices = Vec::new();
        let mut lv_parent = dt_low;
        for j in 0..n_lv {
            let bus = b.bus();
            buses.push(BusSpec {
                id: bus,
                kv: LV_KV_LN,
                bus_type: BusType::LvNode,
                phases: vec![phase],
            });
            let km = b.rng.random_range(0.02..0.06);
            lv_devices.push(b.line(lv_parent, bus, vec![phase], LV_CABLE_OHM_KM, km, LV_KV_LN, DeviceKind::Cable, 60.0));
            let houses = b.rng.random_range(1..=3);
            add_load(b, bus, houses);
            // alternate between chaining and fanning out from the secondary
            if j % 2 == 0 {
                lv_parent = bus;
            } else {
                lv_parent = dt_low;
            }
        }
        let rating = DT_RATINGS_KVA
            .iter()
            .copied()
            .find(|r| *r >= total_kw / 0.85)
            .unwrap_or(*DT_RATINGS_KVA.last().unwrap());
        // 2 % impedance on the transformer's own base, X/R = 2
        let z = 0.02 * 1000.0 / rating;
        devices.push(DeviceSpec {
            id: b.device(),
            from_bus: *mv_bus,
            to_bus: dt_low,
            kind: DeviceKind::Transformer,
            phases: vec![phase],
            r_pu: z / 5f64.sqrt(),
            x_pu: 2.0 * z / 5f64.sqrt(),
            length_km: 0.0,
            rating_kva: rating,
            tap: Some(TapPosition::neutral()),
        });
        devices.extend(lv_devices);
        loads.extend(lv_loads);
        head_kw += total_kw;
    }

    // PV on roughly half of the load points
    let total_peak: f64 = loads.iter().map(|l| l.peak_kw).sum();
    let chosen: Vec<&LoadSpec> = loads.iter().filter(|_| b.rng.random_bool(0.5)).collect();
    let chosen_peak: f64 = chosen.iter().map(|l| l.peak_kw).sum::<f64>().max(1e-9);
    let ders = chosen
        .iter()
        .map(|l| DerSpec {
            bus: l.bus,
            phase: l.phase,
            profile: 0,
            peak_kw: l.peak_kw * total_peak / chosen_peak,
        })
        .collect::<Vec<_>>();
    let ders = ders
        .into_iter()
        .map(|mut d| {
            d.profile = b.profile();
            d
        })
        .collect();

    let capacitors = if with_capacitor {
        vec![CapacitorSpec {
            bus: backbone[backbone.len() / 2],
            phases: abc,
            kvar_per_phase: 25.0,
        }]
    } else {
        Vec::new()
    };

    FeederSpec {
        id,
        head_bus: head,
        head_rating_kva: (head_kw * 1.5).max(300.0),
        branching_factor,
        buses,
        devices,
        loads,
        ders,
        capacitors,
    }
}

/// Deterministic synthetic substation with `feeders` radial feeders joined
/// at a hub bus, and a normally-open tie switch between the far ends of each
/// pair of neighbouring feeders.
pub fn generate_substation(seed: u64, size: SizeClass, feeders: usize) -> Result<SubstationSpec, SimError> {
    if !(2..=6).contains(&feeders) {
        return Err(SimError::FeederCount(feeders));
    }
    let layout = size.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hub_bus = 0;
    let mut builder = Builder {
        rng: &mut rng,
        next_bus: 1,
        next_device: 0,
        next_profile: 0,
    };
    let mut specs = Vec::with_capacity(feeders);
    for f in 0..feeders {
        specs.push(generate_feeder(&mut builder, f as u32, hub_bus, &layout, f == 0, f == 1));
    }

    let mut ties = Vec::new();
    for f in 0..feeders.saturating_sub(1) {
        let far_end = |spec: &FeederSpec| {
            spec.buses
                .iter()
                .filter(|bs| bs.phases.len() == 3 && bs.bus_type == BusType::DtHigh)
                .map(|bs| bs.id)
                .last()
                .unwrap_or(spec.head_bus)
        };
        let (a, c) = (&specs[f], &specs[f + 1]);
        let km = builder.rng.random_range(0.5..1.5);
        let zb = z_base(MV_KV_LN);
        ties.push(TieSwitch {
            id: f,
            bus_a: far_end(a),
            bus_b: far_end(c),
            feeder_a: a.id,
            feeder_b: c.id,
            phases: Phase::ALL.to_vec(),
            r_pu: MV_BACKBONE_OHM_KM.0 * km / zb,
            x_pu: MV_BACKBONE_OHM_KM.1 * km / zb,
            length_km: km,
            normally_open: true,
        });
    }

    let xfmr_rating_kva = specs.iter().map(|f| f.head_rating_kva).sum();
    Ok(SubstationSpec {
        name: format!("sub-{seed}"),
        seed,
        size,
        hub_bus,
        hub_kv: MV_KV_LN,
        xfmr_rating_kva,
        ltc_setpoint: 1.02,
        aux_load: Complex64::new(0.003, 0.001),
        profile_steps: PROFILE_STEPS,
        feeders: specs,
        tie_switches: ties,
    })
}
