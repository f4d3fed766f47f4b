use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::powerflow::in_physics_set;
use super::{solve_powerflow, Controls, Network, PowerFlowOptions, ProfileBank, SimError, SubstationSpec};
use crate::grid::{build_features, DeviceKind, FeatureScales, ObservabilityMask, RawEdge, RawNode, RawSnapshot, Snapshot, SolverStats, TapPosition};
use crate::seed::derive_seed;

pub const STEP_MINUTES: u32 = 15;

/// Close tie switch `tie` from scenario step `at_step` onward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TieClosure {
    pub tie: usize,
    pub at_step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    /// Installed PV as a percentage of peak load: 0 or 20..=40.
    pub der_penetration: u32,
    pub horizon_minutes: u32,
    /// First profile step of the horizon.
    #[serde(default)]
    pub start_step: usize,
    /// Multiplier on every load, for light- or heavy-loading studies.
    #[serde(default = "one")]
    pub load_scale: f64,
    #[serde(default)]
    pub tie_closures: Vec<TieClosure>,
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl SimScenario {
    pub fn new(seed: u64, der_penetration: u32, horizon_minutes: u32) -> Self {
        SimScenario {
            der_penetration,
            horizon_minutes,
            start_step: 0,
            load_scale: 1.0,
            tie_closures: Vec::new(),
            seed,
        }
    }

    pub fn steps(&self) -> usize {
        (self.horizon_minutes / STEP_MINUTES) as usize
    }
}

/// Control state carried from one timestep to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    /// Operator bias on the hub setpoint, in LTC steps.
    pub ltc_offset: i32,
    pub regulator_taps: BTreeMap<usize, TapPosition>,
    pub caps_on: Vec<bool>,
}

const REG_TARGET: f64 = 1.0;
const REG_DEADBAND: f64 = 0.01;
const LTC_COMPENSATION: f64 = 0.03;
const LTC_MAX_OFFSET: i32 = 3;
const CAP_ON_BELOW: f64 = 0.995;
const CAP_OFF_ABOVE: f64 = 1.03;

impl ControllerState {
    fn new(net: &Network) -> Self {
        let regulator_taps = net
            .edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.kind == DeviceKind::Regulator)
            .map(|(k, e)| (k, e.tap.unwrap_or_else(TapPosition::neutral)))
            .collect();
        ControllerState {
            ltc_offset: 0,
            regulator_taps,
            caps_on: vec![false; net.capacitors.len()],
        }
    }

    /// Hub voltage from the scheduled setpoint, load-proportional
    /// compensation and the operator bias, quantized to LTC steps.
    fn hub_voltage(&self, setpoint: f64, load_fraction: f64) -> f64 {
        let target = LTC_COMPENSATION * (load_fraction - 0.5) + f64::from(self.ltc_offset) * TapPosition::STEP_PU;
        setpoint + (target / TapPosition::STEP_PU).round() * TapPosition::STEP_PU
    }

    /// Deadband regulators and capacitor hysteresis, one action per step.
    fn update(&mut self, net: &Network, v: &[f64]) {
        for (&k, tap) in self.regulator_taps.iter_mut() {
            let vr = v[net.edges[k].to];
            if vr < REG_TARGET - REG_DEADBAND {
                *tap = tap.stepped(1);
            } else if vr > REG_TARGET + REG_DEADBAND {
                *tap = tap.stepped(-1);
            }
        }
        for (bank, on) in net.capacitors.iter().zip(self.caps_on.iter_mut()) {
            let mean = bank.iter().map(|(node, _)| v[*node]).sum::<f64>() / bank.len().max(1) as f64;
            if mean < CAP_ON_BELOW {
                *on = true;
            } else if mean > CAP_OFF_ABOVE {
                *on = false;
            }
        }
    }
}

/// Quasi-static simulation returning the solver-side state of every step.
pub fn run_timeseries_raw(spec: &SubstationSpec, scenario: &SimScenario) -> Result<Vec<RawSnapshot>, SimError> {
    if scenario.der_penetration != 0 && !(20..=40).contains(&scenario.der_penetration) {
        return Err(SimError::DerPenetration(scenario.der_penetration));
    }
    let steps = scenario.steps();
    if scenario.start_step + steps > spec.profile_steps {
        return Err(SimError::Horizon {
            requested: scenario.start_step + steps,
            available: spec.profile_steps,
        });
    }
    for c in &scenario.tie_closures {
        if !spec.tie_switches.iter().any(|t| t.id == c.tie) {
            return Err(SimError::UnknownTie(c.tie));
        }
    }
    let net = Network::compile(spec)?;
    let node_of = |bus: usize, phase| {
        net.node(bus, phase).ok_or_else(|| SimError::UnknownBus {
            bus,
            what: "load".to_string(),
        })
    };
    let loads = spec
        .feeders
        .iter()
        .flat_map(|f| &f.loads)
        .map(|l| Ok((node_of(l.bus, l.phase)?, l)))
        .collect::<Result<Vec<_>, SimError>>()?;
    let ders = spec
        .feeders
        .iter()
        .flat_map(|f| &f.ders)
        .map(|d| Ok((node_of(d.bus, d.phase)?, d)))
        .collect::<Result<Vec<_>, SimError>>()?;
    let profile_count = loads
        .iter()
        .map(|(_, l)| l.profile)
        .chain(ders.iter().map(|(_, d)| d.profile))
        .max()
        .map_or(0, |m| m + 1);
    let bank = ProfileBank::generate(derive_seed(spec.seed, &format!("profiles/{}", scenario.seed)), profile_count, scenario.start_step, steps);
    let peak_kw: f64 = loads.iter().map(|(_, l)| l.peak_kw).sum::<f64>() * scenario.load_scale;
    let der_scale = f64::from(scenario.der_penetration) / 100.0;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(scenario.seed, "ltc-operator"));
    let mut state = ControllerState::new(&net);
    let opts = PowerFlowOptions::default();
    let mut out = Vec::with_capacity(steps);
    for step in 0..steps {
        let t = scenario.start_step + step;
        let mut demand_kw = vec![Complex64::new(0.0, 0.0); net.len()];
        let mut total_kw = 0.0;
        for (node, l) in &loads {
            let (p, q) = bank.load(l.profile, t);
            let s = Complex64::new(l.peak_kw * p, l.peak_kvar * q) * scenario.load_scale;
            demand_kw[*node] += s;
            total_kw += s.re;
        }
        for (node, d) in &ders {
            demand_kw[*node] -= Complex64::new(d.peak_kw * der_scale * bank.pv(d.profile, t), 0.0);
        }
        let demand: Vec<Complex64> = demand_kw.iter().map(|s| s / 1000.0).collect();

        if rng.random_bool(0.08) {
            let delta = if rng.random_bool(0.5) { 1 } else { -1 };
            state.ltc_offset = (state.ltc_offset + delta).clamp(-LTC_MAX_OFFSET, LTC_MAX_OFFSET);
        }
        let load_fraction = if peak_kw > 0.0 { total_kw / peak_kw } else { 0.0 };
        let controls = Controls {
            hub_voltage: state.hub_voltage(spec.ltc_setpoint, load_fraction),
            taps: state.regulator_taps.clone(),
            caps_on: state.caps_on.clone(),
            closed_ties: scenario.tie_closures.iter().filter(|c| c.at_step <= step).map(|c| c.tie).collect(),
        };
        let sol = solve_powerflow(&net, &demand, &controls, &opts).map_err(|e| SimError::AtStep { step, source: Box::new(e) })?;
        let v = sol.magnitudes();

        let mut cap_node = vec![false; net.len()];
        for (bank, on) in net.capacitors.iter().zip(&controls.caps_on) {
            for (node, _) in bank {
                cap_node[*node] |= *on;
            }
        }
        let nodes = net
            .nodes
            .iter()
            .map(|b| RawNode {
                bus: b.clone(),
                p_inj_kw: -demand_kw[b.id].re,
                local_kva: net.local_kva[b.id],
                cap_on: cap_node[b.id],
                v_pu: v[b.id],
            })
            .collect();
        let edges = net
            .edges
            .iter()
            .enumerate()
            .map(|(k, e)| RawEdge {
                from: e.from,
                to: e.to,
                kind: e.kind,
                r_pu: e.r_pu,
                x_pu: e.x_pu,
                length_km: e.length_km,
                rating_kva: e.rating_kva,
                closed: sol.closed[k],
                phases: e.phases,
                tap: controls.tap(&net, k),
                p_flow_pu: sol.edge_flows[k].re,
                q_flow_pu: sol.edge_flows[k].im,
                in_physics_set: in_physics_set(&net, &sol, &controls, k),
            })
            .collect();
        out.push(RawSnapshot {
            timestamp: step as u32 * STEP_MINUTES,
            nodes,
            edges,
            feeder_heads: sol.feeder_heads.clone(),
            s_subxfmr: sol.s_subxfmr,
            s_aux: net.aux_load,
            solver: SolverStats {
                iterations: sol.iterations,
                residual: sol.residual,
                balance_residual: sol.balance_residual,
            },
        });
        state.update(&net, &v);
    }
    Ok(out)
}

/// Quasi-static simulation with fully observed feature snapshots.
pub fn run_timeseries(spec: &SubstationSpec, scenario: &SimScenario) -> Result<Vec<Snapshot>, SimError> {
    let scales = FeatureScales::default();
    run_timeseries_raw(spec, scenario)?
        .iter()
        .enumerate()
        .map(|(step, raw)| {
            build_features(raw, &ObservabilityMask::all_observed(raw.nodes.len()), &scales).map_err(|e| SimError::AtStep {
                step,
                source: Box::new(e.into()),
            })
        })
        .collect()
}
