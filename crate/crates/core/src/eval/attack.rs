use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::grid::{node_idx, Snapshot};

/// Largest attacked fraction of available measurements.
pub const MAX_PENETRATION: f64 = 0.06;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackTargets {
    Voltage,
    Power,
    Both,
}

/// False-data injection `m + eps + b`, `eps ~ N(0, sigma)`, `b ~ U[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub sigma_voltage: f64,
    pub sigma_power: f64,
    pub bias_lo: f64,
    pub bias_hi: f64,
    /// Fraction of available measurements attacked.
    pub penetration: f64,
    pub targets: AttackTargets,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            sigma_voltage: 0.01,
            sigma_power: 0.05,
            bias_lo: -0.02,
            bias_hi: 0.02,
            penetration: MAX_PENETRATION,
            targets: AttackTargets::Both,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(0.0..=MAX_PENETRATION).contains(&self.penetration) {
            return Err(EvalError::Config(format!(
                "attack penetration {} outside [0, {MAX_PENETRATION}]",
                self.penetration
            )));
        }
        if !(self.sigma_voltage >= 0.0 && self.sigma_power >= 0.0 && self.bias_lo <= self.bias_hi) {
            return Err(EvalError::Config("attack noise must be non-negative and bias range ordered".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Measurement {
    Voltage(usize),
    NodePower(usize),
    EdgePower(usize),
}

fn available(snapshot: &Snapshot, targets: AttackTargets) -> Vec<Measurement> {
    let mut out = Vec::new();
    if targets != AttackTargets::Power {
        for (i, n) in snapshot.nodes.iter().enumerate() {
            if n.features.m_obs() > 0.5 {
                out.push(Measurement::Voltage(i));
            }
        }
    }
    if targets != AttackTargets::Voltage {
        out.extend((0..snapshot.nodes.len()).map(Measurement::NodePower));
        out.extend((0..snapshot.edges.len()).map(Measurement::EdgePower));
    }
    out
}

/// Number of measurements an attack at `penetration` perturbs.
pub fn attack_count(available: usize, penetration: f64) -> usize {
    (penetration * available as f64).round() as usize
}

/// Perturbs a random subset of the available measurements of an already
/// masked snapshot. Only observed voltages are available for attack.
/// Ground-truth voltages are never touched.
pub fn inject_attack(snapshot: &Snapshot, cfg: &AttackConfig, seed: u64) -> Result<Snapshot, EvalError> {
    cfg.validate()?;
    let mut out = snapshot.clone();
    let pool = available(snapshot, cfg.targets);
    let k = attack_count(pool.len(), cfg.penetration);
    if k == 0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = sample(&mut rng, pool.len(), k).into_vec();
    chosen.sort_unstable();
    let noise_v = Normal::new(0.0, cfg.sigma_voltage).map_err(|e| EvalError::Config(e.to_string()))?;
    let noise_p = Normal::new(0.0, cfg.sigma_power).map_err(|e| EvalError::Config(e.to_string()))?;
    for c in chosen {
        let bias = if cfg.bias_hi > cfg.bias_lo {
            rng.random_range(cfg.bias_lo..cfg.bias_hi)
        } else {
            cfg.bias_lo
        };
        match pool[c] {
            Measurement::Voltage(i) => out.nodes[i].features.0[node_idx::M_OBS_V] += noise_v.sample(&mut rng) + bias,
            Measurement::NodePower(i) => out.nodes[i].features.0[node_idx::P_PU] += noise_p.sample(&mut rng) + bias,
            Measurement::EdgePower(k) => out.edges[k].p_flow_pu += noise_p.sample(&mut rng) + bias,
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::sample_mask;
    use crate::sim::{generate_substation, run_timeseries, SimScenario, SizeClass};

    fn snapshot() -> Snapshot {
        let spec = generate_substation(8, SizeClass::Tiny, 2).unwrap();
        let mut s = run_timeseries(&spec, &SimScenario::new(0, 20, 15)).unwrap().remove(0);
        s.apply_mask(&sample_mask(s.len(), 50, 2).unwrap()).unwrap();
        s
    }

    fn changed(a: &Snapshot, b: &Snapshot) -> usize {
        let nodes: usize = a
            .nodes
            .iter()
            .zip(&b.nodes)
            .map(|(x, y)| x.features.0.iter().zip(&y.features.0).filter(|(p, q)| p != q).count())
            .sum();
        nodes + a.edges.iter().zip(&b.edges).filter(|(x, y)| x.p_flow_pu != y.p_flow_pu).count()
    }

    #[test]
    fn null_attack_is_identity() {
        let s = snapshot();
        let cfg = AttackConfig {
            sigma_voltage: 0.0,
            sigma_power: 0.0,
            bias_lo: 0.0,
            bias_hi: 0.0,
            ..AttackConfig::default()
        };
        assert_eq!(inject_attack(&s, &cfg, 1).unwrap(), s);
        let zero = AttackConfig {
            penetration: 0.0,
            ..AttackConfig::default()
        };
        assert_eq!(inject_attack(&s, &zero, 1).unwrap(), s);
    }

    #[test]
    fn perturbs_exact_share_and_keeps_labels() {
        let s = snapshot();
        let cfg = AttackConfig::default();
        let pool = available(&s, cfg.targets).len();
        let out = inject_attack(&s, &cfg, 3).unwrap();
        assert_eq!(changed(&s, &out), attack_count(pool, 0.06));
        assert_eq!(out.voltages(), s.voltages());
        assert_eq!(out, inject_attack(&s, &cfg, 3).unwrap());
        assert_ne!(out, inject_attack(&s, &cfg, 4).unwrap());
        assert_eq!(attack_count(100, 0.06), 6);
    }

    #[test]
    fn masked_voltages_are_not_attackable() {
        let s = snapshot();
        let cfg = AttackConfig {
            targets: AttackTargets::Voltage,
            penetration: 0.06,
            ..AttackConfig::default()
        };
        let out = inject_attack(&s, &cfg, 9).unwrap();
        for (a, b) in s.nodes.iter().zip(&out.nodes) {
            if a.features.m_obs() == 0.0 {
                assert_eq!(b.features.observed_voltage(), 0.0);
            }
        }
        assert!(AttackConfig { penetration: 0.1, ..cfg }.validate().is_err());
    }
}
