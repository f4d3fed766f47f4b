//! Finite-difference verification of the full model and loss.
//!
//! Every sampled parameter entry is perturbed by `±eps` and the central
//! difference of the total loss is compared with the taped gradient. Entries
//! whose perturbation flips the sign of any `relu`/`abs` input are not
//! differentiable there; they are skipped and another entry is drawn.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_complex::Complex64;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gnn::{GnnError, GraphInput, Model, ModelConfig, Trainable};
use crate::grid::{
    build_features, BusPhase, BusType, DeviceKind, FeatureScales, FeederTag, GridError, ObservabilityMask, Phase, RawEdge,
    RawNode, RawSnapshot, SolverStats, TapPosition,
};
use crate::losses::{total_loss, LossError, LossWeights};
use crate::seed::derive_seed;
use crate::tensor::{Tape, TensorError};

#[derive(Debug, Error)]
pub enum GradcheckError {
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("no gradient recorded for `{0}`")]
    MissingGradient(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradcheckConfig {
    pub eps: f64,
    /// Relative tolerance on `|analytic - numeric|`.
    pub rtol: f64,
    /// Magnitude below which the tolerance stops shrinking.
    pub floor: f64,
    /// Entries checked per tensor; `0` checks every entry.
    pub samples_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            eps: 1e-5,
            rtol: 1e-4,
            floor: 1e-5,
            samples_per_tensor: 8,
            seed: 0,
        }
    }
}

/// Outcome for one parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    /// Entries skipped because `±eps` crossed a kink.
    pub kinks: usize,
    pub max_abs_err: f64,
    /// Largest `|a - n| / max(|a|, |n|, floor)`.
    pub max_rel_err: f64,
    pub passed: bool,
}

impl TensorCheck {
    /// Table grouping key: `input`, `layerK`, `hub` or `decoder`.
    pub fn layer(&self) -> &str {
        self.name.split('.').next().unwrap_or(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCheck {
    pub layer: String,
    pub tensors: usize,
    pub checked: usize,
    pub kinks: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub config: GradcheckConfig,
    pub loss: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.passed)
    }

    pub fn checked(&self) -> usize {
        self.tensors.iter().map(|t| t.checked).sum()
    }

    pub fn max_rel_err(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max)
    }

    pub fn layers(&self) -> Vec<LayerCheck> {
        let mut by: BTreeMap<&str, LayerCheck> = BTreeMap::new();
        for t in &self.tensors {
            let e = by.entry(t.layer()).or_insert_with(|| LayerCheck {
                layer: t.layer().to_string(),
                tensors: 0,
                checked: 0,
                kinks: 0,
                max_rel_err: 0.0,
                passed: true,
            });
            e.tensors += 1;
            e.checked += t.checked;
            e.kinks += t.kinks;
            e.max_rel_err = e.max_rel_err.max(t.max_rel_err);
            e.passed &= t.passed;
        }
        by.into_values().collect()
    }

    /// Pass/fail table, one row per layer.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>7} {:>8} {:>6} {:>12}  result",
            "layer", "tensors", "entries", "kinks", "max_rel_err"
        );
        for l in self.layers() {
            let _ = writeln!(
                out,
                "{:<10} {:>7} {:>8} {:>6} {:>12.3e}  {}",
                l.layer,
                l.tensors,
                l.checked,
                l.kinks,
                l.max_rel_err,
                if l.passed { "pass" } else { "FAIL" }
            );
        }
        let _ = writeln!(
            out,
            "overall: {} ({} entries, max rel err {:.3e}, eps {:e}, rtol {:e})",
            if self.passed() { "pass" } else { "FAIL" },
            self.checked(),
            self.max_rel_err(),
            self.config.eps,
            self.config.rtol
        );
        out
    }
}

/// Loss value and the `relu`/`abs` sign pattern of one forward pass.
fn evaluate(model: &Model, graph: &GraphInput, weights: &LossWeights) -> Result<(f64, Vec<bool>), GradcheckError> {
    let mut tape = Tape::new();
    let fwd = model.forward(&mut tape, graph, Trainable::All)?;
    let leaves: Vec<_> = fwd.trainable.values().copied().collect();
    let terms = total_loss(&mut tape, fwd.prediction, graph, &leaves, weights)?;
    Ok((tape.value(terms.total).item(), tape.kink_pattern()))
}

/// Compares taped gradients of `total_loss` with central differences for
/// every parameter tensor of `model`.
pub fn gradcheck(
    model: &Model,
    graph: &GraphInput,
    weights: &LossWeights,
    cfg: &GradcheckConfig,
) -> Result<GradcheckReport, GradcheckError> {
    let mut model = model.clone();
    model.register_feeders(graph);

    let mut tape = Tape::new();
    let fwd = model.forward(&mut tape, graph, Trainable::All)?;
    let leaves: Vec<_> = fwd.trainable.values().copied().collect();
    let terms = total_loss(&mut tape, fwd.prediction, graph, &leaves, weights)?;
    let loss = tape.value(terms.total).item();
    let base_pattern = tape.kink_pattern();
    let mut grads = tape.backward(terms.total)?;

    let names: Vec<String> = model.params.names().cloned().collect();
    let mut tensors = Vec::with_capacity(names.len());
    for name in names {
        let var = *fwd
            .trainable
            .get(&name)
            .ok_or_else(|| GradcheckError::MissingGradient(name.clone()))?;
        let analytic = grads.take(var).ok_or_else(|| GradcheckError::MissingGradient(name.clone()))?;
        let len = analytic.len();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("gradcheck/{name}")));
        let mut order: Vec<usize> = if cfg.samples_per_tensor == 0 || cfg.samples_per_tensor >= len {
            (0..len).collect()
        } else {
            sample(&mut rng, len, len).into_vec()
        };
        let want = if cfg.samples_per_tensor == 0 { len } else { cfg.samples_per_tensor.min(len) };

        let mut check = TensorCheck {
            name: name.clone(),
            checked: 0,
            kinks: 0,
            max_abs_err: 0.0,
            max_rel_err: 0.0,
            passed: true,
        };
        let original = model.params.get(&name).expect("listed").clone();
        for k in order.drain(..) {
            if check.checked == want {
                break;
            }
            let mut probe = |delta: f64| -> Result<(f64, Vec<bool>), GradcheckError> {
                let slot = &mut model.params.get_mut(&name).expect("listed").data_mut()[k];
                *slot = original.data()[k] + delta;
                let r = evaluate(&model, graph, weights);
                model.params.get_mut(&name).expect("listed").data_mut()[k] = original.data()[k];
                r
            };
            let (plus, p_pat) = probe(cfg.eps)?;
            let (minus, m_pat) = probe(-cfg.eps)?;
            if p_pat != base_pattern || m_pat != base_pattern {
                check.kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * cfg.eps);
            let a = analytic.data()[k];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(cfg.floor);
            check.checked += 1;
            check.max_abs_err = check.max_abs_err.max(abs);
            check.max_rel_err = check.max_rel_err.max(rel);
            if rel > cfg.rtol {
                check.passed = false;
            }
        }
        if check.checked == 0 && len > 0 {
            check.passed = false;
        }
        tensors.push(check);
    }
    Ok(GradcheckReport {
        config: *cfg,
        loss,
        tensors,
    })
}

/// Seeded 10-node, 2-feeder single-phase graph with every edge type, one
/// open tie, nonzero physics flows and a nonzero hub mismatch. Three of the
/// ten nodes are observed.
pub fn toy_graph(seed: u64) -> Result<GraphInput, GradcheckError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "gradcheck/toy"));
    let layout: [(BusType, FeederTag, f64); 10] = [
        (BusType::SubstationHub, FeederTag::Substation, 7.2),
        (BusType::FeederHead, FeederTag::Feeder(0), 7.2),
        (BusType::DtHigh, FeederTag::Feeder(0), 7.2),
        (BusType::DtHigh, FeederTag::Feeder(0), 7.2),
        (BusType::DtLow, FeederTag::Feeder(0), 0.12),
        (BusType::LvNode, FeederTag::Feeder(0), 7.2),
        (BusType::FeederHead, FeederTag::Feeder(1), 7.2),
        (BusType::DtHigh, FeederTag::Feeder(1), 7.2),
        (BusType::DtHigh, FeederTag::Feeder(1), 7.2),
        (BusType::DtLow, FeederTag::Feeder(1), 0.12),
    ];
    let nodes = layout
        .iter()
        .enumerate()
        .map(|(id, &(bus_type, feeder, kv))| RawNode {
            bus: BusPhase {
                id,
                bus_id: id,
                phase: Phase::A,
                kv_base: kv,
                bus_type,
                feeder,
            },
            p_inj_kw: if id == 0 { 0.0 } else { rng.random_range(-40.0..10.0) },
            local_kva: rng.random_range(25.0..100.0),
            cap_on: id == 5,
            v_pu: rng.random_range(0.97..1.03),
        })
        .collect();
    let tap = TapPosition::new(18)?;
    let specs: [(usize, usize, DeviceKind, bool); 10] = [
        (0, 1, DeviceKind::Regulator, true),
        (1, 2, DeviceKind::OverheadLine, true),
        (2, 3, DeviceKind::OverheadLine, true),
        (3, 4, DeviceKind::Transformer, true),
        (2, 5, DeviceKind::Cable, true),
        (0, 6, DeviceKind::OverheadLine, true),
        (6, 7, DeviceKind::Cable, true),
        (7, 8, DeviceKind::Switch, true),
        (8, 9, DeviceKind::Transformer, true),
        (5, 8, DeviceKind::Switch, false),
    ];
    let edges = specs
        .iter()
        .map(|&(from, to, kind, closed)| RawEdge {
            from,
            to,
            kind,
            r_pu: rng.random_range(0.002..0.02),
            x_pu: rng.random_range(0.002..0.03),
            length_km: if matches!(kind, DeviceKind::OverheadLine | DeviceKind::Cable) {
                rng.random_range(0.1..2.0)
            } else {
                0.0
            },
            rating_kva: 500.0,
            closed,
            phases: [true, false, false],
            tap: (kind == DeviceKind::Regulator).then_some(tap),
            p_flow_pu: rng.random_range(0.01..0.3),
            q_flow_pu: rng.random_range(0.0..0.1),
            in_physics_set: closed && kind != DeviceKind::Switch,
        })
        .collect();
    let mut heads = BTreeMap::new();
    heads.insert(0, Complex64::new(0.21, 0.05));
    heads.insert(1, Complex64::new(0.17, 0.04));
    let raw = RawSnapshot {
        timestamp: 0,
        nodes,
        edges,
        feeder_heads: heads,
        s_subxfmr: Complex64::new(0.40, 0.10),
        s_aux: Complex64::new(0.01, 0.0),
        solver: SolverStats::default(),
    };
    let observed = (0..10).map(|i| matches!(i, 0 | 3 | 7)).collect();
    let snapshot = build_features(&raw, &ObservabilityMask::new(observed), &FeatureScales::default())?;
    Ok(GraphInput::build(&snapshot, "toy")?)
}

/// The default-architecture model checked on [`toy_graph`] with every loss
/// term switched on.
pub fn full_model_check(seed: u64, cfg: &GradcheckConfig) -> Result<GradcheckReport, GradcheckError> {
    let graph = toy_graph(seed)?;
    let model = Model::new(ModelConfig::default(), seed);
    let weights = LossWeights {
        reg: 1e-3,
        ..LossWeights::default().with_physics(0.5)
    };
    gradcheck(&model, &graph, &weights, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Model {
        Model::new(
            ModelConfig {
                hidden: 6,
                decoder_hidden: 5,
                layers: 2,
                ..ModelConfig::default()
            },
            3,
        )
    }

    #[test]
    fn toy_graph_shape() {
        let g = toy_graph(0).unwrap();
        assert_eq!(g.nodes, 10);
        assert_eq!(g.feeder_keys.len(), 2);
        // nine closed edges, two directions each
        assert_eq!(g.dst.len(), 18);
        assert!(g.hub_mismatch > 0.0);
        assert_eq!(g.observed.iter().filter(|o| **o).count(), 3);
    }

    #[test]
    fn small_model_passes_on_every_entry() {
        let g = toy_graph(1).unwrap();
        let cfg = GradcheckConfig {
            samples_per_tensor: 0,
            ..GradcheckConfig::default()
        };
        let rep = gradcheck(&small(), &g, &LossWeights::default().with_physics(0.5), &cfg).unwrap();
        assert!(rep.passed(), "{}", rep.table());
        assert!(rep.layers().iter().any(|l| l.layer == "hub"));
    }

    #[test]
    fn zero_tolerance_reports_failures() {
        let g = toy_graph(2).unwrap();
        let model = small();
        let w = LossWeights::default();
        let good = gradcheck(&model, &g, &w, &GradcheckConfig::default()).unwrap();
        assert!(good.passed());
        let strict = GradcheckConfig {
            rtol: 0.0,
            floor: 1e-300,
            ..GradcheckConfig::default()
        };
        let rep = gradcheck(&model, &g, &w, &strict).unwrap();
        assert!(!rep.passed());
        assert!(rep.table().contains("FAIL"));
    }
}
