//! Training objective terms.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gnn::GraphInput;
use crate::tensor::{Matrix, Tape, TensorError, Var};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("supervised loss needs at least one masked node")]
    EmptyMask,
    #[error("loss weight {0} must be finite and non-negative")]
    Weight(&'static str),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub sup: f64,
    pub phys: f64,
    pub reg: f64,
    pub hub: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            sup: 1.0,
            phys: 0.1,
            reg: 1e-5,
            hub: 0.01,
        }
    }
}

impl LossWeights {
    pub fn supervised_only() -> Self {
        LossWeights {
            sup: 1.0,
            phys: 0.0,
            reg: 0.0,
            hub: 0.0,
        }
    }

    /// Physics weight `phys` with the hub weight tied to it.
    pub fn with_physics(self, phys: f64) -> Self {
        LossWeights { phys, hub: 0.1 * phys, ..self }
    }

    pub fn validate(&self) -> Result<(), LossError> {
        for (name, v) in [("sup", self.sup), ("phys", self.phys), ("reg", self.reg), ("hub", self.hub)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(LossError::Weight(name));
            }
        }
        Ok(())
    }
}

/// Mean absolute error over masked nodes.
pub fn supervised_loss(tape: &mut Tape, pred: Var, graph: &GraphInput) -> Result<Var, LossError> {
    let masked = graph.masked_nodes();
    if masked.is_empty() {
        return Err(LossError::EmptyMask);
    }
    let target = Matrix::column(&masked.iter().map(|i| graph.v_true[*i]).collect::<Vec<_>>());
    let target = tape.constant(target)?;
    let picked = tape.gather(pred, masked.into())?;
    Ok(tape.l1_loss(picked, target)?)
}

/// Weighted mean residual of the linearized branch-flow relation
/// `v_i^2 - v_j^2 = 2 (R P + X Q)`.
pub fn physics_loss(tape: &mut Tape, pred: Var, graph: &GraphInput) -> Result<Var, LossError> {
    let e = &graph.physics;
    if e.is_empty() {
        log::warn!("no physics edges; physics term disabled");
        return Ok(tape.constant(Matrix::scalar(0.0))?);
    }
    let sq = tape.mul(pred, pred)?;
    let vi = tape.gather(sq, e.from.clone())?;
    let vj = tape.gather(sq, e.to.clone())?;
    let diff = tape.sub(vi, vj)?;
    let drop = tape.constant(e.drop.clone())?;
    let resid = tape.sub(diff, drop)?;
    let resid = tape.abs(resid)?;
    let w = tape.constant(e.weight.clone())?;
    let weighted = tape.mul(resid, w)?;
    Ok(tape.mean(weighted)?)
}

/// Magnitude of `sum(heads) + aux - subxfmr`.
pub fn hub_balance_penalty(heads: impl IntoIterator<Item = Complex64>, s_aux: Complex64, s_subxfmr: Complex64) -> f64 {
    (heads.into_iter().sum::<Complex64>() + s_aux - s_subxfmr).norm()
}

/// Scalar loss and its parts.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub supervised: Var,
    pub physics: Var,
    pub hub: f64,
    pub reg: Var,
}

/// `sup * L_sup + phys * L_phys + hub * L_hub + reg * ||theta||^2` over the
/// given trainable leaves.
pub fn total_loss(
    tape: &mut Tape,
    pred: Var,
    graph: &GraphInput,
    trainable: &[Var],
    w: &LossWeights,
) -> Result<LossTerms, LossError> {
    w.validate()?;
    let supervised = supervised_loss(tape, pred, graph)?;
    let physics = physics_loss(tape, pred, graph)?;
    let reg = tape.l2_penalty(trainable)?;
    let a = tape.scale(supervised, w.sup)?;
    let b = tape.scale(physics, w.phys)?;
    let c = tape.scale(reg, w.reg)?;
    let hub = tape.constant(Matrix::scalar(w.hub * graph.hub_mismatch))?;
    let total = tape.add(a, b)?;
    let total = tape.add(total, c)?;
    let total = tape.add(total, hub)?;
    Ok(LossTerms {
        total,
        supervised,
        physics,
        hub: graph.hub_mismatch,
        reg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{sample_mask, ObservabilityMask, Snapshot};
    use crate::sim::{generate_substation, run_timeseries, SimScenario, SizeClass};

    fn snapshot() -> Snapshot {
        let spec = generate_substation(4, SizeClass::Tiny, 2).unwrap();
        run_timeseries(&spec, &SimScenario::new(0, 0, 15)).unwrap().remove(0)
    }

    fn masked_graph(p: u32) -> GraphInput {
        let mut s = snapshot();
        let mask = if p == 100 {
            ObservabilityMask::all_observed(s.len())
        } else {
            sample_mask(s.len(), p, 1).unwrap()
        };
        s.apply_mask(&mask).unwrap();
        GraphInput::build(&s, "t").unwrap()
    }

    fn eval(f: impl Fn(&mut Tape, Var) -> Result<Var, LossError>, v: &[f64]) -> Result<f64, LossError> {
        let mut tape = Tape::new();
        let pred = tape.constant(Matrix::column(v))?;
        let out = f(&mut tape, pred)?;
        Ok(tape.value(out).item())
    }

    #[test]
    fn supervised_is_mean_abs_over_masked_only() {
        let g = masked_graph(50);
        let mut v = g.v_true.clone();
        assert_eq!(eval(|t, p| supervised_loss(t, p, &g), &v).unwrap(), 0.0);
        for (i, x) in v.iter_mut().enumerate() {
            if g.observed[i] {
                *x += 5.0;
            } else {
                *x += 0.01;
            }
        }
        approx::assert_abs_diff_eq!(eval(|t, p| supervised_loss(t, p, &g), &v).unwrap(), 0.01, epsilon = 1e-12);
    }

    #[test]
    fn supervised_needs_masked_nodes() {
        let g = masked_graph(100);
        assert!(matches!(eval(|t, p| supervised_loss(t, p, &g), &g.v_true), Err(LossError::EmptyMask)));
    }

    #[test]
    fn physics_zero_weights_and_truth_beats_flat() {
        let mut g = masked_graph(50);
        let truth = eval(|t, p| physics_loss(t, p, &g), &g.v_true).unwrap();
        let flat = eval(|t, p| physics_loss(t, p, &g), &vec![1.0; g.nodes]).unwrap();
        assert!(truth < flat, "{truth} vs {flat}");
        let zeros = vec![0.0; g.physics.len()];
        g.set_physics_weights(&zeros).unwrap();
        assert_eq!(eval(|t, p| physics_loss(t, p, &g), &g.v_true).unwrap(), 0.0);
    }

    #[test]
    fn physics_matches_direct_formula() {
        let g = masked_graph(50);
        let v: Vec<f64> = (0..g.nodes).map(|i| 1.0 - 0.001 * i as f64).collect();
        let e = &g.physics;
        let direct: f64 = (0..e.len())
            .map(|k| (v[e.from[k]].powi(2) - v[e.to[k]].powi(2) - e.drop.data()[k]).abs())
            .sum::<f64>()
            / e.len() as f64;
        approx::assert_relative_eq!(eval(|t, p| physics_loss(t, p, &g), &v).unwrap(), direct, max_relative = 1e-12);
    }

    #[test]
    fn hub_penalty_definition() {
        let s = Complex64::new(0.3, 0.1);
        assert_eq!(hub_balance_penalty([s], Complex64::new(0.0, 0.0), s), 0.0);
        approx::assert_abs_diff_eq!(
            hub_balance_penalty([s], Complex64::new(0.0, 0.0), s + Complex64::new(0.1, 0.0)),
            0.1,
            epsilon = 1e-15
        );
        let snap = snapshot();
        assert!(hub_balance_penalty(snap.feeder_heads.values().copied(), snap.s_aux, snap.s_subxfmr) < 1e-6);
    }

    #[test]
    fn supervised_only_weights_reduce_to_supervised() {
        let g = masked_graph(50);
        let v: Vec<f64> = g.v_true.iter().map(|x| x + 0.02).collect();
        let mut tape = Tape::new();
        let pred = tape.constant(Matrix::column(&v)).unwrap();
        let terms = total_loss(&mut tape, pred, &g, &[], &LossWeights::supervised_only()).unwrap();
        approx::assert_abs_diff_eq!(tape.value(terms.total).item(), 0.02, epsilon = 1e-12);
        let zero = LossWeights {
            sup: 0.0,
            ..LossWeights::supervised_only()
        };
        let mut tape = Tape::new();
        let pred = tape.constant(Matrix::column(&v)).unwrap();
        let terms = total_loss(&mut tape, pred, &g, &[], &zero).unwrap();
        assert_eq!(tape.value(terms.total).item(), 0.0);
        assert!(LossWeights { reg: -1.0, ..zero }.validate().is_err());
    }
}
