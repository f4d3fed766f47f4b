use std::collections::BTreeMap;
use std::sync::Arc;

use super::params::{eta_name, layer_name, message_name};
use super::{FreezeGroup, GnnError, GraphInput, ModelConfig, ParamStore};
use crate::grid::{node_idx, EdgeType};
use crate::tensor::{Matrix, Tape, Var};

/// Which parameters enter the tape as trainable leaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trainable {
    All,
    /// Lower group frozen (fine-tuning).
    Upper,
    /// Inference only.
    None,
}

impl Trainable {
    fn includes(self, group: FreezeGroup) -> bool {
        match self {
            Trainable::All => true,
            Trainable::Upper => group == FreezeGroup::Upper,
            Trainable::None => false,
        }
    }
}

/// Result of a forward pass recorded on a tape.
#[derive(Debug)]
pub struct ForwardPass {
    /// `nodes x 1` predicted voltage magnitudes.
    pub prediction: Var,
    /// Trainable leaves by parameter name.
    pub trainable: BTreeMap<String, Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

struct Leaves<'a> {
    params: &'a ParamStore,
    mode: Trainable,
    vars: BTreeMap<String, Var>,
    trainable: BTreeMap<String, Var>,
}

impl Leaves<'_> {
    fn get(&mut self, tape: &mut Tape, name: &str) -> Result<Var, GnnError> {
        if let Some(v) = self.vars.get(name) {
            return Ok(*v);
        }
        let value = self.params.get(name).ok_or_else(|| GnnError::MissingParam(name.to_string()))?.clone();
        let group = self.params.group(name).expect("present");
        let var = if self.mode.includes(group) {
            let v = tape.param(value)?;
            self.trainable.insert(name.to_string(), v);
            v
        } else {
            tape.constant(value)?
        };
        self.vars.insert(name.to_string(), var);
        Ok(var)
    }
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let params = ParamStore::init(&config, seed);
        Model { config, params }
    }

    /// Adds unit gates for any feeder in `graph` without one.
    pub fn register_feeders(&mut self, graph: &GraphInput) {
        for key in &graph.feeder_keys {
            self.params.ensure_feeder_gate(key);
        }
    }

    pub fn forward(&self, tape: &mut Tape, g: &GraphInput, mode: Trainable) -> Result<ForwardPass, GnnError> {
        let mut p = Leaves {
            params: &self.params,
            mode,
            vars: BTreeMap::new(),
            trainable: BTreeMap::new(),
        };
        let n = g.nodes;
        let x = tape.constant(self.encode_inputs(&g.x))?;
        let w_in = p.get(tape, "input.w")?;
        let b_in = p.get(tape, "input.b")?;
        let h0 = tape.matmul(x, w_in)?;
        let mut h = tape.add_row(h0, b_in)?;

        let has_edges = g.edge_count() > 0;
        let z = tape.constant(g.z.clone())?;
        let prior = tape.constant(g.prior.clone())?;
        for l in 1..=self.config.layers {
            let agg = if has_edges {
                let hd = tape.gather(h, g.dst.clone())?;
                let hs = tape.gather(h, g.src.clone())?;
                let edge_in = tape.concat(&[hd, hs, z])?;

                let att_w = p.get(tape, &layer_name(l, "att.w"))?;
                let att_a = p.get(tape, &layer_name(l, "att.a"))?;
                let beta = p.get(tape, &layer_name(l, "att.prior"))?;
                let hidden = tape.matmul(edge_in, att_w)?;
                let hidden = tape.relu(hidden)?;
                let learned = tape.matmul(hidden, att_a)?;
                let physics = tape.matmul(prior, beta)?;
                let logits = tape.add(learned, physics)?;
                let alpha = tape.segment_softmax(logits, g.dst.clone(), n, self.config.tau)?;

                let mut agg: Option<Var> = None;
                for r in EdgeType::ALL {
                    let (pos, recv) = &g.by_type[r.index()];
                    if pos.is_empty() {
                        continue;
                    }
                    let w_r = p.get(tape, &message_name(l, r))?;
                    let rows = tape.gather(edge_in, pos.clone())?;
                    let msg = tape.matmul(rows, w_r)?;
                    let a_r = tape.gather(alpha, pos.clone())?;
                    let weighted = tape.mul_col(msg, a_r)?;
                    let part = tape.segment_sum(weighted, recv.clone(), n)?;
                    agg = Some(match agg {
                        Some(acc) => tape.add(acc, part)?,
                        None => part,
                    });
                }
                agg.expect("at least one typed edge")
            } else {
                tape.constant(Matrix::zeros(n, self.config.hidden))?
            };

            let w1 = p.get(tape, &layer_name(l, "phi.w1"))?;
            let b1 = p.get(tape, &layer_name(l, "phi.b1"))?;
            let w2 = p.get(tape, &layer_name(l, "phi.w2"))?;
            let b2 = p.get(tape, &layer_name(l, "phi.b2"))?;
            let u = tape.matmul(agg, w1)?;
            let u = tape.add_row(u, b1)?;
            let u = tape.relu(u)?;
            let u = tape.matmul(u, w2)?;
            let u = tape.add_row(u, b2)?;

            let scale = p.get(tape, &layer_name(l, "norm.scale"))?;
            let shift = p.get(tape, &layer_name(l, "norm.shift"))?;
            let y = tape.add(h, u)?;
            let y = tape.layer_norm(y, self.config.norm_eps)?;
            let y = tape.mul_row(y, scale)?;
            h = tape.add_row(y, shift)?;
        }

        let h = self.hub(tape, &mut p, g, h)?;

        let w1 = p.get(tape, "decoder.w1")?;
        let b1 = p.get(tape, "decoder.b1")?;
        let w2 = p.get(tape, "decoder.w2")?;
        let b2 = p.get(tape, "decoder.b2")?;
        let y = tape.matmul(h, w1)?;
        let y = tape.add_row(y, b1)?;
        let y = tape.relu(y)?;
        let y = tape.matmul(y, w2)?;
        let prediction = tape.add_row(y, b2)?;
        Ok(ForwardPass {
            prediction,
            trainable: p.trainable,
        })
    }

    /// Feeder pooling, substation context and feature-wise modulation.
    fn hub(&self, tape: &mut Tape, p: &mut Leaves<'_>, g: &GraphInput, h: Var) -> Result<Var, GnnError> {
        let k = g.feeder_keys.len();
        let mut counts = vec![0usize; k];
        for &s in g.pool_seg.iter() {
            counts[s] += 1;
        }
        if let Some(empty) = counts.iter().position(|c| *c == 0) {
            return Err(GnnError::EmptyFeeder(g.feeder_keys[empty].clone()));
        }
        let rows = tape.gather(h, g.pool_rows.clone())?;
        let feeder_summary = tape.segment_mean(rows, g.pool_seg.clone(), k)?;
        let context = tape.segment_mean(feeder_summary, Arc::from(vec![0; k]), 1)?;

        let gw = p.get(tape, "hub.gamma.w")?;
        let gb = p.get(tape, "hub.gamma.b")?;
        let bw = p.get(tape, "hub.beta.w")?;
        let bb = p.get(tape, "hub.beta.b")?;
        let gamma = tape.matmul(context, gw)?;
        let gamma = tape.add(gamma, gb)?;
        let beta = tape.matmul(context, bw)?;
        let beta = tape.add(beta, bb)?;
        let modulated = tape.mul_row(h, gamma)?;
        let modulated = tape.add_row(modulated, beta)?;

        let mut gates = Vec::with_capacity(k + 1);
        for key in &g.feeder_keys {
            let name = eta_name(key);
            gates.push(if self.params.contains(&name) {
                p.get(tape, &name)?
            } else {
                tape.constant(Matrix::scalar(1.0))?
            });
        }
        gates.push(tape.constant(Matrix::scalar(1.0))?);
        let gates = tape.concat_rows(&gates)?;
        let per_node = tape.gather(gates, g.gate_slot.clone())?;
        Ok(tape.mul_col(modulated, per_node)?)
    }

    /// Input preprocessing applied before the projection.
    pub fn encode_inputs(&self, x: &Matrix) -> Matrix {
        let mut x = x.clone();
        for r in 0..x.rows() {
            let row = x.row_mut(r);
            row[node_idx::M_OBS_V] = (row[node_idx::M_OBS_V] - row[node_idx::M_OBS]) / self.config.voltage_scale;
        }
        x
    }

    pub fn predict(&self, g: &GraphInput) -> Result<Vec<f64>, GnnError> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, g, Trainable::None)?;
        Ok(tape.value(out.prediction).data().to_vec())
    }

    pub fn scalar_count(&self) -> usize {
        self.params.scalar_count()
    }
}
