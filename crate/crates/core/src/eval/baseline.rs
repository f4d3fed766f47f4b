use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix};

use super::EvalError;
use crate::grid::{BusType, FeederTag, Snapshot, NODE_FEATURES};

/// Ridge jitter added to the standardized normal equations.
pub const RIDGE: f64 = 1e-8;

/// Least-squares map from one feeder's flattened node features (plus the
/// hub's) to that feeder's voltages.
#[derive(Debug, Clone)]
struct FeederModel {
    inputs: Vec<usize>,
    targets: Vec<usize>,
    /// Flattened columns kept after dropping constant ones.
    columns: Vec<usize>,
    x_mean: Vec<f64>,
    x_scale: Vec<f64>,
    y_mean: Vec<f64>,
    coef: DMatrix<f64>,
    ridge: f64,
}

/// Feeder-by-feeder multivariate linear regression baseline.
#[derive(Debug, Clone)]
pub struct LinearBaseline {
    feeders: Vec<FeederModel>,
    /// Training mean per hub bus-phase, used when a hub is unobserved.
    hub_mean: Vec<(usize, f64)>,
}

fn flatten(s: &Snapshot, inputs: &[usize], out: &mut [f64]) {
    for (k, &i) in inputs.iter().enumerate() {
        out[k * NODE_FEATURES..(k + 1) * NODE_FEATURES].copy_from_slice(&s.nodes[i].features.0);
    }
}

impl LinearBaseline {
    /// Fits one regression per feeder on already masked snapshots.
    pub fn fit(samples: &[&Snapshot]) -> Result<Self, EvalError> {
        let first = samples.first().ok_or_else(|| EvalError::Empty("baseline training set".into()))?;
        let hubs: Vec<usize> = first.hub_nodes();
        let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for n in &first.nodes {
            if let FeederTag::Feeder(f) = n.bus.feeder {
                if n.bus.bus_type != BusType::SubstationHub {
                    groups.entry(f).or_default().push(n.bus.id);
                }
            }
        }
        let feeders = groups
            .into_values()
            .map(|targets| {
                let mut inputs = hubs.clone();
                inputs.extend(&targets);
                fit_feeder(samples, inputs, targets)
            })
            .collect::<Result<_, _>>()?;
        let hub_mean = hubs
            .iter()
            .map(|&h| (h, samples.iter().map(|s| s.nodes[h].v_true_pu).sum::<f64>() / samples.len() as f64))
            .collect();
        Ok(LinearBaseline { feeders, hub_mean })
    }

    /// Full voltage vector; hub bus-phases take their measured value, or
    /// the training mean when unobserved.
    pub fn predict(&self, s: &Snapshot) -> Vec<f64> {
        let mut out: Vec<f64> = s.nodes.iter().map(|n| n.features.observed_voltage()).collect();
        for &(h, mean) in &self.hub_mean {
            if s.nodes[h].features.m_obs() < 0.5 {
                out[h] = mean;
            }
        }
        for f in &self.feeders {
            let mut raw = vec![0.0; f.inputs.len() * NODE_FEATURES];
            flatten(s, &f.inputs, &mut raw);
            let x = DMatrix::from_iterator(
                1,
                f.columns.len(),
                f.columns.iter().enumerate().map(|(k, &c)| (raw[c] - f.x_mean[k]) / f.x_scale[k]),
            );
            let y = x * &f.coef;
            for (k, &t) in f.targets.iter().enumerate() {
                out[t] = y[(0, k)] + f.y_mean[k];
            }
        }
        out
    }

    /// True if any feeder needed more ridge than [`RIDGE`].
    pub fn fallback_used(&self) -> bool {
        self.feeders.iter().any(|f| f.ridge > RIDGE)
    }

    pub fn max_ridge(&self) -> f64 {
        self.feeders.iter().map(|f| f.ridge).fold(RIDGE, f64::max)
    }
}

fn fit_feeder(samples: &[&Snapshot], inputs: Vec<usize>, targets: Vec<usize>) -> Result<FeederModel, EvalError> {
    let n = samples.len();
    let width = inputs.len() * NODE_FEATURES;
    let mut raw = DMatrix::zeros(n, width);
    let mut row = vec![0.0; width];
    for (r, s) in samples.iter().enumerate() {
        flatten(s, &inputs, &mut row);
        for (c, v) in row.iter().enumerate() {
            raw[(r, c)] = *v;
        }
    }
    let mut columns = Vec::new();
    let mut x_mean = Vec::new();
    let mut x_scale = Vec::new();
    for c in 0..width {
        let col = raw.column(c);
        let mean = col.mean();
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        if sd > 1e-12 {
            columns.push(c);
            x_mean.push(mean);
            x_scale.push(sd);
        }
    }
    let x = DMatrix::from_fn(n, columns.len(), |r, k| (raw[(r, columns[k])] - x_mean[k]) / x_scale[k]);
    let y_raw = DMatrix::from_fn(n, targets.len(), |r, k| samples[r].nodes[targets[k]].v_true_pu);
    let y_mean: Vec<f64> = (0..targets.len()).map(|k| y_raw.column(k).mean()).collect();
    let y = DMatrix::from_fn(n, targets.len(), |r, k| y_raw[(r, k)] - y_mean[k]);

    let scale = 1.0 / n as f64;
    let gram = x.tr_mul(&x) * scale;
    let rhs = x.tr_mul(&y) * scale;
    let mut ridge = RIDGE;
    loop {
        let mut a = gram.clone();
        for d in 0..a.nrows() {
            a[(d, d)] += ridge;
        }
        if let Some(chol) = Cholesky::new(a) {
            let coef = chol.solve(&rhs);
            if coef.iter().all(|v| v.is_finite()) {
                if ridge > RIDGE {
                    log::warn!("baseline design rank-deficient; ridge raised to {ridge:e}");
                }
                return Ok(FeederModel {
                    inputs,
                    targets,
                    columns,
                    x_mean,
                    x_scale,
                    y_mean,
                    coef,
                    ridge,
                });
            }
        }
        ridge *= 10.0;
        if ridge > 1e2 {
            return Err(EvalError::Baseline("normal equations could not be solved".into()));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::sample_mask;
    use crate::sim::{generate_substation, run_timeseries, SimScenario, SizeClass};

    fn snapshots(steps: u32) -> Vec<Snapshot> {
        let spec = generate_substation(3, SizeClass::Tiny, 2).unwrap();
        run_timeseries(&spec, &SimScenario::new(0, 20, steps * 15)).unwrap()
    }

    #[test]
    fn constant_voltages_fit_exactly() {
        let mut snaps = snapshots(30);
        for s in &mut snaps {
            for n in &mut s.nodes {
                n.v_true_pu = 1.01;
            }
        }
        let refs: Vec<&Snapshot> = snaps.iter().collect();
        let lr = LinearBaseline::fit(&refs).unwrap();
        let pred = lr.predict(&snaps[3]);
        let hubs = snaps[3].hub_nodes();
        for (i, v) in pred.iter().enumerate() {
            if !hubs.contains(&i) {
                assert!((v - 1.01).abs() < 1e-9, "{v}");
            }
        }
    }

    #[test]
    fn in_sample_fit_beats_mean_predictor() {
        let mut snaps = snapshots(200);
        for (k, s) in snaps.iter_mut().enumerate() {
            s.apply_mask(&sample_mask(s.len(), 20, k as u64).unwrap()).unwrap();
        }
        let refs: Vec<&Snapshot> = snaps.iter().collect();
        let lr = LinearBaseline::fit(&refs).unwrap();
        let mut err = 0.0;
        let mut spread = 0.0;
        let mean: f64 = snaps.iter().flat_map(|s| s.voltages()).sum::<f64>() / (snaps.len() * snaps[0].len()) as f64;
        for s in &snaps {
            let p = lr.predict(s);
            for (i, n) in s.nodes.iter().enumerate() {
                err += (p[i] - n.v_true_pu).powi(2);
                spread += (mean - n.v_true_pu).powi(2);
            }
        }
        assert!(err < 0.25 * spread, "{err} vs {spread}");
    }

    #[test]
    fn one_model_per_feeder() {
        let snaps = snapshots(20);
        let refs: Vec<&Snapshot> = snaps.iter().collect();
        let lr = LinearBaseline::fit(&refs).unwrap();
        assert_eq!(lr.feeders.len(), 2);
        let covered: usize = lr.feeders.iter().map(|f| f.targets.len()).sum();
        assert_eq!(covered, snaps[0].len() - snaps[0].hub_nodes().len());
    }
}
