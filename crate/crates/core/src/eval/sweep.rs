use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{inject_attack, AttackConfig, ErrorAccumulator, EvalError, LinearBaseline};
use crate::dataset::Dataset;
use crate::gnn::{GraphInput, Model};
use crate::grid::{sample_mask_anchored, ObservabilityMask, Snapshot, OBSERVABILITY_LEVELS};
use crate::seed::derive_seed;

/// One evaluated (scenario, substation, level, model, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scenario: String,
    pub substation: String,
    pub p_obs: u32,
    pub model: String,
    pub rmse: f64,
    pub mae: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepOptions {
    pub levels: Vec<u32>,
    pub seeds: Vec<u64>,
    /// Evenly spaced snapshots evaluated per dataset.
    pub max_snapshots: usize,
    pub attack: Option<AttackConfig>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            levels: OBSERVABILITY_LEVELS.to_vec(),
            seeds: (0..10).collect(),
            max_snapshots: 48,
            attack: None,
        }
    }
}

impl SweepOptions {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.levels.is_empty() || self.seeds.is_empty() || self.max_snapshots == 0 {
            return Err(EvalError::Config("sweep needs levels, seeds and snapshots".into()));
        }
        if let Some(l) = self.levels.iter().find(|l| !OBSERVABILITY_LEVELS.contains(l)) {
            return Err(EvalError::Config(format!("level {l} is not on the observability schedule")));
        }
        if let Some(a) = &self.attack {
            a.validate()?;
        }
        Ok(())
    }
}

/// Evaluation mask for one snapshot. Depends only on the seed, substation
/// and snapshot index, so masks are nested across levels.
pub fn eval_mask(seed: u64, substation: &str, index: usize, snapshot: &Snapshot, p_obs: u32) -> Result<ObservabilityMask, EvalError> {
    let mask_seed = derive_seed(seed, &format!("eval/{substation}/{index}"));
    Ok(sample_mask_anchored(snapshot.len(), p_obs, mask_seed, &snapshot.hub_nodes())?)
}

/// Indices of at most `max` evenly spaced snapshots.
pub fn pick_snapshots(len: usize, max: usize) -> Vec<usize> {
    let take = max.min(len);
    (0..take).map(|k| k * len / take).collect()
}

/// Masked (and optionally attacked) copy of snapshot `index`.
pub fn prepare(data: &Dataset, index: usize, p_obs: u32, seed: u64, attack: Option<&AttackConfig>) -> Result<Snapshot, EvalError> {
    let name = data.name();
    let mut s = data.snapshots[index].clone();
    s.apply_mask(&eval_mask(seed, name, index, &s, p_obs)?)?;
    if let Some(cfg) = attack {
        s = inject_attack(&s, cfg, derive_seed(seed, &format!("attack/{name}/{index}/{p_obs}")))?;
    }
    Ok(s)
}

/// Evaluates `predict` on masked nodes for every dataset, seed and level.
pub fn sweep_with(
    datasets: &[&Dataset],
    opts: &SweepOptions,
    scenario: &str,
    model_label: &str,
    mut predict: impl FnMut(&Dataset, &Snapshot, u32) -> Result<Vec<f64>, EvalError>,
) -> Result<Vec<ReportRow>, EvalError> {
    opts.validate()?;
    let mut rows = Vec::new();
    for data in datasets {
        if data.snapshots.is_empty() {
            return Err(EvalError::Empty(format!("dataset {}", data.name())));
        }
        let picks = pick_snapshots(data.snapshots.len(), opts.max_snapshots);
        for &seed in &opts.seeds {
            for &p in &opts.levels {
                let mut acc = ErrorAccumulator::default();
                for &i in &picks {
                    let s = prepare(data, i, p, seed, opts.attack.as_ref())?;
                    let pred = predict(data, &s, p)?;
                    let masked: Vec<usize> = (0..s.len()).filter(|k| s.nodes[*k].features.m_obs() < 0.5).collect();
                    acc.add_nodes(&pred, &s.voltages(), &masked);
                }
                if acc.count == 0 {
                    return Err(EvalError::Empty(format!("no masked nodes at {p}%")));
                }
                rows.push(ReportRow {
                    scenario: scenario.to_string(),
                    substation: data.name().to_string(),
                    p_obs: p,
                    model: model_label.to_string(),
                    rmse: acc.rmse(),
                    mae: acc.mae(),
                    seed,
                });
            }
        }
    }
    Ok(rows)
}

/// Model RMSE and MAE per level, `opts.seeds` masks each.
pub fn observability_sweep(
    model: &Model,
    datasets: &[&Dataset],
    opts: &SweepOptions,
    scenario: &str,
    model_label: &str,
) -> Result<Vec<ReportRow>, EvalError> {
    sweep_with(datasets, opts, scenario, model_label, |data, s, _| {
        Ok(model.predict(&GraphInput::build(s, data.name())?)?)
    })
}

/// Masked training samples for the baseline: every training snapshot
/// once, at `level` or, when `None`, at levels assigned round-robin.
fn baseline_samples(train: &Dataset, level: Option<u32>, levels: &[u32], seed: u64) -> Result<Vec<Snapshot>, EvalError> {
    let name = train.name();
    train
        .snapshots
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let p = level.unwrap_or(levels[i % levels.len()]);
            let mut s = s.clone();
            let mask_seed = derive_seed(seed, &format!("baseline/{name}/{i}"));
            s.apply_mask(&sample_mask_anchored(s.len(), p, mask_seed, &s.hub_nodes())?)?;
            Ok(s)
        })
        .collect()
}

/// Linear-regression baseline fit per level and pooled over all levels on
/// `train`. For each level the variant with the lower seed-mean RMSE is
/// kept and labelled `lr`.
pub fn linear_baseline(
    train: &Dataset,
    datasets: &[&Dataset],
    opts: &SweepOptions,
    scenario: &str,
    seed: u64,
) -> Result<BaselineReport, EvalError> {
    opts.validate()?;
    let pooled_samples = baseline_samples(train, None, &OBSERVABILITY_LEVELS, seed)?;
    let pooled = LinearBaseline::fit(&pooled_samples.iter().collect::<Vec<_>>())?;
    let mut fallback = pooled.fallback_used();
    let mut rows = Vec::new();
    let mut choice = BTreeMap::new();
    for &p in &opts.levels {
        let samples = baseline_samples(train, Some(p), &OBSERVABILITY_LEVELS, seed)?;
        let per_level = LinearBaseline::fit(&samples.iter().collect::<Vec<_>>())?;
        fallback |= per_level.fallback_used();
        let level_opts = SweepOptions {
            levels: vec![p],
            ..opts.clone()
        };
        let a = sweep_with(datasets, &level_opts, scenario, "lr", |_, s, _| Ok(per_level.predict(s)))?;
        let b = sweep_with(datasets, &level_opts, scenario, "lr", |_, s, _| Ok(pooled.predict(s)))?;
        let mean = |r: &[ReportRow]| r.iter().map(|x| x.rmse).sum::<f64>() / r.len() as f64;
        if mean(&a) <= mean(&b) {
            choice.insert(p, "per_level".to_string());
            rows.extend(a);
        } else {
            choice.insert(p, "pooled".to_string());
            rows.extend(b);
        }
    }
    Ok(BaselineReport { rows, choice, fallback })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineReport {
    pub rows: Vec<ReportRow>,
    /// Variant kept per level.
    pub choice: BTreeMap<u32, String>,
    /// Whether any fit needed extra ridge.
    pub fallback: bool,
}

/// Mean and population standard deviation of RMSE per
/// (scenario, substation, model, level).
pub fn summarize(rows: &[ReportRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, String, String, u32), Vec<&ReportRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.scenario.clone(), r.substation.clone(), r.model.clone(), r.p_obs))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((scenario, substation, model, p_obs), rs)| {
            let n = rs.len() as f64;
            let mean = rs.iter().map(|r| r.rmse).sum::<f64>() / n;
            let std = (rs.iter().map(|r| (r.rmse - mean).powi(2)).sum::<f64>() / n).sqrt();
            let mae = rs.iter().map(|r| r.mae).sum::<f64>() / n;
            SummaryRow {
                scenario,
                substation,
                model,
                p_obs,
                rmse_mean: mean,
                rmse_std: std,
                mae_mean: mae,
                seeds: rs.len(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub substation: String,
    pub model: String,
    pub p_obs: u32,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub mae_mean: f64,
    pub seeds: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::ModelConfig;
    use crate::sim::{generate_substation, SimScenario, SizeClass};

    fn data() -> Dataset {
        let spec = generate_substation(6, SizeClass::Tiny, 2).unwrap();
        Dataset::simulate(spec, SimScenario::new(1, 20, 30 * 15)).unwrap()
    }

    #[test]
    fn masks_nest_across_levels() {
        let d = data();
        let s = &d.snapshots[0];
        let lo = eval_mask(3, "x", 0, s, 10).unwrap();
        let hi = eval_mask(3, "x", 0, s, 50).unwrap();
        assert!((0..s.len()).all(|i| !lo.is_observed(i) || hi.is_observed(i)));
        assert!(s.hub_nodes().iter().all(|h| lo.is_observed(*h)));
    }

    #[test]
    fn perfect_predictor_scores_zero_and_only_masked_count() {
        let d = data();
        let opts = SweepOptions {
            levels: vec![50],
            seeds: vec![0, 1],
            max_snapshots: 4,
            attack: None,
        };
        let rows = sweep_with(&[&d], &opts, "t", "oracle", |_, s, _| Ok(s.voltages())).unwrap();
        assert!(rows.iter().all(|r| r.rmse == 0.0));
        // corrupting observed nodes does not change the score
        let rows = sweep_with(&[&d], &opts, "t", "oracle", |_, s, _| {
            Ok(s.nodes.iter().map(|n| if n.features.m_obs() > 0.5 { 9.0 } else { n.v_true_pu }).collect())
        })
        .unwrap();
        assert!(rows.iter().all(|r| r.rmse == 0.0));
    }

    #[test]
    fn single_level_sweep_is_one_evaluation_per_seed() {
        let d = data();
        let model = Model::new(
            ModelConfig {
                hidden: 8,
                decoder_hidden: 8,
                ..ModelConfig::default()
            },
            0,
        );
        let opts = SweepOptions {
            levels: vec![20],
            seeds: vec![4],
            max_snapshots: 3,
            attack: None,
        };
        let rows = observability_sweep(&model, &[&d], &opts, "a", "gnn").unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows, observability_sweep(&model, &[&d], &opts, "a", "gnn").unwrap());
        let summary = summarize(&rows);
        assert_eq!(summary[0].rmse_std, 0.0);
        assert!(summary[0].rmse_mean >= summary[0].mae_mean);
    }

    #[test]
    fn baseline_picks_better_variant() {
        let d = data();
        let opts = SweepOptions {
            levels: vec![80, 5],
            seeds: vec![0],
            max_snapshots: 5,
            attack: None,
        };
        let rep = linear_baseline(&d, &[&d], &opts, "a", 0).unwrap();
        assert_eq!(rep.rows.len(), 2);
        assert_eq!(rep.choice.len(), 2);
    }
}
