//! Masked curriculum training and partial-freeze fine-tuning.
//!
//! [`train`] runs, per substation, a warm-up at 80% observability with the
//! physics term off until the validation loss plateaus, then walks the
//! observability schedule downward while the physics weight ramps linearly
//! to its target. Every step is one full snapshot with a freshly sampled
//! mask. [`finetune`] freezes the lower encoder blocks and adapts the rest
//! on a truncated dataset from a new substation.

mod optim;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::eval::ErrorAccumulator;
use crate::gnn::{GnnError, GraphInput, Model, ModelConfig, Trainable};
use crate::grid::{sample_mask_anchored, GridError, Snapshot, OBSERVABILITY_LEVELS};
use crate::losses::{total_loss, LossError, LossWeights};
use crate::seed::derive_seed;
use crate::tensor::{Matrix, Tape, TensorError};

pub use optim::{Adam, AdamConfig};

const HEAD: [&str; 2] = ["decoder.w2", "decoder.b2"];

/// Warm-up observability level.
pub const WARMUP_LEVEL: u32 = 80;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no training data{0}")]
    Empty(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("loss diverged at epoch {epoch}")]
    Diverged { epoch: usize, last_good: Box<Model> },
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurriculumConfig {
    pub warmup_max_epochs: usize,
    pub plateau_window: usize,
    pub plateau_eps: f64,
    /// Epochs over which the physics weight ramps to its target.
    pub ramp_epochs: usize,
    pub epochs_per_level: usize,
    pub snapshots_per_epoch: usize,
    /// Observability levels in training order.
    pub levels: Vec<u32>,
    /// Share of curriculum steps whose mask level is drawn uniformly from
    /// the levels visited so far instead of the current one.
    pub replay: f64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig {
            warmup_max_epochs: 40,
            plateau_window: 10,
            plateau_eps: 1e-3,
            ramp_epochs: 20,
            epochs_per_level: 4,
            snapshots_per_epoch: 256,
            levels: OBSERVABILITY_LEVELS.to_vec(),
            replay: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr_warmup: f64,
    pub lr_curriculum: f64,
    pub lr_finetune: f64,
    /// Learning-rate multiplier for the decoder output layer.
    pub head_lr_scale: f64,
    pub adam: AdamConfig,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr_warmup: 1e-3,
            lr_curriculum: 3e-4,
            lr_finetune: 1e-4,
            head_lr_scale: 0.1,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    /// Fraction of the pretraining dataset size kept from the new substation.
    pub fraction: f64,
    pub epochs: usize,
    pub snapshots_per_epoch: usize,
    /// Levels pooled into the validation score.
    pub val_levels: Vec<u32>,
    /// Return the epoch with the lowest validation loss.
    pub restore_best: bool,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            fraction: 0.25,
            epochs: 20,
            snapshots_per_epoch: 256,
            val_levels: vec![5, 20, 50],
            restore_best: true,
        }
    }
}

/// Everything a training run needs besides data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    /// Dataset directories trained on, in order.
    pub substations: Vec<PathBuf>,
    /// Where the trained checkpoint is written.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub model: ModelConfig,
    /// Target weights; `phys` is the value the ramp reaches.
    pub loss: LossWeights,
    pub curriculum: CurriculumConfig,
    pub optim: OptimConfig,
    pub finetune: FinetuneConfig,
    /// Trailing time block held out for validation.
    pub validation_fraction: f64,
    /// Cap on validation snapshots, spread evenly over the held-out block.
    pub validation_snapshots: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            substations: Vec::new(),
            checkpoint: None,
            model: ModelConfig::default(),
            loss: LossWeights::default(),
            curriculum: CurriculumConfig::default(),
            optim: OptimConfig::default(),
            finetune: FinetuneConfig::default(),
            validation_fraction: 0.1,
            validation_snapshots: 32,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.loss.validate()?;
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        let c = &self.curriculum;
        if c.levels.is_empty() || c.levels.iter().any(|l| !OBSERVABILITY_LEVELS.contains(l)) {
            return bad("curriculum levels must be a non-empty subset of the observability schedule");
        }
        if c.levels.windows(2).any(|w| w[0] <= w[1]) {
            return bad("curriculum levels must be strictly descending");
        }
        if c.snapshots_per_epoch == 0 || self.finetune.snapshots_per_epoch == 0 {
            return bad("snapshots_per_epoch must be positive");
        }
        if !(0.0..=1.0).contains(&c.replay) {
            return bad("replay must lie in [0, 1]");
        }
        if c.plateau_window < 2 {
            return bad("plateau_window must be at least 2");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction must lie in (0, 1)");
        }
        if !(self.finetune.fraction > 0.0 && self.finetune.fraction <= 1.0) {
            return bad("finetune fraction must lie in (0, 1]");
        }
        if self.finetune.val_levels.iter().any(|l| !OBSERVABILITY_LEVELS.contains(l)) {
            return bad("finetune validation levels must be on the observability schedule");
        }
        for lr in [self.optim.lr_warmup, self.optim.lr_curriculum, self.optim.lr_finetune] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad("learning rates must be positive");
            }
        }
        Ok(())
    }
}

/// True iff the relative improvement within the last `window` losses is
/// below `eps`.
pub fn plateau(losses: &[f64], window: usize, eps: f64) -> bool {
    if window < 2 || losses.len() < window {
        return false;
    }
    let w = &losses[losses.len() - window..];
    let best_later = w[1..].iter().copied().fold(f64::INFINITY, f64::min);
    (w[0] - best_later) / w[0].abs().max(f64::MIN_POSITIVE) < eps
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Warmup,
    PhysicsRamp,
    Finetune,
}

/// Where a run is in its schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumState {
    pub stage: Stage,
    pub p_obs: u32,
    pub lambda_phys: f64,
    pub epoch: usize,
    pub stage_epoch: usize,
    pub val_losses: Vec<f64>,
}

/// Physics weight after `epoch` curriculum epochs (0-based), linear ramp.
pub fn ramp(lambda_max: f64, epoch: usize, ramp_epochs: usize) -> f64 {
    if ramp_epochs == 0 {
        return lambda_max;
    }
    lambda_max * ((epoch + 1) as f64 / ramp_epochs as f64).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub substation: String,
    pub epoch: usize,
    pub stage: Stage,
    pub p_obs: u32,
    pub lambda_phys: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_rmse: f64,
}

pub fn write_history_csv<W: Write>(rows: &[HistoryRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: Model,
    pub history: Vec<HistoryRow>,
    pub steps: u64,
}

/// Snapshot indices for training and validation: the validation block is
/// the trailing `fraction` of the time series.
pub fn time_block_split(n: usize, fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let n_val = ((n as f64 * fraction).ceil() as usize).min(n.saturating_sub(1));
    let cut = n - n_val;
    ((0..cut).collect(), (cut..n).collect())
}

/// Fixed validation graphs; masks depend only on the run seed, the
/// snapshot and the level, and are nested across levels.
struct Validation {
    graphs: Vec<GraphInput>,
    seeds: Vec<u64>,
}

impl Validation {
    fn new(snapshots: &[Snapshot], idx: &[usize], cap: usize, name: &str, seed: u64) -> Result<Self, TrainError> {
        let take = cap.min(idx.len()).max(1);
        let picks: Vec<usize> = (0..take).map(|k| idx[k * idx.len() / take]).collect();
        let mut graphs = Vec::new();
        let mut seeds = Vec::new();
        for i in picks {
            graphs.push(GraphInput::build(&snapshots[i], name)?);
            seeds.push(derive_seed(seed, &format!("val/{name}/{i}")));
        }
        Ok(Validation { graphs, seeds })
    }

    /// Masked MAE and RMSE at the given levels, pooled.
    fn score(&self, model: &Model, levels: &[u32]) -> Result<(f64, f64), TrainError> {
        let mut acc = ErrorAccumulator::default();
        for (g, &seed) in self.graphs.iter().zip(&self.seeds) {
            for &p in levels {
                let mut g = g.clone();
                g.apply_mask(&sample_mask_anchored(g.nodes, p, seed, &g.hub_nodes)?)?;
                let pred = model.predict(&g)?;
                acc.add_nodes(&pred, &g.v_true, &g.masked_nodes());
            }
        }
        Ok((acc.mae(), acc.rmse()))
    }
}

struct Stepper<'a> {
    snapshots: &'a [Snapshot],
    train_idx: Vec<usize>,
    name: &'a str,
    rng: ChaCha8Rng,
    head_scale: f64,
    steps: u64,
}

impl Stepper<'_> {
    fn sample(&mut self, p_obs: u32) -> Result<GraphInput, TrainError> {
        let i = self.train_idx[self.rng.random_range(0..self.train_idx.len())];
        let mask_seed: u64 = self.rng.random();
        let mut g = GraphInput::build(&self.snapshots[i], self.name)?;
        g.apply_mask(&sample_mask_anchored(g.nodes, p_obs, mask_seed, &g.hub_nodes)?)?;
        Ok(g)
    }

    /// One epoch of single-snapshot steps. Returns the mean training loss,
    /// or `None` on a non-finite loss or gradient.
    #[allow(clippy::too_many_arguments)]
    fn epoch(
        &mut self,
        model: &mut Model,
        adam: &mut Adam,
        mode: Trainable,
        weights: &LossWeights,
        lr: f64,
        count: usize,
        level: impl Fn(&mut ChaCha8Rng) -> u32,
    ) -> Result<Option<f64>, TrainError> {
        let mut total = 0.0;
        for _ in 0..count {
            let p = level(&mut self.rng);
            let g = self.sample(p)?;
            match step(model, &g, mode, weights, adam, lr, self.head_scale)? {
                Some(l) => total += l,
                None => return Ok(None),
            }
            self.steps += 1;
        }
        Ok(Some(total / count as f64))
    }
}

/// One optimizer step on one graph; the decoder output layer uses
/// `lr * head_scale`. `None` if the loss or a gradient is
/// not finite, in which case the parameters are unchanged.
pub fn step(
    model: &mut Model,
    g: &GraphInput,
    mode: Trainable,
    weights: &LossWeights,
    adam: &mut Adam,
    lr: f64,
    head_scale: f64,
) -> Result<Option<f64>, TrainError> {
    match try_step(model, g, mode, weights, adam, lr, head_scale) {
        Err(TrainError::Gnn(GnnError::Tensor(TensorError::NonFinite { .. })))
        | Err(TrainError::Loss(LossError::Tensor(TensorError::NonFinite { .. })))
        | Err(TrainError::Tensor(TensorError::NonFinite { .. })) => Ok(None),
        other => other,
    }
}

fn try_step(
    model: &mut Model,
    g: &GraphInput,
    mode: Trainable,
    weights: &LossWeights,
    adam: &mut Adam,
    lr: f64,
    head_scale: f64,
) -> Result<Option<f64>, TrainError> {
    let mut tape = Tape::new();
    let fp = model.forward(&mut tape, g, mode)?;
    let vars: Vec<_> = fp.trainable.values().copied().collect();
    let terms = total_loss(&mut tape, fp.prediction, g, &vars, weights)?;
    let loss = tape.value(terms.total).item();
    let mut grads = tape.backward(terms.total)?;
    let mut named = BTreeMap::new();
    for (name, var) in &fp.trainable {
        let grad = grads.take(*var).unwrap_or_else(|| {
            let v = model.params.get(name).expect("trainable exists");
            Matrix::zeros(v.rows(), v.cols())
        });
        named.insert(name.clone(), grad);
    }
    adam.update_with(&mut model.params, &named, |name| if HEAD.contains(&name) { lr * head_scale } else { lr });
    Ok(Some(loss))
}

fn diverged(epoch: usize, last_good: &Model) -> TrainError {
    log::error!("non-finite loss at epoch {epoch}; returning last good model");
    TrainError::Diverged {
        epoch,
        last_good: Box::new(last_good.clone()),
    }
}

/// Curriculum training over each dataset in turn.
pub fn train(mut model: Model, datasets: &[Dataset], cfg: &TrainConfig) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    if datasets.is_empty() {
        return Err(TrainError::Empty(String::new()));
    }
    let c = &cfg.curriculum;
    let mut history = Vec::new();
    let mut adam = Adam::new(cfg.optim.adam);
    let mut epoch = 0;
    let mut steps = 0;
    for data in datasets {
        let name = data.name();
        if data.snapshots.len() < 2 {
            return Err(TrainError::Empty(format!(" for {name}")));
        }
        let (train_idx, val_idx) = time_block_split(data.snapshots.len(), cfg.validation_fraction);
        let val = Validation::new(&data.snapshots, &val_idx, cfg.validation_snapshots, name, cfg.seed)?;
        model.register_feeders(&val.graphs[0]);
        let mut stepper = Stepper {
            snapshots: &data.snapshots,
            train_idx,
            name,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("train/{name}"))),
            head_scale: cfg.optim.head_lr_scale,
            steps: 0,
        };
        let mut state = CurriculumState {
            stage: Stage::Warmup,
            p_obs: WARMUP_LEVEL,
            lambda_phys: 0.0,
            epoch,
            stage_epoch: 0,
            val_losses: Vec::new(),
        };
        let mut last_good = model.clone();

        let warm = LossWeights { phys: 0.0, hub: 0.0, ..cfg.loss };
        for _ in 0..c.warmup_max_epochs {
            let Some(loss) = stepper.epoch(
                &mut model,
                &mut adam,
                Trainable::All,
                &warm,
                cfg.optim.lr_warmup,
                c.snapshots_per_epoch,
                |_| WARMUP_LEVEL,
            )?
            else {
                return Err(diverged(state.epoch, &last_good));
            };
            let (val_loss, val_rmse) = val.score(&model, &[WARMUP_LEVEL])?;
            state.val_losses.push(val_loss);
            history.push(row(name, &state, loss, val_loss, val_rmse));
            log::info!("{name} warm-up epoch {}: train {loss:.3e} val rmse {val_rmse:.3e}", state.stage_epoch);
            last_good = model.clone();
            state.epoch += 1;
            state.stage_epoch += 1;
            if plateau(&state.val_losses, c.plateau_window, c.plateau_eps) {
                break;
            }
        }

        state.stage = Stage::PhysicsRamp;
        state.stage_epoch = 0;
        for (k, &p) in c.levels.iter().enumerate() {
            state.p_obs = p;
            let visited = &c.levels[..=k];
            for _ in 0..c.epochs_per_level {
                state.lambda_phys = ramp(cfg.loss.phys, state.stage_epoch, c.ramp_epochs);
                let w = cfg.loss.with_physics(state.lambda_phys);
                let Some(loss) = stepper.epoch(
                    &mut model,
                    &mut adam,
                    Trainable::All,
                    &w,
                    cfg.optim.lr_curriculum,
                    c.snapshots_per_epoch,
                    |rng| {
                        if k > 0 && rng.random::<f64>() < c.replay {
                            visited[rng.random_range(0..visited.len())]
                        } else {
                            p
                        }
                    },
                )?
                else {
                    return Err(diverged(state.epoch, &last_good));
                };
                let (val_loss, val_rmse) = val.score(&model, &[p])?;
                history.push(row(name, &state, loss, val_loss, val_rmse));
                log::info!("{name} p_obs {p} epoch {}: train {loss:.3e} val rmse {val_rmse:.3e}", state.stage_epoch);
                last_good = model.clone();
                state.epoch += 1;
                state.stage_epoch += 1;
            }
        }
        epoch = state.epoch;
        steps += stepper.steps;
    }
    Ok(TrainReport { model, history, steps })
}

fn row(name: &str, s: &CurriculumState, train_loss: f64, val_loss: f64, val_rmse: f64) -> HistoryRow {
    HistoryRow {
        substation: name.to_string(),
        epoch: s.epoch,
        stage: s.stage,
        p_obs: s.p_obs,
        lambda_phys: s.lambda_phys,
        train_loss,
        val_loss,
        val_rmse,
    }
}

/// Number of target-substation snapshots fine-tuning keeps.
pub fn finetune_size(pretrain_size: usize, fraction: f64, available: usize) -> usize {
    ((pretrain_size as f64 * fraction).round() as usize).clamp(2.min(available), available)
}

/// Adapts a pretrained model to a new substation with the lower encoder
/// blocks frozen. `pretrain_size` is the snapshot count of the pretraining
/// dataset; the target data is truncated to its configured fraction.
pub fn finetune(mut model: Model, data: &Dataset, pretrain_size: usize, cfg: &TrainConfig) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    let ft = &cfg.finetune;
    let name = data.name();
    let keep = finetune_size(pretrain_size, ft.fraction, data.snapshots.len());
    if keep < 2 {
        return Err(TrainError::Empty(format!(" for {name}")));
    }
    let snapshots = &data.snapshots[..keep];
    let (train_idx, val_idx) = time_block_split(keep, cfg.validation_fraction);
    let val = Validation::new(snapshots, &val_idx, cfg.validation_snapshots, name, cfg.seed)?;
    model.register_feeders(&val.graphs[0]);
    let frozen = model.params.group_bits(crate::gnn::FreezeGroup::Lower);

    let mut stepper = Stepper {
        snapshots,
        train_idx,
        name,
        rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("finetune/{name}"))),
        head_scale: cfg.optim.head_lr_scale,
        steps: 0,
    };
    let mut adam = Adam::new(cfg.optim.adam);
    let levels = cfg.curriculum.levels.clone();
    let mut state = CurriculumState {
        stage: Stage::Finetune,
        p_obs: 0,
        lambda_phys: cfg.loss.phys,
        epoch: 0,
        stage_epoch: 0,
        val_losses: Vec::new(),
    };
    let mut history = Vec::new();
    let mut best: Option<(f64, Model)> = None;
    let mut last_good = model.clone();
    for _ in 0..ft.epochs {
        let Some(loss) = stepper.epoch(
            &mut model,
            &mut adam,
            Trainable::Upper,
            &cfg.loss,
            cfg.optim.lr_finetune,
            ft.snapshots_per_epoch,
            |rng| levels[rng.random_range(0..levels.len())],
        )?
        else {
            return Err(diverged(state.epoch, &last_good));
        };
        let (val_loss, val_rmse) = val.score(&model, &ft.val_levels)?;
        state.val_losses.push(val_loss);
        history.push(row(name, &state, loss, val_loss, val_rmse));
        log::info!("{name} fine-tune epoch {}: train {loss:.3e} val rmse {val_rmse:.3e}", state.epoch);
        if ft.restore_best && best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, model.clone()));
        }
        last_good = model.clone();
        state.epoch += 1;
        state.stage_epoch += 1;
    }
    if let Some((_, m)) = best {
        model = m;
    }
    debug_assert_eq!(frozen, model.params.group_bits(crate::gnn::FreezeGroup::Lower));
    Ok(TrainReport {
        model,
        history,
        steps: stepper.steps,
    })
}

/// Reads a config file.
pub fn load_config(path: &Path) -> Result<TrainConfig, TrainError> {
    let text = std::fs::read_to_string(path).map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))?;
    TrainConfig::from_toml(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::FreezeGroup;
    use crate::sim::{generate_substation, run_timeseries, SimScenario, SizeClass};

    fn dataset(seed: u64, steps: u32) -> Dataset {
        let spec = generate_substation(seed, SizeClass::Tiny, 2).unwrap();
        let scenario = SimScenario::new(0, 20, steps * 15);
        let snapshots = run_timeseries(&spec, &scenario).unwrap();
        Dataset { spec, scenario, snapshots }
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            model: ModelConfig {
                hidden: 8,
                decoder_hidden: 8,
                layers: 2,
                ..ModelConfig::default()
            },
            curriculum: CurriculumConfig {
                warmup_max_epochs: 3,
                plateau_window: 2,
                epochs_per_level: 1,
                snapshots_per_epoch: 4,
                levels: vec![80, 40, 1],
                ramp_epochs: 2,
                ..CurriculumConfig::default()
            },
            finetune: FinetuneConfig {
                epochs: 2,
                snapshots_per_epoch: 4,
                ..FinetuneConfig::default()
            },
            validation_snapshots: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn plateau_cases() {
        assert!(!plateau(&[1.0, 0.5, 0.25, 0.1, 0.05], 5, 1e-3));
        assert!(plateau(&[0.2; 5], 5, 1e-3));
        assert!(plateau(&[0.10, 0.0999, 0.0999, 0.0999, 0.0999, 0.0999], 5, 1e-3));
        assert!(!plateau(&[0.2; 3], 5, 1e-3));
    }

    #[test]
    fn ramp_is_linear_then_flat() {
        assert!((ramp(0.1, 0, 20) - 0.005).abs() < 1e-15);
        assert!((ramp(0.1, 9, 20) - 0.05).abs() < 1e-15);
        assert_eq!(ramp(0.1, 19, 20), 0.1);
        assert_eq!(ramp(0.1, 40, 20), 0.1);
    }

    #[test]
    fn split_is_trailing_block() {
        let (t, v) = time_block_split(20, 0.1);
        assert_eq!(t, (0..18).collect::<Vec<_>>());
        assert_eq!(v, vec![18, 19]);
        let (t, v) = time_block_split(2, 0.1);
        assert_eq!((t.len(), v.len()), (1, 1));
    }

    #[test]
    fn config_round_trips_and_rejects_bad_levels() {
        let cfg = quick();
        assert_eq!(TrainConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert!(TrainConfig::from_toml("[curriculum]\nlevels = [80, 3]").is_err());
        assert!(TrainConfig::from_toml("[curriculum]\nlevels = [40, 80]").is_err());
        assert!(TrainConfig::from_toml("seed = 4").is_ok());
    }

    #[test]
    fn training_is_deterministic_and_visits_schedule() {
        let data = [dataset(1, 20)];
        let cfg = quick();
        let a = train(Model::new(cfg.model.clone(), 0), &data, &cfg).unwrap();
        let b = train(Model::new(cfg.model.clone(), 0), &data, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model, b.model);
        let warm: Vec<_> = a.history.iter().filter(|r| r.stage == Stage::Warmup).collect();
        assert!(warm.iter().all(|r| r.p_obs == 80 && r.lambda_phys == 0.0));
        let levels: Vec<u32> = a.history.iter().filter(|r| r.stage == Stage::PhysicsRamp).map(|r| r.p_obs).collect();
        assert_eq!(levels, vec![80, 40, 1]);
        let lambdas: Vec<f64> = a.history.iter().map(|r| r.lambda_phys).collect();
        assert!(lambdas.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn finetune_leaves_lower_group_untouched() {
        let cfg = quick();
        let pre = train(Model::new(cfg.model.clone(), 0), &[dataset(1, 20)], &cfg).unwrap().model;
        let target = dataset(2, 40);
        let out = finetune(pre.clone(), &target, 20, &cfg).unwrap();
        assert_eq!(pre.params.group_bits(FreezeGroup::Lower), out.model.params.group_bits(FreezeGroup::Lower));
        assert_ne!(pre.params.group_bits(FreezeGroup::Upper), out.model.params.group_bits(FreezeGroup::Upper));
        assert!(out.model.params.contains(&format!("hub.eta.{}/0", target.name())));
        assert_eq!(finetune_size(20, 0.25, 40), 5);
    }

    #[test]
    fn nan_input_reports_divergence() {
        let mut data = dataset(1, 10);
        for s in &mut data.snapshots {
            s.nodes[3].features.0[0] = f64::NAN;
        }
        let cfg = quick();
        match train(Model::new(cfg.model.clone(), 0), &[data], &cfg) {
            Err(TrainError::Diverged { epoch, last_good }) => {
                assert_eq!(epoch, 0);
                assert!(last_good.params.iter().all(|(_, t)| t.value.is_finite()));
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
