// Pretrains on one substation, saves a checkpoint, and fine-tunes the upper
// layers on a second substation with the lower layers frozen.

use anyhow::Result;
use substation_gnn::dataset::Dataset;
use substation_gnn::eval::{observability_sweep, summarize, SweepOptions};
use substation_gnn::gnn::{Checkpoint, FreezeGroup, Model, ModelConfig};
use substation_gnn::sim::{generate_substation, SimScenario, SizeClass};
use substation_gnn::training::{finetune, train, CurriculumConfig, FinetuneConfig, TrainConfig};

pub fn run() -> Result<()> {
    let source = Dataset::simulate(generate_substation(1, SizeClass::Tiny, 3)?, SimScenario::new(0, 30, 96 * 15))?;
    let target = Dataset::simulate(generate_substation(2, SizeClass::Tiny, 3)?, SimScenario::new(0, 30, 96 * 15))?;
    let cfg = TrainConfig {
        model: ModelConfig {
            hidden: 16,
            decoder_hidden: 16,
            layers: 2,
            ..ModelConfig::default()
        },
        curriculum: CurriculumConfig {
            warmup_max_epochs: 4,
            epochs_per_level: 1,
            snapshots_per_epoch: 32,
            ..CurriculumConfig::default()
        },
        finetune: FinetuneConfig {
            epochs: 4,
            snapshots_per_epoch: 32,
            ..FinetuneConfig::default()
        },
        ..TrainConfig::default()
    };
    let pretrained = train(Model::new(cfg.model.clone(), cfg.seed), std::slice::from_ref(&source), &cfg)?.model;

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("checkpoint.json");
    Checkpoint::from_model(&pretrained).save(&path)?;
    let restored = Checkpoint::load(&path)?;

    let frozen = restored.params.group_bits(FreezeGroup::Lower);
    let tuned = finetune(restored, &target, source.snapshots.len(), &cfg)?.model;
    anyhow::ensure!(tuned.params.group_bits(FreezeGroup::Lower) == frozen, "frozen layers moved");
    println!("lower group unchanged across {} tensors", frozen.len());

    let opts = SweepOptions {
        levels: vec![5, 20, 50],
        seeds: vec![0, 1, 2],
        max_snapshots: 12,
        attack: None,
    };
    let mut rows = observability_sweep(&pretrained, &[&target], &opts, "transfer", "zero_shot")?;
    rows.extend(observability_sweep(&tuned, &[&target], &opts, "transfer", "fine_tuned")?);
    for s in summarize(&rows) {
        println!("{:<10} p={:>2}%  rmse {:.5} +/- {:.5}", s.model, s.p_obs, s.rmse_mean, s.rmse_std);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run()
}
