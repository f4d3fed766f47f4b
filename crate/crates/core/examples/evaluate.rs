// Observability sweep of a briefly trained model next to the linear
// regression baseline.

use anyhow::Result;
use substation_gnn::dataset::Dataset;
use substation_gnn::eval::{linear_baseline, observability_sweep, summarize, SweepOptions};
use substation_gnn::gnn::{Model, ModelConfig};
use substation_gnn::sim::{generate_substation, SimScenario, SizeClass};
use substation_gnn::training::{train, CurriculumConfig, TrainConfig};

pub fn run() -> Result<()> {
    let spec = generate_substation(1, SizeClass::Tiny, 3)?;
    let train_data = Dataset::simulate(spec.clone(), SimScenario::new(0, 30, 96 * 15))?;
    let test = Dataset::simulate(spec, SimScenario::new(7, 30, 24 * 15))?;
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
        ..TrainConfig::default()
    };
    let model = train(Model::new(cfg.model.clone(), cfg.seed), std::slice::from_ref(&train_data), &cfg)?.model;

    let opts = SweepOptions {
        levels: vec![1, 10, 50],
        seeds: vec![0, 1, 2],
        max_snapshots: 12,
        attack: None,
    };
    let mut rows = observability_sweep(&model, &[&test], &opts, "base", "gnn")?;
    let lr = linear_baseline(&train_data, &[&test], &opts, "base", 0)?;
    println!("baseline variants: {:?}", lr.choice);
    rows.extend(lr.rows);
    for s in summarize(&rows) {
        println!("{:<10} p={:>2}%  rmse {:.5} +/- {:.5}", s.model, s.p_obs, s.rmse_mean, s.rmse_std);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run()
}
