// Warm-up at full observability, then the descending observability
// curriculum, on a small model and a short horizon.

use anyhow::Result;
use substation_gnn::dataset::Dataset;
use substation_gnn::gnn::{Model, ModelConfig};
use substation_gnn::sim::{generate_substation, SimScenario, SizeClass};
use substation_gnn::training::{train, write_history_csv, CurriculumConfig, TrainConfig};

pub fn run() -> Result<()> {
    let data = Dataset::simulate(generate_substation(1, SizeClass::Tiny, 3)?, SimScenario::new(0, 30, 96 * 15))?;
    let cfg = TrainConfig {
        model: ModelConfig {
            hidden: 16,
            decoder_hidden: 16,
            layers: 2,
            ..ModelConfig::default()
        },
        curriculum: CurriculumConfig {
            warmup_max_epochs: 4,
            ramp_epochs: 4,
            epochs_per_level: 1,
            snapshots_per_epoch: 32,
            ..CurriculumConfig::default()
        },
        ..TrainConfig::default()
    };
    let report = train(Model::new(cfg.model.clone(), cfg.seed), std::slice::from_ref(&data), &cfg)?;
    println!("{} optimizer steps", report.steps);
    write_history_csv(&report.history, std::io::stdout())?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run()
}
