// False-data injection on observed measurements and its effect on the
// predictions of a fixed model.

use anyhow::Result;
use substation_gnn::eval::{attack_count, inject_attack, rmse, AttackConfig};
use substation_gnn::gnn::{GraphInput, Model, ModelConfig};
use substation_gnn::grid::sample_mask_anchored;
use substation_gnn::sim::{generate_substation, run_timeseries, SimScenario, SizeClass};

pub fn run() -> Result<()> {
    let spec = generate_substation(4, SizeClass::Tiny, 3)?;
    let mut clean = run_timeseries(&spec, &SimScenario::new(0, 30, 15))?.remove(0);
    clean.apply_mask(&sample_mask_anchored(clean.len(), 50, 1, &clean.hub_nodes())?)?;

    let cfg = AttackConfig::default();
    let attacked = inject_attack(&clean, &cfg, 99)?;
    let observed = clean.nodes.iter().filter(|n| n.features.m_obs() > 0.5).count();
    let touched = clean
        .nodes
        .iter()
        .zip(&attacked.nodes)
        .filter(|(a, b)| a.features.observed_voltage() != b.features.observed_voltage())
        .count();
    println!(
        "penetration {:.0}%: {} measurements attacked, {touched} of {observed} observed voltages among them",
        cfg.penetration * 100.0,
        attack_count(observed + clean.len() + clean.edges.len(), cfg.penetration)
    );

    let model = Model::new(ModelConfig::default(), 0);
    let before = GraphInput::build(&clean, &spec.name)?;
    let after = GraphInput::build(&attacked, &spec.name)?;
    let masked = before.masked_nodes();
    println!("rmse clean    {:.5}", rmse(&model.predict(&before)?, &before.v_true, &masked));
    println!("rmse attacked {:.5}", rmse(&model.predict(&after)?, &after.v_true, &masked));
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run()
}
