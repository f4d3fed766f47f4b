// Builds the model input for a masked snapshot and runs an untrained
// forward pass.

use anyhow::Result;
use substation_gnn::eval::rmse;
use substation_gnn::gnn::{GraphInput, Model, ModelConfig};
use substation_gnn::grid::sample_mask_anchored;
use substation_gnn::sim::{generate_substation, run_timeseries, SimScenario, SizeClass};

pub fn run() -> Result<()> {
    let spec = generate_substation(3, SizeClass::Tiny, 3)?;
    let mut snapshot = run_timeseries(&spec, &SimScenario::new(1, 20, 15))?.remove(0);
    let mask = sample_mask_anchored(snapshot.len(), 10, 42, &snapshot.hub_nodes())?;
    snapshot.apply_mask(&mask)?;

    let graph = GraphInput::build(&snapshot, &spec.name)?;
    println!(
        "{} nodes, {} directed edges, {} feeders, {} masked",
        graph.nodes,
        graph.edge_count(),
        graph.feeder_keys.len(),
        graph.masked_nodes().len()
    );

    let model = Model::new(ModelConfig::default(), 0);
    println!("{} parameters", model.scalar_count());
    let v = model.predict(&graph)?;
    println!("untrained rmse on masked nodes: {:.4}", rmse(&v, &graph.v_true, &graph.masked_nodes()));
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run()
}
