// Loss terms for a prediction: masked L1, branch-flow physics penalty,
// hub balance mismatch and weight decay.

use anyhow::Result;
use substation_gnn::gnn::{GraphInput, Model, ModelConfig, Trainable};
use substation_gnn::grid::sample_mask_anchored;
use substation_gnn::losses::{physics_loss, total_loss, LossWeights};
use substation_gnn::sim::{generate_substation, run_timeseries, SimScenario, SizeClass};
use substation_gnn::tensor::{Matrix, Tape};

pub fn run() -> Result<()> {
    let spec = generate_substation(3, SizeClass::Tiny, 3)?;
    let mut snapshot = run_timeseries(&spec, &SimScenario::new(1, 0, 15))?.remove(0);
    snapshot.apply_mask(&sample_mask_anchored(snapshot.len(), 20, 0, &snapshot.hub_nodes())?)?;
    let graph = GraphInput::build(&snapshot, &spec.name)?;

    let mut tape = Tape::new();
    let truth = tape.constant(Matrix::column(&graph.v_true))?;
    let l = physics_loss(&mut tape, truth, &graph)?;
    println!("physics loss at solver voltages: {:.2e}", tape.value(l).item());

    let model = Model::new(ModelConfig::default(), 0);
    let mut tape = Tape::new();
    let pass = model.forward(&mut tape, &graph, Trainable::All)?;
    let leaves: Vec<_> = pass.trainable.values().copied().collect();
    let terms = total_loss(&mut tape, pass.prediction, &graph, &leaves, &LossWeights::default())?;
    println!("supervised {:.4e}", tape.value(terms.supervised).item());
    println!("physics    {:.4e}", tape.value(terms.physics).item());
    println!("hub        {:.4e}", terms.hub);
    println!("l2         {:.4e}", tape.value(terms.reg).item());
    println!("total      {:.4e}", tape.value(terms.total).item());
    let grads = tape.backward(terms.total)?;
    println!("{} parameter gradients", leaves.iter().filter(|v| grads.get(**v).is_some()).count());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run()
}
