// Reverse-mode tape on a small expression, then a sampled finite-difference
// check of the full model and loss on a 10-node graph.

use anyhow::Result;
use substation_gnn::gradcheck::{full_model_check, GradcheckConfig};
use substation_gnn::tensor::{Matrix, Tape};

pub fn run() -> Result<()> {
    // loss = sum(relu(W x)^2)
    let mut tape = Tape::new();
    let w = tape.param(Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 0.25]])?)?;
    let x = tape.constant(Matrix::column(&[3.0, 1.0]))?;
    let h = tape.matmul(w, x)?;
    let h = tape.relu(h)?;
    let loss = tape.sum_squares(h)?;
    let grads = tape.backward(loss)?;
    println!("loss = {}", tape.value(loss).item());
    println!("dL/dW = {:?}", grads.get(w).map(Matrix::data));

    let cfg = GradcheckConfig {
        samples_per_tensor: 4,
        ..GradcheckConfig::default()
    };
    let report = full_model_check(0, &cfg)?;
    print!("{}", report.table());
    anyhow::ensure!(report.passed(), "gradient check failed");
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run()
}
