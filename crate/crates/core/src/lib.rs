pub mod cli;
pub mod dataset;
pub mod eval;
pub mod gradcheck;
pub mod gnn;
pub mod grid;
pub mod losses;
pub mod seed;
pub mod sim;
pub mod tensor;
pub mod training;
