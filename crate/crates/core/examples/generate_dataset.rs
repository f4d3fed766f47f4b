// Generates a synthetic substation, simulates a day of 15-minute snapshots
// and round-trips the dataset through its on-disk format.

use anyhow::Result;
use substation_gnn::dataset::Dataset;
use substation_gnn::sim::{generate_substation, SimScenario, SizeClass};

pub fn run() -> Result<()> {
    let spec = generate_substation(7, SizeClass::Tiny, 3)?;
    println!(
        "{}: {} feeders, {} buses, {} tie switches",
        spec.name,
        spec.feeders.len(),
        spec.bus_count(),
        spec.tie_switches.len()
    );

    let data = Dataset::simulate(spec, SimScenario::new(0, 30, 24 * 60))?;
    let first = &data.snapshots[0];
    println!("{} snapshots of {} bus-phases and {} edges", data.snapshots.len(), first.len(), first.edges.len());

    let dir = tempfile::tempdir()?;
    data.write(dir.path())?;
    let back = Dataset::read(dir.path())?;
    anyhow::ensure!(back == data, "dataset changed on round trip");
    println!("round trip through {} ok", dir.path().display());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run()
}
