//! Writes a small SST grid to CSV, reads it back and crops the Niño 3.4 box.
//!
//! cargo run --example grid_csv

use nino::grid::{extract_region, read_grid_csv_from, regional_mean, write_grid_csv_to, GeoBounds};
use nino::synthetic::{generate, SynthSpec};

fn main() -> nino::Result<()> {
    let mut spec = SynthSpec::scenario(1);
    spec.months = 24;
    spec.events.clear();
    let (sst, _, _) = generate(&spec)?;

    let mut csv = Vec::new();
    write_grid_csv_to(&sst, &mut csv)?;
    let text = String::from_utf8_lossy(&csv);
    for line in text.lines().take(4) {
        println!("{line}");
    }
    println!("... {} rows", text.lines().count() - 1);

    let back = read_grid_csv_from(csv.as_slice())?;
    assert_eq!(back, sst);
    let box34 = extract_region(&back, &GeoBounds::NINO34)?;
    println!(
        "{} of {} cells fall in the Niño 3.4 box; mean SST {}: {:.3} °C",
        box34.axes().n_cells(),
        back.axes().n_cells(),
        back.start(),
        regional_mean(&back, back.start())?
    );
    Ok(())
}
