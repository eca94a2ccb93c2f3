//! Scores configurations 0 to 5 for a forecast that is the observed quarter
//! matrix plus growing noise.
//!
//! cargo run --example evaluate_configs [noise]

use nino::climatology::{compute_climatology, default_base_period, quarter_matrix, regional_anomaly, QuarterMatrix};
use nino::evaluation::run_all_configs;
use nino::grid::GeoBounds;
use nino::rng;
use nino::synthetic::{generate, SynthSpec};
use rand::Rng;

fn main() -> nino::Result<()> {
    let noise: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.4);
    let (sst, _, _) = generate(&SynthSpec::scenario(5))?;
    let clim = compute_climatology(&sst, default_base_period(&sst)?)?;
    let observed = quarter_matrix(&regional_anomaly(&sst, &clim, &GeoBounds::NINO34)?, 53)?;

    // error grows with lead time, as a real forecast's would
    let mut r = rng::stream(&[5]);
    let forecast = QuarterMatrix {
        start: observed.start,
        rows: observed
            .rows
            .iter()
            .map(|row| std::array::from_fn(|q| row[q] + noise * (q + 1) as f64 / 5.0 * r.random_range(-1.0..1.0)))
            .collect(),
    };
    let report = run_all_configs(&observed, &forecast, 0.5)?;
    print!("{}", report.summary());
    Ok(())
}
