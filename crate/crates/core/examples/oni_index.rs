//! Climatology, regional anomaly, ONI and event flags on a synthetic record,
//! checked against the planted ground truth.
//!
//! cargo run --example oni_index [seed]

use nino::climatology::{compute_climatology, default_base_period, oni, quarter_matrix, regional_anomaly, EVENT_THRESHOLD};
use nino::grid::GeoBounds;
use nino::synthetic::{generate, oracle_oni, SynthSpec};

fn main() -> nino::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let mut spec = SynthSpec::scenario(seed);
    spec.noise_sigma = 0.0;
    let (sst, _, truth) = generate(&spec)?;

    let base = default_base_period(&sst)?;
    let clim = compute_climatology(&sst, base)?;
    let anomaly = regional_anomaly(&sst, &clim, &GeoBounds::NINO34)?;
    let index = oni(&anomaly)?;
    let oracle = oracle_oni(&truth);
    let worst = index
        .values
        .iter()
        .zip(&oracle.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("base period {}..{}, ONI from {}, max |pipeline - oracle| = {worst:.1e}", base.0, base.1, index.start);

    let q = quarter_matrix(&anomaly, 53)?;
    for (t, (row, event)) in q.rows.iter().zip(q.event_flags(EVENT_THRESHOLD)).enumerate() {
        if event {
            println!("{}  {:?}", q.row_time(t), row.map(|v| (v * 100.0).round() / 100.0));
        }
    }
    Ok(())
}
