//! Trains both forecasters on a 20-year synthetic scenario with three
//! planted warm events and prints the configuration table.
//!
//! cargo run --release --example synthetic_experiment [seed]

use std::time::Instant;

use nino::pipeline::{run_experiment, ExperimentConfig};
use nino::synthetic::{generate, SynthSpec};

fn main() -> nino::Result<()> {
    env_logger::init();
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let (sst, ohc, truth) = generate(&SynthSpec::scenario(seed))?;
    let positives = truth.event_rows.iter().filter(|&&e| e).count();
    println!("{} months, {} rows meet the event rule", sst.n_times(), positives);

    let mut cfg = ExperimentConfig::default();
    cfg.train.seed = seed;
    let t0 = Instant::now();
    let result = run_experiment(&sst, &ohc, &cfg)?;
    let last = result.models.convlstm_report.loss_curve.last().expect("epochs > 0");
    println!("ConvLSTM-XT final train/test MSE: {:.5} / {:.5}", last.train_mse, last.test_mse);
    let last = result.models.cnn_report.loss_curve.last().expect("epochs > 0");
    println!("CNN final train/test MSE: {:.5} / {:.5}", last.train_mse, last.test_mse);
    print!("{}", result.report.summary());
    println!("elapsed {:.1}s", t0.elapsed().as_secs_f64());
    Ok(())
}
