//! Trains a narrow ConvLSTM-XT for a few epochs on synthetic windows and
//! prints the loss curve and one forecast.
//!
//! cargo run --release --example train_convlstm [epochs]

use nino::model::{predict_quarter_anomalies, ConvLstmXt, TrainConfig};
use nino::pipeline::{prepare, ExperimentConfig};
use nino::synthetic::{generate, SynthSpec};

fn main() -> nino::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let (sst, ohc, _) = generate(&SynthSpec::scenario(11))?;
    let mut cfg = ExperimentConfig::default();
    cfg.convlstm.blocks[0].hidden_channels = 4;
    cfg.convlstm.blocks[1].hidden_channels = 4;
    let data = prepare(&sst, &ohc, &cfg)?;
    println!("{} windows, {} for training", data.lstm_samples.len(), data.n_train);

    let mut model = ConvLstmXt::init(cfg.convlstm_config(data.n_lat(), data.n_lon()), 11)?;
    let tc = TrainConfig {
        epochs,
        seed: 11,
        ..cfg.train
    };
    let (train, test) = data.lstm_samples.split_at(data.n_train);
    let report = nino::model::fit(&mut model, train, test, &tc)?;
    for e in &report.loss_curve {
        println!("epoch {:2}  train {:.5}  test {:.5}", e.epoch, e.train_mse, e.test_mse);
    }

    let sample = test.last().expect("test windows");
    let pred = model.forward(&sample.inputs)?;
    let quarters = predict_quarter_anomalies(&pred, sample.anchor, &data.sst_norm, &data.clim, &cfg.bounds)?;
    println!("forecast quarters from {}: {:?}", sample.anchor, quarters.map(|v| (v * 100.0).round() / 100.0));
    Ok(())
}
