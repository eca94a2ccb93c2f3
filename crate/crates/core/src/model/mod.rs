//! The ConvLSTM-XT sequence forecaster, the CNN quarter forecaster, the
//! minibatch training loop, and the quarterly-anomaly ensemble.

mod cnn;
mod convlstm;
mod quarters;
mod train;

pub use cnn::{Activation, CnnForecaster, CnnForecasterConfig, CnnSample, ConvLayerSpec};
pub use convlstm::{cell_step, BlockConfig, CellVars, ConvLstmCellParams, ConvLstmXt, ConvLstmXtConfig, Gate};
pub use quarters::{ensemble, predict_quarter_anomalies};
pub use train::{
    chronological_split, evaluate_mse, fit, minibatch_count, train, EpochLoss, TrainConfig, TrainReport,
    TrainSample, Trainable,
};

use rand::Rng;

use crate::tensor::Tensor;

/// Uniform initialization in `±1/sqrt(fan_in)`.
pub(crate) fn uniform_init(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-bound..bound);
    }
    t
}
