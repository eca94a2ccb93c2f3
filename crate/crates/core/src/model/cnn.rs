use serde::{Deserialize, Serialize};

use crate::climatology::QUARTERS;
use crate::error::{Error, Result};
use crate::grid::TimeStamp;
use crate::rng;
use crate::tensor::{DropoutMode, Tape, Tensor, Var};

use super::train::{TrainSample, Trainable};
use super::uniform_init;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn record(self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Identity => Ok(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub channels: usize,
    pub kernel: usize,
    pub activation: Activation,
}

/// Same-padded conv stack over a window of anomaly fields (one channel per
/// month), then a dense head to the five quarter anomalies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnForecasterConfig {
    pub window_len: usize,
    pub n_lat: usize,
    pub n_lon: usize,
    pub conv: Vec<ConvLayerSpec>,
    /// Width of the hidden dense layer; 0 maps the flattened features
    /// straight to the outputs.
    pub head_hidden: usize,
}

impl CnnForecasterConfig {
    /// Two 3x3 ReLU layers with 8 and 4 channels and a 16-unit head.
    pub fn new(window_len: usize, n_lat: usize, n_lon: usize) -> Self {
        Self {
            window_len,
            n_lat,
            n_lon,
            conv: vec![
                ConvLayerSpec {
                    channels: 8,
                    kernel: 3,
                    activation: Activation::Relu,
                },
                ConvLayerSpec {
                    channels: 4,
                    kernel: 3,
                    activation: Activation::Relu,
                },
            ],
            head_hidden: 16,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.conv.is_empty() {
            return Err(Error::Config("CNN needs at least one conv layer".into()));
        }
        if let Some(bad) = self.conv.iter().find(|l| l.kernel % 2 == 0 || l.channels == 0) {
            return Err(Error::Config(format!("invalid conv layer {bad:?}")));
        }
        if self.window_len == 0 || self.n_lat == 0 || self.n_lon == 0 {
            return Err(Error::Config(format!("degenerate CNN input {}x{}x{}", self.window_len, self.n_lat, self.n_lon)));
        }
        Ok(())
    }

    fn flat_len(&self) -> usize {
        self.conv.last().map_or(0, |l| l.channels) * self.n_lat * self.n_lon
    }
}

/// Anomaly window `[window_len][lat][lon]` and the five observed quarter
/// anomalies that follow it.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnSample {
    pub inputs: Tensor,
    /// `[5]`, °C.
    pub targets: Tensor,
    pub anchor: TimeStamp,
    pub origin: usize,
}

impl TrainSample for CnnSample {
    fn anchor(&self) -> TimeStamp {
        self.anchor
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnForecaster {
    pub config: CnnForecasterConfig,
    /// `(kernel, bias)` per conv layer.
    pub conv: Vec<(Tensor, Tensor)>,
    /// `(weights, bias)` per dense layer: one or two.
    pub head: Vec<(Tensor, Tensor)>,
}

impl CnnForecaster {
    fn build(config: CnnForecasterConfig, mut fill: impl FnMut(&[usize], usize) -> Tensor) -> Result<Self> {
        config.validate()?;
        let mut conv = Vec::with_capacity(config.conv.len());
        let mut c_in = config.window_len;
        for l in &config.conv {
            let k = l.kernel;
            conv.push((fill(&[l.channels, c_in, k, k], c_in * k * k), Tensor::zeros(&[l.channels])));
            c_in = l.channels;
        }
        let flat = config.flat_len();
        let head = if config.head_hidden == 0 {
            vec![(fill(&[QUARTERS, flat], flat), Tensor::zeros(&[QUARTERS]))]
        } else {
            let h = config.head_hidden;
            vec![
                (fill(&[h, flat], flat), Tensor::zeros(&[h])),
                (fill(&[QUARTERS, h], h), Tensor::zeros(&[QUARTERS])),
            ]
        };
        Ok(Self { config, conv, head })
    }

    pub fn zeros(config: CnnForecasterConfig) -> Result<Self> {
        Self::build(config, |shape, _| Tensor::zeros(shape))
    }

    pub fn init(config: CnnForecasterConfig, seed: u64) -> Result<Self> {
        let mut r = rng::stream(&[seed, 0xc22]);
        Self::build(config, |shape, fan_in| uniform_init(shape, fan_in, &mut r))
    }

    /// Records the forward pass; returns the `[5]` output and parameter vars.
    pub fn record<'a>(&'a self, tape: &mut Tape<'a>, inputs: &'a Tensor) -> Result<(Var, Vec<Var>)> {
        let cfg = &self.config;
        if inputs.shape() != [cfg.window_len, cfg.n_lat, cfg.n_lon] {
            return Err(Error::ShapeMismatch(format!(
                "CNN expects [{}][{}][{}], got {:?}",
                cfg.window_len,
                cfg.n_lat,
                cfg.n_lon,
                inputs.shape()
            )));
        }
        let mut vars = Vec::with_capacity(2 * (self.conv.len() + self.head.len()));
        let mut x = tape.constant_ref(inputs);
        for ((k, b), spec) in self.conv.iter().zip(&cfg.conv) {
            let (kv, bv) = (tape.param(k), tape.param(b));
            vars.extend([kv, bv]);
            let y = tape.conv2d(x, kv, Some(bv))?;
            x = spec.activation.record(tape, y)?;
        }
        x = tape.reshape(x, &[cfg.flat_len()])?;
        for (i, (w, b)) in self.head.iter().enumerate() {
            let (wv, bv) = (tape.param(w), tape.param(b));
            vars.extend([wv, bv]);
            x = tape.dense(x, wv, bv)?;
            if i + 1 < self.head.len() {
                x = tape.relu(x)?;
            }
        }
        Ok((x, vars))
    }

    /// Five quarter anomalies in °C.
    pub fn forward(&self, inputs: &Tensor) -> Result<[f64; QUARTERS]> {
        let mut tape = Tape::new();
        let (out, _) = self.record(&mut tape, inputs)?;
        let d = tape.value(out).data();
        Ok(std::array::from_fn(|i| d[i]))
    }
}

impl Trainable for CnnForecaster {
    type Sample = CnnSample;

    fn named_parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, (k, b)) in self.conv.iter().enumerate() {
            out.push((format!("conv{}.kernel", i + 1), k));
            out.push((format!("conv{}.bias", i + 1), b));
        }
        for (i, (w, b)) in self.head.iter().enumerate() {
            out.push((format!("head{}.weight", i + 1), w));
            out.push((format!("head{}.bias", i + 1), b));
        }
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.conv
            .iter_mut()
            .chain(self.head.iter_mut())
            .flat_map(|(a, b)| [a, b])
            .collect()
    }

    fn record_loss<'a>(&'a self, tape: &mut Tape<'a>, sample: &'a CnnSample, _mode: DropoutMode) -> Result<(Var, Vec<Var>)> {
        let (pred, vars) = self.record(tape, &sample.inputs)?;
        let target = tape.constant_ref(&sample.targets);
        Ok((tape.mse(pred, target)?, vars))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_network_outputs_zero() {
        let m = CnnForecaster::zeros(CnnForecasterConfig::new(4, 3, 5)).unwrap();
        let x = Tensor::full(&[4, 3, 5], 1.5);
        assert_eq!(m.forward(&x).unwrap(), [0.0; 5]);
    }

    #[test]
    fn output_has_five_quarters_for_any_head() {
        for head_hidden in [0, 3] {
            let cfg = CnnForecasterConfig {
                head_hidden,
                ..CnnForecasterConfig::new(2, 2, 2)
            };
            let m = CnnForecaster::init(cfg, 1).unwrap();
            let x = Tensor::new(vec![2, 2, 2], (0..8).map(|k| k as f64 * 0.1).collect()).unwrap();
            let mut tape = Tape::new();
            let (out, vars) = m.record(&mut tape, &x).unwrap();
            assert_eq!(tape.value(out).shape(), &[5]);
            assert_eq!(vars.len(), m.named_parameters().len());
            assert_eq!(m.forward(&x).unwrap(), m.forward(&x).unwrap());
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = CnnForecasterConfig::new(3, 2, 2);
        cfg.conv.clear();
        assert!(CnnForecaster::zeros(cfg).is_err());
        let m = CnnForecaster::zeros(CnnForecasterConfig::new(3, 2, 2)).unwrap();
        assert!(matches!(m.forward(&Tensor::zeros(&[2, 2, 2])), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = CnnForecasterConfig::new(12, 3, 11);
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"relu\""));
        assert_eq!(serde_json::from_str::<CnnForecasterConfig>(&text).unwrap(), cfg);
    }
}
