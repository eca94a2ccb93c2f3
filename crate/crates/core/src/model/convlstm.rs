use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::WindowSample;
use crate::rng;
use crate::tensor::{DropoutMode, Tape, Tensor, Var};

use super::train::Trainable;
use super::uniform_init;

/// LSTM gates in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Output = 2,
    Candidate = 3,
}

const GATES: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Output, Gate::Candidate];
const GATE_NAMES: [&str; 4] = ["input", "forget", "output", "candidate"];

/// Convolutional LSTM cell without peephole terms:
///
/// ```text
/// i = σ(Wxi * X + Whi * H + bi)      f = σ(Wxf * X + Whf * H + bf)
/// o = σ(Wxo * X + Who * H + bo)      g = tanh(Wxg * X + Whg * H + bg)
/// C' = f ∘ C + i ∘ g                 H' = o ∘ tanh(C')
/// ```
///
/// where `*` is a same-padded 2D cross-correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLstmCellParams {
    pub in_channels: usize,
    pub hidden_channels: usize,
    pub kernel: usize,
    /// `[C_h][C_in][k][k]` per gate.
    pub input_kernels: [Tensor; 4],
    /// `[C_h][C_h][k][k]` per gate.
    pub hidden_kernels: [Tensor; 4],
    /// `[C_h]` per gate.
    pub biases: [Tensor; 4],
}

impl ConvLstmCellParams {
    pub fn zeros(in_channels: usize, hidden_channels: usize, kernel: usize) -> Result<Self> {
        if kernel % 2 == 0 || in_channels == 0 || hidden_channels == 0 {
            return Err(Error::Config(format!(
                "cell needs odd kernel and nonzero channels (k={kernel}, in={in_channels}, hidden={hidden_channels})"
            )));
        }
        let (ci, ch, k) = (in_channels, hidden_channels, kernel);
        Ok(Self {
            in_channels,
            hidden_channels,
            kernel,
            input_kernels: std::array::from_fn(|_| Tensor::zeros(&[ch, ci, k, k])),
            hidden_kernels: std::array::from_fn(|_| Tensor::zeros(&[ch, ch, k, k])),
            biases: std::array::from_fn(|_| Tensor::zeros(&[ch])),
        })
    }

    /// Uniform `±1/sqrt(fan_in)` kernels, forget bias 1, other biases 0.
    pub fn init(in_channels: usize, hidden_channels: usize, kernel: usize, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(in_channels, hidden_channels, kernel)?;
        let mut r = rng::stream(&[seed, 0xce11]);
        let kk = kernel * kernel;
        for g in 0..4 {
            p.input_kernels[g] = uniform_init(p.input_kernels[g].shape(), in_channels * kk, &mut r);
            p.hidden_kernels[g] = uniform_init(p.hidden_kernels[g].shape(), hidden_channels * kk, &mut r);
        }
        p.biases[Gate::Forget as usize] = Tensor::full(&[hidden_channels], 1.0);
        Ok(p)
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> CellVars {
        CellVars {
            wx: std::array::from_fn(|g| tape.param(&self.input_kernels[g])),
            wh: std::array::from_fn(|g| tape.param(&self.hidden_kernels[g])),
            b: std::array::from_fn(|g| tape.param(&self.biases[g])),
        }
    }

    fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = Vec::with_capacity(12);
        for (g, name) in GATE_NAMES.iter().enumerate() {
            out.push((format!("{prefix}.wx.{name}"), &self.input_kernels[g]));
            out.push((format!("{prefix}.wh.{name}"), &self.hidden_kernels[g]));
            out.push((format!("{prefix}.b.{name}"), &self.biases[g]));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::with_capacity(12);
        for ((wx, wh), b) in self
            .input_kernels
            .iter_mut()
            .zip(self.hidden_kernels.iter_mut())
            .zip(self.biases.iter_mut())
        {
            out.push(wx);
            out.push(wh);
            out.push(b);
        }
        out
    }
}

/// A cell's parameters recorded on a tape, in the same order as
/// `ConvLstmCellParams::named`.
#[derive(Debug, Clone, Copy)]
pub struct CellVars {
    pub wx: [Var; 4],
    pub wh: [Var; 4],
    pub b: [Var; 4],
}

impl CellVars {
    pub fn all(&self) -> Vec<Var> {
        (0..4).flat_map(|g| [self.wx[g], self.wh[g], self.b[g]]).collect()
    }

    /// Records one time step; returns `(H_t, C_t)`.
    pub fn step(&self, tape: &mut Tape<'_>, x: Var, h_prev: Var, c_prev: Var) -> Result<(Var, Var)> {
        let (xs, hs) = (tape.value(x).shape().to_vec(), tape.value(h_prev).shape().to_vec());
        if xs.len() != 3 || hs.len() != 3 || xs[1..] != hs[1..] || tape.value(c_prev).shape() != &hs[..] {
            return Err(Error::ShapeMismatch(format!(
                "cell step with X {xs:?}, H {hs:?}, C {:?}",
                tape.value(c_prev).shape()
            )));
        }
        let mut gate = [x; 4];
        for g in GATES {
            let gi = g as usize;
            let from_x = tape.conv2d(x, self.wx[gi], Some(self.b[gi]))?;
            let from_h = tape.conv2d(h_prev, self.wh[gi], None)?;
            let pre = tape.add(from_x, from_h)?;
            gate[gi] = match g {
                Gate::Candidate => tape.tanh(pre)?,
                _ => tape.sigmoid(pre)?,
            };
        }
        let [i, f, o, g] = gate;
        let keep = tape.mul(f, c_prev)?;
        let write = tape.mul(i, g)?;
        let c = tape.add(keep, write)?;
        let squashed = tape.tanh(c)?;
        let h = tape.mul(o, squashed)?;
        Ok((h, c))
    }
}

/// One cell update outside of training.
pub fn cell_step(p: &ConvLstmCellParams, x: &Tensor, h_prev: &Tensor, c_prev: &Tensor) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let vars = p.bind(&mut tape);
    let (xv, hv, cv) = (tape.constant_ref(x), tape.constant_ref(h_prev), tape.constant_ref(c_prev));
    let (h, c) = vars.step(&mut tape, xv, hv, cv)?;
    Ok((tape.value(h).clone(), tape.value(c).clone()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub hidden_channels: usize,
    pub kernel: usize,
}

/// Two stacked ConvLSTM blocks followed by a ReLU + dropout fully connected
/// head that emits `horizon` grids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvLstmXtConfig {
    pub in_channels: usize,
    pub blocks: [BlockConfig; 2],
    pub horizon: usize,
    pub n_lat: usize,
    pub n_lon: usize,
    pub dropout_rate: f64,
}

impl ConvLstmXtConfig {
    /// SST + OHC inputs, hidden channels 16 and 8, 3x3 kernels, 7-month
    /// horizon, dropout 0.3.
    pub fn new(n_lat: usize, n_lon: usize) -> Self {
        Self {
            in_channels: 2,
            blocks: [
                BlockConfig {
                    hidden_channels: 16,
                    kernel: 3,
                },
                BlockConfig {
                    hidden_channels: 8,
                    kernel: 3,
                },
            ],
            horizon: 7,
            n_lat,
            n_lon,
            dropout_rate: 0.3,
        }
    }

    pub fn fc_in(&self) -> usize {
        self.blocks[1].hidden_channels * self.n_lat * self.n_lon
    }

    pub fn fc_out(&self) -> usize {
        self.horizon * self.n_lat * self.n_lon
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::BadRate(self.dropout_rate));
        }
        if self.horizon == 0 || self.n_lat == 0 || self.n_lon == 0 || self.in_channels == 0 {
            return Err(Error::Config(format!("degenerate ConvLSTM-XT config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLstmXt {
    pub config: ConvLstmXtConfig,
    pub blocks: [ConvLstmCellParams; 2],
    /// `[fc_out][fc_in]`.
    pub fc_weights: Tensor,
    pub fc_bias: Tensor,
}

impl ConvLstmXt {
    pub fn zeros(config: ConvLstmXtConfig) -> Result<Self> {
        config.validate()?;
        let [b1, b2] = config.blocks;
        Ok(Self {
            blocks: [
                ConvLstmCellParams::zeros(config.in_channels, b1.hidden_channels, b1.kernel)?,
                ConvLstmCellParams::zeros(b1.hidden_channels, b2.hidden_channels, b2.kernel)?,
            ],
            fc_weights: Tensor::zeros(&[config.fc_out(), config.fc_in()]),
            fc_bias: Tensor::zeros(&[config.fc_out()]),
            config,
        })
    }

    pub fn init(config: ConvLstmXtConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let [b1, b2] = config.blocks;
        let mut r = rng::stream(&[seed, 0xfc]);
        Ok(Self {
            blocks: [
                ConvLstmCellParams::init(config.in_channels, b1.hidden_channels, b1.kernel, rng::mix(&[seed, 1]))?,
                ConvLstmCellParams::init(b1.hidden_channels, b2.hidden_channels, b2.kernel, rng::mix(&[seed, 2]))?,
            ],
            fc_weights: uniform_init(&[config.fc_out(), config.fc_in()], config.fc_in(), &mut r),
            fc_bias: Tensor::zeros(&[config.fc_out()]),
            config,
        })
    }

    /// Records the forward pass for one `[T][C][lat][lon]` input window.
    /// Returns the `[horizon][lat][lon]` prediction and the parameter vars.
    pub fn record<'a>(&'a self, tape: &mut Tape<'a>, inputs: &Tensor, mode: DropoutMode) -> Result<(Var, Vec<Var>)> {
        let cfg = &self.config;
        let shape = inputs.shape();
        if shape.len() != 4 || shape[1] != cfg.in_channels || shape[2] != cfg.n_lat || shape[3] != cfg.n_lon {
            return Err(Error::ShapeMismatch(format!(
                "ConvLSTM-XT expects [T][{}][{}][{}], got {shape:?}",
                cfg.in_channels, cfg.n_lat, cfg.n_lon
            )));
        }
        let cells = [self.blocks[0].bind(tape), self.blocks[1].bind(tape)];
        let fc_w = tape.param(&self.fc_weights);
        let fc_b = tape.param(&self.fc_bias);

        let (lat, lon) = (cfg.n_lat, cfg.n_lon);
        let zero = |tape: &mut Tape<'a>, ch: usize| tape.constant(Tensor::zeros(&[ch, lat, lon]));
        let (ch1, ch2) = (cfg.blocks[0].hidden_channels, cfg.blocks[1].hidden_channels);
        let (mut h1, mut c1) = (zero(tape, ch1), zero(tape, ch1));
        let (mut h2, mut c2) = (zero(tape, ch2), zero(tape, ch2));
        for t in 0..shape[0] {
            let x = tape.constant(inputs.index_outer(t)?);
            (h1, c1) = cells[0].step(tape, x, h1, c1)?;
            (h2, c2) = cells[1].step(tape, h1, h2, c2)?;
        }
        let flat = tape.reshape(h2, &[cfg.fc_in()])?;
        let act = tape.relu(flat)?;
        let dropped = tape.dropout(act, cfg.dropout_rate, mode)?;
        let out = tape.dense(dropped, fc_w, fc_b)?;
        let grids = tape.reshape(out, &[cfg.horizon, lat, lon])?;

        let mut vars = cells[0].all();
        vars.extend(cells[1].all());
        vars.extend([fc_w, fc_b]);
        Ok((grids, vars))
    }

    /// Eval-mode prediction for one window, `[horizon][lat][lon]`.
    pub fn forward(&self, inputs: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let (out, _) = self.record(&mut tape, inputs, DropoutMode::Eval)?;
        Ok(tape.value(out).clone())
    }

    /// Eval-mode predictions stacked into `[batch][horizon][lat][lon]`.
    pub fn forward_batch(&self, batch: &[&Tensor]) -> Result<Tensor> {
        let preds = batch.iter().map(|x| self.forward(x)).collect::<Result<Vec<_>>>()?;
        Tensor::stack(&preds)
    }
}

impl Trainable for ConvLstmXt {
    type Sample = WindowSample;

    fn named_parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.blocks[0].named("block1");
        out.extend(self.blocks[1].named("block2"));
        out.push(("fc.weight".into(), &self.fc_weights));
        out.push(("fc.bias".into(), &self.fc_bias));
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let [b1, b2] = &mut self.blocks;
        let mut out = b1.tensors_mut();
        out.extend(b2.tensors_mut());
        out.push(&mut self.fc_weights);
        out.push(&mut self.fc_bias);
        out
    }

    fn record_loss<'a>(&'a self, tape: &mut Tape<'a>, sample: &'a WindowSample, mode: DropoutMode) -> Result<(Var, Vec<Var>)> {
        let (pred, vars) = self.record(tape, &sample.inputs, mode)?;
        let target = tape.constant_ref(&sample.targets);
        Ok((tape.mse(pred, target)?, vars))
    }
}
