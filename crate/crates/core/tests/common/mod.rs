//! Finite-difference oracle and fixtures shared by the integration tests.

#![allow(dead_code)]

use nino::model::{CnnForecaster, CnnForecasterConfig, CnnSample, ConvLstmCellParams, ConvLstmXt, ConvLstmXtConfig, Trainable};
use nino::preprocess::WindowSample;
use nino::tensor::{DropoutMode, Tape, Tensor, Var};
use nino::grid::TimeStamp;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values in `±[0.1, 1)`, away from the ReLU kink.
pub fn off_kink(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = random_tensor(shape, rng, 0.1, 1.0);
    for v in t.data_mut() {
        if rng.random_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

/// `||a - n|| / max(||a||, ||n||)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Central differences of `loss` with respect to every element of every
/// input.
pub fn numeric_gradients(inputs: &[Tensor], loss: &dyn Fn(&[Tensor]) -> f64) -> Vec<Vec<f64>> {
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = Vec::with_capacity(inputs[i].len());
        for k in 0..inputs[i].len() {
            let orig = work[i].data()[k];
            work[i].data_mut()[k] = orig + STEP;
            let up = loss(&work);
            work[i].data_mut()[k] = orig - STEP;
            let down = loss(&work);
            work[i].data_mut()[k] = orig;
            g.push((up - down) / (2.0 * STEP));
        }
        out.push(g);
    }
    out
}

/// Worst per-tensor relative error between tape gradients and central
/// differences of `mse(build(inputs), target)`.
pub fn check_op(inputs: &[Tensor], target: &Tensor, build: &dyn Fn(&mut Tape<'_>, &[Var]) -> Var) -> f64 {
    let value = |xs: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.param_owned(x.clone())).collect();
        let out = build(&mut tape, &vars);
        let t = tape.constant(target.clone());
        let loss = tape.mse(out, t).unwrap();
        (tape.value(loss).data()[0], tape, vars, loss)
    };
    let (_, tape, vars, loss) = value(inputs);
    let grads = tape.backward(loss).unwrap();
    let numeric = numeric_gradients(inputs, &|xs| value(xs).0);
    vars.iter()
        .zip(&numeric)
        .map(|(v, n)| relative_error(grads.wrt(*v).data(), n))
        .fold(0.0, f64::max)
}

/// Worst per-parameter relative error for a model's recorded loss.
pub fn check_model<M: Trainable + Clone>(model: &M, sample: &M::Sample, mode: DropoutMode) -> f64 {
    let mut tape = Tape::new();
    let (loss, vars) = model.record_loss(&mut tape, sample, mode).unwrap();
    let grads = tape.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars.iter().map(|v| grads.wrt(*v).data().to_vec()).collect();

    let params: Vec<Tensor> = model.named_parameters().into_iter().map(|(_, t)| t.clone()).collect();
    let eval = |ps: &[Tensor]| {
        let mut m = model.clone();
        for (dst, src) in m.parameters_mut().into_iter().zip(ps) {
            *dst = src.clone();
        }
        let mut tape = Tape::new();
        let (loss, _) = m.record_loss(&mut tape, sample, mode).unwrap();
        tape.value(loss).data()[0]
    };
    let numeric = numeric_gradients(&params, &eval);
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Named per-operation gradient errors.
pub fn op_gradient_errors() -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let r = &mut rng;
    let mut out = Vec::new();

    let (x, k, b) = (off_kink(&[2, 5, 4], r), off_kink(&[3, 2, 3, 3], r), off_kink(&[3], r));
    let target = off_kink(&[3, 5, 4], r);
    out.push((
        "conv2d",
        check_op(&[x.clone(), k.clone(), b.clone()], &target, &|t, v| t.conv2d(v[0], v[1], Some(v[2])).unwrap()),
    ));
    let k5 = off_kink(&[1, 2, 5, 5], r);
    let t1 = off_kink(&[1, 5, 4], r);
    out.push(("conv2d (5x5, no bias)", check_op(&[x.clone(), k5], &t1, &|t, v| t.conv2d(v[0], v[1], None).unwrap())));

    let (xv, w, bv) = (off_kink(&[6], r), off_kink(&[4, 6], r), off_kink(&[4], r));
    let t4 = off_kink(&[4], r);
    out.push(("dense", check_op(&[xv, w, bv], &t4, &|t, v| t.dense(v[0], v[1], v[2]).unwrap())));

    let a = off_kink(&[3, 4], r);
    let c = off_kink(&[3, 4], r);
    let t34 = off_kink(&[3, 4], r);
    out.push(("sigmoid", check_op(&[a.clone()], &t34, &|t, v| t.sigmoid(v[0]).unwrap())));
    out.push(("tanh", check_op(&[a.clone()], &t34, &|t, v| t.tanh(v[0]).unwrap())));
    out.push(("relu", check_op(&[a.clone()], &t34, &|t, v| t.relu(v[0]).unwrap())));
    out.push(("add", check_op(&[a.clone(), c.clone()], &t34, &|t, v| t.add(v[0], v[1]).unwrap())));
    out.push(("mul", check_op(&[a.clone(), c.clone()], &t34, &|t, v| t.mul(v[0], v[1]).unwrap())));
    out.push((
        "dropout (train)",
        check_op(&[a.clone()], &t34, &|t, v| t.dropout(v[0], 0.3, DropoutMode::Train { seed: 5 }).unwrap()),
    ));
    let t12 = off_kink(&[12], r);
    out.push(("reshape", check_op(&[a.clone()], &t12, &|t, v| t.reshape(v[0], &[12]).unwrap())));
    out.push(("mse (both sides)", check_op(&[a, c], &Tensor::scalar(0.3), &|t, v| {
        let m = t.mse(v[0], v[1]).unwrap();
        t.reshape(m, &[1]).unwrap()
    })));

    // one ConvLSTM cell step, loss on H_t
    let cell = ConvLstmCellParams::init(2, 3, 3, 4).unwrap();
    let (x, h, cst) = (off_kink(&[2, 4, 4], r), off_kink(&[3, 4, 4], r), off_kink(&[3, 4, 4], r));
    let th = off_kink(&[3, 4, 4], r);
    let mut params: Vec<Tensor> = Vec::new();
    for g in 0..4 {
        params.push(cell.input_kernels[g].clone());
        params.push(cell.hidden_kernels[g].clone());
        params.push(cell.biases[g].clone());
    }
    params.extend([x, h, cst]);
    out.push((
        "cell_step",
        check_op(&params, &th, &|t, v| {
            let vars = nino::model::CellVars {
                wx: std::array::from_fn(|g| v[3 * g]),
                wh: std::array::from_fn(|g| v[3 * g + 1]),
                b: std::array::from_fn(|g| v[3 * g + 2]),
            };
            vars.step(t, v[12], v[13], v[14]).unwrap().0
        }),
    ));
    out
}

/// Toy ConvLSTM-XT: 4x4 grid, two channels per block, 3x3 kernels, 3 input
/// months, dropout active with a fixed mask.
pub fn convlstm_end_to_end_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut cfg = ConvLstmXtConfig::new(4, 4);
    cfg.blocks[0].hidden_channels = 2;
    cfg.blocks[1].hidden_channels = 2;
    let model = ConvLstmXt::init(cfg, 3).unwrap();
    let sample = WindowSample {
        inputs: random_tensor(&[3, 2, 4, 4], &mut rng, 0.0, 1.0),
        targets: random_tensor(&[7, 4, 4], &mut rng, 0.0, 1.0),
        anchor: TimeStamp::new(2000, 4).unwrap(),
        origin: 3,
    };
    check_model(&model, &sample, DropoutMode::Train { seed: 99 })
}

/// Toy CNN: two conv layers and a hidden dense layer.
pub fn cnn_end_to_end_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut cfg = CnnForecasterConfig::new(3, 4, 5);
    cfg.conv[0].channels = 3;
    cfg.conv[1].channels = 2;
    cfg.conv[1].activation = nino::model::Activation::Tanh;
    cfg.head_hidden = 4;
    let model = CnnForecaster::init(cfg, 8).unwrap();
    let sample = CnnSample {
        inputs: random_tensor(&[3, 4, 5], &mut rng, -1.0, 1.0),
        targets: random_tensor(&[5], &mut rng, -1.0, 1.0),
        anchor: TimeStamp::new(2000, 4).unwrap(),
        origin: 3,
    };
    check_model(&model, &sample, DropoutMode::Eval)
}
