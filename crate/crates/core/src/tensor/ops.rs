//! Forward kernels and their adjoints. Backward kernels accumulate into
//! caller-provided buffers so the tape can sum contributions in place.

use crate::error::{Error, Result};
use crate::rng;

use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointwiseOp {
    Sigmoid,
    Tanh,
    Relu,
    Hadamard,
    Add,
}

fn mismatch(what: &str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch(format!("{what}: {a:?} vs {b:?}"))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Applies a unary or binary elementwise op.
pub fn pointwise(op: PointwiseOp, args: &[&Tensor]) -> Result<Tensor> {
    let unary = |f: fn(f64) -> f64| -> Result<Tensor> {
        match args {
            [x] => Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect()),
            _ => Err(Error::ShapeMismatch(format!("{op:?} takes one argument"))),
        }
    };
    let binary = |f: fn(f64, f64) -> f64| -> Result<Tensor> {
        match args {
            [a, b] if a.shape() == b.shape() => Tensor::new(
                a.shape().to_vec(),
                a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
            ),
            [a, b] => Err(mismatch("elementwise", a.shape(), b.shape())),
            _ => Err(Error::ShapeMismatch(format!("{op:?} takes two arguments"))),
        }
    };
    match op {
        PointwiseOp::Sigmoid => unary(sigmoid),
        PointwiseOp::Tanh => unary(f64::tanh),
        PointwiseOp::Relu => unary(relu),
        PointwiseOp::Hadamard => binary(|a, b| a * b),
        PointwiseOp::Add => binary(|a, b| a + b),
    }
}

/// Shape bookkeeping for a same-padded, stride-1 convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

pub(crate) fn conv_dims(input: &Tensor, kernel: &Tensor, bias: Option<&Tensor>) -> Result<ConvDims> {
    let [c_in, h, w] = input.shape()[..] else {
        return Err(Error::ShapeMismatch(format!(
            "conv2d input must be [C][H][W], got {:?}",
            input.shape()
        )));
    };
    let [c_out, kc, k, k2] = kernel.shape()[..] else {
        return Err(Error::ShapeMismatch(format!(
            "conv2d kernel must be [Cout][Cin][k][k], got {:?}",
            kernel.shape()
        )));
    };
    if kc != c_in || k != k2 || k % 2 == 0 {
        return Err(mismatch("conv2d kernel/input", kernel.shape(), input.shape()));
    }
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(mismatch("conv2d bias", b.shape(), &[c_out]));
        }
    }
    Ok(ConvDims { c_in, c_out, h, w, k })
}

/// Valid output range along one axis for kernel offset `d`.
#[inline]
fn span(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).clamp(0, n as isize) as usize;
    (lo, hi.max(lo))
}

/// Cross-correlation with zero same-padding and stride 1.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let ConvDims { c_in, c_out, h, w, k } = conv_dims(input, kernel, bias)?;
    let p = (k / 2) as isize;
    let (x, kd) = (input.data(), kernel.data());
    let mut out = vec![0.0; c_out * h * w];
    for co in 0..c_out {
        let plane = &mut out[co * h * w..(co + 1) * h * w];
        if let Some(b) = bias {
            plane.fill(b.data()[co]);
        }
        for ci in 0..c_in {
            let src = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                let dy = ky as isize - p;
                let (y0, y1) = span(h, dy);
                for kx in 0..k {
                    let dx = kx as isize - p;
                    let (x0, x1) = span(w, dx);
                    let wv = kd[((co * c_in + ci) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let o = &mut plane[y * w + x0..y * w + x1];
                        let s = &src[sy * w + (x0 as isize + dx) as usize..sy * w + (x1 as isize + dx) as usize];
                        for (ov, sv) in o.iter_mut().zip(s) {
                            *ov += wv * sv;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![c_out, h, w], out)
}

/// Accumulates conv2d adjoints. Any of the output buffers may be skipped.
pub(crate) fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &[f64],
    grad_input: Option<&mut [f64]>,
    grad_kernel: Option<&mut [f64]>,
    grad_bias: Option<&mut [f64]>,
) -> Result<()> {
    let ConvDims { c_in, c_out, h, w, k } = conv_dims(input, kernel, None)?;
    let p = (k / 2) as isize;
    let (x, kd) = (input.data(), kernel.data());
    if let Some(gb) = grad_bias {
        for co in 0..c_out {
            gb[co] += grad_out[co * h * w..(co + 1) * h * w].iter().sum::<f64>();
        }
    }
    let mut gi = grad_input;
    let mut gk = grad_kernel;
    for co in 0..c_out {
        let go = &grad_out[co * h * w..(co + 1) * h * w];
        for ci in 0..c_in {
            let src = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                let dy = ky as isize - p;
                let (y0, y1) = span(h, dy);
                for kx in 0..k {
                    let dx = kx as isize - p;
                    let (x0, x1) = span(w, dx);
                    let kidx = ((co * c_in + ci) * k + ky) * k + kx;
                    let wv = kd[kidx];
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let s0 = sy * w + (x0 as isize + dx) as usize;
                        let s1 = sy * w + (x1 as isize + dx) as usize;
                        let g = &go[y * w + x0..y * w + x1];
                        if gk.is_some() {
                            acc += g.iter().zip(&src[s0..s1]).map(|(a, b)| a * b).sum::<f64>();
                        }
                        if let Some(gi) = gi.as_deref_mut() {
                            let dst = &mut gi[ci * h * w + s0..ci * h * w + s1];
                            for (d, gv) in dst.iter_mut().zip(g) {
                                *d += wv * gv;
                            }
                        }
                    }
                    if let Some(gk) = gk.as_deref_mut() {
                        gk[kidx] += acc;
                    }
                }
            }
        }
    }
    Ok(())
}

pub(crate) fn dense_dims(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(usize, usize)> {
    let [m, n] = weights.shape()[..] else {
        return Err(Error::ShapeMismatch(format!(
            "dense weights must be [m][n], got {:?}",
            weights.shape()
        )));
    };
    if input.len() != n || input.rank() != 1 {
        return Err(mismatch("dense input", input.shape(), &[n]));
    }
    if bias.shape() != [m] {
        return Err(mismatch("dense bias", bias.shape(), &[m]));
    }
    Ok((m, n))
}

/// `y = W x + b`.
pub fn dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (m, n) = dense_dims(input, weights, bias)?;
    let (x, wd) = (input.data(), weights.data());
    let out = (0..m)
        .map(|r| {
            let row = &wd[r * n..(r + 1) * n];
            bias.data()[r] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    Tensor::new(vec![m], out)
}

pub(crate) fn dense_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &[f64],
    grad_input: Option<&mut [f64]>,
    grad_weights: Option<&mut [f64]>,
    grad_bias: Option<&mut [f64]>,
) {
    let n = input.len();
    let m = grad_out.len();
    let x = input.data();
    if let Some(gb) = grad_bias {
        for (b, g) in gb.iter_mut().zip(grad_out) {
            *b += g;
        }
    }
    if let Some(gw) = grad_weights {
        for r in 0..m {
            let g = grad_out[r];
            if g == 0.0 {
                continue;
            }
            for (d, xv) in gw[r * n..(r + 1) * n].iter_mut().zip(x) {
                *d += g * xv;
            }
        }
    }
    if let Some(gi) = grad_input {
        let wd = weights.data();
        for r in 0..m {
            let g = grad_out[r];
            if g == 0.0 {
                continue;
            }
            for (d, wv) in gi.iter_mut().zip(&wd[r * n..(r + 1) * n]) {
                *d += g * wv;
            }
        }
    }
}

/// Inverted-dropout scale factors: 0 with probability `rate`, otherwise
/// `1 / (1 - rate)`.
pub fn dropout_mask(len: usize, rate: f64, seed: u64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::BadRate(rate));
    }
    let keep = 1.0 / (1.0 - rate);
    Ok((0..len as u64)
        .map(|i| {
            if rng::uniform(rng::mix(&[seed, i])) < rate {
                0.0
            } else {
                keep
            }
        })
        .collect())
}

/// Mean squared error over all elements.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(mismatch("mse", pred.shape(), target.shape()));
    }
    let n = pred.len() as f64;
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}
