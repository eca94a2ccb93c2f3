use std::borrow::Cow;

use crate::error::{Error, Result};

use super::ops::{self, PointwiseOp};
use super::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DropoutMode {
    Eval,
    Train { seed: u64 },
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: usize,
        kernel: usize,
        bias: Option<usize>,
    },
    Dense {
        input: usize,
        weights: usize,
        bias: usize,
    },
    Add(usize, usize),
    Mul(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Scale { input: usize, factors: Vec<f64> },
    Reshape(usize),
    Mse { pred: usize, target: usize },
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation so it can be differentiated in reverse.
///
/// Nodes are appended in evaluation order, which is already a topological
/// order; `backward` walks them once from the loss down to index 0.
#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; zeros when `var` does not
    /// influence the loss.
    pub fn wrt(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    /// Like [`wrt`](Self::wrt) but moves the gradient out.
    pub fn take(&mut self, var: Var) -> Tensor {
        match self.grads[var.0].take() {
            Some(g) => g,
            None => {
                log::warn!("variable {} is disconnected from the loss; gradient is zero", var.0);
                Tensor::zeros(&self.shapes[var.0])
            }
        }
    }

    pub fn is_connected(&self, var: Var) -> bool {
        self.grads[var.0].is_some()
    }
}

fn zeros_like(t: &Tensor) -> Tensor {
    Tensor::zeros(t.shape())
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[usize]) -> bool {
        vars.iter().any(|&v| self.nodes[v].requires_grad)
    }

    /// A data leaf: no gradient is propagated into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    pub fn constant_ref(&mut self, value: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, false)
    }

    /// A trainable leaf borrowed from the caller's parameter storage.
    pub fn param(&mut self, value: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, true)
    }

    pub fn param_owned(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, true)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>) -> Result<Var> {
        let out = ops::conv2d(
            self.value(input),
            self.value(kernel),
            bias.map(|b| self.value(b)),
        )?;
        let mut parents = vec![input.0, kernel.0];
        parents.extend(bias.map(|b| b.0));
        let rg = self.needs(&parents);
        let op = Op::Conv2d {
            input: input.0,
            kernel: kernel.0,
            bias: bias.map(|b| b.0),
        };
        Ok(self.push(Cow::Owned(out), op, rg))
    }

    pub fn dense(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let out = ops::dense(self.value(input), self.value(weights), self.value(bias))?;
        let rg = self.needs(&[input.0, weights.0, bias.0]);
        let op = Op::Dense {
            input: input.0,
            weights: weights.0,
            bias: bias.0,
        };
        Ok(self.push(Cow::Owned(out), op, rg))
    }

    pub fn pointwise(&mut self, op: PointwiseOp, args: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = args.iter().map(|&a| self.value(a)).collect();
        let out = ops::pointwise(op, &values)?;
        let parents: Vec<usize> = args.iter().map(|a| a.0).collect();
        let rg = self.needs(&parents);
        let rec = match (op, &parents[..]) {
            (PointwiseOp::Sigmoid, &[a]) => Op::Sigmoid(a),
            (PointwiseOp::Tanh, &[a]) => Op::Tanh(a),
            (PointwiseOp::Relu, &[a]) => Op::Relu(a),
            (PointwiseOp::Hadamard, &[a, b]) => Op::Mul(a, b),
            (PointwiseOp::Add, &[a, b]) => Op::Add(a, b),
            _ => unreachable!("arity checked by ops::pointwise"),
        };
        Ok(self.push(Cow::Owned(out), rec, rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.pointwise(PointwiseOp::Sigmoid, &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.pointwise(PointwiseOp::Tanh, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.pointwise(PointwiseOp::Relu, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.pointwise(PointwiseOp::Add, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.pointwise(PointwiseOp::Hadamard, &[a, b])
    }

    /// Inverted dropout; the identity in eval mode or at rate 0.
    pub fn dropout(&mut self, x: Var, rate: f64, mode: DropoutMode) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::BadRate(rate));
        }
        let seed = match mode {
            DropoutMode::Train { seed } if rate > 0.0 => seed,
            _ => return Ok(x),
        };
        let factors = ops::dropout_mask(self.value(x).len(), rate, seed)?;
        let src = self.value(x);
        let out = Tensor::new(
            src.shape().to_vec(),
            src.data().iter().zip(&factors).map(|(v, f)| v * f).collect(),
        )?;
        let rg = self.needs(&[x.0]);
        Ok(self.push(Cow::Owned(out), Op::Scale { input: x.0, factors }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.needs(&[x.0]);
        Ok(self.push(Cow::Owned(out), Op::Reshape(x.0), rg))
    }

    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let loss = ops::mse(self.value(pred), self.value(target))?;
        let rg = self.needs(&[pred.0, target.0]);
        let op = Op::Mse {
            pred: pred.0,
            target: target.0,
        };
        Ok(self.push(Cow::Owned(Tensor::scalar(loss)), op, rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0].value;
        if root.len() != 1 {
            return Err(Error::NotScalar(root.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(root.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, g.data(), &mut grads)?;
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Tensor>], i: usize) -> Option<&'g mut [f64]> {
        if !self.nodes[i].requires_grad {
            return None;
        }
        Some(
            grads[i]
                .get_or_insert_with(|| zeros_like(&self.nodes[i].value))
                .data_mut(),
        )
    }

    fn propagate(&self, node: &Node<'a>, g: &[f64], grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |i: usize| -> &Tensor { &self.nodes[i].value };
        match node.op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, bias } => {
                let mut gi = self.take_slot(grads, input);
                let mut gk = self.take_slot(grads, kernel);
                let mut gb = bias.and_then(|b| self.take_slot(grads, b));
                ops::conv2d_backward(
                    val(input),
                    val(kernel),
                    g,
                    gi.as_mut().map(|t| t.data_mut()),
                    gk.as_mut().map(|t| t.data_mut()),
                    gb.as_mut().map(|t| t.data_mut()),
                )?;
                Self::put(grads, input, gi);
                Self::put(grads, kernel, gk);
                if let Some(b) = bias {
                    Self::put(grads, b, gb);
                }
            }
            Op::Dense { input, weights, bias } => {
                let mut gi = self.take_slot(grads, input);
                let mut gw = self.take_slot(grads, weights);
                let mut gb = self.take_slot(grads, bias);
                ops::dense_backward(
                    val(input),
                    val(weights),
                    g,
                    gi.as_mut().map(|t| t.data_mut()),
                    gw.as_mut().map(|t| t.data_mut()),
                    gb.as_mut().map(|t| t.data_mut()),
                );
                Self::put(grads, input, gi);
                Self::put(grads, weights, gw);
                Self::put(grads, bias, gb);
            }
            Op::Add(a, b) => {
                for p in [a, b] {
                    if let Some(s) = self.slot(grads, p) {
                        s.iter_mut().zip(g).for_each(|(d, gv)| *d += gv);
                    }
                }
            }
            Op::Mul(a, b) => {
                // Copy the co-factors first: `a` and `b` may be the same node.
                let (va, vb) = (val(a).data().to_vec(), val(b).data().to_vec());
                if let Some(s) = self.slot(grads, a) {
                    for ((d, gv), y) in s.iter_mut().zip(g).zip(&vb) {
                        *d += gv * y;
                    }
                }
                if let Some(s) = self.slot(grads, b) {
                    for ((d, gv), x) in s.iter_mut().zip(g).zip(&va) {
                        *d += gv * x;
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                if let Some(s) = self.slot(grads, a) {
                    for ((d, gv), yv) in s.iter_mut().zip(g).zip(y) {
                        *d += gv * yv * (1.0 - yv);
                    }
                }
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                if let Some(s) = self.slot(grads, a) {
                    for ((d, gv), yv) in s.iter_mut().zip(g).zip(y) {
                        *d += gv * (1.0 - yv * yv);
                    }
                }
            }
            Op::Relu(a) => {
                let x = val(a).data().to_vec();
                if let Some(s) = self.slot(grads, a) {
                    for ((d, gv), xv) in s.iter_mut().zip(g).zip(&x) {
                        if *xv > 0.0 {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Scale { input, ref factors } => {
                if let Some(s) = self.slot(grads, input) {
                    for ((d, gv), f) in s.iter_mut().zip(g).zip(factors) {
                        *d += gv * f;
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(s) = self.slot(grads, a) {
                    s.iter_mut().zip(g).for_each(|(d, gv)| *d += gv);
                }
            }
            Op::Mse { pred, target } => {
                let (p, t) = (val(pred).data().to_vec(), val(target).data().to_vec());
                let scale = 2.0 * g[0] / p.len() as f64;
                if let Some(s) = self.slot(grads, pred) {
                    for ((d, pv), tv) in s.iter_mut().zip(&p).zip(&t) {
                        *d += scale * (pv - tv);
                    }
                }
                if let Some(s) = self.slot(grads, target) {
                    for ((d, pv), tv) in s.iter_mut().zip(&p).zip(&t) {
                        *d -= scale * (pv - tv);
                    }
                }
            }
        }
        Ok(())
    }

    /// Moves a parent's accumulator out of `grads`. Conv and dense parents
    /// are distinct nodes, so taking them one after another is safe.
    fn take_slot(&self, grads: &mut [Option<Tensor>], i: usize) -> Option<Tensor> {
        self.nodes[i]
            .requires_grad
            .then(|| grads[i].take().unwrap_or_else(|| zeros_like(&self.nodes[i].value)))
    }

    fn put(grads: &mut [Option<Tensor>], i: usize, t: Option<Tensor>) {
        if t.is_some() {
            grads[i] = t;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_gradient_of_scalar() {
        let x = Tensor::scalar(3.0);
        let mut tape = Tape::new();
        let xv = tape.param(&x);
        let zero = tape.constant(Tensor::scalar(0.0));
        let loss = tape.mse(xv, zero).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(xv).data(), &[6.0]);
    }

    #[test]
    fn unused_param_has_zero_gradient() {
        let (x, unused) = (Tensor::scalar(1.0), Tensor::full(&[3], 2.0));
        let mut tape = Tape::new();
        let xv = tape.param(&x);
        let uv = tape.param(&unused);
        let t = tape.constant(Tensor::scalar(0.5));
        let loss = tape.mse(xv, t).unwrap();
        let mut g = tape.backward(loss).unwrap();
        assert!(!g.is_connected(uv));
        assert_eq!(g.take(uv), Tensor::zeros(&[3]));
    }

    #[test]
    fn backward_requires_scalar() {
        let x = Tensor::full(&[2], 1.0);
        let mut tape = Tape::new();
        let xv = tape.param(&x);
        let y = tape.tanh(xv).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::NotScalar(_))));
    }

    #[test]
    fn square_via_shared_parent() {
        // d/dx mean((x*x)^2) with x used twice in one product
        let x = Tensor::new(vec![2], vec![1.5, -2.0]).unwrap();
        let mut tape = Tape::new();
        let xv = tape.param(&x);
        let sq = tape.mul(xv, xv).unwrap();
        let z = tape.constant(Tensor::zeros(&[2]));
        let loss = tape.mse(sq, z).unwrap();
        let g = tape.backward(loss).unwrap().wrt(xv);
        // loss = (x1^4 + x2^4)/2 -> grad = 2 x^3
        assert!((g.data()[0] - 2.0 * 1.5f64.powi(3)).abs() < 1e-12);
        assert!((g.data()[1] - 2.0 * (-2.0f64).powi(3)).abs() < 1e-12);
    }

    #[test]
    fn dropout_modes() {
        let x = Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant_ref(&x);
        let e = tape.dropout(xv, 0.3, DropoutMode::Eval).unwrap();
        assert_eq!(tape.value(e), &x);
        let z = tape.dropout(xv, 0.0, DropoutMode::Train { seed: 9 }).unwrap();
        assert_eq!(tape.value(z), &x);
        assert!(tape.dropout(xv, 1.0, DropoutMode::Eval).is_err());
    }
}
