use crate::error::{Error, Result};

use super::Tensor;

/// Adam moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    /// Zeroed moments with the usual defaults (0.9, 0.999, 1e-8).
    pub fn new<'t>(params: impl IntoIterator<Item = &'t Tensor>) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            v: m.clone(),
            m,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::LengthMismatch(params.len(), grads.len()));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::ShapeMismatch(format!(
                "adam: param {:?}, grad {:?}, moment {:?}",
                p.shape(),
                g.shape(),
                m.shape()
            )));
        }
    }
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
        for (k, &gk) in g.data().iter().enumerate() {
            md[k] = b1 * md[k] + (1.0 - b1) * gk;
            vd[k] = b2 * vd[k] + (1.0 - b2) * gk * gk;
            let m_hat = md[k] / c1;
            let v_hat = vd[k] / c2;
            pd[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let mut st = AdamState::new([&p]);
        adam_step(&mut [&mut p], &[Tensor::zeros(&[3])], &mut st, 0.001).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_is_signed_lr() {
        let lr = 0.001;
        for g in [1e3, -1e6, 1e9] {
            let mut p = Tensor::scalar(0.0);
            let mut st = AdamState::new([&p]);
            adam_step(&mut [&mut p], &[Tensor::scalar(g)], &mut st, lr).unwrap();
            let expected = -lr * g.signum();
            assert!((p.data()[0] - expected).abs() < 1e-9 * lr.max(1.0), "g={g}");
        }
    }

    #[test]
    fn minimizes_square() {
        let mut x = Tensor::scalar(5.0);
        let mut st = AdamState::new([&x]);
        for _ in 0..500 {
            let g = Tensor::scalar(2.0 * x.data()[0]);
            adam_step(&mut [&mut x], &[g], &mut st, 0.1).unwrap();
        }
        assert!(x.data()[0].abs() < 1e-2, "x = {}", x.data()[0]);
    }

    #[test]
    fn shape_checked() {
        let mut p = Tensor::zeros(&[2]);
        let mut st = AdamState::new([&p]);
        assert!(adam_step(&mut [&mut p], &[Tensor::zeros(&[3])], &mut st, 0.1).is_err());
    }
}
