//! Fits y = 2x - 1 with a one-input dense layer with the tape and Adam,
//! then checks one gradient against a central difference.
//!
//! cargo run --example autodiff

use nino::tensor::{adam_step, AdamState, Tape, Tensor};

fn loss_and_grads(w: &Tensor, b: &Tensor, x: f64, y: f64) -> nino::Result<(f64, Tensor, Tensor)> {
    let mut tape = Tape::new();
    let (wv, bv) = (tape.param(w), tape.param(b));
    let xv = tape.constant(Tensor::from_vec(vec![x]));
    let yv = tape.constant(Tensor::from_vec(vec![y]));
    let pred = tape.dense(xv, wv, bv)?;
    let loss = tape.mse(pred, yv)?;
    let g = tape.backward(loss)?;
    Ok((tape.value(loss).data()[0], g.wrt(wv), g.wrt(bv)))
}

fn main() -> nino::Result<()> {
    let mut w = Tensor::new(vec![1, 1], vec![0.3])?;
    let mut b = Tensor::from_vec(vec![0.0]);
    let data: Vec<(f64, f64)> = (0..10).map(|i| (i as f64 / 5.0 - 1.0, 2.0 * (i as f64 / 5.0 - 1.0) - 1.0)).collect();

    let (_, gw, _) = loss_and_grads(&w, &b, 0.5, 0.0)?;
    let h = 1e-6;
    let at = |v: f64| loss_and_grads(&Tensor::new(vec![1, 1], vec![v]).unwrap(), &b, 0.5, 0.0).unwrap().0;
    println!("dL/dw tape {:.8}, central difference {:.8}", gw.data()[0], (at(0.3 + h) - at(0.3 - h)) / (2.0 * h));

    let mut state = AdamState::new([&w, &b]);
    for epoch in 0..100 {
        let mut total = 0.0;
        for &(x, y) in &data {
            let (l, gw, gb) = loss_and_grads(&w, &b, x, y)?;
            total += l;
            adam_step(&mut [&mut w, &mut b], &[gw, gb], &mut state, 0.05)?;
        }
        if [0, 5, 10, 25, 50, 99].contains(&epoch) {
            println!("epoch {epoch:3}  mse {:.6}", total / data.len() as f64);
        }
    }
    println!("w = {:.4}, b = {:.4}", w.data()[0], b.data()[0]);
    Ok(())
}
