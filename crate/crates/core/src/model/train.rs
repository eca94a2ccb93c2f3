use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeStamp;
use crate::preprocess::WindowSample;
use crate::rng;
use crate::tensor::{adam_step, AdamState, DropoutMode, Tape, Tensor, Var};

/// A model whose loss can be recorded on a tape.
pub trait Trainable {
    type Sample: TrainSample;

    /// Parameters with stable names, in checkpoint order.
    fn named_parameters(&self) -> Vec<(String, &Tensor)>;

    /// Same order as `named_parameters`.
    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;

    /// Records the scalar loss for one sample. The returned vars line up
    /// with `named_parameters`.
    fn record_loss<'a>(&'a self, tape: &mut Tape<'a>, sample: &'a Self::Sample, mode: DropoutMode) -> Result<(Var, Vec<Var>)>;
}

pub trait TrainSample {
    fn anchor(&self) -> TimeStamp;
}

impl TrainSample for WindowSample {
    fn anchor(&self) -> TimeStamp {
        self.anchor
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Fraction of anchors (oldest first) used for training.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 0.001,
            batch_size: 32,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!("train fraction {} not in (0, 1)", self.train_fraction)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {}", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean training-mode loss over the epoch's samples.
    pub train_mse: f64,
    /// Eval-mode loss on the held-out samples, NaN when there are none.
    pub test_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub loss_curve: Vec<EpochLoss>,
    pub batches_per_epoch: usize,
    pub n_train: usize,
    pub n_test: usize,
}

impl TrainReport {
    pub fn write_loss_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "train_mse", "test_mse"])?;
        for e in &self.loss_curve {
            let test = if e.test_mse.is_nan() { String::new() } else { e.test_mse.to_string() };
            w.write_record([e.epoch.to_string(), e.train_mse.to_string(), test])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn minibatch_count(n_samples: usize, batch_size: usize) -> usize {
    n_samples.div_ceil(batch_size.max(1))
}

/// Splits anchor-ordered samples into the oldest `fraction` and the rest.
pub fn chronological_split<S: TrainSample>(samples: &[S], fraction: f64) -> Result<(&[S], &[S])> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {fraction} not in (0, 1)")));
    }
    if samples.windows(2).any(|w| w[0].anchor() >= w[1].anchor()) {
        return Err(Error::Config("samples are not in strictly increasing anchor order".into()));
    }
    let n_train = (samples.len() as f64 * fraction).round() as usize;
    let (train, test) = samples.split_at(n_train.min(samples.len()));
    if train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if test.is_empty() {
        return Err(Error::EmptySplit("test"));
    }
    Ok((train, test))
}

/// Mean eval-mode loss over `samples`.
pub fn evaluate_mse<M: Trainable>(model: &M, samples: &[M::Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySplit("evaluation"));
    }
    let mut total = 0.0;
    for s in samples {
        let mut tape = Tape::new();
        let (loss, _) = model.record_loss(&mut tape, s, DropoutMode::Eval)?;
        total += tape.value(loss).data()[0];
    }
    Ok(total / samples.len() as f64)
}

/// Minibatch Adam over `train_set`, scoring `test_set` after every epoch.
///
/// The shuffle order depends on `(seed, epoch)` and each sample's dropout
/// mask on `(seed, epoch, sample)`, so a run is reproducible bit for bit.
pub fn fit<M: Trainable>(
    model: &mut M,
    train_set: &[M::Sample],
    test_set: &[M::Sample],
    tc: &TrainConfig,
) -> Result<TrainReport> {
    tc.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    let mut adam = AdamState::new(model.named_parameters().into_iter().map(|(_, t)| t));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut loss_curve = Vec::with_capacity(tc.epochs);

    for epoch in 0..tc.epochs {
        order.shuffle(&mut rng::stream(&[tc.seed, 0x5f, epoch as u64]));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(tc.batch_size) {
            let mut grads: Vec<Tensor> = model
                .named_parameters()
                .iter()
                .map(|(_, t)| Tensor::zeros(t.shape()))
                .collect();
            for &i in batch {
                let mode = DropoutMode::Train {
                    seed: rng::mix(&[tc.seed, 0xd0, epoch as u64, i as u64]),
                };
                let mut tape = Tape::new();
                let (loss, vars) = model.record_loss(&mut tape, &train_set[i], mode)?;
                epoch_loss += tape.value(loss).data()[0];
                let mut g = tape.backward(loss)?;
                for (acc, v) in grads.iter_mut().zip(vars) {
                    let gv = g.take(v);
                    for (a, b) in acc.data_mut().iter_mut().zip(gv.data()) {
                        *a += b;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for g in &mut grads {
                g.data_mut().iter_mut().for_each(|v| *v *= scale);
            }
            adam_step(&mut model.parameters_mut(), &grads, &mut adam, tc.learning_rate)?;
        }
        let train_mse = epoch_loss / train_set.len() as f64;
        let test_mse = if test_set.is_empty() {
            f64::NAN
        } else {
            evaluate_mse(model, test_set)?
        };
        log::info!("epoch {}: train {train_mse:.6} test {test_mse:.6}", epoch + 1);
        loss_curve.push(EpochLoss {
            epoch: epoch + 1,
            train_mse,
            test_mse,
        });
    }
    Ok(TrainReport {
        loss_curve,
        batches_per_epoch: minibatch_count(train_set.len(), tc.batch_size),
        n_train: train_set.len(),
        n_test: test_set.len(),
    })
}

/// Chronological split followed by `fit`.
pub fn train<M: Trainable>(model: &mut M, samples: &[M::Sample], tc: &TrainConfig) -> Result<TrainReport> {
    tc.validate()?;
    let (train_set, test_set) = chronological_split(samples, tc.train_fraction)?;
    fit(model, train_set, test_set, tc)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// y = w * x + b on scalars, with dropout on the input.
    #[derive(Clone)]
    struct Line {
        w: Tensor,
        b: Tensor,
    }

    struct Point {
        x: Tensor,
        y: Tensor,
        t: TimeStamp,
    }

    impl TrainSample for Point {
        fn anchor(&self) -> TimeStamp {
            self.t
        }
    }

    impl Trainable for Line {
        type Sample = Point;

        fn named_parameters(&self) -> Vec<(String, &Tensor)> {
            vec![("w".into(), &self.w), ("b".into(), &self.b)]
        }

        fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
            vec![&mut self.w, &mut self.b]
        }

        fn record_loss<'a>(&'a self, tape: &mut Tape<'a>, s: &'a Point, mode: DropoutMode) -> Result<(Var, Vec<Var>)> {
            let w = tape.param(&self.w);
            let b = tape.param(&self.b);
            let x = tape.constant_ref(&s.x);
            let x = tape.dropout(x, 0.05, mode)?;
            let y = tape.dense(x, w, b)?;
            let target = tape.constant_ref(&s.y);
            Ok((tape.mse(y, target)?, vec![w, b]))
        }
    }

    fn points(n: usize) -> Vec<Point> {
        let t0 = TimeStamp::new(2000, 1).unwrap();
        (0..n)
            .map(|i| {
                let x = i as f64 / n as f64;
                Point {
                    x: Tensor::scalar(x),
                    y: Tensor::scalar(2.0 * x - 0.5),
                    t: t0.add_months(i as i64),
                }
            })
            .collect()
    }

    fn line() -> Line {
        Line {
            w: Tensor::new(vec![1, 1], vec![0.1]).unwrap(),
            b: Tensor::scalar(0.0),
        }
    }

    #[test]
    fn minibatch_counts() {
        assert_eq!(minibatch_count(40, 32), 2);
        assert_eq!(minibatch_count(32, 32), 1);
        assert_eq!(minibatch_count(0, 32), 0);
        let data = points(40);
        let mut m = line();
        let tc = TrainConfig { epochs: 1, ..Default::default() };
        let report = fit(&mut m, &data, &[], &tc).unwrap();
        assert_eq!(report.batches_per_epoch, 2);
        assert!(report.loss_curve[0].test_mse.is_nan());
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let data = points(20);
        let mut m = line();
        let before = m.clone();
        let tc = TrainConfig {
            epochs: 3,
            learning_rate: 0.0,
            ..Default::default()
        };
        train(&mut m, &data, &tc).unwrap();
        assert_eq!(m.w, before.w);
        assert_eq!(m.b, before.b);
    }

    #[test]
    fn split_is_chronological() {
        let data = points(10);
        let (a, b) = chronological_split(&data, 0.8).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        assert!(a.iter().all(|p| b.iter().all(|q| p.t < q.t)));
        assert!(matches!(chronological_split(&data[..1], 0.8), Err(Error::EmptySplit("test"))));
        assert!(chronological_split(&data, 1.0).is_err());
        let rev: Vec<Point> = points(3).into_iter().rev().collect();
        assert!(chronological_split(&rev, 0.5).is_err());
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let data = points(30);
        let tc = TrainConfig {
            epochs: 200,
            learning_rate: 0.05,
            batch_size: 8,
            seed: 9,
            ..Default::default()
        };
        let (mut a, mut b) = (line(), line());
        let before = evaluate_mse(&a, &data).unwrap();
        let ra = train(&mut a, &data, &tc).unwrap();
        let rb = train(&mut b, &data, &tc).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a.w, b.w);
        let after = evaluate_mse(&a, &data).unwrap();
        assert!(after < 0.2 * before, "{before} -> {after}");

        let mut c = line();
        train(&mut c, &data, &TrainConfig { seed: 10, ..tc }).unwrap();
        assert_ne!(a.w, c.w);
    }
}
