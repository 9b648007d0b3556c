// SPDX-License-Identifier: Apache-2.0

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::dataset_io::{ProbKind, ProbMatrix};
use crate::{Error, Result};

/// Multinomial logistic regression: `softmax(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Gradient of the mean cross-entropy with respect to weight and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: usize,
    /// Mini-batch size; `None` trains full-batch, which ignores the seed.
    pub batch_size: Option<usize>,
    pub seed: u64,
    /// Class count; inferred as `max(y) + 1` when absent.
    pub num_classes: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.5,
            steps: 200,
            batch_size: None,
            seed: 0,
            num_classes: None,
        }
    }
}

impl LogisticModel {
    pub fn zeros(num_classes: usize, dim: usize) -> Self {
        LogisticModel {
            weight: Matrix::zeros(num_classes, dim),
            bias: vec![0.0; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weight.rows()
    }

    pub fn dim(&self) -> usize {
        self.weight.cols()
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.dim() {
            return Err(Error::Dimension(format!(
                "inputs of width {} for a model over {} features",
                x.cols(),
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let c = self.num_classes();
        let mut out = Matrix::zeros(x.rows(), c);
        for i in 0..x.rows() {
            let xi = x.row(i);
            for k in 0..c {
                let z = self.weight.row(k).iter().zip(xi).map(|(w, v)| w * v).sum::<f64>() + self.bias[k];
                out.set(i, k, z);
            }
        }
        Ok(out)
    }

    /// Row-wise softmax of the logits, in f64.
    pub fn probabilities(&self, x: &Matrix) -> Result<Matrix> {
        let mut z = self.logits(x)?;
        for i in 0..z.rows() {
            softmax_in_place(z.row_mut(i));
        }
        Ok(z)
    }

    pub fn predict_proba(&self, x: &Matrix) -> Result<ProbMatrix> {
        let p = self.probabilities(x)?;
        ProbMatrix::new(p.rows(), p.cols(), ProbKind::Categorical, p.to_f32())
    }

    /// Index of the largest logit per row (lowest index on ties).
    pub fn predict(&self, x: &Matrix) -> Result<Vec<u32>> {
        let z = self.logits(x)?;
        Ok((0..z.rows())
            .map(|i| {
                let row = z.row(i);
                let mut best = 0;
                for (k, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = k;
                    }
                }
                best as u32
            })
            .collect())
    }

    pub fn accuracy(&self, x: &Matrix, y: &[u32]) -> Result<f64> {
        if y.len() != x.rows() {
            return Err(Error::Dimension(format!("{} rows but {} labels", x.rows(), y.len())));
        }
        if y.is_empty() {
            return Err(Error::Empty("evaluation set"));
        }
        let pred = self.predict(x)?;
        let hits = pred.iter().zip(y).filter(|(p, t)| p == t).count();
        Ok(hits as f64 / y.len() as f64)
    }

    /// Mean softmax cross-entropy over the rows of `x` and its gradient.
    pub fn loss_and_grad(&self, x: &Matrix, y: &[u32]) -> Result<(f64, LogisticGrad)> {
        self.check_input(x)?;
        if y.len() != x.rows() {
            return Err(Error::Dimension(format!("{} rows but {} labels", x.rows(), y.len())));
        }
        if y.is_empty() {
            return Err(Error::Empty("training set"));
        }
        let c = self.num_classes();
        if let Some(&bad) = y.iter().find(|&&t| t as usize >= c) {
            return Err(Error::Validation(format!("label {bad} for a {c}-class model")));
        }
        let n = x.rows() as f64;
        let mut z = self.logits(x)?;
        let mut grad = LogisticGrad {
            weight: Matrix::zeros(c, self.dim()),
            bias: vec![0.0; c],
        };
        let mut loss = 0.0;
        for i in 0..x.rows() {
            let row = z.row_mut(i);
            let log_norm = log_sum_exp(row);
            let t = y[i] as usize;
            loss += log_norm - row[t];
            for (k, zk) in row.iter().enumerate() {
                let dz = ((zk - log_norm).exp() - if k == t { 1.0 } else { 0.0 }) / n;
                grad.bias[k] += dz;
                for (g, v) in grad.weight.row_mut(k).iter_mut().zip(x.row(i)) {
                    *g += dz * v;
                }
            }
        }
        Ok((loss / n, grad))
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        total += *v;
    }
    for v in z.iter_mut() {
        *v /= total;
    }
}

/// Gradient descent on the mean softmax cross-entropy from a zero model.
pub fn train_logistic(x: &Matrix, y: &[u32], cfg: &TrainConfig) -> Result<LogisticModel> {
    if x.rows() == 0 {
        return Err(Error::Empty("training set"));
    }
    if !(cfg.lr > 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", cfg.lr)));
    }
    let inferred = y.iter().max().map_or(0, |&m| m as usize + 1);
    let classes = cfg.num_classes.unwrap_or(inferred);
    if classes < 2 || classes < inferred {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 classes covering every label, got {classes}"
        )));
    }
    let mut model = LogisticModel::zeros(classes, x.cols());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for step in 0..cfg.steps {
        let (loss, grad) = match cfg.batch_size {
            Some(b) if b < x.rows() => {
                let idx = sample(&mut rng, x.rows(), b).into_vec();
                let labels: Vec<u32> = idx.iter().map(|&i| y[i]).collect();
                model.loss_and_grad(&x.select_rows(&idx), &labels)?
            }
            _ => model.loss_and_grad(x, y)?,
        };
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        for (w, g) in model.weight.data_mut().iter_mut().zip(grad.weight.data()) {
            *w -= cfg.lr * g;
        }
        for (b, g) in model.bias.iter_mut().zip(&grad.bias) {
            *b -= cfg.lr * g;
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_steps_give_uniform_predictions() {
        let x = Matrix::new(3, 2, vec![1.0, 2.0, -1.0, 0.5, 3.0, 3.0]).unwrap();
        let cfg = TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        };
        let m = train_logistic(&x, &[0, 2, 1], &cfg).unwrap();
        assert!(m.weight.data().iter().all(|&w| w == 0.0));
        let p = m.predict_proba(&x).unwrap();
        assert!(p.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-7));
    }

    #[test]
    fn softmax_ignores_per_row_shift() {
        let mut a = vec![0.5, -1.0, 2.0];
        let mut b: Vec<f64> = a.iter().map(|v| v + 100.0).collect();
        softmax_in_place(&mut a);
        softmax_in_place(&mut b);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let x = Matrix::zeros(2, 1);
        assert!(train_logistic(&x, &[0, 0], &TrainConfig::default()).is_err());
        let cfg = TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        };
        assert!(train_logistic(&x, &[0, 1], &cfg).is_err());
        assert!(train_logistic(&Matrix::zeros(0, 1), &[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let x = Matrix::new(2, 1, vec![1e200, -1e200]).unwrap();
        let err = train_logistic(&x, &[0, 1], &TrainConfig { lr: 1e200, ..TrainConfig::default() }).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
        assert!(err.is_numeric());
    }

    #[test]
    fn minibatch_training_is_seeded() {
        let x = Matrix::from_fn(20, 2, |r, c| ((r * 7 + c * 3) % 11) as f64 - 5.0);
        let y: Vec<u32> = (0..20).map(|r| (r % 2) as u32).collect();
        let cfg = TrainConfig {
            batch_size: Some(5),
            seed: 9,
            steps: 30,
            ..TrainConfig::default()
        };
        assert_eq!(train_logistic(&x, &y, &cfg).unwrap(), train_logistic(&x, &y, &cfg).unwrap());
    }
}
