// SPDX-License-Identifier: Apache-2.0

use super::world::TaskInstance;
use crate::toy_models::{train_logistic, LinearExtractor, Matrix, TrainConfig};
use crate::{Error, Result};

/// Feature spread below which a column is left unscaled.
const MIN_STD: f64 = 1e-12;

/// Centers and scales columns by the statistics of `train`.
fn standardize(train: &mut Matrix, test: &mut Matrix) {
    let (n, d) = (train.rows() as f64, train.cols());
    for c in 0..d {
        let mean = (0..train.rows()).map(|r| train.get(r, c)).sum::<f64>() / n;
        let var = (0..train.rows()).map(|r| (train.get(r, c) - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        let scale = if std > MIN_STD { 1.0 / std } else { 1.0 };
        for m in [&mut *train, &mut *test] {
            for r in 0..m.rows() {
                m.set(r, c, (m.get(r, c) - mean) * scale);
            }
        }
    }
}

/// Test accuracy of a softmax head trained on the expert's features of the
/// task's training split.
pub fn oracle_downstream_accuracy(task: &TaskInstance, e: &LinearExtractor, cfg: &TrainConfig) -> Result<f64> {
    if task.test_labels.is_empty() {
        return Err(Error::Empty("test split"));
    }
    let mut train = e.extract_batch(&task.train_inputs)?;
    let mut test = e.extract_batch(&task.test_inputs)?;
    standardize(&mut train, &mut test);
    let cfg = TrainConfig {
        num_classes: Some(task.train.num_classes() as usize),
        ..*cfg
    };
    let model = train_logistic(&train, task.train.class_labels(), &cfg)?;
    model.accuracy(&test, &task.test_labels)
}
