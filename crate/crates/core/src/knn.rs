// SPDX-License-Identifier: Apache-2.0

//! Exact Euclidean 1-NN with leave-one-out evaluation.
//!
//! The kernel ranks candidates with the `|a|^2 + |b|^2 - 2 a.b` expansion and
//! then recomputes, by direct differences, every candidate whose expanded
//! distance lies within a rounding bound of the row minimum. The final
//! choice therefore agrees exactly with a naive double loop, including the
//! lowest-index rule on exact ties. Leaving one out is just skipping the
//! diagonal; a nearest-neighbor classifier has nothing to refit.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;

use crate::dataset_io::{EmbeddingMatrix, TaskDataset};
use crate::selectors::{Direction, Method, SelectionReport};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LoocvResult {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// Nearest other row for every row.
    pub nn_index: Vec<usize>,
}

fn check_shape(data: &[f32], dim: usize, min_rows: usize) -> Result<usize> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::Dimension(format!(
            "{} values do not form rows of width {dim}",
            data.len()
        )));
    }
    let n = data.len() / dim;
    if n < min_rows {
        return Err(Error::InvalidArgument(format!(
            "need at least {min_rows} rows, got {n}"
        )));
    }
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            row: i / dim,
            col: i % dim,
        });
    }
    Ok(n)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Squared distance by direct differences, accumulated in index order.
#[inline]
fn direct_sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let t = x as f64 - y as f64;
            t * t
        })
        .fold(0.0, |acc, t| acc + t)
}

/// Index of the nearest other row for every row (self excluded, ties to the
/// lowest index). Requires at least two rows.
pub fn nearest_neighbors_loo(data: &[f32], dim: usize) -> Result<Vec<usize>> {
    let n = check_shape(data, dim, 2)?;
    let wide: Vec<f64> = data.iter().map(|&v| v as f64).collect();
    let norms: Vec<f64> = wide.chunks_exact(dim).map(|r| dot(r, r)).collect();
    let max_norm = norms.iter().cloned().fold(0.0, f64::max);

    let nn = (0..n)
        .into_par_iter()
        .map(|i| {
            let qi = &wide[i * dim..(i + 1) * dim];
            let approx: Vec<f64> = (0..n)
                .map(|j| {
                    if j == i {
                        f64::INFINITY
                    } else {
                        norms[i] + norms[j] - 2.0 * dot(qi, &wide[j * dim..(j + 1) * dim])
                    }
                })
                .collect();
            let best = approx.iter().cloned().fold(f64::INFINITY, f64::min);
            // Far larger than the expansion's rounding error for any practical dim.
            let slack = 1e-9 * (norms[i] + max_norm) + f64::MIN_POSITIVE;
            let row_i = &data[i * dim..(i + 1) * dim];
            let mut winner = usize::MAX;
            let mut winner_dist = f64::INFINITY;
            for (j, &a) in approx.iter().enumerate() {
                if a <= best + 2.0 * slack {
                    let exact = direct_sq_dist(row_i, &data[j * dim..(j + 1) * dim]);
                    if exact < winner_dist {
                        winner = j;
                        winner_dist = exact;
                    }
                }
            }
            winner
        })
        .collect();
    Ok(nn)
}

/// Full N×N matrix of squared distances by the norm expansion, clamped at 0.
/// Row-major; the diagonal is exactly 0.
pub fn pairwise_sq_dists(data: &[f32], dim: usize) -> Result<Vec<f64>> {
    let n = check_shape(data, dim, 1)?;
    let wide: Vec<f64> = data.iter().map(|&v| v as f64).collect();
    let norms: Vec<f64> = wide.chunks_exact(dim).map(|r| dot(r, r)).collect();
    let mut out = vec![0.0; n * n];
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let qi = &wide[i * dim..(i + 1) * dim];
        for (j, cell) in row.iter_mut().enumerate() {
            if j != i {
                let d = norms[i] + norms[j] - 2.0 * dot(qi, &wide[j * dim..(j + 1) * dim]);
                *cell = d.max(0.0);
            }
        }
    });
    Ok(out)
}

/// Leave-one-out accuracy of a 1-NN classifier on row-major `data`.
pub fn loocv_1nn_accuracy(data: &[f32], dim: usize, labels: &[u32]) -> Result<LoocvResult> {
    let n = check_shape(data, dim, 2)?;
    if labels.len() != n {
        return Err(Error::Dimension(format!("{n} rows but {} labels", labels.len())));
    }
    let nn_index = nearest_neighbors_loo(data, dim)?;
    let correct = nn_index
        .iter()
        .enumerate()
        .filter(|&(i, &j)| labels[i] == labels[j])
        .count();
    Ok(LoocvResult {
        accuracy: correct as f64 / n as f64,
        correct,
        total: n,
        nn_index,
    })
}

/// Rows of `emb` reordered to follow the task's example order.
pub fn align_to_task(task: &TaskDataset, emb: &EmbeddingMatrix) -> Result<Vec<f32>> {
    let mismatch = |msg: String| Error::IdMismatch {
        expert: emb.expert_id,
        msg,
    };
    if emb.rows() != task.len() {
        return Err(mismatch(format!(
            "embeddings cover {} examples, task has {}",
            emb.rows(),
            task.len()
        )));
    }
    let index: HashMap<_, _> = emb.example_ids().iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut out = Vec::with_capacity(task.len() * emb.dim());
    for &id in task.example_ids() {
        let row = *index
            .get(&id)
            .ok_or_else(|| mismatch(format!("task example {id} has no embedding")))?;
        out.extend_from_slice(emb.row(row));
    }
    Ok(out)
}

/// Scores every expert by the LOOCV 1-NN accuracy of the task in its
/// embedding space and picks the best (lowest expert id on ties).
pub fn knn_select(task: &TaskDataset, embeddings: &[EmbeddingMatrix]) -> Result<SelectionReport> {
    if embeddings.is_empty() {
        return Err(Error::Empty("expert embedding list"));
    }
    if task.len() < 2 {
        return Err(Error::Validation(format!(
            "task needs at least 2 examples for leave-one-out, has {}",
            task.len()
        )));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = embeddings.iter().find(|m| !seen.insert(m.expert_id)) {
        return Err(Error::Validation(format!("expert {} supplied twice", dup.expert_id)));
    }
    let scores = embeddings
        .par_iter()
        .map(|emb| {
            let rows = align_to_task(task, emb)?;
            let res = loocv_1nn_accuracy(&rows, emb.dim(), task.class_labels())?;
            Ok((emb.expert_id, res.accuracy))
        })
        .collect::<Result<Vec<_>>>()?;
    SelectionReport::from_scores(Method::Knn, Direction::Maximize, scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_points_of_different_class() {
        let r = loocv_1nn_accuracy(&[0.0, 1.0], 1, &[0, 1]).unwrap();
        assert_eq!(r.accuracy, 0.0);
        assert_eq!(r.nn_index, vec![1, 0]);
    }

    #[test]
    fn two_tight_clusters() {
        let r = loocv_1nn_accuracy(&[0.0, 0.1, 10.0, 10.1], 1, &[0, 0, 1, 1]).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!((r.correct, r.total), (4, 4));
    }

    #[test]
    fn exact_ties_go_to_lowest_index() {
        // Row 1 is equidistant from rows 0 and 2; duplicates of row 0 tie at 0.
        let r = nearest_neighbors_loo(&[0.0, 1.0, 2.0, 0.0], 1).unwrap();
        assert_eq!(r, vec![3, 0, 1, 0]);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(matches!(loocv_1nn_accuracy(&[1.0], 1, &[0]), Err(Error::InvalidArgument(_))));
        assert!(matches!(loocv_1nn_accuracy(&[1.0, 2.0, 3.0], 2, &[0]), Err(Error::Dimension(_))));
        assert!(matches!(loocv_1nn_accuracy(&[1.0, 2.0], 1, &[0]), Err(Error::Dimension(_))));
        assert!(matches!(
            loocv_1nn_accuracy(&[1.0, f32::NAN], 1, &[0, 1]),
            Err(Error::NonFinite { row: 1, col: 0 })
        ));
    }

    #[test]
    fn select_matches_ids_regardless_of_row_order() {
        let task = TaskDataset::new(vec![1, 2, 3, 4], vec![0, 0, 1, 1], 2).unwrap();
        // Expert 0 separates the classes, expert 1 interleaves them.
        let good = EmbeddingMatrix::new(0, vec![4, 3, 2, 1], 1, vec![10.1, 10.0, 0.1, 0.0]).unwrap();
        let bad = EmbeddingMatrix::new(1, vec![1, 2, 3, 4], 1, vec![0.0, 10.0, 0.1, 10.1]).unwrap();
        let report = knn_select(&task, &[bad.clone(), good.clone()]).unwrap();
        assert_eq!(report.chosen, 0);
        assert_eq!(report.scores[&0], 1.0);
        assert_eq!(report.scores[&1], 0.0);

        let single = knn_select(&task, &[bad.clone()]).unwrap();
        assert_eq!(single.chosen, 1);

        let short = EmbeddingMatrix::new(2, vec![1, 2, 3], 1, vec![0.0, 1.0, 2.0]).unwrap();
        assert!(matches!(knn_select(&task, &[good.clone(), short]), Err(Error::IdMismatch { expert: 2, .. })));
        let wrong = EmbeddingMatrix::new(3, vec![1, 2, 3, 9], 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(knn_select(&task, &[wrong]), Err(Error::IdMismatch { expert: 3, .. })));
        assert!(matches!(knn_select(&task, &[]), Err(Error::Empty(_))));
        assert!(knn_select(&task, &[good.clone(), good]).is_err());
    }
}
