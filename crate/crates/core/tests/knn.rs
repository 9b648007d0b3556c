// SPDX-License-Identifier: Apache-2.0

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taskroute::dataset_io::{EmbeddingMatrix, TaskDataset};
use taskroute::knn::{knn_select, loocv_1nn_accuracy, pairwise_sq_dists};
use taskroute::Error;

/// Double-loop 1-NN with exact f64 differences; ties to the lowest index.
fn brute_force(data: &[f32], dim: usize, labels: &[u32]) -> (Vec<usize>, f64) {
    let n = labels.len();
    let mut nn = vec![0; n];
    for i in 0..n {
        let mut best = f64::INFINITY;
        for j in 0..n {
            if i == j {
                continue;
            }
            let mut d = 0.0f64;
            for k in 0..dim {
                let t = data[i * dim + k] as f64 - data[j * dim + k] as f64;
                d += t * t;
            }
            if d < best {
                best = d;
                nn[i] = j;
            }
        }
    }
    let correct = (0..n).filter(|&i| labels[i] == labels[nn[i]]).count();
    (nn, correct as f64 / n as f64)
}

fn random_instance(rng: &mut ChaCha8Rng, n: usize, dim: usize, classes: u32) -> (Vec<f32>, Vec<u32>) {
    let data = (0..n * dim).map(|_| rng.random::<f32>()).collect();
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    (data, labels)
}

#[test]
fn matches_double_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let (x, y) = random_instance(&mut rng, 50, 8, 3);
    let res = loocv_1nn_accuracy(&x, 8, &y).unwrap();
    let (nn, acc) = brute_force(&x, 8, &y);
    assert_eq!(res.nn_index, nn);
    assert_eq!(res.accuracy, acc);
}

#[test]
fn matches_oracle_with_duplicates_and_grid_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let n = rng.random_range(2..60);
        let dim = rng.random_range(1..6);
        // Small integer grid: many exact ties and duplicate rows.
        let x: Vec<f32> = (0..n * dim).map(|_| rng.random_range(0..3) as f32).collect();
        let y: Vec<u32> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let res = loocv_1nn_accuracy(&x, dim, &y).unwrap();
        assert_eq!((res.nn_index, res.accuracy), brute_force(&x, dim, &y));
    }
}

#[test]
fn pairwise_kernel_within_relative_tolerance() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (n, d) = (40, 16);
    let x: Vec<f32> = (0..n * d).map(|_| rng.random::<f32>() * 10.0 - 5.0).collect();
    let fast = pairwise_sq_dists(&x, d).unwrap();
    for i in 0..n {
        for j in 0..n {
            let mut naive = 0.0f64;
            for k in 0..d {
                let t = x[i * d + k] as f64 - x[j * d + k] as f64;
                naive += t * t;
            }
            let got = fast[i * n + j];
            assert!((got - naive).abs() <= 1e-4 * naive.max(1e-12), "({i},{j}) {got} vs {naive}");
        }
    }
}

#[test]
fn nan_and_shape_errors() {
    assert!(matches!(
        loocv_1nn_accuracy(&[0.0, f32::NAN, 1.0, 2.0], 2, &[0, 1]),
        Err(Error::NonFinite { row: 0, col: 1 })
    ));
    assert!(loocv_1nn_accuracy(&[0.0, 1.0, 2.0], 2, &[0]).is_err());
    assert!(loocv_1nn_accuracy(&[0.0], 1, &[0]).is_err());
}

fn task(labels: &[u32]) -> TaskDataset {
    TaskDataset::new((0..labels.len() as u64).collect(), labels.to_vec(), 2).unwrap()
}

#[test]
fn single_expert_is_chosen() {
    let t = task(&[0, 1, 0]);
    let m = EmbeddingMatrix::new(7, vec![0, 1, 2], 1, vec![5.0, 0.0, 1.0]).unwrap();
    let r = knn_select(&t, &[m]).unwrap();
    assert_eq!((r.chosen, r.tie_count), (7, 1));
}

#[test]
fn rows_are_aligned_by_example_id() {
    let t = task(&[0, 0, 1, 1]);
    // Expert 0 lists the rows in reverse order; the geometry is still separable.
    let e0 = EmbeddingMatrix::new(0, vec![3, 2, 1, 0], 1, vec![10.1, 10.0, 0.1, 0.0]).unwrap();
    let e1 = EmbeddingMatrix::new(1, vec![0, 1, 2, 3], 1, vec![0.0, 10.0, 0.1, 10.1]).unwrap();
    let r = knn_select(&t, &[e1.clone(), e0.clone()]).unwrap();
    assert_eq!(r.chosen, 0);
    assert_eq!(r.scores[&0], 1.0);
    assert_eq!(r.scores[&1], 0.0);
    let missing = EmbeddingMatrix::new(2, vec![0, 1, 2, 9], 1, vec![0.0; 4]).unwrap();
    assert!(matches!(knn_select(&t, &[e0, missing]), Err(Error::IdMismatch { expert: 2, .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn permuting_rows_keeps_accuracy(seed in any::<u64>(), n in 2usize..40, dim in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, y) = random_instance(&mut rng, n, dim, 3);
        let base = loocv_1nn_accuracy(&x, dim, &y).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let px: Vec<f32> = perm.iter().flat_map(|&i| x[i * dim..(i + 1) * dim].to_vec()).collect();
        let py: Vec<u32> = perm.iter().map(|&i| y[i]).collect();
        prop_assert_eq!(loocv_1nn_accuracy(&px, dim, &py).unwrap().accuracy, base.accuracy);
    }

    #[test]
    fn positive_scaling_keeps_neighbours(seed in any::<u64>(), exp in -6i32..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, y) = random_instance(&mut rng, 30, 4, 2);
        // Powers of two scale f32 values exactly.
        let alpha = 2f32.powi(exp);
        let sx: Vec<f32> = x.iter().map(|v| v * alpha).collect();
        let a = loocv_1nn_accuracy(&x, 4, &y).unwrap();
        let b = loocv_1nn_accuracy(&sx, 4, &y).unwrap();
        prop_assert_eq!(a.nn_index, b.nn_index);
    }

    #[test]
    fn expert_order_does_not_matter(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<u32> = (0..20).map(|i| i % 2).collect();
        let t = task(&labels);
        let mut experts: Vec<EmbeddingMatrix> = (0..5)
            .map(|e| {
                let data = (0..40).map(|_| rng.random_range(0..4) as f32).collect();
                EmbeddingMatrix::new(e, (0..20).collect(), 2, data).unwrap()
            })
            .collect();
        let a = knn_select(&t, &experts).unwrap();
        experts.shuffle(&mut rng);
        let b = knn_select(&t, &experts).unwrap();
        prop_assert_eq!(a, b);
    }
}
