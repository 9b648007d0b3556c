// SPDX-License-Identifier: Apache-2.0

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use taskroute::dataset_io::{
    embedding_file_name, read_embeddings, read_embeddings_dir, read_probs, read_task, write_embeddings,
    write_probs, write_task, EmbeddingMatrix, ProbKind, ProbMatrix, TaskDataset,
};
use taskroute::Error;

fn header(magic: &[u8; 4], a: u32, b: u32) -> Vec<u8> {
    let mut out = magic.to_vec();
    for v in [1u32, a, b] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

#[test]
fn small_embedding_round_trip_keeps_data_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let data: Vec<f32> = (0..12).map(|i| i as f32 * 0.25 - 1.0).collect();
    let m = EmbeddingMatrix::new(3, vec![10, 11, 12], 4, data.clone()).unwrap();
    let path = dir.path().join(embedding_file_name(3));
    write_embeddings(&m, &path).unwrap();
    let back = read_embeddings(&path).unwrap();
    assert_eq!(back, m);
    let raw = std::fs::read(&path).unwrap();
    let tail: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    assert_eq!(&raw[raw.len() - tail.len()..], tail.as_slice());
}

#[test]
fn large_embedding_round_trip_checksum() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (n, d) = (1000, 2048);
    let data: Vec<f32> = (0..n * d).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect();
    let m = EmbeddingMatrix::new(0, (0..n as u64).collect(), d, data).unwrap();
    let path = dir.path().join("expert_0.emb");
    write_embeddings(&m, &path).unwrap();
    let first = Sha256::digest(std::fs::read(&path).unwrap());
    let back = read_embeddings(&path).unwrap();
    write_embeddings(&back, &path).unwrap();
    assert_eq!(Sha256::digest(std::fs::read(&path).unwrap()), first);
    assert_eq!(Sha256::digest(back.to_bytes()), first);
}

#[test]
fn nan_is_reported_with_position() {
    let mut bytes = header(b"XPRT", 2, 3);
    bytes.extend(0u64.to_le_bytes());
    bytes.extend(1u64.to_le_bytes());
    for v in [0.0f32, 1.0, 2.0, 3.0, f32::NAN, 5.0] {
        bytes.extend(v.to_le_bytes());
    }
    let err = EmbeddingMatrix::from_bytes(&bytes, 0).unwrap_err();
    assert!(matches!(err, Error::NonFinite { row: 1, col: 1 }), "{err}");
}

#[test]
fn declared_shape_must_match_length() {
    let m = EmbeddingMatrix::new(0, vec![1, 2], 2, vec![0.0; 4]).unwrap();
    let mut bytes = m.to_bytes();
    bytes.pop();
    assert!(EmbeddingMatrix::from_bytes(&bytes, 0).is_err());
    bytes.extend([0, 0]);
    assert!(EmbeddingMatrix::from_bytes(&bytes, 0).is_err());
    // A header claiming a huge matrix must not allocate or overflow.
    let mut huge = header(b"XPRT", u32::MAX, u32::MAX);
    huge.extend([0u8; 8]);
    assert!(EmbeddingMatrix::from_bytes(&huge, 0).is_err());
    let mut wrong_magic = m.to_bytes();
    wrong_magic[0] = b'Y';
    assert!(matches!(EmbeddingMatrix::from_bytes(&wrong_magic, 0), Err(Error::Format(_))));
    let mut wrong_version = m.to_bytes();
    wrong_version[4] = 9;
    assert!(matches!(EmbeddingMatrix::from_bytes(&wrong_version, 0), Err(Error::Format(_))));
}

#[test]
fn task_examples() {
    let dir = tempfile::tempdir().unwrap();
    let t = TaskDataset::new(vec![7, 8, 9], vec![0, 1, 0], 2).unwrap();
    let path = dir.path().join("t.task");
    write_task(&t, &path).unwrap();
    let back = read_task(&path).unwrap();
    assert_eq!((back.len(), back.num_classes()), (3, 2));
    assert!(matches!(TaskDataset::new(vec![1], vec![5], 3), Err(Error::Validation(_))));
}

#[test]
fn categorical_rows_must_sum_to_one() {
    assert!(ProbMatrix::new(1, 2, ProbKind::Categorical, vec![0.3, 0.5]).is_err());
    assert!(ProbMatrix::new(1, 2, ProbKind::Multilabel, vec![0.3, 0.5]).is_ok());
    let mut bytes = ProbMatrix::new(1, 2, ProbKind::Multilabel, vec![0.3, 0.5]).unwrap().to_bytes();
    bytes[16] = 0;
    assert!(matches!(ProbMatrix::from_bytes(&bytes), Err(Error::Validation(_))));
}

#[test]
fn directory_reader_uses_file_name_ids() {
    let dir = tempfile::tempdir().unwrap();
    for e in [2u32, 0, 11] {
        let m = EmbeddingMatrix::new(e, vec![1, 2], 1, vec![e as f32, 0.0]).unwrap();
        write_embeddings(&m, dir.path().join(embedding_file_name(e))).unwrap();
    }
    std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
    let all = read_embeddings_dir(dir.path()).unwrap();
    let ids: Vec<u32> = all.iter().map(|m| m.expert_id).collect();
    assert_eq!(ids, vec![0, 2, 11]);
    assert_eq!(all[2].row(0), &[11.0]);
}

fn prob_rows(rows: usize, cols: usize, kind: ProbKind, seed: u64) -> ProbMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let raw: Vec<f64> = (0..cols).map(|_| rng.random::<f64>() + 1e-3).collect();
        let total: f64 = raw.iter().sum();
        match kind {
            ProbKind::Categorical => data.extend(raw.iter().map(|v| (v / total) as f32)),
            ProbKind::Multilabel => data.extend(raw.iter().map(|v| v.min(1.0) as f32)),
        }
    }
    ProbMatrix::new(rows, cols, kind, data).unwrap()
}

proptest! {
    #[test]
    fn embeddings_round_trip(n in 1usize..20, d in 1usize..10, expert in 0u32..100, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<u64> = (0..n as u64).map(|i| i * 31 + seed % 7).collect();
        let data: Vec<f32> = (0..n * d).map(|_| rng.random::<f32>() * 100.0 - 50.0).collect();
        let m = EmbeddingMatrix::new(expert, ids, d, data).unwrap();
        prop_assert_eq!(EmbeddingMatrix::from_bytes(&m.to_bytes(), expert).unwrap(), m);
    }

    #[test]
    fn tasks_round_trip(labels in prop::collection::vec(0u32..6, 1..40)) {
        let ids: Vec<u64> = (0..labels.len() as u64).rev().collect();
        let t = TaskDataset::new(ids, labels, 6).unwrap();
        prop_assert_eq!(TaskDataset::from_bytes(&t.to_bytes()).unwrap(), t);
    }

    #[test]
    fn probs_round_trip(rows in 1usize..15, cols in 1usize..12, multilabel in any::<bool>(), seed in any::<u64>()) {
        let kind = if multilabel { ProbKind::Multilabel } else { ProbKind::Categorical };
        let m = prob_rows(rows, cols, kind, seed);
        prop_assert_eq!(ProbMatrix::from_bytes(&m.to_bytes()).unwrap(), m);
    }

    #[test]
    fn truncated_files_are_rejected(cut in 1usize..40) {
        let m = EmbeddingMatrix::new(0, vec![1, 2, 3], 2, vec![0.5; 6]).unwrap();
        let bytes = m.to_bytes();
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(EmbeddingMatrix::from_bytes(&bytes[..keep], 0).is_err());
    }
}

#[test]
fn probs_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = prob_rows(4, 3, ProbKind::Categorical, 3);
    let path = dir.path().join("p.prob");
    write_probs(&m, &path).unwrap();
    assert_eq!(read_probs(&path).unwrap(), m);
}
