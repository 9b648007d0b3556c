// SPDX-License-Identifier: Apache-2.0

//! Binary files exchanged with feature producers.
//!
//! All three formats are little-endian with a fixed header:
//!
//! | file       | header                                        | body                              |
//! |------------|-----------------------------------------------|-----------------------------------|
//! | embeddings | `XPRT`, u32 version, u32 N, u32 d             | N u64 ids, then N·d f32 row-major |
//! | task       | `TASK`, u32 version, u32 N, u32 C             | N × (u64 id, u32 label)           |
//! | probs      | `PROB`, u32 version, u32 N, u32 K, u8 kind    | N·K f32 row-major                 |
//!
//! Readers validate everything a writer would: a file produced by another
//! program is never trusted.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::{Error, ExampleId, ExpertId, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const EMBEDDING_MAGIC: [u8; 4] = *b"XPRT";
pub const TASK_MAGIC: [u8; 4] = *b"TASK";
pub const PROB_MAGIC: [u8; 4] = *b"PROB";
/// File extension used for embedding files inside an embeddings directory.
pub const EMBEDDING_EXT: &str = "emb";

/// Tolerance on row sums of categorical probability matrices.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Features of N examples produced by one expert.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub expert_id: ExpertId,
    example_ids: Vec<ExampleId>,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(expert_id: ExpertId, example_ids: Vec<ExampleId>, dim: usize, data: Vec<f32>) -> Result<Self> {
        let n = example_ids.len();
        if n == 0 || dim == 0 {
            return Err(Error::Validation(format!("embedding matrix must be non-empty, got {n}x{dim}")));
        }
        if data.len() != n * dim {
            return Err(Error::Dimension(format!(
                "{} values for a {n}x{dim} embedding matrix",
                data.len()
            )));
        }
        check_finite(&data, dim)?;
        check_unique(&example_ids)?;
        Ok(EmbeddingMatrix {
            expert_id,
            example_ids,
            dim,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.example_ids.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn example_ids(&self) -> &[ExampleId] {
        &self.example_ids
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.rows();
        let mut out = Vec::with_capacity(16 + 8 * n + 4 * self.data.len());
        put_header(&mut out, EMBEDDING_MAGIC, n, self.dim);
        for id in &self.example_ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
        put_f32s(&mut out, &self.data);
        out
    }

    /// Decodes an embedding file. The expert id is not stored in the file
    /// and is set to `expert_id`.
    pub fn from_bytes(bytes: &[u8], expert_id: ExpertId) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let (n, d) = r.header(EMBEDDING_MAGIC)?;
        let expected = checked_len(&[(n, 8), (n.checked_mul(d).ok_or_else(overflow)?, 4)], 16)?;
        if bytes.len() as u64 != expected {
            return Err(length_mismatch(bytes.len(), expected));
        }
        let ids = (0..n).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let data = r.f32s(n as usize * d as usize)?;
        EmbeddingMatrix::new(expert_id, ids, d as usize, data)
    }
}

/// A downstream task: example ids with class labels in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskDataset {
    example_ids: Vec<ExampleId>,
    class_labels: Vec<u32>,
    num_classes: u32,
}

impl TaskDataset {
    pub fn new(example_ids: Vec<ExampleId>, class_labels: Vec<u32>, num_classes: u32) -> Result<Self> {
        if example_ids.len() != class_labels.len() {
            return Err(Error::Dimension(format!(
                "{} example ids but {} labels",
                example_ids.len(),
                class_labels.len()
            )));
        }
        if example_ids.is_empty() {
            return Err(Error::Empty("task"));
        }
        if num_classes == 0 {
            return Err(Error::Validation("task declares zero classes".into()));
        }
        if let Some((i, &y)) = class_labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
            return Err(Error::Validation(format!(
                "label {y} of example {} (row {i}) is outside [0, {num_classes})",
                example_ids[i]
            )));
        }
        check_unique(&example_ids)?;
        Ok(TaskDataset {
            example_ids,
            class_labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.example_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.example_ids.is_empty()
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    pub fn example_ids(&self) -> &[ExampleId] {
        &self.example_ids
    }

    pub fn class_labels(&self) -> &[u32] {
        &self.class_labels
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 12 * self.len());
        put_header(&mut out, TASK_MAGIC, self.len(), self.num_classes as usize);
        for (id, y) in self.example_ids.iter().zip(&self.class_labels) {
            out.extend_from_slice(&id.to_le_bytes());
            out.extend_from_slice(&y.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let (n, c) = r.header(TASK_MAGIC)?;
        let expected = checked_len(&[(n, 12)], 16)?;
        if bytes.len() as u64 != expected {
            return Err(length_mismatch(bytes.len(), expected));
        }
        let mut ids = Vec::with_capacity(n as usize);
        let mut labels = Vec::with_capacity(n as usize);
        for _ in 0..n {
            ids.push(r.u64()?);
            labels.push(r.u32()?);
        }
        TaskDataset::new(ids, labels, c as u32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbKind {
    /// Each row is a distribution (softmax output).
    Categorical,
    /// Each entry is an independent Bernoulli probability (sigmoid output).
    Multilabel,
}

impl ProbKind {
    fn tag(self) -> u8 {
        match self {
            ProbKind::Categorical => 0,
            ProbKind::Multilabel => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(ProbKind::Categorical),
            1 => Ok(ProbKind::Multilabel),
            other => Err(Error::Format(format!("unknown probability kind {other}"))),
        }
    }
}

/// Row-major N×K matrix of probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix {
    rows: usize,
    cols: usize,
    kind: ProbKind,
    data: Vec<f32>,
}

impl ProbMatrix {
    pub fn new(rows: usize, cols: usize, kind: ProbKind, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Validation(format!(
                "probability matrix must be non-empty, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values for a {rows}x{cols} probability matrix",
                data.len()
            )));
        }
        check_finite(&data, cols)?;
        if let Some(i) = data.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Validation(format!(
                "probability {} at row {}, col {} is outside [0, 1]",
                data[i],
                i / cols,
                i % cols
            )));
        }
        if kind == ProbKind::Categorical {
            for (r, row) in data.chunks_exact(cols).enumerate() {
                let sum: f64 = row.iter().map(|&p| p as f64).sum();
                if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                    return Err(Error::Validation(format!(
                        "categorical row {r} sums to {sum}, not 1"
                    )));
                }
            }
        }
        Ok(ProbMatrix { rows, cols, kind, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn kind(&self) -> ProbKind {
        self.kind
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.cols + col]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(17 + 4 * self.data.len());
        put_header(&mut out, PROB_MAGIC, self.rows, self.cols);
        out.push(self.kind.tag());
        put_f32s(&mut out, &self.data);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let (n, k) = r.header(PROB_MAGIC)?;
        let kind = ProbKind::from_tag(r.u8()?)?;
        let expected = checked_len(&[(n.checked_mul(k).ok_or_else(overflow)?, 4)], 17)?;
        if bytes.len() as u64 != expected {
            return Err(length_mismatch(bytes.len(), expected));
        }
        let data = r.f32s(n as usize * k as usize)?;
        ProbMatrix::new(n as usize, k as usize, kind, data)
    }
}

pub fn write_embeddings(m: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &m.to_bytes())
}

/// Reads an embedding file. The expert id is taken from the trailing digits
/// of the file stem (`expert_7.emb` is expert 7), or 0 if there are none.
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let expert = expert_id_from_path(path).unwrap_or(0);
    EmbeddingMatrix::from_bytes(&read_file(path)?, expert).map_err(|e| in_file(path, e))
}

/// Conventional file name for an expert's embeddings.
pub fn embedding_file_name(expert: ExpertId) -> String {
    format!("expert_{expert}.{EMBEDDING_EXT}")
}

/// Trailing decimal digits of a file stem, e.g. 12 for `expert_12.emb`.
pub fn expert_id_from_path(path: &Path) -> Option<ExpertId> {
    let stem = path.file_stem()?.to_str()?;
    let digits = stem.len() - stem.trim_end_matches(|c: char| c.is_ascii_digit()).len();
    stem[stem.len() - digits..].parse().ok()
}

/// Reads every `*.emb` file in a directory, sorted by expert id. Each stem
/// must end in the expert id and ids must be distinct.
pub fn read_embeddings_dir(dir: impl AsRef<Path>) -> Result<Vec<EmbeddingMatrix>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|ext| ext == EMBEDDING_EXT))
        .collect();
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    let mut seen = HashSet::new();
    for path in paths {
        let expert = expert_id_from_path(&path).ok_or_else(|| {
            Error::Validation(format!("{}: file name does not end in an expert id", path.display()))
        })?;
        if !seen.insert(expert) {
            return Err(Error::Validation(format!(
                "{}: expert {expert} appears twice",
                path.display()
            )));
        }
        out.push(read_embeddings(&path)?);
    }
    if out.is_empty() {
        return Err(Error::Validation(format!(
            "{}: no .{EMBEDDING_EXT} files",
            dir.display()
        )));
    }
    out.sort_by_key(|m| m.expert_id);
    Ok(out)
}

pub fn write_task(t: &TaskDataset, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &t.to_bytes())
}

pub fn read_task(path: impl AsRef<Path>) -> Result<TaskDataset> {
    let path = path.as_ref();
    TaskDataset::from_bytes(&read_file(path)?).map_err(|e| in_file(path, e))
}

pub fn write_probs(p: &ProbMatrix, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &p.to_bytes())
}

pub fn read_probs(path: impl AsRef<Path>) -> Result<ProbMatrix> {
    let path = path.as_ref();
    ProbMatrix::from_bytes(&read_file(path)?).map_err(|e| in_file(path, e))
}

fn in_file(path: &Path, e: Error) -> Error {
    match e {
        Error::Validation(msg) => Error::Validation(format!("{}: {msg}", path.display())),
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn check_finite(data: &[f32], cols: usize) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite {
            row: i / cols,
            col: i % cols,
        }),
        None => Ok(()),
    }
}

fn check_unique(ids: &[ExampleId]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    match ids.iter().find(|id| !seen.insert(**id)) {
        Some(id) => Err(Error::Validation(format!("duplicate example id {id}"))),
        None => Ok(()),
    }
}

fn overflow() -> Error {
    Error::Format("declared dimensions overflow".into())
}

fn length_mismatch(actual: usize, expected: u64) -> Error {
    Error::Format(format!(
        "file is {actual} bytes but its header declares {expected}"
    ))
}

/// Header size plus `count * width` for each section, in u64 with overflow checks.
fn checked_len(sections: &[(u64, u64)], header: u64) -> Result<u64> {
    sections.iter().try_fold(header, |acc, &(count, width)| {
        count
            .checked_mul(width)
            .and_then(|b| acc.checked_add(b))
            .ok_or_else(overflow)
    })
}

fn put_header(out: &mut Vec<u8>, magic: [u8; 4], n: usize, d: usize) {
    out.extend_from_slice(&magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(chunk.try_into().expect("slice of length N"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        self.take().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64> {
        self.take().map(u64::from_le_bytes)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        (0..n).map(|_| self.take().map(f32::from_le_bytes)).collect()
    }

    /// Checks magic and version, returns the two declared dimensions.
    fn header(&mut self, magic: [u8; 4]) -> Result<(u64, u64)> {
        let found = self.take::<4>()?;
        if found != magic {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&found),
                String::from_utf8_lossy(&magic)
            )));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        Ok((self.u32()? as u64, self.u32()? as u64))
    }
}
