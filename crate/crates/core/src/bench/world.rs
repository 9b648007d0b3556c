// SPDX-License-Identifier: Apache-2.0

//! Synthetic upstream/downstream worlds with a known best expert.
//!
//! The raw input space is split into one block of coordinates per upstream
//! domain. An upstream example of domain `d` carries the domain's center
//! plus a leaf offset in block `d` and unit Gaussian clutter everywhere
//! else. A semantic expert for domain `d` projects block `d` only, so it
//! sees the structure of its own domain and pure clutter otherwise.
//!
//! A downstream task draws its classes inside one domain block. With
//! probability `mismatch_rate` the task "looks like" another domain: that
//! domain's center is switched on in its own block while the class signal
//! stays in the true block. Label matching and expert prediction only see
//! the look; the 1-NN proxy sees the class structure.
//!
//! In `random_slices` mode the same tasks are routed to experts trained on
//! uniformly random subsets of the upstream data: each expert is the top
//! principal subspace of its subset, so experts barely differ.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset_io::{EmbeddingMatrix, ProbKind, ProbMatrix, TaskDataset};
use crate::hierarchy::{
    balanced_resample, build_slices, select_domains, CountBasis, DomainMode, ExpertSlice, LabelHierarchy,
    MultiLabelExample,
};
use crate::selectors::{empirical_prior, LabelDistribution};
use crate::toy_models::{train_logistic, LinearExtractor, LogisticModel, Matrix, Nonlinearity, TrainConfig};
use crate::{Error, ExampleId, ExpertId, LabelId, Result};

const STRUCTURE_STREAM: u64 = 0;
const TASK_STREAM: u64 = 1;
const MODE_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorldMode {
    /// One expert per upstream domain.
    Semantic,
    /// Experts fitted to uniformly random upstream subsets.
    RandomSlices,
}

impl WorldMode {
    pub fn as_str(self) -> &'static str {
        match self {
            WorldMode::Semantic => "semantic",
            WorldMode::RandomSlices => "random_slices",
        }
    }
}

impl fmt::Display for WorldMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WorldMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "semantic" => Ok(WorldMode::Semantic),
            "random_slices" => Ok(WorldMode::RandomSlices),
            other => Err(Error::InvalidArgument(format!("unknown world mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub seed: u64,
    /// Number of experts (and of upstream domains).
    pub experts: usize,
    pub d_raw: usize,
    pub d_embed: usize,
    /// Classes per downstream task.
    pub classes: usize,
    pub tasks: usize,
    /// Standard deviation of the within-class noise of task inputs.
    pub noise: f64,
    pub mode: WorldMode,
    /// Downstream training examples per task.
    pub n_train: usize,
    pub n_test: usize,
    pub leaves_per_expert: usize,
    pub upstream_per_leaf: usize,
    /// Probability that a task looks like a domain other than its own.
    pub mismatch_rate: f64,
    pub center_norm: f64,
    pub class_sep: f64,
    pub upstream_noise: f64,
    /// Probability that an upstream example also carries a leaf of another domain.
    pub co_label_rate: f64,
    /// Trainer for the expert prediction network and the upstream baseline.
    pub upstream_train: TrainConfig,
    /// Trainer for the downstream fine-tuning proxy.
    pub oracle_train: TrainConfig,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            seed: 0,
            experts: 16,
            d_raw: 64,
            d_embed: 8,
            classes: 5,
            tasks: 20,
            noise: MODERATE_NOISE,
            mode: WorldMode::Semantic,
            n_train: 1000,
            n_test: 200,
            leaves_per_expert: 4,
            upstream_per_leaf: 20,
            mismatch_rate: 0.3,
            center_norm: 4.0,
            class_sep: 1.0,
            upstream_noise: 0.5,
            co_label_rate: 0.1,
            upstream_train: TrainConfig {
                lr: 0.2,
                steps: 200,
                ..TrainConfig::default()
            },
            oracle_train: TrainConfig {
                lr: 0.5,
                steps: 150,
                ..TrainConfig::default()
            },
        }
    }
}

/// Within-class noise used by the reference benchmark.
pub const MODERATE_NOISE: f64 = 0.5;

impl WorldConfig {
    /// The reference benchmark world: seed 42, 16 experts, 50 tasks of
    /// 200 training examples.
    pub fn acceptance(mode: WorldMode) -> Self {
        WorldConfig {
            seed: 42,
            tasks: 50,
            n_train: 200,
            mode,
            ..WorldConfig::default()
        }
    }

    /// Width of each domain's coordinate block.
    pub fn block_width(&self) -> usize {
        self.d_raw / self.experts.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.experts < 2 {
            return bad(format!("need at least 2 experts, got {}", self.experts));
        }
        if self.block_width() == 0 {
            return bad(format!(
                "{} experts need {} distinct subspaces but d_raw is {}",
                self.experts, self.experts, self.d_raw
            ));
        }
        if self.d_embed == 0 || self.d_embed > self.d_raw {
            return bad(format!("d_embed must be in [1, {}], got {}", self.d_raw, self.d_embed));
        }
        if self.classes < 2 || self.n_train < 2 * self.classes || self.n_test == 0 {
            return bad(format!(
                "need >= 2 classes, >= 2 training examples per class and a test split; got {} classes, {} train, {} test",
                self.classes, self.n_train, self.n_test
            ));
        }
        if self.tasks == 0 || self.leaves_per_expert == 0 || self.upstream_per_leaf == 0 {
            return bad("tasks, leaves_per_expert and upstream_per_leaf must be positive".into());
        }
        for (name, p) in [("mismatch_rate", self.mismatch_rate), ("co_label_rate", self.co_label_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be a probability, got {p}"));
            }
        }
        for (name, v) in [
            ("noise", self.noise),
            ("center_norm", self.center_norm),
            ("class_sep", self.class_sep),
            ("upstream_noise", self.upstream_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskInstance {
    pub index: usize,
    pub train: TaskDataset,
    /// Raw inputs of the training split, one row per `train` example.
    pub train_inputs: Matrix,
    pub test_inputs: Matrix,
    pub test_labels: Vec<u32>,
    /// Expert whose domain holds the class signal.
    pub true_expert: ExpertId,
    /// Expert whose domain the task resembles (equals `true_expert` unless mismatched).
    pub appearance_expert: ExpertId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub config: WorldConfig,
    pub experts: Vec<LinearExtractor>,
    pub slice_priors: Vec<LabelDistribution>,
    pub tasks: Vec<TaskInstance>,
    pub hierarchy: LabelHierarchy,
    pub slices: Vec<ExpertSlice>,
    /// Expert prediction network over raw inputs.
    pub epn: LogisticModel,
    /// Generic upstream classifier over leaf labels.
    pub baseline: LogisticModel,
    /// Label id of each baseline output (leaf), by output index.
    leaf_labels: Vec<LabelId>,
    /// Leaf output indices under each domain label.
    domain_leaves: BTreeMap<LabelId, Vec<usize>>,
}

struct Domain {
    center: Vec<f64>,
    leaf_offsets: Vec<Vec<f64>>,
    projection: Matrix,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Unit clutter on every coordinate, then the given blocks overwritten.
fn raw_input(rng: &mut impl Rng, d_raw: usize, width: usize, blocks: &[(usize, Vec<f64>)]) -> Vec<f64> {
    let mut x = gaussian(rng, d_raw, 1.0);
    for (block, values) in blocks {
        x[block * width..(block + 1) * width].copy_from_slice(values);
    }
    x
}

fn add_noise(rng: &mut impl Rng, base: &[f64], sd: f64) -> Vec<f64> {
    base.iter().map(|&v| v + sd * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Rows of the top-`k` principal directions of the selected rows of `x`.
fn principal_directions(x: &Matrix, rows: &[usize], k: usize) -> Matrix {
    let d = x.cols();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for &r in rows {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v / n;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for &r in rows {
        let centered: Vec<f64> = x.row(r).iter().zip(&mean).map(|(v, m)| v - m).collect();
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += centered[i] * centered[j] / n;
            }
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    Matrix::from_fn(k, d, |r, c| eig.eigenvectors[(c, order[r])])
}

impl SyntheticWorld {
    pub fn num_experts(&self) -> usize {
        self.experts.len()
    }

    /// Number of upstream labels (domains and leaves).
    pub fn num_labels(&self) -> usize {
        self.hierarchy.len()
    }

    /// Seed of the per-task random streams.
    pub fn task_seed(&self, task: usize) -> u64 {
        self.config.seed ^ task as u64
    }

    /// Every expert's embedding of the task's training inputs.
    pub fn expert_embeddings(&self, task: &TaskInstance) -> Result<Vec<EmbeddingMatrix>> {
        self.experts
            .iter()
            .map(|e| {
                let z = e.extract_batch(&task.train_inputs)?;
                EmbeddingMatrix::new(e.expert_id, task.train.example_ids().to_vec(), z.cols(), z.to_f32())
            })
            .collect()
    }

    /// Expert prediction network output on the task's training inputs.
    pub fn epn_probs(&self, task: &TaskInstance) -> Result<ProbMatrix> {
        self.epn.predict_proba(&task.train_inputs)
    }

    /// Multilabel upstream label probabilities: the baseline's leaf
    /// probabilities, with each domain label receiving the mass of its leaves.
    pub fn baseline_probs(&self, x: &Matrix) -> Result<ProbMatrix> {
        let leaf = self.baseline.probabilities(x)?;
        let cols = self.num_labels();
        let mut data = vec![0.0f32; x.rows() * cols];
        for i in 0..x.rows() {
            let row = &mut data[i * cols..(i + 1) * cols];
            for (k, &label) in self.leaf_labels.iter().enumerate() {
                row[label as usize] = leaf.get(i, k) as f32;
            }
            for (&domain, leaves) in &self.domain_leaves {
                let mass: f64 = leaves.iter().map(|&k| leaf.get(i, k)).sum();
                row[domain as usize] = mass.min(1.0) as f32;
            }
        }
        ProbMatrix::new(x.rows(), cols, ProbKind::Multilabel, data)
    }

    /// Deterministic little-endian dump of every generated quantity.
    pub fn to_bytes(&self) -> Vec<u8> {
        fn put(out: &mut Vec<u8>, values: &[f64]) {
            out.extend_from_slice(&(values.len() as u64).to_le_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut out = Vec::new();
        out.extend_from_slice(self.hierarchy.to_string().as_bytes());
        for s in &self.slices {
            let ids: Vec<f64> = s.member_ids.iter().map(|&m| m as f64).collect();
            put(&mut out, &ids);
        }
        for e in &self.experts {
            put(&mut out, e.weight().data());
            put(&mut out, e.bias());
        }
        for p in &self.slice_priors {
            put(&mut out, p.marginals());
        }
        for m in [&self.epn, &self.baseline] {
            put(&mut out, m.weight.data());
            put(&mut out, &m.bias);
        }
        for t in &self.tasks {
            out.extend_from_slice(&t.train.to_bytes());
            put(&mut out, t.train_inputs.data());
            put(&mut out, t.test_inputs.data());
            out.extend(t.test_labels.iter().flat_map(|y| y.to_le_bytes()));
            out.extend_from_slice(&t.true_expert.to_le_bytes());
            out.extend_from_slice(&t.appearance_expert.to_le_bytes());
        }
        out
    }
}

/// Builds a world. Deterministic in the configuration; the tasks and the
/// upstream corpus do not depend on the mode.
pub fn generate_world(cfg: &WorldConfig) -> Result<SyntheticWorld> {
    cfg.validate()?;
    let e_count = cfg.experts;
    let width = cfg.block_width();
    let leaves = cfg.leaves_per_expert;
    let mut rng = rng_for(cfg.seed, STRUCTURE_STREAM);

    let domains: Vec<Domain> = (0..e_count)
        .map(|_| {
            let dir = gaussian(&mut rng, width, 1.0);
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            Ok(Domain {
                center: dir.iter().map(|v| v * cfg.center_norm / norm).collect(),
                leaf_offsets: (0..leaves).map(|_| gaussian(&mut rng, width, 1.0)).collect(),
                projection: Matrix::new(cfg.d_embed, width, gaussian(&mut rng, cfg.d_embed * width, 1.0 / (width as f64).sqrt()))?,
            })
        })
        .collect::<Result<_>>()?;

    // Labels: domain d has id d; leaf j of domain d has id E + d*leaves + j.
    let leaf_label = |d: usize, j: usize| (e_count + d * leaves + j) as LabelId;
    let mut labels: Vec<(LabelId, String)> = (0..e_count).map(|d| (d as LabelId, format!("domain_{d}"))).collect();
    let mut edges = Vec::new();
    for d in 0..e_count {
        for j in 0..leaves {
            labels.push((leaf_label(d, j), format!("leaf_{d}_{j}")));
            edges.push((leaf_label(d, j), d as LabelId));
        }
    }

    let mut upstream_rows = Vec::new();
    let mut upstream_leaf = Vec::new();
    let mut examples = Vec::new();
    for d in 0..e_count {
        for j in 0..leaves {
            let mean: Vec<f64> = domains[d].center.iter().zip(&domains[d].leaf_offsets[j]).map(|(c, o)| c + o).collect();
            for _ in 0..cfg.upstream_per_leaf {
                let block = add_noise(&mut rng, &mean, cfg.upstream_noise);
                upstream_rows.push(raw_input(&mut rng, cfg.d_raw, width, &[(d, block)]));
                let mut tags = vec![leaf_label(d, j)];
                if rng.random::<f64>() < cfg.co_label_rate {
                    let other = (d + 1 + rng.random_range(0..e_count - 1)) % e_count;
                    tags.push(leaf_label(other, rng.random_range(0..leaves)));
                }
                examples.push(MultiLabelExample::new(examples.len() as ExampleId, tags));
                upstream_leaf.push((d * leaves + j) as u32);
            }
        }
    }
    let upstream = Matrix::new(upstream_rows.len(), cfg.d_raw, upstream_rows.concat())?;

    let mut hierarchy = LabelHierarchy::new(labels, edges, BTreeMap::new())?;
    hierarchy.set_counts(hierarchy.counts_from_examples(&examples, CountBasis::Closed)?)?;
    let domain_labels = select_domains(&hierarchy, DomainMode::TopN(e_count));
    let sorted: BTreeSet<LabelId> = domain_labels.iter().copied().collect();
    if sorted != (0..e_count as LabelId).collect() {
        return Err(Error::Validation(format!(
            "domain selection picked {domain_labels:?} instead of the {e_count} domain labels"
        )));
    }
    // Expert i is rooted at domain_labels[i].
    let mut expert_of_domain = vec![0 as ExpertId; e_count];
    for (i, &d) in domain_labels.iter().enumerate() {
        expert_of_domain[d as usize] = i as ExpertId;
    }

    let (semantic_slices, _) = build_slices(&examples, &domain_labels, &hierarchy)?;
    if semantic_slices.len() != e_count {
        return Err(Error::Validation("a domain slice came out empty".into()));
    }
    let closed: BTreeMap<ExampleId, BTreeSet<LabelId>> = examples
        .iter()
        .map(|ex| Ok((ex.example_id, hierarchy.close_labels(ex.labels.iter().copied())?)))
        .collect::<Result<_>>()?;

    let mut mode_rng = rng_for(cfg.seed, MODE_STREAM);
    let (slices, experts) = match cfg.mode {
        WorldMode::Semantic => {
            let experts = domain_labels
                .iter()
                .enumerate()
                .map(|(i, &d)| {
                    let d = d as usize;
                    let proj = &domains[d].projection;
                    let weight = Matrix::from_fn(cfg.d_embed, cfg.d_raw, |r, c| {
                        if c / width == d && c < e_count * width {
                            proj.get(r, c % width)
                        } else {
                            0.0
                        }
                    });
                    LinearExtractor::new(i as ExpertId, weight, vec![0.0; cfg.d_embed], Nonlinearity::None)
                })
                .collect::<Result<Vec<_>>>()?;
            (semantic_slices, experts)
        }
        WorldMode::RandomSlices => {
            let total = examples.len();
            let mut slices = Vec::with_capacity(e_count);
            let mut experts = Vec::with_capacity(e_count);
            for s in &semantic_slices {
                let rows = sample(&mut mode_rng, total, s.member_ids.len()).into_vec();
                let weight = principal_directions(&upstream, &rows, cfg.d_embed);
                experts.push(LinearExtractor::new(s.expert_id, weight, vec![0.0; cfg.d_embed], Nonlinearity::None)?);
                slices.push(ExpertSlice {
                    expert_id: s.expert_id,
                    root_label: s.root_label,
                    member_ids: rows.into_iter().map(|r| r as ExampleId).collect(),
                });
            }
            (slices, experts)
        }
    };

    // Priors are stored as f32 on disk; keep the in-memory copy identical.
    let slice_priors = slices
        .iter()
        .map(|s| {
            let p = empirical_prior(s, &closed, hierarchy.len())?;
            LabelDistribution::new(p.marginals().iter().map(|&m| m as f32 as f64).collect())
        })
        .collect::<Result<Vec<_>>>()?;

    let pairs = balanced_resample(&slices, examples.len(), mode_rng.random())?;
    let epn_rows: Vec<usize> = pairs.iter().map(|&(ex, _)| ex as usize).collect();
    let epn_labels: Vec<u32> = pairs.iter().map(|&(_, e)| e).collect();
    let epn = train_logistic(
        &upstream.select_rows(&epn_rows),
        &epn_labels,
        &TrainConfig {
            num_classes: Some(e_count),
            ..cfg.upstream_train
        },
    )?;
    let baseline = train_logistic(
        &upstream,
        &upstream_leaf,
        &TrainConfig {
            num_classes: Some(e_count * leaves),
            ..cfg.upstream_train
        },
    )?;

    let tasks = (0..cfg.tasks)
        .into_par_iter()
        .map(|t| generate_task(cfg, t, &domains, &expert_of_domain))
        .collect::<Result<Vec<_>>>()?;

    let leaf_labels = (0..e_count).flat_map(|d| (0..leaves).map(move |j| (d, j))).map(|(d, j)| leaf_label(d, j)).collect();
    let domain_leaves = (0..e_count)
        .map(|d| (d as LabelId, (d * leaves..(d + 1) * leaves).collect()))
        .collect();

    Ok(SyntheticWorld {
        config: cfg.clone(),
        experts,
        slice_priors,
        tasks,
        hierarchy,
        slices,
        epn,
        baseline,
        leaf_labels,
        domain_leaves,
    })
}

fn generate_task(cfg: &WorldConfig, t: usize, domains: &[Domain], expert_of_domain: &[ExpertId]) -> Result<TaskInstance> {
    let e_count = cfg.experts;
    let width = cfg.block_width();
    let mut rng = rng_for(cfg.seed ^ t as u64, TASK_STREAM);
    let home = rng.random_range(0..e_count);
    let look = if rng.random::<f64>() < cfg.mismatch_rate {
        (home + 1 + rng.random_range(0..e_count - 1)) % e_count
    } else {
        home
    };
    let offsets: Vec<Vec<f64>> = (0..cfg.classes).map(|_| gaussian(&mut rng, width, cfg.class_sep)).collect();

    let mut draw = |n: usize| -> Result<(Matrix, Vec<u32>)> {
        let mut rows = Vec::with_capacity(n * cfg.d_raw);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let y = i % cfg.classes;
            let signal: Vec<f64> = if look == home {
                domains[home].center.iter().zip(&offsets[y]).map(|(c, o)| c + o).collect()
            } else {
                offsets[y].clone()
            };
            let mut blocks = vec![(home, add_noise(&mut rng, &signal, cfg.noise))];
            if look != home {
                blocks.push((look, add_noise(&mut rng, &domains[look].center, cfg.noise)));
            }
            rows.extend(raw_input(&mut rng, cfg.d_raw, width, &blocks));
            labels.push(y as u32);
        }
        Ok((Matrix::new(n, cfg.d_raw, rows)?, labels))
    };
    let (train_inputs, train_labels) = draw(cfg.n_train)?;
    let (test_inputs, test_labels) = draw(cfg.n_test)?;
    let ids = (0..cfg.n_train as u64).map(|i| ((t as u64) << 32) | i).collect();
    Ok(TaskInstance {
        index: t,
        train: TaskDataset::new(ids, train_labels, cfg.classes as u32)?,
        train_inputs,
        test_inputs,
        test_labels,
        true_expert: expert_of_domain[home],
        appearance_expert: expert_of_domain[look],
    })
}
