// SPDX-License-Identifier: Apache-2.0

//! Expert selectors and the report they all produce.
//!
//! Every selector reduces to a score per expert and an optimum under a
//! direction. Ties always go to the lowest expert id.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset_io::{EmbeddingMatrix, ProbKind, ProbMatrix, TaskDataset};
use crate::hierarchy::ExpertSlice;
use crate::{knn, Error, ExampleId, ExpertId, LabelId, Result};

/// Floor applied to expert-prediction probabilities before taking logs.
pub const EPN_EPS: f64 = 1e-12;
/// Clamp applied to Bernoulli parameters in the label-matching divergence.
pub const KL_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Knn,
    Epn,
    Kl,
    Random,
    /// Brute-force fine-tuning of every expert; only the benchmark uses it.
    Oracle,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Knn => "knn",
            Method::Epn => "epn",
            Method::Kl => "kl",
            Method::Random => "random",
            Method::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "knn" => Method::Knn,
            "epn" => Method::Epn,
            "kl" => Method::Kl,
            "random" => Method::Random,
            "oracle" => Method::Oracle,
            other => return Err(Error::InvalidArgument(format!("unknown selection method `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionReport {
    pub method: Method,
    pub scores: BTreeMap<ExpertId, f64>,
    pub chosen: ExpertId,
    /// Number of experts attaining the optimum score.
    pub tie_count: usize,
    pub direction: Direction,
}

impl SelectionReport {
    /// Picks the optimum of `scores` under `direction`; ties resolve to the
    /// lowest expert id.
    pub fn from_scores(
        method: Method,
        direction: Direction,
        scores: impl IntoIterator<Item = (ExpertId, f64)>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (expert, score) in scores {
            if score.is_nan() {
                return Err(Error::Validation(format!("score of expert {expert} is NaN")));
            }
            if map.insert(expert, score).is_some() {
                return Err(Error::Validation(format!("expert {expert} scored twice")));
            }
        }
        let better = |a: f64, b: f64| match direction {
            Direction::Maximize => a > b,
            Direction::Minimize => a < b,
        };
        let mut iter = map.iter();
        let (&first, &first_score) = iter.next().ok_or(Error::Empty("score list"))?;
        let (mut chosen, mut best, mut tie_count) = (first, first_score, 1);
        for (&expert, &score) in iter {
            if better(score, best) {
                (chosen, best, tie_count) = (expert, score, 1);
            } else if score == best {
                tie_count += 1;
            }
        }
        Ok(SelectionReport {
            method,
            scores: map,
            chosen,
            tie_count,
            direction,
        })
    }

    /// `method=<m> chosen=<id> tie_count=<t>` followed by one
    /// `score <id> <value>` line per expert, values to 9 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "method={} chosen={} tie_count={}\n",
            self.method, self.chosen, self.tie_count
        );
        for (expert, score) in &self.scores {
            let _ = writeln!(out, "score {expert} {score:.8e}");
        }
        out
    }
}

/// Independent Bernoulli marginals over upstream classes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution {
    marginals: Vec<f64>,
}

impl LabelDistribution {
    pub fn new(marginals: Vec<f64>) -> Result<Self> {
        if let Some((c, p)) = marginals.iter().enumerate().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Validation(format!("marginal {p} of class {c} is outside [0, 1]")));
        }
        Ok(LabelDistribution { marginals })
    }

    pub fn marginals(&self) -> &[f64] {
        &self.marginals
    }

    pub fn len(&self) -> usize {
        self.marginals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marginals.is_empty()
    }
}

/// Aggregates per-example expert probabilities with the mean log
/// probability of each expert and returns the argmax.
pub fn epn_select(probs: &ProbMatrix) -> Result<SelectionReport> {
    if probs.kind() != ProbKind::Categorical {
        return Err(Error::InvalidArgument(
            "expert prediction needs a categorical probability matrix".into(),
        ));
    }
    let n = probs.rows() as f64;
    let scores = (0..probs.cols()).map(|e| {
        let total: f64 = (0..probs.rows())
            .map(|i| (probs.get(i, e) as f64).max(EPN_EPS).ln())
            .sum();
        (e as ExpertId, total / n)
    });
    SelectionReport::from_scores(Method::Epn, Direction::Maximize, scores)
}

/// Task label distribution: column means of the baseline's multilabel
/// predictions on the task inputs.
pub fn estimate_task_distribution(baseline_probs: &ProbMatrix) -> Result<LabelDistribution> {
    if baseline_probs.kind() != ProbKind::Multilabel {
        return Err(Error::InvalidArgument(
            "label matching needs a multilabel probability matrix".into(),
        ));
    }
    let mut sums = vec![0.0f64; baseline_probs.cols()];
    for i in 0..baseline_probs.rows() {
        for (s, &p) in sums.iter_mut().zip(baseline_probs.row(i)) {
            *s += p as f64;
        }
    }
    let n = baseline_probs.rows() as f64;
    LabelDistribution::new(sums.into_iter().map(|s| (s / n).min(1.0)).collect())
}

/// Fraction of a slice's members whose closed label set contains each class.
/// Class `c` is label id `c`; every closed label must be below `num_classes`.
pub fn empirical_prior(
    slice: &ExpertSlice,
    closed_labels: &BTreeMap<ExampleId, BTreeSet<LabelId>>,
    num_classes: usize,
) -> Result<LabelDistribution> {
    if slice.member_ids.is_empty() {
        return Err(Error::Empty("expert slice"));
    }
    let mut counts = vec![0usize; num_classes];
    for id in &slice.member_ids {
        let labels = closed_labels.get(id).ok_or_else(|| {
            Error::Validation(format!("slice member {id} has no label record"))
        })?;
        for &label in labels {
            let slot = counts.get_mut(label as usize).ok_or_else(|| {
                Error::Validation(format!("label {label} is outside [0, {num_classes})"))
            })?;
            *slot += 1;
        }
    }
    let n = slice.member_ids.len() as f64;
    LabelDistribution::new(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// Sum over classes of the KL divergence between independent Bernoullis,
/// with both parameters clamped into `[eps, 1 - eps]`.
pub fn bernoulli_kl_eps(p: &LabelDistribution, q: &LabelDistribution, eps: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension(format!(
            "distributions over {} and {} classes",
            p.len(),
            q.len()
        )));
    }
    let clamp = |x: f64| x.clamp(eps, 1.0 - eps);
    let kl = p
        .marginals
        .iter()
        .zip(&q.marginals)
        .map(|(&pc, &qc)| {
            let (pc, qc) = (clamp(pc), clamp(qc));
            pc * (pc / qc).ln() + (1.0 - pc) * ((1.0 - pc) / (1.0 - qc)).ln()
        })
        .sum::<f64>();
    Ok(kl.max(0.0))
}

pub fn bernoulli_kl(p: &LabelDistribution, q: &LabelDistribution) -> Result<f64> {
    bernoulli_kl_eps(p, q, KL_EPS)
}

/// Expert `i` is `priors[i]`; picks the prior closest to `q`.
pub fn kl_select(priors: &[LabelDistribution], q: &LabelDistribution) -> Result<SelectionReport> {
    if priors.is_empty() {
        return Err(Error::Empty("expert prior list"));
    }
    let scores = priors
        .iter()
        .enumerate()
        .map(|(e, p)| Ok((e as ExpertId, bernoulli_kl(p, q)?)))
        .collect::<Result<Vec<_>>>()?;
    SelectionReport::from_scores(Method::Kl, Direction::Minimize, scores)
}

/// Uniform draw over `[0, num_experts)`. The report has no scores.
pub fn random_select(num_experts: usize, seed: u64) -> Result<SelectionReport> {
    if num_experts == 0 {
        return Err(Error::Empty("expert set"));
    }
    let chosen = ChaCha8Rng::seed_from_u64(seed).random_range(0..num_experts) as ExpertId;
    Ok(SelectionReport {
        method: Method::Random,
        scores: BTreeMap::new(),
        chosen,
        tie_count: 1,
        direction: Direction::Maximize,
    })
}

/// Inputs for one selection, one variant per method.
#[derive(Debug, Clone, Copy)]
pub enum SelectorInput<'a> {
    Knn {
        task: &'a TaskDataset,
        embeddings: &'a [EmbeddingMatrix],
    },
    Epn {
        probs: &'a ProbMatrix,
    },
    Kl {
        priors: &'a [LabelDistribution],
        task_probs: &'a ProbMatrix,
    },
    Random {
        num_experts: usize,
        seed: u64,
    },
}

impl SelectorInput<'_> {
    pub fn method(&self) -> Method {
        match self {
            SelectorInput::Knn { .. } => Method::Knn,
            SelectorInput::Epn { .. } => Method::Epn,
            SelectorInput::Kl { .. } => Method::Kl,
            SelectorInput::Random { .. } => Method::Random,
        }
    }
}

/// Runs the selector matching the input variant.
pub fn select(input: SelectorInput<'_>) -> Result<SelectionReport> {
    match input {
        SelectorInput::Knn { task, embeddings } => knn::knn_select(task, embeddings),
        SelectorInput::Epn { probs } => epn_select(probs),
        SelectorInput::Kl { priors, task_probs } => kl_select(priors, &estimate_task_distribution(task_probs)?),
        SelectorInput::Random { num_experts, seed } => random_select(num_experts, seed),
    }
}

/// Expert priors stored one per row of a multilabel probability matrix.
pub fn priors_to_probs(priors: &[LabelDistribution]) -> Result<ProbMatrix> {
    let cols = priors.first().map(LabelDistribution::len).unwrap_or(0);
    if priors.iter().any(|p| p.len() != cols) {
        return Err(Error::Dimension("priors over different class counts".into()));
    }
    let data = priors
        .iter()
        .flat_map(|p| p.marginals.iter().map(|&m| m as f32))
        .collect();
    ProbMatrix::new(priors.len(), cols, ProbKind::Multilabel, data)
}

pub fn priors_from_probs(m: &ProbMatrix) -> Result<Vec<LabelDistribution>> {
    if m.kind() != ProbKind::Multilabel {
        return Err(Error::InvalidArgument("expert priors must be stored as a multilabel matrix".into()));
    }
    (0..m.rows())
        .map(|i| LabelDistribution::new(m.row(i).iter().map(|&p| p as f64).collect()))
        .collect()
}
