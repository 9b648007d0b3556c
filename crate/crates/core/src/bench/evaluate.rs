// SPDX-License-Identifier: Apache-2.0

use rayon::prelude::*;

use super::bootstrap::{bootstrap_ci, mean, DEFAULT_LEVEL, DEFAULT_RESAMPLES};
use super::oracle::oracle_downstream_accuracy;
use super::world::{SyntheticWorld, TaskInstance};
use crate::selectors::{select, Direction, Method, SelectionReport, SelectorInput};
use crate::{Error, ExpertId, Result};

/// Fewest tasks a benchmark will aggregate.
pub const MIN_TASKS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchOptions {
    pub level: f64,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            level: DEFAULT_LEVEL,
            resamples: DEFAULT_RESAMPLES,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskRecord {
    pub task: usize,
    pub true_expert: ExpertId,
    pub oracle_best: ExpertId,
    pub oracle_acc: f64,
    pub chosen: ExpertId,
    pub selector_acc: f64,
    pub regret: f64,
}

impl TaskRecord {
    pub fn agrees(&self) -> bool {
        self.chosen == self.oracle_best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretSummary {
    pub method: Method,
    pub records: Vec<TaskRecord>,
    pub mean_regret: f64,
    /// Fraction of tasks where the selector picked the oracle-best expert.
    pub agreement: f64,
    /// Bootstrap interval of the mean regret.
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub agreement_ci_lo: f64,
    pub agreement_ci_hi: f64,
}

/// Oracle accuracy of every expert on every task, `[task][expert]`.
pub fn oracle_table(world: &SyntheticWorld) -> Result<Vec<Vec<f64>>> {
    world
        .tasks
        .par_iter()
        .map(|task| {
            world
                .experts
                .par_iter()
                .map(|e| oracle_downstream_accuracy(task, e, &world.config.oracle_train))
                .collect()
        })
        .collect()
}

fn oracle_report(accuracies: &[f64]) -> Result<SelectionReport> {
    SelectionReport::from_scores(
        Method::Oracle,
        Direction::Maximize,
        accuracies.iter().enumerate().map(|(e, &a)| (e as ExpertId, a)),
    )
}

/// Runs one selector on one task of the world.
pub fn run_selector(world: &SyntheticWorld, task: &TaskInstance, method: Method) -> Result<SelectionReport> {
    match method {
        Method::Knn => {
            let embeddings = world.expert_embeddings(task)?;
            select(SelectorInput::Knn {
                task: &task.train,
                embeddings: &embeddings,
            })
        }
        Method::Epn => select(SelectorInput::Epn {
            probs: &world.epn_probs(task)?,
        }),
        Method::Kl => select(SelectorInput::Kl {
            priors: &world.slice_priors,
            task_probs: &world.baseline_probs(&task.train_inputs)?,
        }),
        Method::Random => select(SelectorInput::Random {
            num_experts: world.num_experts(),
            seed: world.task_seed(task.index),
        }),
        Method::Oracle => Err(Error::InvalidArgument(
            "the oracle needs the accuracy table; use evaluate_selectors".into(),
        )),
    }
}

fn summarize(method: Method, records: Vec<TaskRecord>, opts: &BenchOptions) -> Result<RegretSummary> {
    let regrets: Vec<f64> = records.iter().map(|r| r.regret).collect();
    let hits: Vec<f64> = records.iter().map(|r| if r.agrees() { 1.0 } else { 0.0 }).collect();
    let (ci_lo, ci_hi) = bootstrap_ci(&regrets, opts.level, opts.resamples, opts.seed)?;
    let (agreement_ci_lo, agreement_ci_hi) = bootstrap_ci(&hits, opts.level, opts.resamples, opts.seed)?;
    Ok(RegretSummary {
        method,
        mean_regret: mean(&regrets),
        agreement: mean(&hits),
        ci_lo,
        ci_hi,
        agreement_ci_lo,
        agreement_ci_hi,
        records,
    })
}

/// Scores each method against brute-force fine-tuning of every expert.
/// Summaries come back in the order of `methods`.
pub fn evaluate_selectors(world: &SyntheticWorld, methods: &[Method], opts: &BenchOptions) -> Result<Vec<RegretSummary>> {
    if world.tasks.len() < MIN_TASKS {
        return Err(Error::InvalidArgument(format!(
            "benchmark needs at least {MIN_TASKS} tasks, world has {}",
            world.tasks.len()
        )));
    }
    let table = oracle_table(world)?;
    let oracle: Vec<SelectionReport> = table.iter().map(|row| oracle_report(row)).collect::<Result<_>>()?;
    methods
        .iter()
        .map(|&method| {
            let records = world
                .tasks
                .par_iter()
                .zip(&table)
                .zip(&oracle)
                .map(|((task, accs), best)| {
                    let chosen = match method {
                        Method::Oracle => best.chosen,
                        m => run_selector(world, task, m)?.chosen,
                    };
                    let oracle_acc = accs[best.chosen as usize];
                    let selector_acc = *accs.get(chosen as usize).ok_or_else(|| {
                        Error::Validation(format!("{method} chose unknown expert {chosen}"))
                    })?;
                    Ok(TaskRecord {
                        task: task.index,
                        true_expert: task.true_expert,
                        oracle_best: best.chosen,
                        oracle_acc,
                        chosen,
                        selector_acc,
                        regret: oracle_acc - selector_acc,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            summarize(method, records, opts)
        })
        .collect()
}
