// SPDX-License-Identifier: Apache-2.0

//! Benchmark configuration files, the text report and file export.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bootstrap::{DEFAULT_LEVEL, DEFAULT_RESAMPLES};
use super::evaluate::{evaluate_selectors, run_selector, BenchOptions, RegretSummary};
use super::world::{generate_world, SyntheticWorld, WorldConfig, WorldMode};
use crate::dataset_io::{embedding_file_name, write_embeddings, write_probs, write_task};
use crate::selectors::{priors_to_probs, Method};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// The world's `mode` is overridden by each entry of `modes`.
    pub world: WorldConfig,
    pub modes: Vec<WorldMode>,
    pub selectors: Vec<Method>,
    pub resamples: usize,
    pub level: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            world: WorldConfig::default(),
            modes: vec![WorldMode::Semantic, WorldMode::RandomSlices],
            selectors: vec![Method::Knn, Method::Epn, Method::Kl, Method::Random],
            resamples: DEFAULT_RESAMPLES,
            level: DEFAULT_LEVEL,
        }
    }
}

impl BenchConfig {
    /// Seed 42, 16 experts, 50 tasks of 200 examples, both modes.
    pub fn acceptance() -> Self {
        BenchConfig {
            world: WorldConfig::acceptance(WorldMode::Semantic),
            ..BenchConfig::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: BenchConfig = toml::from_str(text).map_err(|e| Error::Format(format!("bench config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("bench config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() || self.selectors.is_empty() {
            return Err(Error::InvalidArgument("bench config needs at least one mode and one selector".into()));
        }
        self.world.validate()
    }

    pub fn options(&self) -> BenchOptions {
        BenchOptions {
            level: self.level,
            resamples: self.resamples,
            seed: self.world.seed,
        }
    }

    pub fn world_for(&self, mode: WorldMode) -> WorldConfig {
        WorldConfig {
            mode,
            ..self.world.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeReport {
    pub mode: WorldMode,
    pub summaries: Vec<RegretSummary>,
}

impl ModeReport {
    pub fn summary(&self, method: Method) -> Option<&RegretSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }
}

/// Generates one world per mode and evaluates every selector on it.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<ModeReport>> {
    cfg.validate()?;
    cfg.modes
        .iter()
        .map(|&mode| {
            let world = generate_world(&cfg.world_for(mode))?;
            Ok(ModeReport {
                mode,
                summaries: evaluate_selectors(&world, &cfg.selectors, &cfg.options())?,
            })
        })
        .collect()
}

/// One block per mode and selector, then a `record` line per task.
pub fn format_bench_report(reports: &[ModeReport]) -> String {
    let mut out = String::new();
    for r in reports {
        for s in &r.summaries {
            let _ = writeln!(out, "mode {}", r.mode);
            let _ = writeln!(out, "method {}", s.method);
            let _ = writeln!(out, "mean_regret {:.6}", s.mean_regret);
            let _ = writeln!(out, "agreement {:.6}", s.agreement);
            let _ = writeln!(out, "ci_lo {:.6}", s.ci_lo);
            let _ = writeln!(out, "ci_hi {:.6}", s.ci_hi);
            let _ = writeln!(out, "agreement_ci_lo {:.6}", s.agreement_ci_lo);
            let _ = writeln!(out, "agreement_ci_hi {:.6}", s.agreement_ci_hi);
            out.push('\n');
        }
    }
    for r in reports {
        for s in &r.summaries {
            for t in &s.records {
                let _ = writeln!(
                    out,
                    "record mode={} method={} task={} true={} oracle_best={} chosen={} oracle_acc={:.6} selector_acc={:.6} regret={:.6}",
                    r.mode, s.method, t.task, t.true_expert, t.oracle_best, t.chosen, t.oracle_acc, t.selector_acc, t.regret
                );
            }
        }
    }
    out
}

/// Writes the selector inputs of every task as ordinary files, with the
/// harness's own selection report next to them:
///
/// ```text
/// <dir>/priors.prob
/// <dir>/task_<t>/task.task
/// <dir>/task_<t>/embeddings/expert_<e>.emb
/// <dir>/task_<t>/epn.prob
/// <dir>/task_<t>/baseline.prob
/// <dir>/task_<t>/<method>.report
/// ```
///
/// The random selector's seed for task `t` is `world seed ^ t`.
pub fn export_world(world: &SyntheticWorld, methods: &[Method], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_probs(&priors_to_probs(&world.slice_priors)?, dir.join("priors.prob"))?;
    for task in &world.tasks {
        let tdir = dir.join(format!("task_{}", task.index));
        let edir = tdir.join("embeddings");
        fs::create_dir_all(&edir).map_err(|e| Error::io(&edir, e))?;
        write_task(&task.train, tdir.join("task.task"))?;
        for emb in world.expert_embeddings(task)? {
            write_embeddings(&emb, edir.join(embedding_file_name(emb.expert_id)))?;
        }
        write_probs(&world.epn_probs(task)?, tdir.join("epn.prob"))?;
        write_probs(&world.baseline_probs(&task.train_inputs)?, tdir.join("baseline.prob"))?;
        for &m in methods.iter().filter(|&&m| m != Method::Oracle) {
            let path = tdir.join(format!("{m}.report"));
            fs::write(&path, run_selector(world, task, m)?.to_text()).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}
