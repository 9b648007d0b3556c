// SPDX-License-Identifier: Apache-2.0

//! Benchmark harness: synthetic worlds with a known best expert, brute-force
//! oracle evaluation, selector regret with bootstrap intervals and the
//! asymptotic cost model.

pub mod bootstrap;
mod config;
pub mod costs;
mod evaluate;
mod oracle;
pub mod world;

pub use bootstrap::bootstrap_ci;
pub use config::{export_world, format_bench_report, run_bench, BenchConfig, ModeReport};
pub use costs::{asymptotic_costs, CostModelInput, CostTable, PhaseCosts};
pub use evaluate::{evaluate_selectors, oracle_table, run_selector, BenchOptions, RegretSummary, TaskRecord, MIN_TASKS};
pub use oracle::oracle_downstream_accuracy;
pub use world::{generate_world, SyntheticWorld, TaskInstance, WorldConfig, WorldMode};
