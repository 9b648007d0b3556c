// SPDX-License-Identifier: Apache-2.0

//! Command-line front end. Exit codes: 0 success, 2 invalid input,
//! 3 usage or method/input mismatch, 4 numeric failure.

use std::ffi::OsString;
use std::fs;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bench::{
    asymptotic_costs, export_world, format_bench_report, generate_world, run_bench, BenchConfig, CostModelInput,
};
use crate::dataset_io::{read_embeddings_dir, read_probs, read_task};
use crate::hierarchy::{build_slices, format_slices, load_corpus, select_domains, CountBasis, DomainMode};
use crate::selectors::{priors_from_probs, select, Method, SelectorInput};
use crate::toy_models::{count_params, BottleneckRule, ADAPTER_INSERTION_CHANNELS};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID_INPUT: i32 = 2;
pub const EXIT_USAGE: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "taskroute", version, about = "Per-task expert routing for transfer learning")]
pub struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads: a positive count or `auto`.
    #[arg(long, global = true, default_value = "auto")]
    pub threads: String,
    /// Do not print the resolved configuration.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Slice an upstream corpus into expert domains.
    Slice(SliceArgs),
    /// Pick an expert for a downstream task.
    Select(SelectArgs),
    /// Run the synthetic benchmark.
    Bench(BenchArgs),
    /// Count backbone and adapter parameters.
    Params(ParamsArgs),
    /// Print the asymptotic cost table.
    Costs(CostsArgs),
}

#[derive(Debug, Args)]
pub struct SliceArgs {
    #[arg(long)]
    pub hierarchy: PathBuf,
    #[arg(long)]
    pub examples: Option<PathBuf>,
    /// `threshold:<n>` or `topn:<n>`; `topn:50` is the ImageNet21k setting.
    #[arg(long, default_value = "topn:50")]
    pub mode: String,
    /// `closed` counts every ancestor of an example's labels, `raw` only the labels.
    #[arg(long, default_value = "closed")]
    pub count_basis: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub method: String,
    #[arg(long)]
    pub task: Option<PathBuf>,
    #[arg(long)]
    pub embeddings_dir: Option<PathBuf>,
    #[arg(long)]
    pub probs: Option<PathBuf>,
    #[arg(long)]
    pub priors: Option<PathBuf>,
    /// Expert count for the random selector.
    #[arg(long)]
    pub experts: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// TOML benchmark config; the acceptance benchmark when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write every task's selector inputs under this directory, one
    /// subdirectory per mode.
    #[arg(long)]
    pub export: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    /// `half` or `fixed:<k>`.
    #[arg(long, default_value = "half")]
    pub bottleneck: String,
}

#[derive(Debug, Args)]
pub struct CostsArgs {
    #[arg(long = "P", default_value_t = CostModelInput::SELECTION_AT_SCALE.p)]
    pub p: u64,
    #[arg(long = "B", default_value_t = CostModelInput::SELECTION_AT_SCALE.b)]
    pub b: u64,
    #[arg(long = "Su", default_value_t = CostModelInput::SELECTION_AT_SCALE.s_u)]
    pub s_u: u64,
    #[arg(long = "Sa", default_value_t = CostModelInput::SELECTION_AT_SCALE.s_a)]
    pub s_a: u64,
    #[arg(long = "Sf", default_value_t = CostModelInput::SELECTION_AT_SCALE.s_f)]
    pub s_f: u64,
    #[arg(long = "E", default_value_t = CostModelInput::SELECTION_AT_SCALE.e)]
    pub e: u64,
    #[arg(long = "Nt", default_value_t = CostModelInput::SELECTION_AT_SCALE.n_t)]
    pub n_t: u64,
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numeric() {
        EXIT_NUMERIC
    } else if matches!(e, Error::InvalidArgument(_)) {
        EXIT_USAGE
    } else {
        EXIT_INVALID_INPUT
    }
}

fn thread_pool(threads: &str) -> Result<rayon::ThreadPool> {
    let n = match threads {
        "auto" => 0,
        s => match s.parse::<usize>() {
            Ok(n) if n > 0 => n,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "--threads must be a positive count or `auto`, got `{s}`"
                )))
            }
        },
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

fn write_out(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn require<'a, T>(v: &'a Option<T>, flag: &str, method: &str) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("--method {method} needs {flag}")))
}

fn cmd_slice(a: &SliceArgs, out: &mut String) -> Result<()> {
    let mode: DomainMode = a.mode.parse()?;
    let basis: CountBasis = a.count_basis.parse()?;
    let (h, examples) = load_corpus(&a.hierarchy, a.examples.as_deref(), basis)?;
    let domains = select_domains(&h, mode);
    let (slices, routing) = build_slices(&examples, &domains, &h)?;
    write_out(&a.out, &format_slices(&slices, &routing))?;
    let _ = writeln!(out, "domains {}", domains.len());
    let _ = writeln!(out, "slices {}", slices.len());
    Ok(())
}

fn cmd_select(a: &SelectArgs, seed: u64, out: &mut String) -> Result<()> {
    let method: Method = a.method.parse()?;
    let name = method.as_str();
    let report = match method {
        Method::Knn => {
            let task = read_task(require(&a.task, "--task", name)?)?;
            let embeddings = read_embeddings_dir(require(&a.embeddings_dir, "--embeddings-dir", name)?)?;
            select(SelectorInput::Knn {
                task: &task,
                embeddings: &embeddings,
            })?
        }
        Method::Epn => select(SelectorInput::Epn {
            probs: &read_probs(require(&a.probs, "--probs", name)?)?,
        })?,
        Method::Kl => {
            let priors = priors_from_probs(&read_probs(require(&a.priors, "--priors", name)?)?)?;
            select(SelectorInput::Kl {
                priors: &priors,
                task_probs: &read_probs(require(&a.probs, "--probs", name)?)?,
            })?
        }
        Method::Random => select(SelectorInput::Random {
            num_experts: *require(&a.experts, "--experts", name)?,
            seed,
        })?,
        Method::Oracle => {
            return Err(Error::InvalidArgument(
                "the oracle selector exists only inside the benchmark".into(),
            ))
        }
    };
    let text = report.to_text();
    if let Some(path) = &a.out {
        write_out(path, &text)?;
    }
    let _ = write!(out, "{text}");
    let _ = writeln!(out, "{}", report.chosen);
    Ok(())
}

fn cmd_bench(a: &BenchArgs, seed: Option<u64>, out: &mut String) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => BenchConfig::load(path)?,
        None => BenchConfig::acceptance(),
    };
    if let Some(s) = seed {
        cfg.world.seed = s;
    }
    let report = format_bench_report(&run_bench(&cfg)?);
    match &a.out {
        Some(path) => write_out(path, &report)?,
        None => {
            let _ = write!(out, "{report}");
        }
    }
    if let Some(dir) = &a.export {
        for &mode in &cfg.modes {
            let world = generate_world(&cfg.world_for(mode))?;
            export_world(&world, &cfg.selectors, dir.join(mode.as_str()))?;
        }
    }
    Ok(())
}

fn cmd_params(a: &ParamsArgs, out: &mut String) -> Result<()> {
    let rule: BottleneckRule = a.bottleneck.parse()?;
    let _ = write!(out, "{}", count_params(&ADAPTER_INSERTION_CHANNELS, rule));
    Ok(())
}

fn cmd_costs(a: &CostsArgs, out: &mut String) -> Result<()> {
    let table = asymptotic_costs(&CostModelInput {
        p: a.p,
        b: a.b,
        s_u: a.s_u,
        s_a: a.s_a,
        s_f: a.s_f,
        e: a.e,
        n_t: a.n_t,
    })?;
    let _ = write!(out, "{table}");
    Ok(())
}

fn dispatch(cli: &Cli, out: &mut String) -> Result<()> {
    let pool = thread_pool(&cli.threads)?;
    pool.install(|| match &cli.command {
        Command::Slice(a) => cmd_slice(a, out),
        Command::Select(a) => cmd_select(a, cli.seed.unwrap_or(0), out),
        Command::Bench(a) => cmd_bench(a, cli.seed, out),
        Command::Params(a) => cmd_params(a, out),
        Command::Costs(a) => cmd_costs(a, out),
    })
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            if e.use_stderr() {
                let _ = write!(err, "{e}");
            } else {
                let _ = write!(out, "{e}");
            }
            return code;
        }
    };
    if !cli.quiet {
        let _ = writeln!(err, "config: {cli:?}");
    }
    let mut text = String::new();
    let result = dispatch(&cli, &mut text);
    let _ = out.write_all(text.as_bytes());
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs against the process arguments and standard streams.
pub fn run() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}
